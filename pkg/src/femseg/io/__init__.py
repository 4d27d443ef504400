from femseg.io.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from femseg.io.native import read_native, write_native
from femseg.io.nifti import read_nifti1
from femseg.io.phantom import PhantomSpec, generate_phantom, phantom_series

__all__ = [
    "Checkpoint",
    "PhantomSpec",
    "generate_phantom",
    "load_checkpoint",
    "phantom_series",
    "read_native",
    "read_nifti1",
    "save_checkpoint",
    "write_native",
]
