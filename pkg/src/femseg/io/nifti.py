"""Read-only subset of NIfTI-1: single-file ``.nii``, 3-D, int16 or float32."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from femseg.errors import FormatError, UnsupportedFeature
from femseg.volume import Volume

HEADER_SIZE = 348
DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {DT_INT16: "i2", DT_FLOAT32: "f4"}


def parse_header(raw: bytes) -> dict:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"file shorter than the {HEADER_SIZE}-byte NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == HEADER_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr is not 348")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedFeature("two-file (.hdr/.img) NIfTI is not supported")
    if magic != b"n+1\x00":
        raise FormatError(f"bad magic {magic!r}")
    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype, bitpix = struct.unpack(endian + "hh", raw[70:74])
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = struct.unpack(endian + "f", raw[108:112])[0]
    scl_slope, scl_inter = struct.unpack(endian + "ff", raw[112:120])
    return {
        "endian": endian,
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": int(vox_offset),
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
    }


def read_nifti1(path) -> Volume:
    """Load a 3-D NIfTI-1 image as a Volume in (z, y, x) order with mm spacing.

    The scaling pair is applied when ``scl_slope`` is nonzero, which promotes
    the data to float64.
    """
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raise UnsupportedFeature("compressed NIfTI is not supported")
    h = parse_header(raw)
    ndim = h["dim"][0]
    if ndim > 3 and any(d > 1 for d in h["dim"][4 : ndim + 1]):
        raise UnsupportedFeature(f"{ndim}-D NIfTI images are not supported")
    if ndim < 1:
        raise FormatError(f"invalid dim[0] = {ndim}")
    nx, ny, nz = (h["dim"][i] if i <= ndim else 1 for i in (1, 2, 3))
    if min(nx, ny, nz) < 1:
        raise FormatError(f"invalid dims {h['dim']}")
    if h["datatype"] not in _DTYPES:
        raise UnsupportedFeature(f"datatype code {h['datatype']} (only int16 and float32)")
    dt = np.dtype(h["endian"] + _DTYPES[h["datatype"]])
    n = nx * ny * nz
    start = h["vox_offset"]
    if start < HEADER_SIZE or start + n * dt.itemsize > len(raw):
        raise FormatError("voxel payload truncated or vox_offset invalid")
    data = np.frombuffer(raw, dtype=dt, count=n, offset=start).reshape(nz, ny, nx)
    data = data.astype(dt.newbyteorder("="))
    if h["scl_slope"] != 0 and np.isfinite(h["scl_slope"]):
        data = data.astype(np.float64) * h["scl_slope"] + h["scl_inter"]
    sx, sy, sz = (abs(h["pixdim"][i]) or 1.0 for i in (1, 2, 3))
    return Volume(data, (sz, sy, sx))


def build_nifti1(data: np.ndarray, spacing=(1.0, 1.0, 1.0), slope: float = 0.0, inter: float = 0.0) -> bytes:
    """Minimal NIfTI-1 byte image for a (z, y, x) array; used by tests and demos."""
    data = np.asarray(data)
    codes = {np.dtype("int16"): DT_INT16, np.dtype("float32"): DT_FLOAT32}
    if data.dtype not in codes:
        raise UnsupportedFeature(f"cannot encode dtype {data.dtype}")
    nz, ny, nx = data.shape
    sz, sy, sx = spacing
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, codes[data.dtype], data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<ff", hdr, 112, slope, inter)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00" * 4 + data.astype(data.dtype.newbyteorder("<")).tobytes()
