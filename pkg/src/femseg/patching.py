"""Overlapping patch grids, random training patches and overlap-averaged stitching."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from femseg.errors import ConfigError, GridMismatch

Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if np.isscalar(v):
        return (int(v),) * 3
    return tuple(int(a) for a in v)


@dataclass(frozen=True)
class PatchSpec:
    patch_dims: Triple = (128, 128, 128)
    overlap_dims: Triple = (64, 64, 64)

    def __post_init__(self):
        object.__setattr__(self, "patch_dims", _triple(self.patch_dims))
        object.__setattr__(self, "overlap_dims", _triple(self.overlap_dims))
        for p, o in zip(self.patch_dims, self.overlap_dims):
            if p <= 0 or not 0 <= o < p:
                raise ConfigError(f"need 0 <= overlap < patch per axis, got {self.overlap_dims} / {self.patch_dims}")

    @property
    def stride(self) -> Triple:
        return tuple(p - o for p, o in zip(self.patch_dims, self.overlap_dims))


@dataclass(frozen=True)
class PatchGrid:
    offsets: tuple[Triple, ...]
    source_dims: Triple
    padded_dims: Triple
    spec: PatchSpec

    def __len__(self):
        return len(self.offsets)

    @property
    def padding(self) -> Triple:
        return tuple(p - s for p, s in zip(self.padded_dims, self.source_dims))


def axis_offsets(n: int, patch: int, stride: int) -> list[int]:
    """Offsets 0, s, 2s, ... with the last one pulled back to n - patch."""
    if n <= patch:
        return [0]
    offs = list(range(0, n - patch + 1, stride))
    if offs[-1] != n - patch:
        offs.append(n - patch)
    return offs


def make_grid(dims, spec: PatchSpec) -> PatchGrid:
    dims = _triple(dims)
    if any(d <= 0 for d in dims):
        raise ConfigError(f"dims must be positive, got {dims}")
    padded = tuple(max(d, p) for d, p in zip(dims, spec.patch_dims))
    per_axis = [axis_offsets(n, p, s) for n, p, s in zip(padded, spec.patch_dims, spec.stride)]
    return PatchGrid(tuple(product(*per_axis)), dims, padded, spec)


def pad_to(a: np.ndarray, dims) -> np.ndarray:
    """Zero-pad the trailing end of each of the last three axes up to ``dims``."""
    extra = [max(d - s, 0) for d, s in zip(dims, a.shape[-3:])]
    if not any(extra):
        return a
    width = [(0, 0)] * (a.ndim - 3) + [(0, e) for e in extra]
    return np.pad(a, width)


def extract(field: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Cut every grid patch out of ``field``; returns (n_patches, pz, py, px)."""
    if tuple(field.shape) != grid.source_dims:
        raise GridMismatch(f"field dims {field.shape} != grid source dims {grid.source_dims}")
    f = pad_to(field, grid.padded_dims)
    pz, py, px = grid.spec.patch_dims
    return np.stack([f[z : z + pz, y : y + py, x : x + px] for z, y, x in grid.offsets])


def sample_random_patch(dims, spec: PatchSpec, rng: np.random.Generator) -> Triple:
    """Uniform corner over the valid offset box of a (padded) volume."""
    dims = tuple(max(d, p) for d, p in zip(_triple(dims), spec.patch_dims))
    return tuple(int(rng.integers(0, d - p + 1)) for d, p in zip(dims, spec.patch_dims))


def stitch(prob_patches, grid: PatchGrid) -> np.ndarray:
    """Average overlapping patch probabilities and drop the padding."""
    patches = list(prob_patches) if not isinstance(prob_patches, np.ndarray) else prob_patches
    if len(patches) != len(grid.offsets):
        raise GridMismatch(f"{len(patches)} patches for a grid of {len(grid.offsets)}")
    acc = np.zeros(grid.padded_dims, dtype=np.float64)
    cover = np.zeros(grid.padded_dims, dtype=np.int32)
    pz, py, px = grid.spec.patch_dims
    for patch, (z, y, x) in zip(patches, grid.offsets):
        if tuple(np.shape(patch)) != grid.spec.patch_dims:
            raise GridMismatch(f"patch shape {np.shape(patch)} != {grid.spec.patch_dims}")
        sl = (slice(z, z + pz), slice(y, y + py), slice(x, x + px))
        cover[sl] += 1
        # running mean: exact whenever the overlapping values agree
        acc[sl] += (patch - acc[sl]) / cover[sl]
    sz, sy, sx = grid.source_dims
    if cover[:sz, :sy, :sx].min() < 1:
        raise GridMismatch("grid leaves voxels uncovered")
    return acc[:sz, :sy, :sx].copy()
