"""Volumetric data types and the intensity/geometry preprocessing steps.

Arrays are stored as numpy arrays indexed ``[z, y, x]`` (x fastest in memory),
spacing is ``(sz, sy, sx)`` in millimetres.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from femseg.errors import DegenerateRange, DimensionMismatch, EmptyForeground

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class CropRecord:
    """Where a cropped (and possibly mirrored) volume sits in its source frame."""

    offset: Triple
    original_dims: Triple
    mirrored: bool = False

    def __post_init__(self):
        if any(o < 0 for o in self.offset):
            raise DimensionMismatch(f"negative crop offset {self.offset}")


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise DimensionMismatch(f"spacing must be three positive values, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    frame: CropRecord | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.size == 0:
            raise DimensionMismatch(f"volume data must be a nonempty 3-D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Triple:
        return tuple(int(d) for d in self.data.shape)


@dataclass(frozen=True)
class LabelMask:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    frame: CropRecord | None = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionMismatch(f"mask data must be 3-D, got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.size and not np.isin(data, (0, 1)).all():
                raise ValueError("mask values must be exactly 0 or 1")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Triple:
        return tuple(int(d) for d in self.data.shape)


def check_aligned(v: Volume, labels: LabelMask) -> None:
    if v.dims != labels.dims:
        raise DimensionMismatch(f"mask dims {labels.dims} differ from volume dims {v.dims}")
    if not np.allclose(v.spacing, labels.spacing):
        raise DimensionMismatch(f"mask spacing {labels.spacing} differs from volume spacing {v.spacing}")


def minmax_normalize(v: Volume) -> Volume:
    """Linearly map intensities so the minimum becomes 0 and the maximum 1."""
    x = v.data.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateRange(f"constant volume (all values {lo})")
    out = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return replace(v, data=out)


def _best_split(counts: np.ndarray) -> int:
    """Lowest bin index k maximizing between-class variance of bins [0,k) vs [k,bins).

    Candidates are ranked in floating point, and any near-ties are settled
    with exact rational arithmetic so the lowest true maximizer wins.
    """
    counts = counts.astype(np.int64)
    nbins = counts.size
    # 2k+1 is the bin centre in half-bin units; an affine change of the
    # intensity axis does not move the argmax.
    centres = 2 * np.arange(nbins, dtype=np.int64) + 1
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * centres)[:-1]
    n = int(counts.sum())
    s = int((counts * centres).sum())
    n1 = n - n0
    s1 = s - s0
    valid = (n0 > 0) & (n1 > 0)
    if not valid.any():
        raise DegenerateRange("histogram holds a single occupied bin")
    # sigma_b^2 * N^2 = (n1*s0 - n0*s1)^2 / (n0*n1)
    num = n1.astype(np.float64) * s0 - n0.astype(np.float64) * s1
    score = np.zeros(nbins - 1)
    score[valid] = num[valid] ** 2 / (n0[valid].astype(np.float64) * n1[valid])
    best = score.max()
    near = np.flatnonzero(valid & (score >= best * (1 - 1e-9)))
    if near.size == 1:
        return int(near[0]) + 1

    def exact(i):
        a = int(n1[i]) * int(s0[i]) - int(n0[i]) * int(s1[i])
        return Fraction(a * a, int(n0[i]) * int(n1[i]))

    scores = [exact(i) for i in near]
    top = max(scores)
    return int(near[scores.index(top)]) + 1


def otsu_histogram(v: Volume, bins: int = 256) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(v.data, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateRange(f"constant volume (all values {lo})")
    return np.histogram(x, bins=bins, range=(lo, hi))


def otsu_threshold(v: Volume, bins: int = 256) -> float:
    """Otsu threshold over a ``bins``-bin histogram spanning [min, max].

    The result is the interior bin edge separating the two classes; ties go
    to the lowest edge. Voxels strictly above it are foreground.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    counts, edges = otsu_histogram(v, bins)
    return float(edges[_best_split(counts)])


def auto_crop(v: Volume, mask_threshold: float, margin: int = 2) -> tuple[Volume, CropRecord]:
    """Crop to the bounding box of voxels above ``mask_threshold`` plus ``margin``."""
    above = v.data > mask_threshold
    if not above.any():
        raise EmptyForeground(f"no voxel exceeds threshold {mask_threshold}")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(above.any(axis=other))
        lo.append(max(int(idx[0]) - margin, 0))
        hi.append(min(int(idx[-1]) + 1 + margin, v.dims[axis]))
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    parent = v.frame
    mirrored = parent.mirrored if parent is not None else False
    rec = CropRecord(offset=tuple(lo), original_dims=v.dims, mirrored=mirrored)
    return replace(v, data=v.data[sl].copy(), frame=rec), rec


def crop_like(m: LabelMask, rec: CropRecord, dims: Triple) -> LabelMask:
    """Apply a crop described by ``rec`` (with output ``dims``) to a mask."""
    if m.dims != tuple(rec.original_dims):
        raise DimensionMismatch(f"mask dims {m.dims} do not match crop source {rec.original_dims}")
    sl = tuple(slice(o, o + d) for o, d in zip(rec.offset, dims))
    return replace(m, data=m.data[sl].copy(), frame=rec)


def uncrop(mask: LabelMask, rec: CropRecord) -> LabelMask:
    """Zero-pad a cropped mask back into the frame it was cut from."""
    for o, d, n in zip(rec.offset, mask.dims, rec.original_dims):
        if o < 0 or o + d > n:
            raise DimensionMismatch(
                f"mask of dims {mask.dims} at offset {rec.offset} does not fit in {rec.original_dims}"
            )
    out = np.zeros(rec.original_dims, dtype=np.uint8)
    sl = tuple(slice(o, o + d) for o, d in zip(rec.offset, mask.dims))
    out[sl] = mask.data
    return LabelMask(out, mask.spacing)


def mirror_x(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a[:, :, ::-1])


def split_and_mirror(v: Volume, labels: LabelMask | None = None):
    """Split at x = nx // 2 and mirror the left half so both face the same way.

    The right half keeps the centre column when nx is odd. Returns
    ``[(right_volume, right_labels), (mirrored_left_volume, mirrored_left_labels)]``;
    label entries are None when no labels are given.
    """
    nx = v.dims[2]
    if nx < 2:
        raise DimensionMismatch("need at least two columns along x to split")
    if labels is not None:
        check_aligned(v, labels)
    cut = nx // 2
    nz, ny, _ = v.dims

    def halves(arr):
        return arr[:, :, cut:].copy(), mirror_x(arr[:, :, :cut])

    vr, vl = halves(v.data)
    right = CropRecord((0, 0, cut), (nz, ny, nx), mirrored=False)
    left = CropRecord((0, 0, 0), (nz, ny, nx), mirrored=True)
    out_v = [Volume(vr, v.spacing, right), Volume(vl, v.spacing, left)]
    if labels is None:
        return [(out_v[0], None), (out_v[1], None)]
    lr, ll = halves(labels.data)
    return [(out_v[0], LabelMask(lr, v.spacing, right)), (out_v[1], LabelMask(ll, v.spacing, left))]


@dataclass(frozen=True)
class PreprocessConfig:
    """Settings for the normalize -> Otsu -> crop chain and the final threshold."""

    otsu_bins: int = 256
    crop_margin: int = 2
    otsu_on_normalized: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.otsu_bins < 2 or self.crop_margin < 0:
            raise ValueError("otsu_bins must be >= 2 and crop_margin >= 0")


def preprocess(v: Volume, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Volume, CropRecord]:
    """Min-max normalize, then crop to the Otsu foreground bounding box."""
    norm = minmax_normalize(v)
    source = norm if cfg.otsu_on_normalized else v
    t = otsu_threshold(source, cfg.otsu_bins)
    lo, hi = float(np.min(v.data)), float(np.max(v.data))
    if not cfg.otsu_on_normalized:
        # express the raw-intensity threshold on the normalized scale
        t = (t - lo) / (hi - lo)
    return auto_crop(norm, t, cfg.crop_margin)
