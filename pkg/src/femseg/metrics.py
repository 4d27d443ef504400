"""Overlap and surface-distance metrics for binary masks.

HD95 convention: surfaces are foreground voxels with at least one of their six
face neighbours in the background (or outside the grid); directed distances are
measured from each surface voxel of one mask to the nearest surface voxel of
the other in millimetres; the result is the larger of the two directed 95th
percentiles (linear interpolation).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from femseg.errors import DimensionMismatch, EmptyInput, EmptyMask
from femseg.nn.functional import soft_dice_loss  # noqa: F401  (training loss lives with the layer ops)
from femseg.volume import LabelMask

_FACES = ndimage.generate_binary_structure(3, 1)


def _array(m) -> np.ndarray:
    return (m.data if isinstance(m, LabelMask) else np.asarray(m)).astype(bool)


def dice_coefficient(a, b) -> float:
    """2|A and B| / (|A| + |B|); two empty masks score 1.0."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask dims {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def surface_mask(m) -> np.ndarray:
    a = _array(m)
    if not a.any():
        return a.copy()
    # zero border so voxels on the grid edge count as exposed
    eroded = ndimage.binary_erosion(np.pad(a, 1), structure=_FACES)[1:-1, 1:-1, 1:-1]
    return a & ~eroded


def surface_voxels(m) -> np.ndarray:
    """(n, 3) integer coordinates of surface voxels, in scan order."""
    return np.argwhere(surface_mask(m))


def directed_surface_distances(a, b, spacing) -> np.ndarray:
    """Distance (mm) from every surface voxel of ``a`` to the surface of ``b``."""
    sa, sb = surface_mask(a), surface_mask(b)
    dist = ndimage.distance_transform_edt(~sb, sampling=spacing)
    return dist[sa]


def _spacing_of(a, b, spacing):
    if spacing is not None:
        return tuple(float(s) for s in spacing)
    if isinstance(a, LabelMask):
        return a.spacing
    if isinstance(b, LabelMask):
        return b.spacing
    return (1.0, 1.0, 1.0)


def hd95(a, b, spacing=None) -> float:
    """Symmetric 95th-percentile surface distance in mm."""
    spacing = _spacing_of(a, b, spacing)
    aa, bb = _array(a), _array(b)
    if aa.shape != bb.shape:
        raise DimensionMismatch(f"mask dims {aa.shape} vs {bb.shape}")
    if not aa.any() or not bb.any():
        raise EmptyMask("HD95 is undefined when either mask is empty")
    dab = directed_surface_distances(aa, bb, spacing)
    dba = directed_surface_distances(bb, aa, spacing)
    return float(max(np.percentile(dab, 95), np.percentile(dba, 95)))


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    dsc: float
    hd95: float


@dataclass(frozen=True)
class MetricsReport:
    cases: tuple[CaseMetrics, ...]
    dsc_mean: float
    dsc_std: float
    hd95_mean: float
    hd95_std: float
    n: int
    std_defined: bool = field(default=True)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "dsc_mean": self.dsc_mean,
            "dsc_std": self.dsc_std,
            "hd95_mean_mm": self.hd95_mean,
            "hd95_std_mm": self.hd95_std,
            "std_defined": self.std_defined,
        }


def _mean_std(values) -> tuple[float, float]:
    # sort first: the fold is then independent of case order
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1))


def aggregate(cases) -> MetricsReport:
    """Mean and sample standard deviation of DSC and HD95 across cases."""
    cases = tuple(cases)
    if not cases:
        raise EmptyInput("no cases to aggregate")
    dm, ds = _mean_std([c.dsc for c in cases])
    hm, hs = _mean_std([c.hd95 for c in cases])
    return MetricsReport(cases, dm, ds, hm, hs, len(cases), std_defined=len(cases) > 1)
