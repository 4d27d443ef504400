"""On-the-fly stochastic augmentation of an image/label pair.

Four transforms (isotropic scaling, axial rotation, elastic deformation,
brightness) are each switched on independently with ``probability_per_transform``.
Spatial transforms move image and labels with the same geometry: trilinear
resampling for intensities, nearest-neighbour for labels.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from femseg.errors import ConfigError
from femseg.volume import LabelMask, Volume, check_aligned

Range = tuple[float, float]


@dataclass(frozen=True)
class AugmentConfig:
    probability_per_transform: float = 0.35
    scale_range: Range = (0.95, 1.05)
    rotation_range_deg: Range = (-3.0, 3.0)
    brightness_range: Range = (0.75, 1.25)
    elastic_alpha_range: Range = (0.0, 100.0)
    elastic_sigma_range: Range = (9.0, 13.0)
    rotation_axes: str = "axial"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability_per_transform <= 1.0:
            raise ConfigError("probability_per_transform must lie in [0, 1]")
        for name in ("scale_range", "rotation_range_deg", "brightness_range", "elastic_alpha_range", "elastic_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.scale_range[0] <= 0:
            raise ConfigError("scale_range must be positive")
        if self.elastic_sigma_range[0] <= 0:
            raise ConfigError("elastic sigma must be positive")
        if self.elastic_alpha_range[0] < 0:
            raise ConfigError("elastic alpha must be non-negative")
        if self.rotation_axes not in ("axial", "all"):
            raise ConfigError("rotation_axes must be 'axial' or 'all'")


@dataclass(frozen=True)
class AugmentPlan:
    """Parameters of the transforms that fired; ``None`` means skipped."""

    scale: float | None = None
    rotation_deg: float | tuple[float, float, float] | None = None
    elastic: tuple[float, float, int] | None = None  # alpha, sigma, field seed
    brightness: float | None = None

    @property
    def is_identity(self) -> bool:
        return self.scale is None and self.rotation_deg is None and self.elastic is None and self.brightness is None


def derive_rng(base_seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (base_seed, keys...), e.g. (seed, epoch, image index)."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *[int(k) for k in keys]]))


def sample_plan(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentPlan:
    p = cfg.probability_per_transform
    # every parameter is drawn whether or not its gate fires, so the stream
    # position never depends on earlier outcomes
    gates = rng.random(4) < p
    scale = rng.uniform(*cfg.scale_range)
    if cfg.rotation_axes == "axial":
        rot = float(rng.uniform(*cfg.rotation_range_deg))
    else:
        rot = tuple(float(a) for a in rng.uniform(*cfg.rotation_range_deg, size=3))
    alpha = rng.uniform(*cfg.elastic_alpha_range)
    sigma = rng.uniform(*cfg.elastic_sigma_range)
    field_seed = int(rng.integers(0, 2**63 - 1))
    bright = rng.uniform(*cfg.brightness_range)
    return AugmentPlan(
        scale=float(scale) if gates[0] else None,
        rotation_deg=rot if gates[1] else None,
        elastic=(float(alpha), float(sigma), field_seed) if gates[2] else None,
        brightness=float(bright) if gates[3] else None,
    )


def _rotation_matrix(rotation_deg) -> np.ndarray:
    """Rotation acting on (z, y, x) coordinates.

    A scalar angle rotates in the axial (y, x) plane, positive turning +x
    towards +y; a triple gives angles about the z, y and x axes, applied in
    that order.
    """
    def about(axis, deg):
        t = np.deg2rad(deg)
        c, s = np.cos(t), np.sin(t)
        i, j = [(2, 1), (0, 2), (1, 0)][axis]  # plane (from, to) in (z, y, x) indices
        r = np.eye(3)
        r[i, i], r[j, j] = c, c
        r[j, i], r[i, j] = s, -s
        return r

    if np.isscalar(rotation_deg):
        return about(0, float(rotation_deg))
    az, ay, ax = rotation_deg
    return about(2, ax) @ about(1, ay) @ about(0, az)


def _resample(v: np.ndarray, labels: np.ndarray | None, coords: np.ndarray, mode: str):
    img = ndimage.map_coordinates(v, coords, order=1, mode=mode, cval=0.0)
    lab = None
    if labels is not None:
        lab = ndimage.map_coordinates(labels, coords, order=0, mode=mode, cval=0).astype(np.uint8)
    return img, lab


def affine_transform(v: Volume, labels: LabelMask | None, scale: float = 1.0, rotation_deg=0.0):
    """Scale isotropically and rotate about the volume centre in one resample.

    Samples falling outside the source take the value 0.
    """
    if scale <= 0:
        raise ConfigError("scale must be positive")
    if labels is not None:
        check_aligned(v, labels)
    dims = v.dims
    centre = np.array([(n - 1) / 2.0 for n in dims]).reshape(3, 1, 1, 1)
    inv = _rotation_matrix(rotation_deg).T / scale
    grid = np.indices(dims, dtype=np.float64) - centre
    coords = np.einsum("ij,jzyx->izyx", inv, grid) + centre
    img, lab = _resample(np.asarray(v.data, dtype=np.float64), None if labels is None else labels.data, coords, "constant")
    out_v = replace(v, data=img)
    out_l = None if labels is None else replace(labels, data=lab)
    return out_v, out_l


def elastic_field(dims, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """(3, z, y, x) displacement in voxels: uniform noise, Gaussian-smoothed, scaled."""
    raw = rng.uniform(-1.0, 1.0, size=(3, *dims))
    out = np.empty_like(raw)
    for a in range(3):
        out[a] = ndimage.gaussian_filter(raw[a], sigma, mode="reflect", truncate=3.0)
    return out * alpha


def warp(v: Volume, labels: LabelMask | None, displacement: np.ndarray):
    """Pull-back warp: output(p) = input(p + displacement(p)), coordinates clamped to the grid."""
    dims = v.dims
    displacement = np.asarray(displacement, dtype=np.float64)
    if displacement.shape != (3, *dims) or not np.isfinite(displacement).all():
        raise ValueError(f"displacement must be a finite (3, {dims}) field")
    coords = np.indices(dims, dtype=np.float64) + displacement
    for a in range(3):
        np.clip(coords[a], 0, dims[a] - 1, out=coords[a])
    img, lab = _resample(np.asarray(v.data, dtype=np.float64), None if labels is None else labels.data, coords, "nearest")
    return replace(v, data=img), (None if labels is None else replace(labels, data=lab))


def elastic_deform(v: Volume, labels: LabelMask | None, alpha: float, sigma: float, rng: np.random.Generator):
    if alpha < 0 or sigma <= 0:
        raise ConfigError("elastic deformation needs alpha >= 0 and sigma > 0")
    if labels is not None:
        check_aligned(v, labels)
    return warp(v, labels, elastic_field(v.dims, alpha, sigma, rng))


def brightness(v: Volume, factor: float) -> Volume:
    """Multiply normalized intensities by ``factor`` and clamp to [0, 1]."""
    return replace(v, data=np.clip(np.asarray(v.data, dtype=np.float64) * factor, 0.0, 1.0))


def apply_plan(plan: AugmentPlan, v: Volume, labels: LabelMask | None):
    """Scale/rotate, then elastic, then brightness. Dims are preserved."""
    if labels is not None:
        check_aligned(v, labels)
    if plan.scale is not None or plan.rotation_deg is not None:
        v, labels = affine_transform(
            v,
            labels,
            1.0 if plan.scale is None else plan.scale,
            0.0 if plan.rotation_deg is None else plan.rotation_deg,
        )
    if plan.elastic is not None:
        alpha, sigma, seed = plan.elastic
        v, labels = elastic_deform(v, labels, alpha, sigma, np.random.default_rng(seed))
    if plan.brightness is not None:
        v = brightness(v, plan.brightness)
    return v, labels
