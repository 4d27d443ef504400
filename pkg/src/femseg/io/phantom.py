"""Synthetic proximal-femur phantoms with exact ground truth.

The shape is a sphere (femoral head) joined to a capsule (neck) that starts at
the sphere centre. Voxels within ``shell_thickness`` of the surface get the
cortical intensity, deeper ones the trabecular intensity. Geometry is given in
millimetres and sampled at voxel centres.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from femseg.errors import ConfigError
from femseg.volume import LabelMask, Volume


@dataclass(frozen=True)
class PhantomSpec:
    grid: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 0.977, 0.977)
    head_radius: float = 9.0
    head_radius_jitter: float = 0.1
    head_centre: tuple[float, float, float] | None = None  # mm; default at 38% of z, centre y, 35% of x
    head_centre_jitter: float = 3.0
    shaft_radius: float = 5.5
    shaft_length: float = 26.0
    shaft_direction: tuple[float, float, float] = (0.6, 0.0, 0.8)  # (z, y, x), neck runs +z/+x
    orientation_jitter_deg: float = 8.0
    shell_thickness: float = 1.5
    cortical_intensity: float = 0.9
    trabecular_intensity: float = 0.5
    background_intensity: float = 0.1
    noise_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for v in (self.cortical_intensity, self.trabecular_intensity, self.background_intensity):
            if not 0.0 <= v <= 1.0:
                raise ConfigError("phantom intensities must lie in [0, 1]")
        if self.shaft_radius >= self.head_radius * (1 - self.head_radius_jitter):
            raise ConfigError("shaft radius must stay below the head radius")
        if self.shaft_length < self.head_radius * (1 + self.head_radius_jitter):
            raise ConfigError("shaft must be long enough to leave the head")
        if min(self.spacing) <= 0 or min(self.grid) < 1:
            raise ConfigError("grid and spacing must be positive")


@dataclass(frozen=True)
class PhantomGeometry:
    centre: np.ndarray  # mm, (z, y, x)
    head_radius: float
    direction: np.ndarray
    shaft_radius: float
    shaft_length: float

    @property
    def shaft_end(self) -> np.ndarray:
        return self.centre + self.shaft_length * self.direction


def _rotate_towards(d: np.ndarray, rng, max_deg: float) -> np.ndarray:
    if max_deg <= 0:
        return d
    # random axis perpendicular to d, random angle in [-max, max]
    a = rng.normal(size=3)
    a -= a.dot(d) * d
    a /= np.linalg.norm(a)
    t = np.deg2rad(rng.uniform(-max_deg, max_deg))
    return np.cos(t) * d + np.sin(t) * a


def sample_geometry(spec: PhantomSpec, rng: np.random.Generator) -> PhantomGeometry:
    extent = np.array(spec.grid) * np.array(spec.spacing)
    centre = np.array(spec.head_centre if spec.head_centre is not None else extent * np.array([0.38, 0.5, 0.35]))
    centre = centre + rng.uniform(-spec.head_centre_jitter, spec.head_centre_jitter, size=3)
    r = spec.head_radius * (1 + rng.uniform(-spec.head_radius_jitter, spec.head_radius_jitter))
    d = np.asarray(spec.shaft_direction, dtype=np.float64)
    d = _rotate_towards(d / np.linalg.norm(d), rng, spec.orientation_jitter_deg)
    geo = PhantomGeometry(centre, float(r), d, spec.shaft_radius, spec.shaft_length)
    lo = np.minimum(centre - r, np.minimum(centre, geo.shaft_end) - spec.shaft_radius)
    hi = np.maximum(centre + r, np.maximum(centre, geo.shaft_end) + spec.shaft_radius)
    margin = np.array(spec.spacing)
    if (lo < margin).any() or (hi > extent - margin).any():
        raise ConfigError(f"phantom shape [{lo.round(1)}, {hi.round(1)}] mm leaves the grid extent {extent.round(1)}")
    return geo


def signed_distance(geo: PhantomGeometry, points: np.ndarray) -> np.ndarray:
    """Union SDF (negative inside) at points shaped (3, ...) in mm."""
    c = geo.centre.reshape(3, *([1] * (points.ndim - 1)))
    rel = points - c
    head = np.sqrt((rel**2).sum(axis=0)) - geo.head_radius
    d = geo.direction.reshape(c.shape)
    t = np.clip((rel * d).sum(axis=0), 0.0, geo.shaft_length)
    shaft = np.sqrt(((rel - t * d) ** 2).sum(axis=0)) - geo.shaft_radius
    return np.minimum(head, shaft)


def analytic_volume(geo: PhantomGeometry) -> float:
    """Exact mm^3 of sphere + capsule when the capsule starts at the sphere centre."""
    R, rs, L = geo.head_radius, geo.shaft_radius, geo.shaft_length
    t0 = np.sqrt(R**2 - rs**2)
    cyl_inside = np.pi * rs**2 * t0 + np.pi * ((R**3 - R**3 / 3) - (R**2 * t0 - t0**3 / 3))
    return 4 / 3 * np.pi * R**3 + np.pi * rs**2 * L - cyl_inside + 2 / 3 * np.pi * rs**3


def generate_phantom(spec: PhantomSpec = PhantomSpec(), rng: np.random.Generator | None = None):
    """Return ``(Volume, LabelMask)``; a pure function of ``(spec, seed)``."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    geo = sample_geometry(spec, rng)
    sp = np.array(spec.spacing).reshape(3, 1, 1, 1)
    pts = np.indices(spec.grid, dtype=np.float64) * sp
    sdf = signed_distance(geo, pts)
    inside = sdf <= 0
    img = np.full(spec.grid, spec.background_intensity)
    img[inside] = spec.trabecular_intensity
    img[inside & (sdf > -spec.shell_thickness)] = spec.cortical_intensity
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=spec.grid)
    return Volume(img.astype(np.float32), spec.spacing), LabelMask(inside.astype(np.uint8), spec.spacing)


def phantom_series(n: int, spec: PhantomSpec = PhantomSpec(), seed: int = 0):
    """``n`` phantoms with per-case seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [generate_phantom(replace(spec, seed=int(s))) for s in seeds]
