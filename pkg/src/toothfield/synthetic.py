"""Deterministic tooth-like test surfaces with closed-form ground truth.

The body is the radial gauge surface of a two-exponent superellipsoid (flat
facets at the +-x/+-y waist poles and a flat occlusal plateau, which is where
the point landmarks and axis tangent points sit), with gentle Gaussian bumps
marking cusps and a tapered root half. Everything a decoder should recover
(landmark positions, axis lines) is known by construction.

Shape choices serve the decoder's error budget rather than anatomy: the
decoder returns k-means centroids of confidence caps, whose bias scales with
local curvature and whose noise scales with per-cap sample count, so bodies
are slender, landmark sites locally flat and symmetric, and cusps staggered
in height so azimuth-adjacent caps stay geodesically separated. Realism is a
non-goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from .errors import InvalidSpec
from .fields import (
    DistanceField,
    Landmark,
    LandmarkSet,
    ProjectionVectorField,
    ToothAxis,
    canonicalize_direction,
)
from .geometry import TriangleMesh

CATEGORIES = ("incisor", "canine", "premolar", "molar")

# Per-category body parameters:
#   ax/ay            horizontal semi-axes (gauge units)
#   az_crown/az_root vertical semi-axes at crown_ratio = 0.5
#   ph               horizontal gauge exponent (>2 flattens the side facets)
#   pv               vertical gauge exponent (>2 flattens the plateau)
#   cusps            default cusp count
#   theta_hi/lo      cusp colatitudes (deg); single cusps sit at the pole
#   bump_h/w         cusp bump amplitude (gauge units) / angular width (rad)
_CATEGORY_PARAMS = {
    "incisor": dict(ax=0.48, ay=0.40, az_crown=1.00, az_root=0.92, ph=3.5, pv=4.5,
                    cusps=1, theta_hi=0.0, theta_lo=0.0, bump_h=0.040, bump_w=0.55),
    "canine": dict(ax=0.49, ay=0.42, az_crown=1.00, az_root=0.94, ph=3.5, pv=4.5,
                   cusps=1, theta_hi=0.0, theta_lo=0.0, bump_h=0.050, bump_w=0.55),
    "premolar": dict(ax=0.45, ay=0.42, az_crown=1.00, az_root=0.85, ph=3.5, pv=4.0,
                     cusps=2, theta_hi=50.0, theta_lo=50.0, bump_h=0.030, bump_w=0.32),
    "molar": dict(ax=0.43, ay=0.42, az_crown=0.95, az_root=0.82, ph=4.0, pv=3.4,
                  cusps=4, theta_hi=45.0, theta_lo=60.0, bump_h=0.025, bump_w=0.32),
}

_N_THETA = 36   # 5 degree colatitude step
_N_AZIMUTH = 48  # 7.5 degree azimuth step

_FA_THETA_DEG = 70.0
_FA_AZIMUTH_DEG = 90.0   # buccal side is +y
_ROOT_TAPER = 0.5
# taper starts well below the waist so the flat band around the waist
# landmarks (CO, FA, axis tangent points) stays symmetric
_ROOT_TAPER_START = math.radians(125.0)


@dataclass
class SyntheticToothSpec:
    category: str
    cusp_count: int
    crown_ratio: float
    bump_amplitude: float
    axis_tilt_deg: Tuple[float, float]  # (angulation about y, inclination about x)
    size_mm: float = 5.5
    seed: int = 0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidSpec(f"unknown category {self.category!r}")
        if self.cusp_count < 1:
            raise InvalidSpec("cusp count must be >= 1")
        if not (0.2 <= self.crown_ratio <= 0.8):
            raise InvalidSpec("crown ratio must lie in [0.2, 0.8]")
        vals = (self.crown_ratio, self.bump_amplitude, self.size_mm,
                *self.axis_tilt_deg)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidSpec("spec parameters must be finite")
        if any(abs(t) > 30.0 for t in self.axis_tilt_deg):
            raise InvalidSpec("axis tilt angles must stay within +/-30 degrees")
        if self.bump_amplitude < 0 or self.size_mm <= 0:
            raise InvalidSpec("bump amplitude must be >= 0 and size positive")


def spec_for_category(category: str, seed: int) -> SyntheticToothSpec:
    """Default spec for a category with seed-driven tilt."""
    if category not in CATEGORIES:
        raise InvalidSpec(f"unknown category {category!r}")
    params = _CATEGORY_PARAMS[category]
    rng = np.random.default_rng([seed, 17])
    tilt = (float(rng.uniform(-8.0, 8.0)), float(rng.uniform(-8.0, 8.0)))
    return SyntheticToothSpec(
        category=category,
        cusp_count=params["cusps"],
        crown_ratio=0.5,
        bump_amplitude=params["bump_h"],
        axis_tilt_deg=tilt,
        seed=seed,
    )


def default_corpus_specs(base_seed: int = 0, per_category: int = 10) -> List[SyntheticToothSpec]:
    """The standard verification corpus: per_category teeth of each category."""
    specs = []
    i = 0
    for category in CATEGORIES:
        for _ in range(per_category):
            specs.append(spec_for_category(category, base_seed + i))
            i += 1
    return specs


def _rotation(tilt_deg: Tuple[float, float]) -> np.ndarray:
    ay, ax = math.radians(tilt_deg[0]), math.radians(tilt_deg[1])
    ry = np.array([[math.cos(ay), 0.0, math.sin(ay)],
                   [0.0, 1.0, 0.0],
                   [-math.sin(ay), 0.0, math.cos(ay)]])
    rx = np.array([[1.0, 0.0, 0.0],
                   [0.0, math.cos(ax), -math.sin(ax)],
                   [0.0, math.sin(ax), math.cos(ax)]])
    return rx @ ry


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _snap_azimuth(u: float) -> float:
    step = 2.0 * math.pi / _N_AZIMUTH
    return (round(u / step) % _N_AZIMUTH) * step


def _cusp_layout(count: int, theta_hi: float, theta_lo: float) -> List[Tuple[float, float]]:
    """(colatitude, azimuth) per cusp; snapped to the mesh grid.

    A single cusp sits at the occlusal pole. Multiple cusps alternate between
    the high and low rings so azimuth neighbors are staggered in height.
    """
    if count == 1:
        return [(0.0, 0.0)]
    base = math.pi / 2.0 if count == 2 else 0.0
    layout = []
    for j in range(count):
        u = _snap_azimuth(base + 2.0 * math.pi * j / count)
        theta = theta_hi if j % 2 == 0 else theta_lo
        layout.append((theta, u))
    return layout


class _ToothSurface:
    """Radial surface r(theta, u) in the upright, unscaled frame."""

    def __init__(self, spec: SyntheticToothSpec):
        params = _CATEGORY_PARAMS[spec.category]
        rng = np.random.default_rng([spec.seed, 101])
        jitter = rng.uniform(0.97, 1.03, size=3)
        self.ax = params["ax"] * float(jitter[0])
        self.ay = params["ay"] * float(jitter[1])
        self.az_crown = params["az_crown"] * 2.0 * spec.crown_ratio * float(jitter[2])
        self.az_root = params["az_root"] * 2.0 * (1.0 - spec.crown_ratio) * float(jitter[2])
        self.ph = params["ph"]
        self.pv = params["pv"]
        self.bump_h = spec.bump_amplitude
        self.bump_w = params["bump_w"] * float(rng.uniform(0.97, 1.03))
        layout = _cusp_layout(spec.cusp_count,
                              math.radians(params["theta_hi"]),
                              math.radians(params["theta_lo"]))
        self.cusp_params = layout
        self.cusp_dirs = np.stack([
            np.array([math.sin(th) * math.cos(u),
                      math.sin(th) * math.sin(u),
                      math.cos(th)])
            for th, u in layout
        ])

    def radius(self, theta: np.ndarray, u: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        st, ct = np.sin(theta), np.cos(theta)
        taper = 1.0 - _ROOT_TAPER * _smoothstep(
            (theta - _ROOT_TAPER_START) / (math.pi - _ROOT_TAPER_START))
        rho_u = (np.abs(np.cos(u) / (self.ax * taper)) ** self.ph
                 + np.abs(np.sin(u) / (self.ay * taper)) ** self.ph) ** (1.0 / self.ph)
        az = np.where(ct >= 0.0, self.az_crown, self.az_root)
        gauge = (np.abs(st) * rho_u) ** self.pv + np.abs(ct / az) ** self.pv
        r = gauge ** (-1.0 / self.pv)
        if self.bump_h > 0.0:
            dx, dy, dz = st * np.cos(u), st * np.sin(u), ct
            d = np.stack([dx, dy, dz], axis=-1)
            cosang = np.clip(d @ self.cusp_dirs.T, -1.0, 1.0)
            ang = np.arccos(cosang)
            bumps = self.bump_h * np.exp(-(ang ** 2) / (2.0 * self.bump_w ** 2))
            r = r + bumps.sum(axis=-1)
        return r

    def point(self, theta: float, u: float) -> np.ndarray:
        r = float(self.radius(np.asarray(theta), np.asarray(u)))
        st, ct = math.sin(theta), math.cos(theta)
        return r * np.array([st * math.cos(u), st * math.sin(u), ct])


def _build_grid_mesh(surface: _ToothSurface):
    thetas = np.linspace(0.0, math.pi, _N_THETA + 1)
    us = np.arange(_N_AZIMUTH) * (2.0 * math.pi / _N_AZIMUTH)
    verts = [surface.point(0.0, 0.0)]
    for ti in range(1, _N_THETA):
        th = thetas[ti]
        r = surface.radius(np.full(_N_AZIMUTH, th), us)
        ring = np.stack([r * (math.sin(th) * np.cos(us)),
                         r * (math.sin(th) * np.sin(us)),
                         r * math.cos(th)], axis=1)
        verts.append(ring)
    verts.append(surface.point(math.pi, 0.0))
    vertices = np.vstack([np.atleast_2d(v) for v in verts])

    def ring_vertex(ring: int, j: int) -> int:
        return 1 + (ring - 1) * _N_AZIMUTH + (j % _N_AZIMUTH)

    faces = []
    for j in range(_N_AZIMUTH):
        faces.append((0, ring_vertex(1, j), ring_vertex(1, j + 1)))
    for ring in range(1, _N_THETA - 1):
        for j in range(_N_AZIMUTH):
            a = ring_vertex(ring, j)
            b = ring_vertex(ring, j + 1)
            c = ring_vertex(ring + 1, j + 1)
            d = ring_vertex(ring + 1, j)
            faces.append((a, d, c))
            faces.append((a, c, b))
    bottom = len(vertices) - 1
    for j in range(_N_AZIMUTH):
        faces.append((bottom, ring_vertex(_N_THETA - 1, j + 1), ring_vertex(_N_THETA - 1, j)))
    return vertices, np.asarray(faces, dtype=np.int64)


def generate_tooth(spec: SyntheticToothSpec):
    """Build (mesh, landmarks, axes) in model units (mm), deterministic per seed.

    Landmarks: CU at each cusp bump apex, CO at the mesial/distal waist
    extremes, FA at the buccal patch center, OC at the occlusal center. The
    four axes run parallel to the (tilted) body axis through their waist
    tangent points. All landmark sites are mesh grid vertices.
    """
    surface = _ToothSurface(spec)
    vertices, faces = _build_grid_mesh(surface)

    half_pi = math.pi / 2.0
    landmark_params = [("OC", (0.0, 0.0)),
                       ("FA", (math.radians(_FA_THETA_DEG), math.radians(_FA_AZIMUTH_DEG))),
                       ("CO", (half_pi, 0.0)),
                       ("CO", (half_pi, math.pi))]
    landmark_params.extend(("CU", param) for param in surface.cusp_params)
    axis_params = {"MA": 0.0, "BA": half_pi, "DA": math.pi, "LA": 3.0 * half_pi}

    rot = _rotation(spec.axis_tilt_deg)
    scale = spec.size_mm

    def place(theta: float, u: float) -> np.ndarray:
        return scale * (rot @ surface.point(theta, u))

    vertices = scale * (vertices @ rot.T)
    mesh = TriangleMesh(vertices, faces)

    landmarks = LandmarkSet([Landmark(place(th, u), kind)
                             for kind, (th, u) in landmark_params])
    direction = canonicalize_direction(rot @ np.array([0.0, 0.0, 1.0]))
    axes = [ToothAxis(place(half_pi, u), direction, kind=kind)
            for kind, u in axis_params.items()]
    return mesh, landmarks, axes


def perturb_field(field_obj: Union[DistanceField, ProjectionVectorField],
                  noise_std: float, seed: int):
    """Add seeded Gaussian noise; distance fields re-clamp to [0, 1]."""
    if noise_std < 0:
        raise InvalidSpec("noise std must be >= 0")
    rng = np.random.default_rng(seed)
    if isinstance(field_obj, DistanceField):
        noisy = field_obj.values + rng.normal(0.0, noise_std, size=field_obj.values.shape) \
            if noise_std > 0 else field_obj.values.copy()
        return DistanceField(np.clip(noisy, 0.0, 1.0), sigma=field_obj.sigma,
                             kinds=field_obj.kinds)
    if isinstance(field_obj, ProjectionVectorField):
        noisy = field_obj.vectors + rng.normal(0.0, noise_std, size=field_obj.vectors.shape) \
            if noise_std > 0 else field_obj.vectors.copy()
        return ProjectionVectorField(noisy, kinds=field_obj.kinds)
    raise InvalidSpec(f"unsupported field type {type(field_obj).__name__}")
