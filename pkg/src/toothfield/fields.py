"""Dense per-point coding of sparse landmarks and axes, and its inverse.

Landmarks become Gaussian-of-geodesic-distance scalar fields (one column per
landmark kind, combined by pointwise max when a kind has several landmarks).
Axes become perpendicular-projection vector fields anchored at the cloud
centroid. Decoding goes threshold + k-means for landmarks and total
least-squares line fitting for axes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateFit,
    EmptyField,
    FrameMismatch,
    InvalidCount,
    ParseError,
)
from .geodesic import geodesic_fields, GeodesicResult, distances_at_points
from .geometry import FRAME_NORMALIZED, PointCloud, TriangleMesh

LANDMARK_KINDS = ("CO", "CU", "FA", "OC")
AXIS_KINDS = ("BA", "LA", "MA", "DA")

DEFAULT_SIGMA = 0.3
DEFAULT_THRESHOLD = 0.5


@dataclass
class Landmark:
    position: np.ndarray
    kind: str

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.kind not in LANDMARK_KINDS:
            raise InvalidCount(f"unknown landmark kind {self.kind!r}")


@dataclass
class LandmarkSet:
    landmarks: List[Landmark] = field(default_factory=list)

    def of_kind(self, kind: str) -> List[Landmark]:
        return [lm for lm in self.landmarks if lm.kind == kind]

    def counts(self) -> Dict[str, int]:
        return {kind: len(self.of_kind(kind)) for kind in LANDMARK_KINDS}

    def positions_of(self, kind: str) -> np.ndarray:
        sel = self.of_kind(kind)
        if not sel:
            return np.zeros((0, 3))
        return np.stack([lm.position for lm in sel])


@dataclass
class DistanceField:
    """Per-point scalar in [0, 1] for each landmark kind; shape (N, 4)."""

    values: np.ndarray
    sigma: float = DEFAULT_SIGMA
    kinds: Tuple[str, ...] = LANDMARK_KINDS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.kinds):
            raise InvalidCount(f"distance field must be (N, {len(self.kinds)}), got {v.shape}")
        if v.size and (v.min() < -1e-12 or v.max() > 1.0 + 1e-12):
            raise InvalidCount("distance field values must lie in [0, 1]")
        if not self.sigma > 0:
            raise InvalidCount("sigma must be positive")
        self.values = v

    def column(self, kind: str) -> np.ndarray:
        return self.values[:, self.kinds.index(kind)]


@dataclass
class ToothAxis:
    """A line through ``point`` with unit ``direction``.

    A zero direction is the documented sentinel for a degenerate fit.
    """

    point: np.ndarray
    direction: np.ndarray
    kind: Optional[str] = None

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n > 0 and abs(n - 1.0) > 1e-9:
            d = d / n
        self.direction = d
        if self.kind is not None and self.kind not in AXIS_KINDS:
            raise InvalidCount(f"unknown axis kind {self.kind!r}")

    @property
    def is_degenerate(self) -> bool:
        return float(np.linalg.norm(self.direction)) == 0.0


@dataclass
class ProjectionVectorField:
    """Per-point 3-vectors for each axis kind; shape (N, 3, 4)."""

    vectors: np.ndarray
    kinds: Tuple[str, ...] = AXIS_KINDS

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[1] != 3 or v.shape[2] != len(self.kinds):
            raise InvalidCount(f"vector field must be (N, 3, {len(self.kinds)}), got {v.shape}")
        self.vectors = v

    def column(self, kind: str) -> np.ndarray:
        return self.vectors[:, :, self.kinds.index(kind)]


def canonicalize_direction(direction: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude component is positive (ties: lowest index)."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    i = int(np.argmax(np.abs(d)))
    if d[i] < 0:
        return -d
    return d.copy()


def gaussian_of_distance(g: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-g^2 / (2 sigma^2)); +inf distances map to 0."""
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    finite = np.isfinite(g)
    out[finite] = np.exp(-(g[finite] ** 2) / (2.0 * sigma * sigma))
    return out


def encode_landmarks(mesh: TriangleMesh, cloud: PointCloud, landmarks: LandmarkSet,
                     sigma: float = DEFAULT_SIGMA) -> DistanceField:
    """Encode a landmark set as per-point Gaussian geodesic-distance fields.

    Multiple landmarks of one kind combine by pointwise max. Kinds without any
    landmark yield an all-zero column.
    """
    if sigma <= 0:
        raise InvalidCount("sigma must be positive")
    if cloud.frame != FRAME_NORMALIZED or mesh.frame != FRAME_NORMALIZED:
        raise FrameMismatch("encode_landmarks expects mesh and cloud in the normalized frame")
    all_positions = []
    slots = []  # (kind index, landmark row)
    for ki, kind in enumerate(LANDMARK_KINDS):
        for lm in landmarks.of_kind(kind):
            slots.append(ki)
            all_positions.append(lm.position)
    values = np.zeros((cloud.n_points, len(LANDMARK_KINDS)))
    if all_positions:
        vert_dists, snapped = geodesic_fields(mesh, np.stack(all_positions))
        for row, ki in enumerate(slots):
            res = GeodesicResult(vert_dists[row], snapped[row])
            g = distances_at_points(res, mesh, cloud)
            d = gaussian_of_distance(g, sigma)
            np.maximum(values[:, ki], d, out=values[:, ki])
    return DistanceField(values, sigma=sigma)


def encode_axis(cloud: PointCloud, axis_direction: np.ndarray,
                kind: Optional[str] = None) -> Tuple[ToothAxis, np.ndarray]:
    """Encode one axis as per-point perpendicular projection vectors.

    The line passes through the cloud centroid along ``axis_direction``; each
    stored vector points from the surface point to its perpendicular foot.
    """
    if cloud.n_points == 0:
        raise InvalidCount("cloud is empty")
    n = np.asarray(axis_direction, dtype=np.float64).reshape(3)
    length = float(np.linalg.norm(n))
    if abs(length - 1.0) > 1e-6:
        raise InvalidCount(f"axis direction must be unit length, |d| = {length}")
    n = n / length
    center = cloud.points.mean(axis=0)
    rel = cloud.points - center
    feet = center + (rel @ n)[:, None] * n[None, :]
    vectors = feet - cloud.points
    axis = ToothAxis(center, canonicalize_direction(n), kind=kind)
    return axis, vectors


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100,
           tol: float = 1e-6) -> np.ndarray:
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Deterministic per seed. Empty clusters are re-seeded at the point farthest
    from its assigned center.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = len(pts)
    if not (1 <= k <= m):
        raise InvalidCount(f"k must be in [1, {m}], got {k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, 3))
    chosen = {int(rng.integers(m))}
    centers[0] = pts[next(iter(chosen))]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for ci in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            # every point sits on a chosen center (duplicates); take the
            # lowest unused index
            idx = next(i for i in range(m) if i not in chosen)
        chosen.add(idx)
        centers[ci] = pts[idx]
        np.minimum(d2, np.sum((pts - centers[ci]) ** 2, axis=1), out=d2)

    for _ in range(max_iter):
        dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(dist, axis=1)
        own = dist[np.arange(m), assign]
        for ci in range(k):
            if not np.any(assign == ci):
                far = int(np.argmax(own))
                centers[ci] = pts[far]
                assign[far] = ci
                own[far] = 0.0
        new_centers = np.empty_like(centers)
        for ci in range(k):
            new_centers[ci] = pts[assign == ci].mean(axis=0)
        move = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if move < tol:
            break
    return centers


def decode_landmarks(cloud: PointCloud, field_column: np.ndarray, count: int,
                     threshold: float = DEFAULT_THRESHOLD, seed: int = 0) -> np.ndarray:
    """Recover landmark positions from one field column.

    Points below the confidence threshold are dropped; the survivors are
    clustered with k = count and the cluster centers returned. When fewer than
    ``count`` points survive, the threshold relaxes to the count-th largest
    field value.
    """
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    if not (0.0 < threshold < 1.0):
        raise InvalidCount(f"threshold must lie in (0, 1), got {threshold}")
    values = np.asarray(field_column, dtype=np.float64).reshape(-1)
    if len(values) != cloud.n_points:
        raise InvalidCount("field column length must match cloud size")
    if not np.any(values > 0.0):
        raise EmptyField("field column is identically zero")
    keep = values >= threshold
    if int(keep.sum()) < count:
        order = np.sort(values)[::-1]
        relaxed = order[min(count, len(order)) - 1]
        keep = values >= relaxed
    return kmeans(cloud.points[keep], count, seed)


def fit_line_3d(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Total-least-squares 3D line: mean point + principal covariance direction.

    The principal eigenvector comes from power iteration (200 iterations or
    relative residual < 1e-12); the sign is canonicalized.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise DegenerateFit(f"need at least 2 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    y = pts - mean
    cov = (y.T @ y) / len(pts)
    if float(np.trace(cov)) < 1e-18:
        raise DegenerateFit("all points coincident")
    v = np.full(3, 1.0 / np.sqrt(3.0))
    for _ in range(200):
        w = cov @ v
        nw = float(np.linalg.norm(w))
        if nw < 1e-30:
            # start vector fell in the null space; restart along the
            # dominant diagonal entry
            v = np.zeros(3)
            v[int(np.argmax(np.diag(cov)))] = 1.0
            continue
        v = w / nw
        lam = float(v @ cov @ v)
        resid = float(np.linalg.norm(cov @ v - lam * v))
        if resid <= 1e-12 * max(lam, 1e-30):
            break
    return mean, canonicalize_direction(v)


def decode_axis(cloud: PointCloud, vector_column: np.ndarray,
                kind: Optional[str] = None) -> ToothAxis:
    """Fit the axis line through the projected points p_i + v_i.

    A rank-0 projected set cannot define a direction; the returned axis then
    carries the zero-direction sentinel (``is_degenerate``).
    """
    if cloud.n_points == 0:
        raise InvalidCount("cloud is empty")
    vecs = np.asarray(vector_column, dtype=np.float64).reshape(-1, 3)
    if len(vecs) != cloud.n_points:
        raise InvalidCount("vector column length must match cloud size")
    projected = cloud.points + vecs
    try:
        point, direction = fit_line_3d(projected)
    except DegenerateFit:
        return ToothAxis(projected.mean(axis=0), np.zeros(3), kind=kind)
    return ToothAxis(point, direction, kind=kind)


# ---------------------------------------------------------------------------
# File formats: annotations (JSON) and field tables (CSV)
# ---------------------------------------------------------------------------

def write_annotation(path, tooth_id: str, category: str, landmarks: LandmarkSet,
                     axes: Sequence[ToothAxis], units: str = "mm") -> None:
    payload = {
        "tooth_id": tooth_id,
        "category": category,
        "units": units,
        "landmarks": [
            {"kind": lm.kind, "position": [float(x) for x in lm.position]}
            for lm in landmarks.landmarks
        ],
        "axes": [
            {
                "kind": ax.kind,
                "point": [float(x) for x in ax.point],
                "direction": [float(x) for x in ax.direction],
            }
            for ax in axes
        ],
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_annotation(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read annotation {path}: {exc}") from exc
    try:
        landmarks = LandmarkSet([Landmark(e["position"], e["kind"])
                                 for e in payload["landmarks"]])
        axes = [ToothAxis(e["point"], e["direction"], kind=e["kind"])
                for e in payload["axes"]]
        return payload["tooth_id"], payload.get("category", ""), landmarks, axes
    except (KeyError, TypeError) as exc:
        raise ParseError(f"annotation {path} is missing fields: {exc}") from exc


def write_distance_field_csv(path, dist: DistanceField) -> None:
    cols = ",".join(k.lower() for k in dist.kinds)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# sigma={dist.sigma!r}\n")
        fh.write(cols + "\n")
        for row in dist.values:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_distance_field_csv(path) -> DistanceField:
    sigma = DEFAULT_SIGMA
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = None
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "sigma=" in line:
                    sigma = float(line.split("sigma=", 1)[1])
                continue
            if header is None:
                header = tuple(s.strip().upper() for s in line.split(","))
                if header != LANDMARK_KINDS:
                    raise ParseError(f"{path}: unexpected distance field header")
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ParseError(f"{path}: empty distance field CSV")
    return DistanceField(np.asarray(rows, dtype=np.float64), sigma=sigma)


def write_vector_field_csv(path, vec: ProjectionVectorField) -> None:
    cols = ",".join(f"{k.lower()}_{c}" for k in vec.kinds for c in ("x", "y", "z"))
    n = vec.vectors.shape[0]
    flat = vec.vectors.transpose(0, 2, 1).reshape(n, -1)  # kind-major triples
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(cols + "\n")
        for row in flat:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_vector_field_csv(path) -> ProjectionVectorField:
    expected = tuple(f"{k.lower()}_{c}" for k in AXIS_KINDS for c in ("x", "y", "z"))
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = None
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = tuple(s.strip() for s in line.split(","))
                if header != expected:
                    raise ParseError(f"{path}: unexpected vector field header")
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ParseError(f"{path}: empty vector field CSV")
    flat = np.asarray(rows, dtype=np.float64)
    n = len(flat)
    return ProjectionVectorField(flat.reshape(n, len(AXIS_KINDS), 3).transpose(0, 2, 1))
