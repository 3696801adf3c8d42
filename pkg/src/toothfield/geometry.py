"""Mesh and point-cloud primitives: loading, sampling, normalization, spatial queries.

Every operation here is a pure function of its inputs; arrays inside the
returned objects are marked read-only so values can be shared across threads.
Coordinate frames are tagged explicitly ("model" = original units such as mm,
"normalized" = unit-ball coordinates).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateGeometry,
    FrameMismatch,
    InvalidCount,
    ParseError,
    TopologyError,
)

FRAME_MODEL = "model"
FRAME_NORMALIZED = "normalized"

_UNIT_TOL = 1e-6
_BALL_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass
class TriangleMesh:
    """Indexed triangle mesh. Vertices are (V, 3) floats, faces (F, 3) ints."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: Optional[np.ndarray] = None
    frame: str = FRAME_MODEL

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise TopologyError(f"vertices must be (V, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise TopologyError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise TopologyError("face index out of range")
        if f.size:
            fs = np.sort(f, axis=1)
            if np.any(fs[:, 0] == fs[:, 1]) or np.any(fs[:, 1] == fs[:, 2]):
                raise TopologyError("face references the same vertex twice")
        self.vertices = _readonly(v)
        self.faces = _readonly(f)
        if self.vertex_normals is not None:
            n = np.ascontiguousarray(np.asarray(self.vertex_normals, dtype=np.float64))
            if n.shape != v.shape:
                raise TopologyError("vertex_normals shape must match vertices")
            self.vertex_normals = _readonly(n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        n = np.cross(b - a, c - a)
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norms, 1e-300)


@dataclass
class PointCloud:
    """N surface points with unit normals.

    ``face_indices``/``bary_coords`` record sampling provenance (which mesh face
    each point came from, and where inside it); they survive in-process but are
    not serialized to CSV.
    """

    points: np.ndarray
    normals: np.ndarray
    frame: str = FRAME_MODEL
    face_indices: Optional[np.ndarray] = None
    bary_coords: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        n = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        if p.ndim != 2 or p.shape[1] != 3:
            raise DegenerateGeometry(f"points must be (N, 3), got {p.shape}")
        if n.shape != p.shape:
            raise DegenerateGeometry("normals shape must match points")
        lens = np.linalg.norm(n, axis=1)
        if len(n) and np.max(np.abs(lens - 1.0)) > _UNIT_TOL:
            raise DegenerateGeometry("normals must be unit length")
        if self.frame not in (FRAME_MODEL, FRAME_NORMALIZED):
            raise FrameMismatch(f"unknown frame {self.frame!r}")
        if self.frame == FRAME_NORMALIZED and len(p):
            if np.max(np.linalg.norm(p, axis=1)) > 1.0 + _BALL_TOL:
                raise FrameMismatch("normalized cloud exceeds the unit ball")
        self.points = _readonly(p)
        self.normals = _readonly(n)
        if self.face_indices is not None:
            self.face_indices = _readonly(np.asarray(self.face_indices, dtype=np.int64))
        if self.bary_coords is not None:
            self.bary_coords = _readonly(np.asarray(self.bary_coords, dtype=np.float64))

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass
class NormalizationTransform:
    """Maps model coordinates to unit-ball coordinates and back.

    normalized = (model - center) * scale ;  model = normalized / scale + center
    """

    center: np.ndarray
    scale: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not np.isfinite(c).all():
            raise DegenerateGeometry("transform center must be finite")
        s = float(self.scale)
        if not (s > 0.0 and np.isfinite(s)):
            raise DegenerateGeometry("transform scale must be a positive finite scalar")
        self.center = _readonly(c)
        self.scale = s

    def to_normalized(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.center) * self.scale

    def to_model(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) / self.scale + self.center


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII OBJ or ASCII PLY file into a validated TriangleMesh.

    Only the ASCII dialects are accepted (binary PLY raises ParseError).
    Polygons with more than three vertices are fan-triangulated.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise ParseError(f"unsupported mesh format {suffix!r} (expected .obj or .ply)")


def _fan_triangulate(indices: Sequence[int]) -> list:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _load_obj(path: Path) -> TriangleMesh:
    vertices = []
    normals = []
    faces = []
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "vn":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: normal needs 3 components")
                try:
                    normals.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad normal component") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: bad face index {token!r}") from exc
                    if i <= 0:
                        # OBJ indices are 1-based; zero/negative forms rejected
                        raise ParseError(f"{path}:{lineno}: face index {i} (OBJ is 1-based)")
                    idx.append(i - 1)
                faces.extend(_fan_triangulate(idx))
            # other record types (vt, o, g, s, usemtl, ...) are ignored
    if not vertices:
        raise ParseError(f"{path}: no vertices found")
    vn = None
    if normals and len(normals) == len(vertices):
        vn = np.asarray(normals, dtype=np.float64)
    return TriangleMesh(np.asarray(vertices, dtype=np.float64),
                        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                        vertex_normals=vn)


def _load_ply(path: Path) -> TriangleMesh:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII PLY file") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic")
    n_vertex = n_face = None
    vertex_props = []
    in_vertex_element = False
    header_end = None
    fmt_seen = False
    for i, line in enumerate(lines[1:], start=1):
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise ParseError(f"{path}: only 'format ascii 1.0' is supported")
            fmt_seen = True
        elif parts[0] == "element":
            if parts[1] == "vertex":
                n_vertex = int(parts[2])
                in_vertex_element = True
            else:
                in_vertex_element = False
                if parts[1] == "face":
                    n_face = int(parts[2])
        elif parts[0] == "property" and in_vertex_element:
            vertex_props.append(parts[-1])
        elif parts[0] == "end_header":
            header_end = i
            break
    if header_end is None or not fmt_seen:
        raise ParseError(f"{path}: malformed PLY header")
    if n_vertex is None or n_face is None:
        raise ParseError(f"{path}: PLY must declare vertex and face elements")
    for req in ("x", "y", "z"):
        if req not in vertex_props:
            raise ParseError(f"{path}: vertex element lacks property {req!r}")
    body = [ln for ln in lines[header_end + 1:] if ln.strip()]
    if len(body) < n_vertex + n_face:
        raise ParseError(f"{path}: truncated PLY body")
    xi, yi, zi = (vertex_props.index(p) for p in ("x", "y", "z"))
    has_normals = all(p in vertex_props for p in ("nx", "ny", "nz"))
    if has_normals:
        ni = [vertex_props.index(p) for p in ("nx", "ny", "nz")]
    vertices = np.empty((n_vertex, 3), dtype=np.float64)
    vnormals = np.empty((n_vertex, 3), dtype=np.float64) if has_normals else None
    for r in range(n_vertex):
        vals = body[r].split()
        try:
            vertices[r] = (float(vals[xi]), float(vals[yi]), float(vals[zi]))
            if has_normals:
                vnormals[r] = (float(vals[ni[0]]), float(vals[ni[1]]), float(vals[ni[2]]))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad vertex row {r}") from exc
    faces = []
    for r in range(n_face):
        vals = body[n_vertex + r].split()
        try:
            cnt = int(vals[0])
            idx = [int(v) for v in vals[1:1 + cnt]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad face row {r}") from exc
        if cnt < 3 or len(idx) != cnt:
            raise ParseError(f"{path}: face row {r} declares {cnt} vertices")
        faces.extend(_fan_triangulate(idx))
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                        vertex_normals=vnormals)


def save_mesh_obj(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OBJ (v/f records, 1-based indices)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def transform_mesh(mesh: TriangleMesh, transform: NormalizationTransform) -> TriangleMesh:
    """Map a model-frame mesh into the normalized frame of ``transform``."""
    if mesh.frame != FRAME_MODEL:
        raise FrameMismatch("transform_mesh expects a model-frame mesh")
    return TriangleMesh(transform.to_normalized(mesh.vertices), mesh.faces,
                        vertex_normals=mesh.vertex_normals, frame=FRAME_NORMALIZED)


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Draw n area-uniform points on the mesh; normals are face normals.

    Deterministic for a fixed (mesh, n, seed).
    """
    if n < 1:
        raise InvalidCount(f"n must be >= 1, got {n}")
    areas = mesh.face_areas()
    total = float(areas.sum())
    if mesh.n_faces == 0 or total <= 0.0:
        raise DegenerateGeometry("mesh has zero total area")
    rng = np.random.default_rng(seed)
    probs = areas / total
    face_idx = rng.choice(mesh.n_faces, size=n, p=probs)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)
    w0 = 1.0 - s
    w1 = s * (1.0 - r2)
    w2 = s * r2
    tri = mesh.vertices[mesh.faces[face_idx]]          # (n, 3, 3)
    pts = (tri[:, 0] * w0[:, None] + tri[:, 1] * w1[:, None] + tri[:, 2] * w2[:, None])
    normals = mesh.face_normals()[face_idx]
    bary = np.stack([w0, w1, w2], axis=1)
    return PointCloud(pts, normals, frame=mesh.frame,
                      face_indices=face_idx, bary_coords=bary)


def normalize_unit_ball(cloud: PointCloud):
    """Center a model-frame cloud at its centroid and scale so max norm is 1.

    Returns (normalized cloud, transform back to model coordinates).
    """
    if cloud.n_points == 0:
        raise DegenerateGeometry("cannot normalize an empty cloud")
    if cloud.frame != FRAME_MODEL:
        raise FrameMismatch("normalize_unit_ball expects a model-frame cloud")
    center = cloud.points.mean(axis=0)
    shifted = cloud.points - center
    radius = float(np.max(np.linalg.norm(shifted, axis=1)))
    if radius <= 0.0:
        raise DegenerateGeometry("all points coincident")
    scale = 1.0 / radius
    out = PointCloud(shifted * scale, cloud.normals, frame=FRAME_NORMALIZED,
                     face_indices=cloud.face_indices, bary_coords=cloud.bary_coords)
    return out, NormalizationTransform(center, scale)


def farthest_point_sampling(cloud: PointCloud, m: int, seed: int,
                            start_index: Optional[int] = None) -> np.ndarray:
    """Greedy max-min subset selection.

    The first index comes from the seeded RNG (or ``start_index`` when given,
    which test harnesses use to match starts across permutations); each later
    pick maximizes the min distance to the selected set, ties to lowest index.
    """
    n = cloud.n_points
    if not (1 <= m <= n):
        raise InvalidCount(f"m must be in [1, {n}], got {m}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n)) if start_index is None else int(start_index)
    if not (0 <= first < n):
        raise InvalidCount(f"start index {first} out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = first
    dist = np.linalg.norm(cloud.points - cloud.points[first], axis=1)
    dist[first] = -1.0  # mark selected so ties on duplicates never re-pick
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        selected[i] = nxt
        d = np.linalg.norm(cloud.points - cloud.points[nxt], axis=1)
        np.minimum(dist, d, out=dist)
        dist[nxt] = -1.0
    return selected


def ball_query(cloud: PointCloud, center_indices, r: float, k: int) -> np.ndarray:
    """Up to k neighbors within radius r per center, ascending distance.

    Short lists are padded by repeating the nearest qualifying index; the
    center itself always qualifies at distance 0, so the result is never empty.
    """
    if r <= 0.0:
        raise InvalidCount(f"radius must be positive, got {r}")
    if k < 1:
        raise InvalidCount(f"k must be >= 1, got {k}")
    centers = np.asarray(center_indices, dtype=np.int64)
    out = np.empty((len(centers), k), dtype=np.int64)
    pts = cloud.points
    for row, ci in enumerate(centers):
        d = np.linalg.norm(pts - pts[ci], axis=1)
        order = np.argsort(d, kind="stable")
        within = order[d[order] <= r]
        take = within[:k]
        if len(take) < k:
            pad = np.full(k - len(take), take[0], dtype=np.int64)
            take = np.concatenate([take, pad])
        out[row] = take
    return out


def knn(cloud: PointCloud, query_points: np.ndarray, k: int) -> np.ndarray:
    """k nearest cloud indices per query point, ascending distance, ties by index."""
    n = cloud.n_points
    if not (1 <= k <= n):
        raise InvalidCount(f"k must be in [1, {n}], got {k}")
    q = np.asarray(query_points, dtype=np.float64).reshape(-1, 3)
    d = np.linalg.norm(q[:, None, :] - cloud.points[None, :, :], axis=2)
    return np.argsort(d, axis=1, kind="stable")[:, :k].astype(np.int64)


def write_cloud_csv(cloud: PointCloud, path) -> None:
    """Serialize points + normals with the fixed header x,y,z,nx,ny,nz."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# frame={cloud.frame}\n")
        fh.write("x,y,z,nx,ny,nz\n")
        for p, nrm in zip(cloud.points, cloud.normals):
            row = (*p, *nrm)
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_cloud_csv(path) -> PointCloud:
    frame = FRAME_MODEL
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = None
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "frame=" in line:
                    frame = line.split("frame=", 1)[1].strip()
                continue
            if header is None:
                header = line
                if header != "x,y,z,nx,ny,nz":
                    raise ParseError(f"{path}: unexpected cloud CSV header {header!r}")
                continue
            vals = line.split(",")
            if len(vals) != 6:
                raise ParseError(f"{path}: cloud CSV row needs 6 values")
            rows.append([float(v) for v in vals])
    if not rows:
        raise ParseError(f"{path}: empty cloud CSV")
    arr = np.asarray(rows, dtype=np.float64)
    return PointCloud(arr[:, :3], arr[:, 3:], frame=frame)
