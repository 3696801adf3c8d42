import heapq

import numpy as np
import pytest

from toothfield import fields, geometry, synthetic


# ---------------------------------------------------------------------------
# Independent oracles (kept deliberately naive; they never call library code
# beyond plain data access)
# ---------------------------------------------------------------------------

def oracle_knn(points, query, k):
    """Exhaustive O(N) scan per query, ties by lowest index."""
    out = []
    for q in np.atleast_2d(query):
        d = [(float(np.linalg.norm(p - q)), i) for i, p in enumerate(points)]
        d.sort()
        out.append([i for _, i in d[:k]])
    return np.asarray(out)


def oracle_ball_query(points, center_idx, r, k):
    """Distance filter + sort + pad, straight from the contract."""
    c = points[center_idx]
    d = [(float(np.linalg.norm(p - c)), i) for i, p in enumerate(points)]
    d.sort()
    within = [i for dist, i in d if dist <= r][:k]
    while len(within) < k:
        within.append(within[0])
    return np.asarray(within)


def oracle_greedy_fps(points, m, start):
    """Greedy max-min selection with lowest-index tie breaking."""
    n = len(points)
    selected = [start]
    dist = [float(np.linalg.norm(points[i] - points[start])) for i in range(n)]
    for _ in range(m - 1):
        best, best_d = None, -1.0
        for i in range(n):
            if i in selected:
                continue
            if dist[i] > best_d:
                best, best_d = i, dist[i]
        selected.append(best)
        for i in range(n):
            dist[i] = min(dist[i], float(np.linalg.norm(points[i] - points[best])))
    return selected


def oracle_vertex_dijkstra(mesh, source_vertex):
    """Plain Dijkstra over the vertex graph (mesh edges only)."""
    n = mesh.n_vertices
    adj = [[] for _ in range(n)]
    seen = set()
    for a, b, c in mesh.faces:
        for u, v in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (u, v) if u < v else (v, u)
            if key in seen:
                continue
            seen.add(key)
            w = float(np.linalg.norm(mesh.vertices[u] - mesh.vertices[v]))
            adj[u].append((v, w))
            adj[v].append((u, w))
    dist = np.full(n, np.inf)
    dist[source_vertex] = 0.0
    heap = [(0.0, source_vertex)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def flat_grid_cloud(half_extent=1.0, step=0.05):
    """Planar grid point cloud (z = 0) with +z normals, normalized frame."""
    axis = np.arange(-half_extent, half_extent + step / 2, step)
    xs, ys = np.meshgrid(axis, axis)
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    pts = pts / max(1.0, np.linalg.norm(pts, axis=1).max() + 1e-12)
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return geometry.PointCloud(pts, normals, frame=geometry.FRAME_NORMALIZED)


def strip_mesh(length=2.0, width=0.5, nx=21, ny=6):
    """Flat rectangular strip in the z = 0 plane, grid-triangulated."""
    xs = np.linspace(0.0, length, nx)
    ys = np.linspace(0.0, width, ny)
    verts = [(x, y, 0.0) for y in ys for x in xs]
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx + 1
            d = a + nx
            faces.append((a, b, c))
            faces.append((a, c, d))
    return geometry.TriangleMesh(np.asarray(verts, dtype=float),
                                 np.asarray(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Shared pipeline helpers / fixtures
# ---------------------------------------------------------------------------

def encode_tooth(spec, n_points=2048, sample_seed=0):
    """synth -> sample -> normalize -> encode, all in-process.

    Returns a dict with everything the round-trip and noise tests consume.
    """
    mesh, landmarks, axes = synthetic.generate_tooth(spec)
    cloud_model = geometry.sample_surface(mesh, n_points, sample_seed)
    cloud, transform = geometry.normalize_unit_ball(cloud_model)
    mesh_norm = geometry.transform_mesh(mesh, transform)
    landmarks_norm = fields.LandmarkSet([
        fields.Landmark(transform.to_normalized(lm.position), lm.kind)
        for lm in landmarks.landmarks
    ])
    dist = fields.encode_landmarks(mesh_norm, cloud, landmarks_norm)
    vec = np.zeros((cloud.n_points, 3, len(fields.AXIS_KINDS)))
    gt_axes = {}
    for ki, kind in enumerate(fields.AXIS_KINDS):
        ax = next(a for a in axes if a.kind == kind)
        gt_axis, col = fields.encode_axis(cloud, ax.direction, kind)
        vec[:, :, ki] = col
        gt_axes[kind] = gt_axis
    return {
        "spec": spec,
        "mesh": mesh,
        "mesh_norm": mesh_norm,
        "cloud": cloud,
        "transform": transform,
        "landmarks_norm": landmarks_norm,
        "dist": dist,
        "vec": fields.ProjectionVectorField(vec),
        "gt_axes": gt_axes,
        "axes_model": axes,
    }


@pytest.fixture(scope="session")
def small_corpus():
    """One encoded tooth per category (seeds matching corpus positions)."""
    out = []
    for i, cat in zip((0, 10, 20, 30), synthetic.CATEGORIES):
        out.append(encode_tooth(synthetic.spec_for_category(cat, i)))
    return out
