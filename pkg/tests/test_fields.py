import math

import numpy as np
import pytest

from toothfield import fields, geometry
from toothfield.errors import DegenerateFit, EmptyField, InvalidCount

from conftest import flat_grid_cloud
from toothfield import synthetic


class TestGaussianCoding:
    def test_zero_distance_is_one(self):
        assert fields.gaussian_of_distance(np.array(0.0), 0.3) == pytest.approx(1.0)

    def test_sigma_point_value(self):
        # G = sigma = 0.3 -> exp(-1/2)
        got = fields.gaussian_of_distance(np.array(0.3), 0.3)
        assert got == pytest.approx(0.6065306597126334, abs=1e-6)

    def test_infinite_distance_is_zero(self):
        got = fields.gaussian_of_distance(np.array([np.inf, 0.1]), 0.3)
        assert got[0] == 0.0
        assert got[1] > 0.9

    def test_strictly_decreasing(self):
        g = np.linspace(0.0, 2.0, 50)
        d = fields.gaussian_of_distance(g, 0.3)
        assert np.all(np.diff(d) < 0)


def tetra_mesh():
    return geometry.TriangleMesh(
        np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float) * 0.5,
        [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        frame=geometry.FRAME_NORMALIZED)


def cloud_at_vertices(mesh):
    """A provenance-carrying cloud whose points are exactly the mesh vertices."""
    n = mesh.n_vertices
    face_of = np.zeros(n, dtype=int)
    bary = np.zeros((n, 3))
    for v in range(n):
        fi = int(np.argwhere((mesh.faces == v).any(axis=1))[0][0])
        face_of[v] = fi
        bary[v] = (mesh.faces[fi] == v).astype(float)
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    return geometry.PointCloud(mesh.vertices, normals, frame=mesh.frame,
                               face_indices=face_of, bary_coords=bary)


class TestEncodeLandmarks:
    def test_coincident_point_value_one(self):
        mesh = tetra_mesh()
        cloud = cloud_at_vertices(mesh)
        lms = fields.LandmarkSet([fields.Landmark(mesh.vertices[1], "FA")])
        dist = fields.encode_landmarks(mesh, cloud, lms)
        assert dist.column("FA")[1] == pytest.approx(1.0, abs=1e-9)

    def test_empty_kind_is_zero_column(self):
        mesh = tetra_mesh()
        cloud = cloud_at_vertices(mesh)
        lms = fields.LandmarkSet([fields.Landmark(mesh.vertices[0], "CU")])
        dist = fields.encode_landmarks(mesh, cloud, lms)
        assert np.all(dist.column("OC") == 0.0)
        assert np.any(dist.column("CU") > 0.0)

    def test_multi_landmark_max_combination(self):
        mesh = tetra_mesh()
        cloud = cloud_at_vertices(mesh)
        a = fields.Landmark(mesh.vertices[1], "CU")
        b = fields.Landmark(mesh.vertices[3], "CU")
        single_a = fields.encode_landmarks(mesh, cloud, fields.LandmarkSet([a]))
        single_b = fields.encode_landmarks(mesh, cloud, fields.LandmarkSet([b]))
        both = fields.encode_landmarks(mesh, cloud, fields.LandmarkSet([a, b]))
        expected = np.maximum(single_a.column("CU"), single_b.column("CU"))
        assert np.allclose(both.column("CU"), expected, atol=1e-12)
        # combined field dominates each constituent, with equality somewhere
        assert np.all(both.column("CU") >= single_a.column("CU") - 1e-12)
        close_a = np.isclose(both.column("CU"), single_a.column("CU"))
        close_b = np.isclose(both.column("CU"), single_b.column("CU"))
        assert np.all(close_a | close_b)

    def test_values_in_unit_interval(self, small_corpus):
        for tooth in small_corpus:
            v = tooth["dist"].values
            assert v.min() >= 0.0
            assert v.max() <= 1.0


class TestEncodeAxis:
    def test_point_on_axis_zero_vector(self):
        cloud = geometry.PointCloud([[0, 0, 0.5], [0, 0, -0.5]],
                                    [[0, 0, 1], [0, 0, 1]],
                                    frame=geometry.FRAME_NORMALIZED)
        _, vec = fields.encode_axis(cloud, [0, 0, 1.0], "BA")
        assert np.allclose(vec, 0.0, atol=1e-12)

    def test_hand_computed_projection(self):
        # mean is the origin; p = (1, 0, 2) projects to (0, 0, 2)
        cloud = geometry.PointCloud(np.array([[1, 0, 2], [-1, 0, -2]]) / 3.0,
                                    [[0, 0, 1], [0, 0, 1]],
                                    frame=geometry.FRAME_NORMALIZED)
        _, vec = fields.encode_axis(cloud, [0, 0, 1.0], "BA")
        assert np.allclose(vec[0], [-1 / 3, 0, 0], atol=1e-12)

    def test_perpendicularity(self, small_corpus):
        for tooth in small_corpus:
            n = tooth["gt_axes"]["BA"].direction
            col = tooth["vec"].column("BA")
            dots = np.abs(col @ n)
            norms = np.linalg.norm(col, axis=1)
            mask = norms > 0
            assert np.all(dots[mask] <= 1e-7 * norms[mask])

    def test_non_unit_direction_rejected(self):
        cloud = geometry.PointCloud([[0, 0, 0.5]], [[0, 0, 1]],
                                    frame=geometry.FRAME_NORMALIZED)
        with pytest.raises(InvalidCount):
            fields.encode_axis(cloud, [0, 0, 2.0], "BA")


class TestKmeans:
    def test_k_equals_m(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        centers = fields.kmeans(pts, 3, seed=0)
        assert sorted(map(tuple, centers)) == sorted(map(tuple, pts))

    def test_two_blobs(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(40, 3)) * 0.05 + [2, 0, 0]
        b = rng.normal(size=(40, 3)) * 0.05 + [-2, 0, 0]
        centers = fields.kmeans(np.vstack([a, b]), 2, seed=1)
        means = sorted([a.mean(axis=0), b.mean(axis=0)], key=lambda c: c[0])
        got = sorted(centers, key=lambda c: c[0])
        assert np.allclose(got[0], means[0], atol=1e-6)
        assert np.allclose(got[1], means[1], atol=1e-6)

    def test_k_one_centroid(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(25, 3))
        centers = fields.kmeans(pts, 1, seed=0)
        assert np.allclose(centers[0], pts.mean(axis=0), atol=1e-9)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(60, 3))
        a = fields.kmeans(pts, 4, seed=9)
        b = fields.kmeans(pts, 4, seed=9)
        assert np.array_equal(a, b)

    def test_invalid_count(self):
        with pytest.raises(InvalidCount):
            fields.kmeans(np.zeros((2, 3)), 3, seed=0)
        with pytest.raises(InvalidCount):
            fields.kmeans(np.zeros((2, 3)), 0, seed=0)


class TestDecodeLandmarks:
    def test_singleton_peak(self):
        cloud = flat_grid_cloud(half_extent=0.5, step=0.1)
        values = np.zeros(cloud.n_points)
        values[17] = 1.0
        got = fields.decode_landmarks(cloud, values, 1, seed=0)
        assert np.allclose(got[0], cloud.points[17], atol=1e-12)

    def test_two_gaussian_bumps(self):
        # synthetic bumps 1.0 apart on a flat grid; oracle = per-bump argmax
        cloud = flat_grid_cloud(half_extent=1.0, step=0.04)
        peaks = np.array([[0.5, 0, 0], [-0.5, 0, 0]])
        d1 = np.linalg.norm(cloud.points - peaks[0], axis=1)
        d2 = np.linalg.norm(cloud.points - peaks[1], axis=1)
        values = np.maximum(fields.gaussian_of_distance(d1, 0.3),
                            fields.gaussian_of_distance(d2, 0.3))
        got = fields.decode_landmarks(cloud, values, 2, seed=0)
        oracle = np.stack([cloud.points[np.argmax(fields.gaussian_of_distance(d, 0.3))]
                           for d in (d1, d2)])
        for peak in oracle:
            nearest = np.linalg.norm(got - peak, axis=1).min()
            assert nearest < 0.05

    def test_round_trip_on_synthetic_tooth(self, small_corpus):
        for tooth in small_corpus:
            lm = tooth["landmarks_norm"]
            for kind in fields.LANDMARK_KINDS:
                gt = lm.positions_of(kind)
                if len(gt) == 0:
                    continue
                got = fields.decode_landmarks(tooth["cloud"],
                                              tooth["dist"].column(kind),
                                              len(gt), seed=0)
                d = np.linalg.norm(gt[:, None, :] - got[None, :, :], axis=2).min(axis=1)
                assert d.max() < 0.05

    def test_threshold_relaxation(self):
        cloud = flat_grid_cloud(half_extent=0.5, step=0.25)
        values = np.zeros(cloud.n_points)
        values[0], values[3], values[5] = 0.3, 0.2, 0.1
        got = fields.decode_landmarks(cloud, values, 2, threshold=0.5, seed=0)
        expected = {tuple(cloud.points[0]), tuple(cloud.points[3])}
        assert {tuple(c) for c in got} == expected

    def test_empty_field(self):
        cloud = flat_grid_cloud(half_extent=0.5, step=0.25)
        with pytest.raises(EmptyField):
            fields.decode_landmarks(cloud, np.zeros(cloud.n_points), 1, seed=0)

    def test_bad_params(self):
        cloud = flat_grid_cloud(half_extent=0.5, step=0.25)
        values = np.ones(cloud.n_points) * 0.6
        with pytest.raises(InvalidCount):
            fields.decode_landmarks(cloud, values, 0, seed=0)
        with pytest.raises(InvalidCount):
            fields.decode_landmarks(cloud, values, 1, threshold=1.5, seed=0)


class TestFitLine3d:
    def test_axis_aligned(self):
        pts = np.array([[0, 0, 0], [0, 0, 1], [0, 0, 2]], dtype=float)
        point, direction = fields.fit_line_3d(pts)
        assert np.allclose(point, [0, 0, 1])
        assert np.allclose(direction, [0, 0, 1], atol=1e-12)

    def test_diagonal_exact(self):
        d = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
        pts = np.outer(np.linspace(-1, 1, 7), d)
        _, direction = fields.fit_line_3d(pts)
        assert np.allclose(direction, d, atol=1e-9)

    def test_matches_dense_eigensolver(self):
        # oracle: full eigendecomposition of the covariance
        rng = np.random.default_rng(12)
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            t = rng.normal(size=200)
            pts = np.outer(t, d) + rng.normal(size=(200, 3)) * 0.05
            _, direction = fields.fit_line_3d(pts)
            centered = pts - pts.mean(axis=0)
            w, v = np.linalg.eigh(centered.T @ centered / len(pts))
            expected = fields.canonicalize_direction(v[:, np.argmax(w)])
            assert np.allclose(direction, expected, atol=1e-6)

    def test_degenerate(self):
        with pytest.raises(DegenerateFit):
            fields.fit_line_3d(np.tile([1.0, 2.0, 3.0], (5, 1)))
        with pytest.raises(DegenerateFit):
            fields.fit_line_3d(np.array([[1.0, 2.0, 3.0]]))


class TestDecodeAxis:
    def test_round_trip_noiseless(self, small_corpus):
        for tooth in small_corpus:
            for kind in fields.AXIS_KINDS:
                gt = tooth["gt_axes"][kind]
                rec = fields.decode_axis(tooth["cloud"], tooth["vec"].column(kind), kind)
                dot = min(1.0, abs(float(rec.direction @ gt.direction)))
                assert math.acos(dot) < 1e-6
                delta = rec.point - gt.point
                perp = delta - (delta @ gt.direction) * gt.direction
                assert np.linalg.norm(perp) < 1e-9

    def test_projected_on_z_axis(self):
        cloud = flat_grid_cloud(half_extent=0.4, step=0.2)
        targets = np.zeros_like(cloud.points)
        targets[:, 2] = np.linspace(-0.5, 0.5, cloud.n_points)
        vec = targets - cloud.points
        rec = fields.decode_axis(cloud, vec)
        assert np.allclose(rec.direction, [0, 0, 1], atol=1e-9)

    def test_noise_two_degrees(self, small_corpus):
        # Monte Carlo with fixed seeds: component noise std 0.02
        for trial, tooth in enumerate(small_corpus):
            rng = np.random.default_rng(100 + trial)
            for kind in fields.AXIS_KINDS:
                gt = tooth["gt_axes"][kind]
                noisy = tooth["vec"].column(kind) + rng.normal(0, 0.02, (tooth["cloud"].n_points, 3))
                rec = fields.decode_axis(tooth["cloud"], noisy, kind)
                dot = min(1.0, abs(float(rec.direction @ gt.direction)))
                assert math.degrees(math.acos(dot)) < 2.0

    def test_permutation_invariance(self, small_corpus):
        tooth = small_corpus[0]
        cloud = tooth["cloud"]
        col = tooth["vec"].column("MA")
        perm = np.random.default_rng(0).permutation(cloud.n_points)
        cloud_p = geometry.PointCloud(cloud.points[perm], cloud.normals[perm],
                                      frame=cloud.frame)
        a = fields.decode_axis(cloud, col, "MA")
        b = fields.decode_axis(cloud_p, col[perm], "MA")
        assert np.allclose(a.direction, b.direction, atol=1e-9)
        assert np.allclose(a.point, b.point, atol=1e-9)

    def test_degenerate_returns_flagged_axis(self):
        cloud = flat_grid_cloud(half_extent=0.4, step=0.2)
        vec = np.array([[0.1, 0.2, 0.3]]) - cloud.points  # all project to one point
        axis = fields.decode_axis(cloud, vec)
        assert axis.is_degenerate
        assert np.allclose(axis.point, [0.1, 0.2, 0.3])


class TestCanonicalization:
    def test_largest_component_positive(self):
        assert np.allclose(fields.canonicalize_direction([0, 0, -1.0]), [0, 0, 1.0])
        assert np.allclose(fields.canonicalize_direction([-0.9, 0.1, 0.4]),
                           [0.9, -0.1, -0.4])
        d = np.array([0.3, 0.8, 0.5])
        assert np.allclose(fields.canonicalize_direction(d), d)

    def test_applied_at_encode_and_decode(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(50, 3)) * 0.3
        pts /= max(1.0, np.linalg.norm(pts, axis=1).max())
        normals = np.tile([0.0, 0.0, 1.0], (50, 1))
        cloud = geometry.PointCloud(pts, normals, frame=geometry.FRAME_NORMALIZED)
        axis, vec = fields.encode_axis(cloud, [0, 0, -1.0], "LA")
        assert axis.direction[2] == 1.0
        rec = fields.decode_axis(cloud, vec, "LA")
        i = np.argmax(np.abs(rec.direction))
        assert rec.direction[i] > 0


class TestFieldFiles:
    def test_distance_csv_round_trip(self, tmp_path, small_corpus):
        dist = small_corpus[0]["dist"]
        path = tmp_path / "d.csv"
        fields.write_distance_field_csv(path, dist)
        first = path.read_text().splitlines()[0]
        assert first == "# sigma=0.3"
        back = fields.read_distance_field_csv(path)
        assert back.sigma == dist.sigma
        assert np.array_equal(back.values, dist.values)

    def test_vector_csv_round_trip(self, tmp_path, small_corpus):
        vec = small_corpus[0]["vec"]
        path = tmp_path / "v.csv"
        fields.write_vector_field_csv(path, vec)
        back = fields.read_vector_field_csv(path)
        assert np.array_equal(back.vectors, vec.vectors)

    def test_annotation_round_trip(self, tmp_path):
        spec = synthetic.spec_for_category("molar", 0)
        _, landmarks, axes = synthetic.generate_tooth(spec)
        path = tmp_path / "a.json"
        fields.write_annotation(path, "tooth_x", "molar", landmarks, axes)
        tooth_id, category, lms, axs = fields.read_annotation(path)
        assert tooth_id == "tooth_x"
        assert category == "molar"
        assert lms.counts() == landmarks.counts()
        assert len(axs) == 4
        for got, exp in zip(axs, axes):
            assert got.kind == exp.kind
            assert np.allclose(got.direction, exp.direction)
