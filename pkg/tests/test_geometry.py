import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from pcn.geometry import (Camera, DepthImage, KdTree, PlyError, RigidTransform, TriangleMesh, apply_transform,
                          backproject, look_at, normalize_cloud, ply_read, ply_write, read_off, render_depth,
                          sample_mesh_surface, write_off)
from pcn.geometry.camera import D_MAX, INVALID_DEPTH
from pcn.geometry.transform import matrix_to_quat, quat_to_matrix
from oracles import brute_nn

_coords = st.floats(-5, 5, allow_nan=False, allow_subnormal=False)


def _cloud(n_min=1, n_max=60):
    return hnp.arrays(np.float64, st.tuples(st.integers(n_min, n_max), st.just(3)), elements=_coords)


# ------------------------------------------------------------------ kd-tree

def test_kdtree_matches_brute_force_512(rng):
    pts = rng.uniform(-1, 1, size=(512, 3))
    q = rng.uniform(-1.2, 1.2, size=(512, 3))
    idx, d = KdTree(pts).query(q)
    bi, bd = brute_nn(pts, q)
    assert np.array_equal(idx, bi)
    np.testing.assert_allclose(d, bd, atol=1e-12)


def test_kdtree_1000_random_cases_exact(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        pts = np.round(rng.uniform(-1, 1, size=(n, 3)), 1)  # coarse grid provokes ties
        q = np.round(rng.uniform(-1, 1, size=(1, 3)), 1)
        idx, _ = KdTree(pts, leaf_size=2).query(q)
        assert idx[0] == brute_nn(pts, q)[0][0]


@given(_cloud(), _cloud(1, 20))
def test_kdtree_property_matches_oracle(pts, q):
    idx, d = KdTree(pts).query(q)
    bi, bd = brute_nn(pts, q)
    assert np.array_equal(idx, bi)
    np.testing.assert_allclose(d, bd, rtol=1e-12, atol=1e-12)


def test_kdtree_single_point():
    tree = KdTree(np.array([[1.0, 2.0, 3.0]]))
    idx, _ = tree.query(np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(idx == 0)


def test_kdtree_coincident_query_distance_zero(rng):
    pts = rng.normal(size=(100, 3))
    i, d = KdTree(pts).nearest(pts[37])
    assert i == 37 and d == 0.0


def test_kdtree_duplicates_lowest_index_wins():
    pts = np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]])
    assert KdTree(pts).nearest([0.0, 0.0, 0.1])[0] == 1


def test_kdtree_lattice_center_and_far_query():
    g = np.arange(3.0)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    tree = KdTree(pts)
    assert tree.nearest([1.0, 1.0, 1.0])[0] == 13
    assert np.array_equal(pts[tree.nearest([100.0, 100.0, 100.0])[0]], [2, 2, 2])


def test_kdtree_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        KdTree(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        KdTree(np.array([[np.nan, 0, 0]]))


# --------------------------------------------------------------- transforms

def test_identity_transform_leaves_cloud(rng):
    pts = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(RigidTransform.identity().apply(pts), pts)


def test_quarter_turn_about_z():
    T = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(T.apply(np.array([[1.0, 0, 0]])), [[0, 1, 0]], atol=1e-6)


@given(hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda a: np.linalg.norm(a) > 0.1),
       st.floats(-np.pi, np.pi), hnp.arrays(np.float64, 3, elements=_coords))
def test_compose_with_inverse_is_identity(axis, angle, t):
    T = RigidTransform.from_axis_angle(axis, angle, t)
    I = T.compose(T.inverse())
    np.testing.assert_allclose(I.matrix, np.eye(3), atol=1e-5)
    np.testing.assert_allclose(I.translation, 0, atol=1e-5)


@given(_cloud(2, 30), hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda a: np.linalg.norm(a) > 0.1),
       st.floats(-np.pi, np.pi))
def test_transform_preserves_distances(pts, axis, angle):
    out = apply_transform(pts, RigidTransform.from_axis_angle(axis, angle, [0.3, -1, 2]))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-5, atol=1e-9)


def test_non_unit_quaternion_rejected():
    with pytest.raises(ValueError, match="unit"):
        RigidTransform(np.array([1.0, 0.1, 0, 0]), np.zeros(3))


def test_matrix_quaternion_round_trip(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        back = matrix_to_quat(quat_to_matrix(q))
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-12


def test_look_at_points_z_at_target():
    pose = look_at([0.0, -2.0, 0.5])
    forward = pose.matrix[:, 2]
    np.testing.assert_allclose(forward, -np.array([0.0, -2.0, 0.5]) / np.linalg.norm([0.0, -2.0, 0.5]))


# --------------------------------------------------------------------- mesh

def _square(z=0.0, half=0.5, center=(0.0, 0.0)):
    cx, cy = center
    v = np.array([[cx - half, cy - half, z], [cx + half, cy - half, z], [cx + half, cy + half, z], [cx - half, cy + half, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def _barycentric(p, a, b, c):
    v0, v1, v2 = b - a, c - a, p - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return 1 - v - w, v, w


def test_single_triangle_samples_inside(rng):
    a, b, c = rng.normal(size=(3, 3))
    mesh = TriangleMesh(np.array([a, b, c]), np.array([[0, 1, 2]]))
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n)
    pts, _, bary = sample_mesh_surface(mesh, 2000, seed=1, return_faces=True)
    assert np.all((bary >= 0) & (bary <= 1))
    np.testing.assert_allclose(bary.sum(axis=1), 1.0)
    for p in pts:
        assert abs((p - a) @ n) < 1e-6
        assert min(_barycentric(p, a, b, c)) >= -1e-6


def test_face_choice_follows_area():
    # areas 1 and 3: two disjoint right triangles
    v = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0], [10, 0, 0], [13, 0, 0], [10, 2, 0]], float)
    mesh = TriangleMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
    _, faces, _ = sample_mesh_surface(mesh, 10_000, seed=3, return_faces=True)
    frac = np.mean(faces == 0)
    sigma = np.sqrt(0.25 * 0.75 / 10_000)
    assert abs(frac - 0.25) < 3 * sigma


def test_unit_square_sample_mean():
    pts = sample_mesh_surface(_square(half=0.5, center=(0.5, 0.5)), 10_000, seed=0)
    np.testing.assert_allclose(pts.mean(axis=0), [0.5, 0.5, 0.0], atol=0.02)


def test_zero_area_mesh_rejected():
    mesh = TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError, match="zero surface area"):
        sample_mesh_surface(mesh, 10)


def test_sampling_is_deterministic():
    m = _square()
    assert np.array_equal(sample_mesh_surface(m, 100, seed=5), sample_mesh_surface(m, 100, seed=5))


def test_off_round_trip(tmp_path, rng):
    m = TriangleMesh(rng.normal(size=(5, 3)), np.array([[0, 1, 2], [2, 3, 4]]))
    write_off(m, tmp_path / "m.off")
    back = read_off(tmp_path / "m.off")
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_allclose(back.vertices, m.vertices)


def test_off_quad_is_fan_triangulated(tmp_path):
    (tmp_path / "q.off").write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    assert read_off(tmp_path / "q.off").triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_off_bad_header_names_file(tmp_path):
    (tmp_path / "bad.off").write_text("PLY\n")
    with pytest.raises(ValueError, match="bad.off"):
        read_off(tmp_path / "bad.off")


# ------------------------------------------------------------------- camera

def _facing_camera(distance=2.0, **kw):
    # camera on the -z side of the origin looking along +z
    return Camera(pose=RigidTransform.from_matrix(np.eye(3), [0.0, 0.0, -distance]), d_max=10.0, **kw)


def test_empty_mesh_renders_invalid():
    img = render_depth(TriangleMesh.empty(), Camera())
    assert np.all(img.depth == INVALID_DEPTH)


def test_square_at_distance_two_center_depth():
    cam = _facing_camera(width=81, height=61, fx=40, fy=40)
    img = render_depth(_square(), cam)
    assert img.depth[30, 40] == pytest.approx(2.0, abs=1e-9)


def test_nearer_surface_wins():
    cam = _facing_camera(width=41, height=31, fx=20, fy=20)
    mesh = TriangleMesh.merge([_square(z=0.0), _square(z=-0.5, half=0.2)])
    img = render_depth(mesh, cam)
    assert img.depth[15, 20] == pytest.approx(1.5)
    assert img.depth[15, 2] == pytest.approx(2.0) or img.depth[15, 2] == INVALID_DEPTH


def test_d_max_clips_far_hits():
    cam = _facing_camera(width=21, height=21, fx=10, fy=10)
    cam = Camera(21, 21, 10, 10, pose=cam.pose, d_max=1.9)
    assert not render_depth(_square(), cam).valid.any()


def test_principal_point_backprojects_to_axis():
    cam = Camera(width=5, height=3, fx=10, fy=10)
    depth = np.zeros((3, 5))
    depth[1, 2] = 1.7
    np.testing.assert_allclose(backproject(DepthImage(depth, cam)), [[0, 0, 1.7]])


def test_all_invalid_backprojects_empty():
    assert backproject(DepthImage(np.zeros((4, 4)), Camera(width=4, height=4))).shape == (0, 3)


def test_render_backproject_lies_on_surface():
    cam = Camera(width=64, height=48, fx=24, fy=24).with_pose(look_at([0.6, -0.5, 0.7]))
    box = [
        _square(z=0.2, half=0.3),
        TriangleMesh(np.array([[-0.3, -0.3, -0.2], [0.3, -0.3, -0.2], [0.3, -0.3, 0.2], [-0.3, -0.3, 0.2]]),
                     np.array([[0, 1, 2], [0, 2, 3]])),
    ]
    mesh = TriangleMesh.merge(box)
    pts = backproject(render_depth(mesh, cam))
    assert len(pts) > 50
    on_top = np.abs(pts[:, 2] - 0.2) < 1e-4
    on_side = np.abs(pts[:, 1] + 0.3) < 1e-4
    assert np.all(on_top | on_side)


def test_default_camera_constants():
    cam = Camera()
    assert (cam.width, cam.height) == (160, 120)
    assert D_MAX == 1.6 and cam.d_max == D_MAX


# -------------------------------------------------------------------- clouds

def test_normalize_two_points():
    out, center, scale = normalize_cloud(np.array([[2.0, 0, 0], [-2.0, 0, 0]]))
    np.testing.assert_allclose(out, [[1, 0, 0], [-1, 0, 0]])
    np.testing.assert_allclose(center, 0)
    assert scale == 2.0


def test_normalize_translation_equivariant(rng):
    pts = rng.normal(size=(20, 3))
    a, _, _ = normalize_cloud(pts)
    b, c, _ = normalize_cloud(pts + [3.0, -1.0, 2.0])
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(c, pts.mean(0) + [3.0, -1.0, 2.0])


def test_normalize_is_idempotent(rng):
    once, _, _ = normalize_cloud(rng.normal(size=(20, 3)))
    twice, c, s = normalize_cloud(once)
    np.testing.assert_allclose(twice, once, atol=1e-12)
    assert s == pytest.approx(1.0) and np.allclose(c, 0)


def test_normalize_identical_points_rejected():
    with pytest.raises(ValueError):
        normalize_cloud(np.ones((4, 3)))


# ----------------------------------------------------------------------- ply

def test_ply_binary_round_trip_bit_identical(tmp_path, rng):
    pts = rng.normal(size=(3, 3)).astype(np.float32)
    ply_write(pts, tmp_path / "a.ply")
    back = ply_read(tmp_path / "a.ply")
    assert back.dtype == np.float32 and np.array_equal(back, pts)


def test_ply_double_round_trip(tmp_path, rng):
    pts = rng.normal(size=(7, 3))
    ply_write(pts, tmp_path / "d.ply", binary=False)
    assert np.array_equal(ply_read(tmp_path / "d.ply"), pts)


def test_ply_empty_cloud(tmp_path):
    ply_write(np.zeros((0, 3), np.float32), tmp_path / "e.ply")
    assert b"element vertex 0" in (tmp_path / "e.ply").read_bytes()
    assert ply_read(tmp_path / "e.ply").shape == (0, 3)


def test_ply_extra_properties_ignored(tmp_path):
    (tmp_path / "n.ply").write_text(
        "ply\nformat ascii 1.0\ncomment normals and colours\nelement vertex 2\n"
        "property float nx\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n"
        "9 1 2 3 255\n9 4 5 6 0\n")
    np.testing.assert_array_equal(ply_read(tmp_path / "n.ply"), [[1, 2, 3], [4, 5, 6]])


def test_ply_malformed_header_has_line_number(tmp_path):
    (tmp_path / "b.ply").write_text("ply\nformat ascii 1.0\nelement vertex\nend_header\n")
    with pytest.raises(PlyError, match="line 3"):
        ply_read(tmp_path / "b.ply")


def test_ply_missing_xyz_is_schema_error(tmp_path):
    (tmp_path / "s.ply").write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n")
    with pytest.raises(PlyError, match="lacks properties"):
        ply_read(tmp_path / "s.ply")


@given(_cloud(0, 30))
def test_ply_round_trip_property(pts):
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "p.ply")
        ply_write(pts, path)
        assert np.array_equal(ply_read(path), pts)
