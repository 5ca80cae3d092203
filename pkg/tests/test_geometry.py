import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbrtrace.geometry import (
    Ray,
    RayCone,
    SpherePoint,
    angle_between,
    closest_points_segments,
    equal_area_project,
    intersect_triangle,
    intersect_triangles,
    mirror_point,
    mirror_reflect,
    perpendicular_frame,
    point_to_ray_distance,
    segment_blocked,
    slerp,
    tilt,
)

from conftest import random_unit

unit_vectors = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
).filter(lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


def _plane_oracle(o, d, tri, eps=1e-6):
    """Plane intersection, then three half-space tests."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    denom = np.dot(n, d)
    if abs(denom) < 1e-14:
        return None
    t = np.dot(n, a - o) / denom
    if t <= eps:
        return None
    p = o + t * d
    for u, v in ((a, b), (b, c), (c, a)):
        if np.dot(np.cross(v - u, p - u), n) < -1e-12 * np.dot(n, n):
            return None
    return t


def test_axis_ray_hits_triangle():
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    tri = np.array([[-1, -1, 5], [1, -1, 5], [0, 1, 5]], dtype=float)
    t, (u, v) = intersect_triangle(ray, tri)
    assert t == pytest.approx(5.0)
    assert np.allclose(ray.at(t), [0, 0, 5])
    assert 0 <= u <= 1 and 0 <= v <= 1 and u + v <= 1


def test_offset_triangle_is_missed():
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    tri = np.array([[2, 2, 5], [3, 2, 5], [2, 3, 5]], dtype=float)
    assert intersect_triangle(ray, tri) is None


def test_intersection_matches_plane_oracle():
    rng = np.random.default_rng(7)
    agree = 0
    for _ in range(1000):
        o = rng.uniform(-2, 2, 3)
        d = random_unit(rng, 1)[0]
        tri = rng.uniform(-3, 3, (3, 3))
        got = intersect_triangle(Ray(o, d), tri)
        want = _plane_oracle(o, d, tri)
        if want is None or got is None:
            # only tolerate disagreement for grazing edge hits
            if (want is None) != (got is None):
                p = o + (got[0] if got else want) * d
                a, b, c = tri
                n = np.cross(b - a, c - a)
                margins = [abs(np.dot(np.cross(v - u, p - u), n)) / np.dot(n, n) for u, v in ((a, b), (b, c), (c, a))]
                assert min(margins) < 1e-9
            continue
        assert got[0] == pytest.approx(want, abs=1e-9)
        agree += 1
    assert agree > 50


def test_batched_intersection_matches_single():
    rng = np.random.default_rng(3)
    origins = rng.uniform(-1, 1, (40, 3))
    dirs = random_unit(rng, 40)
    tris = rng.uniform(-3, 3, (25, 3, 3))
    T = intersect_triangles(origins, dirs, tris)
    for i in range(40):
        for j in range(25):
            hit = intersect_triangle(Ray(origins[i], dirs[i]), tris[j])
            if hit is None:
                assert np.isinf(T[i, j])
            else:
                assert T[i, j] == pytest.approx(hit[0], rel=1e-12)


def test_intersection_invariant_under_rigid_motion():
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng(11)
    R = Rotation.random(random_state=5).as_matrix()
    shift = np.array([3.0, -2.0, 7.5])
    tri = np.array([[-1, -1, 5], [1, -1, 5], [0, 1, 5]], dtype=float)
    for xy in rng.uniform(-0.3, 0.3, (50, 2)):
        d = np.array([xy[0], xy[1], 1.0])
        d /= np.linalg.norm(d)
        h0 = intersect_triangle(Ray(np.zeros(3), d), tri)
        h1 = intersect_triangle(Ray(shift, R @ d), tri @ R.T + shift)
        assert (h0 is None) == (h1 is None)
        if h0:
            assert h1[0] == pytest.approx(h0[0], rel=1e-9)


def test_mirror_reflect_examples():
    assert np.allclose(mirror_reflect(np.array([0, 0, -1.0]), np.array([0, 0, 1.0])), [0, 0, 1])
    d = np.array([1, 0, -1.0]) / np.sqrt(2)
    assert np.allclose(mirror_reflect(d, np.array([0, 0, 1.0])), np.array([1, 0, 1]) / np.sqrt(2))


@settings(max_examples=200, deadline=None)
@given(unit_vectors, unit_vectors)
def test_mirror_reflect_properties(d, n):
    r = mirror_reflect(d, n)
    assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(d, n) == pytest.approx(-np.dot(r, n), abs=1e-12)
    assert np.allclose(mirror_reflect(r, n), d, atol=1e-12)


def test_mirror_point_is_involution():
    n = np.array([0.0, 0.6, 0.8])
    p = np.array([1.0, 2.0, 3.0])
    q = mirror_point(p, n, 1.5)
    assert np.allclose(mirror_point(q, n, 1.5), p)
    assert np.dot(n, 0.5 * (p + q)) == pytest.approx(1.5)


def test_point_to_ray_distance_examples():
    ray = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    assert point_to_ray_distance(np.array([0, 1.0, 0]), ray)[0] == pytest.approx(1.0)
    assert point_to_ray_distance(np.array([2.0, 0, 0]), ray)[0] == 0.0
    dist, along = point_to_ray_distance(np.array([3.0, 4.0, 0]), ray)
    assert (dist, along) == (pytest.approx(4.0), pytest.approx(3.0))
    assert point_to_ray_distance(np.array([-3.0, 4.0, 0]), ray)[1] == pytest.approx(-3.0)


def test_angle_between_examples():
    u = np.array([1.0, 0.0, 0.0])
    assert angle_between(u, u) == 0.0
    assert angle_between(u, -u) == pytest.approx(np.pi)
    v = np.array([1.0, 1e-8, 0.0])
    v /= np.linalg.norm(v)
    assert angle_between(u, v) == pytest.approx(1e-8, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(unit_vectors, unit_vectors, unit_vectors)
def test_angle_between_is_a_metric(a, b, c):
    assert angle_between(a, b) == pytest.approx(angle_between(b, a), abs=1e-15)
    assert angle_between(a, c) <= angle_between(a, b) + angle_between(b, c) + 1e-10


def test_equal_area_projection_examples():
    assert equal_area_project(SpherePoint(1.3, np.pi / 2)) == pytest.approx((0.0, np.pi / 2))
    assert equal_area_project(SpherePoint(1.0, 0.0)) == (1.0, 0.0)


def test_equal_area_projection_preserves_total_area():
    # The image of the sphere is |x| <= pi cos(y); integrate its width over y.
    y = np.linspace(-np.pi / 2, np.pi / 2, 1_000_001)
    widths = 2 * equal_area_project(SpherePoint(np.pi, 0.0))[0] * np.cos(y)
    area = np.trapezoid(widths, y) if hasattr(np, "trapezoid") else np.trapz(widths, y)
    assert area == pytest.approx(4 * np.pi, rel=1e-3)


@settings(max_examples=200, deadline=None)
@given(unit_vectors)
def test_sphere_point_round_trip(d):
    p = SpherePoint.from_direction(d)
    assert -np.pi <= p.azimuth <= np.pi and -np.pi / 2 <= p.pitch <= np.pi / 2
    assert np.allclose(p.to_direction(), d, atol=1e-12)


def test_ray_cone_rejects_bad_half_angle():
    with pytest.raises(ValueError):
        RayCone(np.zeros(3), np.array([0, 0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        RayCone(np.zeros(3), np.array([0, 0, 1.0]), np.pi / 2)


def test_slerp_is_equiangular():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 0.6, 0.8])
    pts = slerp(a, b, np.linspace(0, 1, 8))
    steps = [angle_between(p, q) for p, q in zip(pts[:-1], pts[1:])]
    assert np.allclose(steps, angle_between(a, b) / 7, atol=1e-14)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


@settings(max_examples=200, deadline=None)
@given(unit_vectors)
def test_perpendicular_frame_is_orthonormal(axis):
    e1, e2 = perpendicular_frame(axis)
    m = np.array([axis, e1, e2])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0)


def test_perpendicular_frame_stacked_matches_single():
    rng = np.random.default_rng(2)
    axes = random_unit(rng, 30)
    e1, e2 = perpendicular_frame(axes)
    for k, a in enumerate(axes):
        f1, f2 = perpendicular_frame(a)
        assert np.allclose(e1[k], f1) and np.allclose(e2[k], f2)


def test_tilt_angles():
    axis = np.array([0.0, 0.0, 1.0])
    out = tilt(axis, 0.1, np.linspace(0, 2 * np.pi, 5, endpoint=False))
    assert np.allclose([angle_between(axis, d) for d in out], 0.1)
    assert np.allclose(out[0], [np.sin(0.1), 0, np.cos(0.1)])


def test_closest_points_segments_against_sampling():
    rng = np.random.default_rng(4)
    s = np.linspace(0, 1, 401)
    for _ in range(30):
        p0, p1, q0, q1 = rng.uniform(-2, 2, (4, 3))
        _, _, d = closest_points_segments(p0, p1, q0, q1)
        P = p0 + s[:, None] * (p1 - p0)
        Q = q0 + s[:, None] * (q1 - q0)
        brute = np.min(np.linalg.norm(P[:, None] - Q[None], axis=-1))
        assert d <= brute + 1e-12
        assert d == pytest.approx(brute, abs=2e-2)


def test_segment_blocked_respects_exclusions():
    tri = np.array([[[-1, -1, 1], [1, -1, 1], [0, 1, 1]]], dtype=float)
    a, b = np.zeros(3), np.array([0, 0, 2.0])
    assert segment_blocked(a, b, tri)
    assert not segment_blocked(a, b, tri, exclude=(0,))
    assert not segment_blocked(a, np.array([0, 0, 0.5]), tri)
