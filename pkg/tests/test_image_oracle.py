import itertools

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sbrtrace.geometry import angle_between
from sbrtrace.image_oracle import MAX_IM_ORDER, fermat_point, im_paths, im_reflections, im_single_diffraction
from sbrtrace.scene import CONCRETE, build_scene, make_corner, make_shoebox
from sbrtrace.tracer import Kind, validate_path

DIMS = np.array([5.0, 4.0, 3.0])


def _box_mirrors():
    """Mirror maps across the six walls of the 5 x 4 x 3 box."""
    maps = []
    for axis in range(3):
        for wall in (0.0, DIMS[axis]):
            def m(p, axis=axis, wall=wall):
                q = np.array(p, dtype=float)
                q[axis] = 2 * wall - q[axis]
                return q
            maps.append(m)
    return maps


def test_first_order_lengths_match_mirror_formula(shoebox):
    paths = im_reflections(shoebox, 1)
    assert len(paths) == 7
    want = sorted(np.linalg.norm(shoebox.rx - m(shoebox.tx)) for m in _box_mirrors())
    got = sorted(p.length for p in paths if p.key)
    assert np.allclose(got, want, atol=1e-9, rtol=0)
    floor = np.sqrt(np.sum((shoebox.rx[:2] - shoebox.tx[:2]) ** 2) + (shoebox.tx[2] + shoebox.rx[2]) ** 2)
    assert any(abs(p.length - floor) < 1e-9 for p in paths)


def test_second_order_lengths_match_double_images(shoebox):
    images = {}
    for a, b in itertools.permutations(_box_mirrors(), 2):
        img = b(a(shoebox.tx))
        images[tuple(np.round(img, 9))] = img
    assert len(images) == 18
    want = sorted(np.linalg.norm(shoebox.rx - img) for img in images.values())
    got = sorted(p.length for p in im_reflections(shoebox, 2) if len(p.key) == 2)
    assert np.allclose(got, want, atol=1e-9, rtol=0)


def test_perpendicular_reflection():
    scene = make_shoebox(DIMS, tx=(1.0, 2.0, 1.5), rx=(3.0, 2.0, 1.5))
    wall = [p for p in im_reflections(scene, 1) if p.key and abs(p.interactions[0].point[0]) < 1e-12]
    assert len(wall) == 1
    assert wall[0].length == pytest.approx(1.0 + 3.0, abs=1e-12)
    assert angle_between(wall[0].launch_direction, np.array([-1.0, 0, 0])) < 1e-12


def test_specular_law_and_validity(shoebox):
    for p in im_paths(shoebox, 3):
        assert validate_path(p, shoebox)
        nodes = p.nodes(shoebox.tx, shoebox.rx)
        for j, it in enumerate(p.interactions):
            n = shoebox.normals[it.index]
            d_in = nodes[j + 1] - nodes[j]
            d_out = nodes[j + 2] - nodes[j + 1]
            assert angle_between(-d_in, n) == pytest.approx(angle_between(d_out, n), abs=1e-10)
            assert np.linalg.norm(np.cross(np.cross(d_in, n), np.cross(d_out, n))) < 1e-9


def test_order_guard(shoebox):
    with pytest.raises(ValueError):
        im_reflections(shoebox, MAX_IM_ORDER + 1)


def test_order_three_grows(shoebox):
    assert len(im_paths(shoebox, 3)) > len(im_paths(shoebox, 2)) > len(im_paths(shoebox, 1))


def test_fermat_point_satisfies_keller_condition():
    rng = np.random.default_rng(9)
    scene = make_corner()
    w = scene.wedges[0]
    for _ in range(200):
        a = np.array([-rng.uniform(1, 20), rng.uniform(-20, 20), rng.uniform(0, 12)])
        b = np.array([rng.uniform(1, 20), -rng.uniform(1, 20), rng.uniform(0, 12)])
        _, q = fermat_point(w, a, b)
        assert abs(angle_between(q - a, w.direction) - angle_between(b - q, w.direction)) < 1e-10


def test_fermat_point_minimizes_length():
    scene = make_corner()
    w = scene.wedges[0]
    z, q = fermat_point(w, scene.tx, scene.rx)
    total = lambda zz: np.linalg.norm(w.start + zz * w.direction - scene.tx) + np.linalg.norm(scene.rx - w.start - zz * w.direction)
    grid = np.linspace(0, w.length, 20001)
    assert total(z) <= min(total(g) for g in grid) + 1e-12


def test_symmetric_edge_diffraction():
    scene = make_corner(tx=(-4.0, 3.0, 5.0), rx=(3.0, -4.0, 5.0))
    (path,) = im_single_diffraction(scene)
    q = path.interactions[0].point
    assert np.allclose(q, [0, 0, 5], atol=1e-12)
    assert path.length == pytest.approx(2 * np.hypot(4.0, 3.0), abs=1e-12)
    assert path.interactions[0].kind is Kind.DIFFRACTION


def test_minimizer_beyond_edge_is_rejected():
    scene = make_corner(tx=(-6.0, 8.0, 20.0), rx=(10.0, -9.0, 30.0))
    assert im_single_diffraction(scene) == []


def test_concave_edges_do_not_diffract(shoebox):
    assert im_single_diffraction(shoebox) == []


def test_rigid_motion_reproducibility(shoebox):
    rot = Rotation.from_euler("xyz", [0.4, 1.1, -0.3])
    shift = np.array([-3.0, 8.0, 1.0])
    faces = [(f.vertex_indices, 0) for f in shoebox.faces]
    moved = build_scene(rot.apply(shoebox.vertices) + shift, faces, [CONCRETE], rot.apply(shoebox.tx) + shift,
                        rot.apply(shoebox.rx) + shift, shoebox.frequency)
    a = {p.key: p for p in im_paths(shoebox, 2)}
    b = {p.key: p for p in im_paths(moved, 2)}
    assert a.keys() == b.keys()
    for k in a:
        assert b[k].length == pytest.approx(a[k].length, abs=1e-9)
        assert np.allclose(rot.apply(a[k].launch_direction), b[k].launch_direction, atol=1e-9)
