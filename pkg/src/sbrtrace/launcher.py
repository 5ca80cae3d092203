"""Ray launch grids on the unit sphere.

Two ways of subdividing the faces of a regular polyhedron are provided:

* equidistant: face edges are cut into ``n`` equal planar segments and the
  triangular lattice is pushed onto the sphere;
* equiangular: consecutive points on every layer subtend equal central
  angles, inner layers are seeded from the outer one by vector sums.

Both produce ``10 n**2 + 2`` directions on the icosahedron. Points shared by
several faces are generated once (vertices, then edges, then face interiors),
so the count is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SpherePoint, angle_between, equal_area_project, normalize, slerp

#: Central angle between adjacent icosahedron vertices, ``arccos(1/sqrt(5))``.
ICO_ADJACENT_ANGLE = float(np.arccos(1.0 / np.sqrt(5.0)))


class Scheme(str, Enum):
    EQUIDISTANT = "equidistant"
    EQUIANGULAR = "equiangular"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """Regular polyhedron with triangular faces inscribed in the unit sphere."""

    name: str
    vertices: np.ndarray  # (V, 3), unit norm
    faces: np.ndarray  # (F, 3) vertex indices, counter-clockwise from outside

    @property
    def edges(self) -> list[tuple[int, int]]:
        seen = set()
        for f in self.faces:
            for k in range(3):
                i, j = int(f[k]), int(f[(k + 1) % 3])
                seen.add((min(i, j), max(i, j)))
        return sorted(seen)

    @property
    def adjacent_angle(self) -> float:
        i, j = self.edges[0]
        return angle_between(self.vertices[i], self.vertices[j])


@dataclass(frozen=True, eq=False)
class LaunchGrid:
    directions: np.ndarray  # (N, 3)
    n: int
    cone_half_angle: float
    scheme: Scheme
    solid: str = "icosahedron"

    def __len__(self) -> int:
        return len(self.directions)


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    faces = faces.copy()
    for f in faces:
        a, b, c = vertices[f]
        if np.dot(np.cross(b - a, c - a), a + b + c) < 0:
            f[1], f[2] = f[2], f[1]
    return faces


def build_icosahedron() -> Polyhedron:
    """Unit icosahedron with one vertex at +z and one at -z."""
    z = 1.0 / np.sqrt(5.0)
    r = 2.0 / np.sqrt(5.0)
    verts = [[0.0, 0.0, 1.0]]
    for k in range(5):
        phi = 2 * np.pi * k / 5
        verts.append([r * np.cos(phi), r * np.sin(phi), z])
    for k in range(5):
        phi = 2 * np.pi * k / 5 + np.pi / 5
        verts.append([r * np.cos(phi), r * np.sin(phi), -z])
    verts.append([0.0, 0.0, -1.0])
    faces = []
    for k in range(5):
        k1 = (k + 1) % 5
        faces.append([0, 1 + k, 1 + k1])
        faces.append([1 + k, 6 + k, 1 + k1])
        faces.append([1 + k1, 6 + k, 6 + k1])
        faces.append([11, 6 + k1, 6 + k])
    vertices = np.array(verts)
    return Polyhedron("icosahedron", vertices, _orient_outward(vertices, np.array(faces)))


def build_octahedron() -> Polyhedron:
    vertices = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float
    )
    faces = [[4, a, b] for a, b in ((0, 2), (2, 1), (1, 3), (3, 0))]
    faces += [[5, b, a] for a, b in ((0, 2), (2, 1), (1, 3), (3, 0))]
    return Polyhedron("octahedron", vertices, _orient_outward(vertices, np.array(faces)))


def build_tetrahedron() -> Polyhedron:
    vertices = normalize(np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float))
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Polyhedron("tetrahedron", vertices, _orient_outward(vertices, faces))


SOLIDS = {
    "icosahedron": build_icosahedron,
    "octahedron": build_octahedron,
    "tetrahedron": build_tetrahedron,
}


def expected_ray_count(n: int, solid: str = "icosahedron") -> int:
    faces = {"icosahedron": 20, "octahedron": 8, "tetrahedron": 4}[solid]
    return faces * n * n // 2 + 2


def cone_half_angle(n: int) -> float:
    """Launch cone half-angle ``theta_0 / (sqrt(3) n)`` on the icosahedron."""
    return ICO_ADJACENT_ANGLE / (np.sqrt(3.0) * n)


def _edge_points(poly: Polyhedron, n: int, interpolate) -> dict:
    """Interior points of every polyhedron edge, keyed by ``(i, j)`` with the
    points ordered from vertex ``i`` to vertex ``j`` (``i < j``)."""
    t = np.arange(1, n) / n
    return {(i, j): interpolate(poly.vertices[i], poly.vertices[j], t) for i, j in poly.edges}


def _oriented_edge(edge_pts: dict, i: int, j: int) -> np.ndarray:
    if i < j:
        return edge_pts[(i, j)]
    return edge_pts[(j, i)][::-1]


def _flat_lerp(a, b, t):
    return a[None] + t[:, None] * (b - a)[None]


def subdivide_equidistant(poly: Polyhedron, n: int) -> LaunchGrid:
    """Equal planar intervals on each face, then radial projection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    chunks = [poly.vertices]
    edge_pts = _edge_points(poly, n, _flat_lerp)
    chunks += [normalize(edge_pts[e]) for e in poly.edges if len(edge_pts[e])]
    for a, b, c in poly.vertices[poly.faces]:
        pts = [
            a + (i / n) * (b - a) + (j / n) * (c - a)
            for i in range(1, n)
            for j in range(1, n - i)
        ]
        if pts:
            chunks.append(normalize(np.array(pts)))
    dirs = np.concatenate(chunks)
    return LaunchGrid(dirs, n, cone_half_angle(n), Scheme.EQUIDISTANT, poly.name)


def _inner_corners(ring: np.ndarray, m: int) -> np.ndarray:
    """Corners of the next layer from a ring of ``3 m`` points whose corners
    sit at indices ``0, m, 2m``: each new corner is the outer corner plus the
    two edge vectors to its ring neighbours."""
    idx = np.array([0, m, 2 * m])
    corner = ring[idx]
    nxt = ring[(idx + 1) % len(ring)]
    prev = ring[(idx - 1) % len(ring)]
    return corner + (nxt - corner) + (prev - corner)


def face_layers(corners: np.ndarray, n: int) -> list[np.ndarray]:
    """Equiangular layers of one face.

    ``corners`` are the three unit vertices of the face. Layer ``a`` holds
    ``3 (n - 3a)`` points ordered around its triangle (corner 0 first); a
    final single point is emitted at the face centre when ``n`` is a
    multiple of 3. Edge points of every layer are spaced at equal central
    angles between that layer's corners.
    """
    layers = []
    tri = np.asarray(corners, dtype=float)
    m = n
    while m >= 1:
        t = np.arange(m) / m
        ring = np.concatenate([slerp(tri[k], tri[(k + 1) % 3], t) for k in range(3)])
        layers.append(ring)
        if m - 3 < 0:
            break
        inner = _inner_corners(ring, m)
        m -= 3
        if m == 0:
            layers.append(normalize(inner.mean(axis=0))[None])
            break
        tri = normalize(inner)
    return layers


def subdivide_equiangular(poly: Polyhedron, n: int) -> LaunchGrid:
    """Equal central angles along every layer edge, inner corners by vector
    sums of the outer layer."""
    if n < 1:
        raise ValueError("n must be >= 1")
    chunks = [poly.vertices]
    edge_pts = _edge_points(poly, n, slerp)
    chunks += [edge_pts[e] for e in poly.edges if len(edge_pts[e])]
    for face in poly.faces:
        layers = face_layers(poly.vertices[face], n)
        if len(layers) > 1:
            chunks.append(np.concatenate(layers[1:]))
    dirs = np.concatenate(chunks)
    return LaunchGrid(dirs, n, cone_half_angle(n), Scheme.EQUIANGULAR, poly.name)


def make_grid(n: int, scheme: Scheme | str = Scheme.EQUIANGULAR, solid: str = "icosahedron") -> LaunchGrid:
    scheme = Scheme(scheme)
    poly = SOLIDS[solid]()
    if scheme is Scheme.EQUIDISTANT:
        return subdivide_equidistant(poly, n)
    if solid != "icosahedron":
        raise ValueError("equiangular division is only defined on the icosahedron")
    return subdivide_equiangular(poly, n)


@dataclass(frozen=True, eq=False)
class DensityStats:
    projected: np.ndarray  # (N, 2) equal-area coordinates
    nearest_neighbor_angles: np.ndarray  # (N,) radians
    coefficient_of_variation: float


def nearest_neighbor_angles(directions: np.ndarray) -> np.ndarray:
    tree = cKDTree(directions)
    chord, _ = tree.query(directions, k=2)
    return 2.0 * np.arcsin(np.clip(chord[:, 1] / 2.0, 0.0, 1.0))


def density_stats(grid: LaunchGrid) -> DensityStats:
    dirs = grid.directions
    proj = np.array([equal_area_project(SpherePoint.from_direction(d)) for d in dirs])
    nn = nearest_neighbor_angles(dirs)
    return DensityStats(proj, nn, float(np.std(nn) / np.mean(nn)))
