"""Triangle-mesh scenes: materials, faces, wedges, Tx/Rx and frequency.

Scenes are loaded from a small JSON format or built by the synthetic
generators (:func:`make_shoebox`, :func:`make_corner`,
:func:`make_outdoor_blocks`). A :class:`Scene` is immutable once built and
carries the stacked arrays the vectorised tracer works on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import EPS_HIT, normalize

COPLANARITY_THRESHOLD = 1e-3


class SceneError(ValueError):
    """Raised for malformed or inconsistent scene descriptions."""


@dataclass(frozen=True)
class Material:
    name: str
    relative_permittivity: float = 1.0
    conductivity: float = 0.0

    def __post_init__(self):
        if self.relative_permittivity < 1.0:
            raise SceneError(f"material {self.name!r}: eps_r must be >= 1")
        if self.conductivity < 0.0:
            raise SceneError(f"material {self.name!r}: sigma must be >= 0")


CONCRETE = Material("concrete", 5.31, 0.0326)
PEC = Material("pec", 1.0, 1e12)


@dataclass(frozen=True, eq=False)
class Face:
    id: int
    vertex_indices: tuple[int, int, int]
    material_id: int
    normal: np.ndarray
    area: float


@dataclass(frozen=True, eq=False)
class Wedge:
    """Edge shared by two non-coplanar faces.

    ``exterior_angle`` is the opening of the free-space sector, measured
    from the half-plane of ``faces[0]`` towards its normal until the
    half-plane of ``faces[1]``. Values above pi are convex (diffracting)
    edges such as building corners.
    """

    id: int
    vertex_indices: tuple[int, int]
    faces: tuple[int, int]
    start: np.ndarray
    end: np.ndarray
    exterior_angle: float
    # In-plane frame around the edge: ``ref`` lies in faces[0] pointing away
    # from the edge, ``side`` is faces[0]'s normal.
    ref: np.ndarray = field(repr=False)
    side: np.ndarray = field(repr=False)

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def convex(self) -> bool:
        return self.exterior_angle > np.pi

    def azimuth(self, v: np.ndarray) -> np.ndarray:
        """Angle of ``v`` around the edge in ``[0, 2 pi)``, measured from
        ``ref`` towards ``side``."""
        v = np.asarray(v, dtype=float)
        ang = np.arctan2(v @ self.side, v @ self.ref)
        return np.mod(ang, 2 * np.pi)

    def in_free_space(self, v: np.ndarray, margin: float = 1e-9) -> np.ndarray:
        az = self.azimuth(v)
        return (az > margin) & (az < self.exterior_angle - margin)


@dataclass(frozen=True, eq=False)
class Scene:
    vertices: np.ndarray
    faces: tuple[Face, ...]
    wedges: tuple[Wedge, ...]
    materials: tuple[Material, ...]
    tx: np.ndarray
    rx: np.ndarray
    frequency: float
    name: str = "scene"
    # stacked views for the vectorised kernels
    triangles: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tris = (
            self.vertices[np.array([f.vertex_indices for f in self.faces])]
            if self.faces
            else np.zeros((0, 3, 3))
        )
        normals = np.array([f.normal for f in self.faces]) if self.faces else np.zeros((0, 3))
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", np.einsum("mk,mk->m", normals, tris[:, 0]) if self.faces else np.zeros(0))

    @property
    def wavelength(self) -> float:
        return 299_792_458.0 / self.frequency

    def with_endpoints(self, tx=None, rx=None) -> "Scene":
        tx = self.tx if tx is None else np.asarray(tx, dtype=float)
        rx = self.rx if rx is None else np.asarray(rx, dtype=float)
        _check_endpoints(tx, rx, self.frequency)
        return Scene(self.vertices, self.faces, self.wedges, self.materials, tx, rx, self.frequency, self.name)

    def to_dict(self) -> dict:
        return {
            "frequency_hz": self.frequency,
            "tx": self.tx.tolist(),
            "rx": self.rx.tolist(),
            "materials": [
                {"name": m.name, "eps_r": m.relative_permittivity, "sigma": m.conductivity}
                for m in self.materials
            ],
            "vertices": self.vertices.tolist(),
            "faces": [{"v": list(f.vertex_indices), "material": f.material_id} for f in self.faces],
            "wedges": [{"edge": list(w.vertex_indices), "faces": list(w.faces)} for w in self.wedges],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_endpoints(tx, rx, frequency):
    if tx.shape != (3,) or rx.shape != (3,):
        raise SceneError("tx and rx must be 3-vectors")
    if np.allclose(tx, rx, rtol=0, atol=1e-12):
        raise SceneError("tx and rx coincide")
    if not frequency > 0:
        raise SceneError("frequency must be positive")


def _make_faces(vertices: np.ndarray, raw_faces, n_materials: int) -> tuple[Face, ...]:
    faces = []
    seen: dict[frozenset, int] = {}
    for fid, (idx, mat) in enumerate(raw_faces):
        if len(idx) != 3:
            raise SceneError(f"face {fid}: expected 3 vertex indices, got {len(idx)}")
        idx = tuple(int(i) for i in idx)
        for i in idx:
            if not 0 <= i < len(vertices):
                raise SceneError(f"face {fid}: vertex index {i} out of range")
        if not 0 <= int(mat) < n_materials:
            raise SceneError(f"face {fid}: material {mat} out of range")
        key = frozenset(idx)
        if key in seen:
            raise SceneError(f"face {fid}: duplicate of face {seen[key]}")
        seen[key] = fid
        a, b, c = vertices[list(idx)]
        cr = np.cross(b - a, c - a)
        area = 0.5 * float(np.linalg.norm(cr))
        if len(key) < 3 or area <= 1e-12:
            raise SceneError(f"face {fid}: degenerate triangle (area {area:.3g} m^2)")
        faces.append(Face(fid, idx, int(mat), cr / (2 * area), area))
    return tuple(faces)


def _edge_map(faces) -> dict[tuple[int, int], list[tuple[int, tuple[int, int]]]]:
    edges: dict[tuple[int, int], list] = {}
    for f in faces:
        v = f.vertex_indices
        for k in range(3):
            i, j = v[k], v[(k + 1) % 3]
            edges.setdefault((min(i, j), max(i, j)), []).append((f.id, (i, j)))
    return edges


def _build_wedge(wid, vertices, faces_by_id, i, j, fa, fb) -> Wedge:
    start, end = vertices[i], vertices[j]
    e = normalize(end - start)
    face_a, face_b = faces_by_id[fa], faces_by_id[fb]

    def inward(face):
        third = [k for k in face.vertex_indices if k not in (i, j)][0]
        w = vertices[third] - start
        w = w - np.dot(w, e) * e
        return w / np.linalg.norm(w)

    ref, side = inward(face_a), face_a.normal
    other = inward(face_b)
    ext = float(np.mod(np.arctan2(other @ side, other @ ref), 2 * np.pi))
    return Wedge(wid, (i, j), (fa, fb), start.copy(), end.copy(), ext, ref, side.copy())


def extract_wedges(
    faces, vertices: np.ndarray, coplanarity_threshold: float = COPLANARITY_THRESHOLD
) -> tuple[list[Wedge], list[str]]:
    """One wedge per manifold edge whose faces bend by more than the
    threshold. Edges used by more than two faces are reported in the
    returned warning list and skipped."""
    by_id = {f.id: f for f in faces}
    wedges, warnings = [], []
    edges = _edge_map(faces)
    for (i, j) in sorted(edges):
        users = edges[(i, j)]
        if len(users) > 2:
            warnings.append(f"non-manifold edge ({i}, {j}) shared by faces {[u[0] for u in users]}")
            continue
        if len(users) < 2:
            continue
        (fa, _), (fb, _) = sorted(users)
        na, nb = by_id[fa].normal, by_id[fb].normal
        bend = float(np.arctan2(np.linalg.norm(np.cross(na, nb)), np.dot(na, nb)))
        if bend <= coplanarity_threshold:
            continue
        wedges.append(_build_wedge(len(wedges), vertices, by_id, i, j, fa, fb))
    return wedges, warnings


def _check_winding(faces):
    for (i, j), users in _edge_map(faces).items():
        if len(users) == 2 and users[0][1] == users[1][1]:
            raise SceneError(
                f"faces {users[0][0]} and {users[1][0]} have inconsistent winding across edge ({i}, {j})"
            )


def build_scene(
    vertices,
    faces,
    materials,
    tx,
    rx,
    frequency: float,
    wedges=None,
    name: str = "scene",
    coplanarity_threshold: float = COPLANARITY_THRESHOLD,
) -> Scene:
    """Validate raw arrays and assemble a :class:`Scene`.

    ``faces`` is a sequence of ``(vertex_indices, material_id)``; ``wedges``
    optionally a sequence of ``((i, j), (face_a, face_b))``.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    _check_endpoints(tx, rx, frequency)
    materials = tuple(materials)
    face_objs = _make_faces(vertices, faces, len(materials))
    _check_winding(face_objs)
    if wedges is None:
        wedge_objs, _ = extract_wedges(face_objs, vertices, coplanarity_threshold)
    else:
        by_id = {f.id: f for f in face_objs}
        wedge_objs = []
        for wid, (edge, pair) in enumerate(wedges):
            i, j = (int(k) for k in edge)
            for fid in pair:
                if fid not in by_id:
                    raise SceneError(f"wedge {wid}: face {fid} does not exist")
                if not {i, j} <= set(by_id[fid].vertex_indices):
                    raise SceneError(f"wedge {wid}: face {fid} does not contain edge ({i}, {j})")
            wedge_objs.append(_build_wedge(wid, vertices, by_id, i, j, int(pair[0]), int(pair[1])))
    return Scene(vertices, face_objs, tuple(wedge_objs), materials, tx, rx, float(frequency), name)


def scene_from_dict(data: dict, name: str = "scene") -> Scene:
    try:
        materials = [Material(m["name"], float(m["eps_r"]), float(m["sigma"])) for m in data["materials"]]
        faces = [(f["v"], f["material"]) for f in data["faces"]]
        wedges = None
        if "wedges" in data and data["wedges"] is not None:
            wedges = [(w["edge"], w["faces"]) for w in data["wedges"]]
        return build_scene(
            data["vertices"], faces, materials, data["tx"], data["rx"], float(data["frequency_hz"]), wedges, name
        )
    except KeyError as exc:
        raise SceneError(f"missing field {exc}") from None
    except (TypeError, IndexError) as exc:
        raise SceneError(f"malformed scene: {exc}") from None


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise SceneError(f"scene file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from None
    return scene_from_dict(data, name=path.stem)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1))


def _box_quads(lo, hi):
    """Eight corners and six quads (CCW seen from outside) of a box."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    corners = np.array(
        [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
         [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        dtype=float,
    )
    quads = {
        "bottom": (0, 3, 2, 1),
        "top": (4, 5, 6, 7),
        "south": (0, 1, 5, 4),
        "north": (2, 3, 7, 6),
        "west": (3, 0, 4, 7),
        "east": (1, 2, 6, 5),
    }
    return corners, quads


def _split(quad, flip=False):
    a, b, c, d = quad
    if flip:
        a, b, c, d = d, c, b, a
    return [(a, b, c), (a, c, d)]


def _inside_box(p, lo, hi, margin=0.0):
    return bool(np.all(p > np.asarray(lo) + margin) and np.all(p < np.asarray(hi) - margin))


def make_shoebox(dimensions, material: Material = CONCRETE, tx=(1, 1, 1.5), rx=(4, 3, 1.5), frequency=2.4e9) -> Scene:
    """Closed rectangular room with inward-facing normals (12 triangles)."""
    dims = np.asarray(dimensions, dtype=float)
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    for label, p in (("tx", tx), ("rx", rx)):
        if not _inside_box(p, np.zeros(3), dims, EPS_HIT):
            raise SceneError(f"{label} {p.tolist()} is not strictly inside the box")
    corners, quads = _box_quads(np.zeros(3), dims)
    faces = []
    for q in quads.values():
        faces += [(t, 0) for t in _split(q, flip=True)]
    return build_scene(corners, faces, [material], tx, rx, frequency, name="shoebox")


def make_corner(
    leg: float = 20.0,
    height: float = 12.0,
    material: Material = CONCRETE,
    tx=(-6.0, 8.0, 3.0),
    rx=(10.0, -9.0, 1.5),
    frequency=2.4e9,
) -> Scene:
    """Two walls of a building corner meeting along the z axis.

    The building occupies ``x > 0, y > 0``; the only wedge is the vertical
    edge at the origin with a 270 degree free-space opening.
    """
    verts = np.array(
        [[0, 0, 0], [0, 0, height], [leg, 0, 0], [leg, 0, height], [0, leg, 0], [0, leg, height]],
        dtype=float,
    )
    # wall y=0 (normal -y) and wall x=0 (normal -x)
    faces = [((0, 2, 3), 0), ((0, 3, 1), 0), ((0, 1, 5), 0), ((0, 5, 4), 0)]
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    for label, p in (("tx", tx), ("rx", rx)):
        if p[0] > 0 and p[1] > 0:
            raise SceneError(f"{label} {p.tolist()} lies inside the building")
    return build_scene(verts, faces, [material], tx, rx, frequency, name="corner")


def make_outdoor_blocks(
    blocks,
    ground: float | None = 60.0,
    material: Material = CONCRETE,
    tx=(2.0, 7.0, 4.0),
    rx=(20.0, 10.0, 2.0),
    frequency=2.4e9,
) -> Scene:
    """Rectangular buildings ``(xmin, ymin, xmax, ymax, height)`` on an
    optional square ground plane of the given half-width."""
    verts, faces = [], []
    if ground is not None:
        g = float(ground)
        verts += [[-g, -g, 0.0], [g, -g, 0.0], [g, g, 0.0], [-g, g, 0.0]]
        faces += [((0, 1, 2), 0), ((0, 2, 3), 0)]
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    for b in blocks:
        x0, y0, x1, y1, h = (float(v) for v in b)
        lo, hi = (x0, y0, 0.0), (x1, y1, h)
        for label, p in (("tx", tx), ("rx", rx)):
            if _inside_box(p, lo, hi) or (ground is not None and p[2] <= 0):
                raise SceneError(f"{label} {p.tolist()} is inside an obstacle")
        corners, quads = _box_quads(lo, hi)
        base = len(verts)
        verts += corners.tolist()
        for name, q in quads.items():
            if name == "bottom":
                continue
            faces += [(tuple(base + k for k in t), 0) for t in _split(q)]
    return build_scene(np.array(verts), faces, [material], tx, rx, frequency, name="blocks")
