"""Shooting-and-bouncing-rays engine.

Every launch direction is walked as a ray cone: specular reflections spawn
from the nearest face hit, convex wedges passing within the cone spawn a fan
of rays on the Keller cone, and a candidate path is recorded whenever the
receiver falls inside the cone. Candidates then go through the two path
tests: duplicate removal (:func:`dedup_paths`) and geometric validity
(:func:`validate_path`).
"""

from __future__ import annotations

import weakref

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import (
    EPS_HIT,
    RayCone,
    closest_points_segments,
    intersect_triangles,
    mirror_reflect,
    segment_blocked,
)
from .launcher import LaunchGrid, Scheme, make_grid
from .scene import Scene


class Kind(str, Enum):
    REFLECTION = "reflection"
    DIFFRACTION = "diffraction"


@dataclass(frozen=True, eq=False)
class Interaction:
    kind: Kind
    index: int  # face id for reflections, wedge id for diffractions
    point: np.ndarray
    direction: np.ndarray | None = None  # outgoing Keller-cone direction

    @property
    def key(self) -> tuple[str, int]:
        return (self.kind.value[0].upper(), self.index)


@dataclass(frozen=True, eq=False)
class PropagationPath:
    """A Tx -> interactions -> Rx path.

    ``end_point`` is the foot of the receiver on the last ray segment (equal
    to the receiver for exact paths); ``length`` runs from Tx to it.
    ``error_angle`` is ``atan(miss_distance / length)``.
    """

    interactions: tuple[Interaction, ...]
    launch_direction: np.ndarray
    arrival_direction: np.ndarray
    length: float
    miss_distance: float
    error_angle: float
    end_point: np.ndarray
    cone: RayCone | None = None
    launch_index: int = -1
    method: str = "sbr"

    @property
    def key(self) -> tuple[tuple[str, int], ...]:
        return tuple(i.key for i in self.interactions)

    @property
    def reflection_order(self) -> int:
        return sum(i.kind is Kind.REFLECTION for i in self.interactions)

    @property
    def diffraction_order(self) -> int:
        return sum(i.kind is Kind.DIFFRACTION for i in self.interactions)

    def nodes(self, tx: np.ndarray, end: np.ndarray | None = None) -> list[np.ndarray]:
        end = self.end_point if end is None else end
        return [tx, *(i.point for i in self.interactions), end]


def format_key(key) -> str:
    return "LOS" if not key else "-".join(f"{k}{i}" for k, i in key)


@dataclass(frozen=True)
class TraceConfig:
    max_reflection_order: int = 2
    max_diffraction_order: int = 0
    n: int = 21
    scheme: Scheme = Scheme.EQUIANGULAR
    keller_samples: int = 72
    # Reception cone override; None uses the grid's launch half-angle.
    reception_half_angle: float | None = None

    def __post_init__(self):
        if self.max_reflection_order < 0:
            raise ValueError("max_reflection_order must be >= 0")
        if self.max_diffraction_order not in (0, 1):
            raise ValueError("max_diffraction_order must be 0 or 1")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


def keller_directions(incident: np.ndarray, wedge, azimuths) -> np.ndarray:
    """Directions on the Keller cone of ``wedge`` for a unit ``incident``
    direction, at the given azimuths around the edge."""
    e = wedge.direction
    cb = float(np.dot(incident, e))
    sb = np.sqrt(max(0.0, 1.0 - cb * cb))
    az = np.atleast_1d(azimuths)
    return cb * e[None] + sb * (np.cos(az)[:, None] * wedge.ref[None] + np.sin(az)[:, None] * wedge.side[None])


def _scene_extent(scene: Scene) -> float:
    pts = [scene.tx, scene.rx]
    if len(scene.vertices):
        pts += [scene.vertices.min(axis=0), scene.vertices.max(axis=0)]
    pts = np.array(pts)
    return 4.0 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) + 1.0


@dataclass
class _Front:
    """Rays of one bounce generation."""

    origin: np.ndarray
    direction: np.ndarray
    travelled: np.ndarray
    launch: np.ndarray
    n_refl: np.ndarray
    n_diff: np.ndarray
    history: list = field(default_factory=list)

    def __len__(self):
        return len(self.origin)


def shoot(scene: Scene, grid: LaunchGrid, cfg: TraceConfig) -> list[PropagationPath]:
    """Trace every grid direction and return all candidate paths (before the
    duplicate and validity tests)."""
    theta = cfg.reception_half_angle or grid.cone_half_angle
    tan_t = np.tan(theta)
    tx, rx = scene.tx, scene.rx
    tris = scene.triangles
    far = _scene_extent(scene)
    wedges = [w for w in scene.wedges if w.convex] if cfg.max_diffraction_order else []
    if wedges:
        w0 = np.array([w.start for w in wedges])
        w1 = np.array([w.end for w in wedges])
    k = cfg.keller_samples
    keller_az = (np.arange(k) + 0.5) * (2 * np.pi / k)

    n = len(grid.directions)
    front = _Front(
        np.repeat(tx[None], n, axis=0),
        grid.directions.copy(),
        np.zeros(n),
        np.arange(n),
        np.zeros(n, dtype=int),
        np.zeros(n, dtype=int),
        [()] * n,
    )
    out: list[PropagationPath] = []
    while len(front):
        O, U, L = front.origin, front.direction, front.travelled
        T = intersect_triangles(O, U, tris)
        if T.shape[1]:
            f_hit = np.argmin(T, axis=1)
            t_hit = T[np.arange(len(front)), f_hit]
        else:
            f_hit = np.full(len(front), -1)
            t_hit = np.full(len(front), np.inf)

        # reception
        v = rx[None] - O
        along = np.einsum("nk,nk->n", v, U)
        perp = np.linalg.norm(np.cross(v, U), axis=1)
        dist = L + along
        err = np.arctan2(perp, dist)
        got = (along > 0) & (along < t_hit) & (err <= theta)
        for r in np.flatnonzero(got):
            out.append(_candidate(front, r, grid, theta, tx, along[r], perp[r], err[r]))

        children = []
        # wedge capture
        can_diff = front.n_diff < cfg.max_diffraction_order
        if wedges and np.any(can_diff):
            idx = np.flatnonzero(can_diff)
            # The axis is not clipped at its face hit: a cone grazing a wall
            # still covers the wall's edge. Visibility of the edge point is
            # checked separately.
            p0 = O[idx][:, None]
            p1 = (O[idx] + far * U[idx])[:, None]
            s, tq, d = closest_points_segments(p0, p1, w0[None], w1[None])
            lam = s * far
            cap = (d <= (L[idx][:, None] + lam) * tan_t) & (lam > EPS_HIT) & (tq > 1e-9) & (tq < 1 - 1e-9)
            for a, b in zip(*np.nonzero(cap)):
                r = idx[a]
                w = wedges[b]
                q = w.start + tq[a, b] * (w.end - w.start)
                inc = q - O[r]
                seglen = float(np.linalg.norm(inc))
                inc /= seglen
                if not w.in_free_space(O[r] - q):
                    continue
                excl = set(w.faces)
                if front.history[r]:
                    excl.add(front.history[r][-1].index)
                if segment_blocked(O[r], q, tris, excl):
                    continue
                dirs = keller_directions(inc, w, keller_az)
                dirs = dirs[w.in_free_space(dirs, 1e-6)]
                if not len(dirs):
                    continue
                m = len(dirs)
                hist = [front.history[r] + (Interaction(Kind.DIFFRACTION, w.id, q, dd),) for dd in dirs]
                children.append(
                    _Front(
                        np.repeat(q[None], m, axis=0),
                        dirs,
                        np.full(m, L[r] + seglen),
                        np.full(m, front.launch[r]),
                        np.full(m, front.n_refl[r]),
                        np.full(m, front.n_diff[r] + 1),
                        hist,
                    )
                )

        # specular reflection (front side only)
        if len(scene.faces):
            nrm = scene.normals[np.maximum(f_hit, 0)]
            facing = np.einsum("nk,nk->n", U, nrm) < 0
            bounce = np.isfinite(t_hit) & facing & (front.n_refl < cfg.max_reflection_order)
            idx = np.flatnonzero(bounce)
            if len(idx):
                P = O[idx] + t_hit[idx, None] * U[idx]
                R = mirror_reflect(U[idx], nrm[idx])
                R /= np.linalg.norm(R, axis=1, keepdims=True)
                hist = [
                    front.history[r] + (Interaction(Kind.REFLECTION, int(f_hit[r]), P[j]),)
                    for j, r in enumerate(idx)
                ]
                children.append(
                    _Front(P, R, L[idx] + t_hit[idx], front.launch[idx], front.n_refl[idx] + 1, front.n_diff[idx], hist)
                )
        front = _concat(children)
    return out


def _concat(parts: list[_Front]) -> _Front:
    if not parts:
        return _Front(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), [])
    return _Front(
        np.concatenate([p.origin for p in parts]),
        np.concatenate([p.direction for p in parts]),
        np.concatenate([p.travelled for p in parts]),
        np.concatenate([p.launch for p in parts]),
        np.concatenate([p.n_refl for p in parts]),
        np.concatenate([p.n_diff for p in parts]),
        [h for p in parts for h in p.history],
    )


def _candidate(front: _Front, r: int, grid: LaunchGrid, theta, tx, along, perp, err) -> PropagationPath:
    hist = front.history[r]
    li = int(front.launch[r])
    axis = grid.directions[li]
    launch = axis
    if hist and hist[0].kind is Kind.DIFFRACTION:
        launch = hist[0].point - tx
        launch = launch / np.linalg.norm(launch)
    u = front.direction[r]
    return PropagationPath(
        interactions=hist,
        launch_direction=launch,
        arrival_direction=u.copy(),
        length=float(front.travelled[r] + along),
        miss_distance=float(perp),
        error_angle=float(err),
        end_point=front.origin[r] + along * u,
        cone=RayCone(tx.copy(), axis.copy(), float(theta)),
        launch_index=li,
    )


def dedup_paths(candidates) -> list[PropagationPath]:
    """Keep, per interaction sequence, the candidate with the smallest error
    angle (ties: smaller launch index). Output is ordered by sequence."""
    best: dict = {}
    for p in candidates:
        cur = best.get(p.key)
        if cur is None or (p.error_angle, p.launch_index) < (cur.error_angle, cur.launch_index):
            best[p.key] = p
    return [best[k] for k in sorted(best, key=lambda k: (len(k), k))]


@dataclass(frozen=True, eq=False)
class _FaceTable:
    """Per-scene arrays for vectorised point-in-face tests."""

    corners: np.ndarray  # (M, 3, 3)
    inward: np.ndarray  # (M, 3, 3) unit in-plane normals of the three edges
    labels: np.ndarray  # (M,) surface label


_TABLES: "weakref.WeakKeyDictionary[Scene, _FaceTable]" = weakref.WeakKeyDictionary()


def _face_table(scene: Scene) -> _FaceTable:
    table = _TABLES.get(scene)
    if table is None:
        tris = scene.triangles
        edges = np.roll(tris, -1, axis=1) - tris
        inward = np.cross(scene.normals[:, None, :], edges)
        inward /= np.linalg.norm(inward, axis=-1, keepdims=True)
        table = _FaceTable(tris, inward, surface_ids(scene))
        _TABLES[scene] = table
    return table


def _inside_faces(scene: Scene, points: np.ndarray, tol: float = EPS_HIT) -> np.ndarray:
    """``(R, M)`` mask: point ``r`` lies inside face ``m`` (metric tolerance)."""
    table = _face_table(scene)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    plane = np.abs(pts @ scene.normals.T - scene.offsets[None]) <= tol
    rel = pts[:, None, None, :] - table.corners[None]
    side = np.einsum("rmkc,mkc->rmk", rel, table.inward)
    return plane & np.all(side >= -tol, axis=-1)


def _inside_face(scene: Scene, fid: int, p: np.ndarray, tol: float = EPS_HIT) -> bool:
    return bool(_inside_faces(scene, p, tol)[0, fid])


def _on_edge(wedge, p: np.ndarray, tol: float = EPS_HIT) -> bool:
    e = wedge.direction
    v = p - wedge.start
    t = float(np.dot(v, e))
    off = float(np.linalg.norm(v - t * e))
    return off <= tol and tol < t < wedge.length - tol


def validate_paths(paths, scene: Scene) -> np.ndarray:
    """Second path test for many paths at once.

    A path is valid when every reflection point lies on its surface (inside
    one of its triangles, with Tx side and Rx side both in front), every
    diffraction point lies inside its edge with both neighbours in free
    space, and no segment of Tx -> points -> Rx is blocked by a face other
    than those touching the segment's endpoints.
    """
    paths = list(paths)
    ok = np.ones(len(paths), dtype=bool)
    n_faces = len(scene.faces)
    table = _face_table(scene) if n_faces else None
    refl_owner, refl_face, refl_pts, refl_prev, refl_next = [], [], [], [], []
    seg_owner, seg_a, seg_b, seg_excl = [], [], [], []
    for k, path in enumerate(paths):
        nodes = path.nodes(scene.tx, scene.rx)
        excl: list[tuple] = [() for _ in nodes]
        for j, it in enumerate(path.interactions):
            p, prev, nxt = nodes[j + 1], nodes[j], nodes[j + 2]
            if it.kind is Kind.REFLECTION:
                if not 0 <= it.index < n_faces:
                    ok[k] = False
                    break
                refl_owner.append(k)
                refl_face.append(it.index)
                refl_pts.append(p)
                refl_prev.append(prev)
                refl_next.append(nxt)
                excl[j + 1] = tuple(np.flatnonzero(table.labels == table.labels[it.index]))
            else:
                if not 0 <= it.index < len(scene.wedges):
                    ok[k] = False
                    break
                w = scene.wedges[it.index]
                if not _on_edge(w, p) or not (w.in_free_space(prev - p) and w.in_free_space(nxt - p)):
                    ok[k] = False
                    break
                excl[j + 1] = w.faces
        if not ok[k]:
            continue
        for j in range(len(nodes) - 1):
            seg_owner.append(k)
            seg_a.append(nodes[j])
            seg_b.append(nodes[j + 1])
            seg_excl.append(excl[j] + excl[j + 1])

    if refl_owner:
        owner = np.array(refl_owner)
        fid = np.array(refl_face)
        pts = np.array(refl_pts)
        inside = _inside_faces(scene, pts)
        same = table.labels[None, :] == table.labels[fid][:, None]
        on = np.any(inside & same, axis=1)
        nrm = scene.normals[fid]
        front = (np.einsum("rk,rk->r", np.array(refl_prev) - pts, nrm) > 0) & (
            np.einsum("rk,rk->r", np.array(refl_next) - pts, nrm) > 0
        )
        bad = owner[~(on & front)]
        ok[bad] = False

    if seg_owner and n_faces:
        owner = np.array(seg_owner)
        a = np.array(seg_a)
        d = np.array(seg_b) - a
        length = np.linalg.norm(d, axis=1)
        live = ok[owner] & (length > 2 * EPS_HIT)
        idx = np.flatnonzero(live)
        if len(idx):
            t = intersect_triangles(a[idx], d[idx] / length[idx, None], scene.triangles)
            for r, s_i in enumerate(idx):
                if seg_excl[s_i]:
                    t[r, list(seg_excl[s_i])] = np.inf
            blocked = np.any(t < (length[idx] - EPS_HIT)[:, None], axis=1)
            ok[owner[idx[blocked]]] = False
    return ok


def validate_path(path: PropagationPath, scene: Scene) -> bool:
    """Second path test for a single path; see :func:`validate_paths`."""
    return bool(validate_paths([path], scene)[0])


def _coplanar_groups(scene: Scene) -> list[list[int]]:
    groups: list[list[int]] = []
    for f in scene.faces:
        for g in groups:
            h = scene.faces[g[0]]
            if (
                h.material_id == f.material_id
                and np.allclose(h.normal, f.normal, atol=1e-9)
                and abs(scene.offsets[h.id] - scene.offsets[f.id]) < 1e-9
            ):
                g.append(f.id)
                break
        else:
            groups.append([f.id])
    return groups


_SURFACES: "weakref.WeakKeyDictionary[Scene, np.ndarray]" = weakref.WeakKeyDictionary()


def surface_ids(scene: Scene) -> np.ndarray:
    """Canonical reflection label per face: the lowest face id sharing its
    plane and material."""
    out = _SURFACES.get(scene)
    if out is None:
        out = np.arange(len(scene.faces))
        for g in _coplanar_groups(scene):
            out[g] = min(g)
        _SURFACES[scene] = out
    return out


def canonical_faces(path: PropagationPath, scene: Scene, labels=None) -> PropagationPath:
    """Relabel every reflection with the canonical id of its planar surface.

    A tessellated wall is one reflector: refinement moves points across the
    seams between its triangles, and exact points can sit on a shared
    diagonal. A plane sequence fixes the reflection points uniquely, so
    labelling by surface loses no paths.
    """
    labels = surface_ids(scene) if labels is None else labels
    new = []
    changed = False
    for it in path.interactions:
        if it.kind is Kind.REFLECTION and labels[it.index] != it.index:
            it = replace(it, index=int(labels[it.index]))
            changed = True
        new.append(it)
    return replace(path, interactions=tuple(new)) if changed else path


def finalize_paths(paths, scene: Scene) -> list[PropagationPath]:
    """Canonical face labels, validity test, then duplicate removal."""
    labels = surface_ids(scene)
    paths = [canonical_faces(p, scene, labels) for p in paths]
    ok = validate_paths(paths, scene)
    return dedup_paths(p for p, v in zip(paths, ok) if v)


def trace_candidates(scene: Scene, cfg: TraceConfig, grid: LaunchGrid | None = None) -> list[PropagationPath]:
    """Shoot and apply the duplicate test."""
    grid = make_grid(cfg.n, cfg.scheme) if grid is None else grid
    return dedup_paths(shoot(scene, grid, cfg))


def trace_sbr(scene: Scene, cfg: TraceConfig, grid: LaunchGrid | None = None) -> list[PropagationPath]:
    """Traditional SBR: shoot, remove duplicates, keep valid paths."""
    return finalize_paths(trace_candidates(scene, cfg, grid), scene)
