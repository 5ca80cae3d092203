"""Iterative sub-cone refinement of SBR paths.

Each iteration covers the current ray cone with six sub-cones of half-angle
``theta / sqrt(3)`` whose axes sit ``theta / sqrt(3)`` off the parent axis,
re-traces each sub-cone axis through the path's own interaction sequence and
keeps the sub-cone with the smallest error angle. Reflections are re-mirrored
on the infinite planes of the recorded faces; diffractions re-emit on the
Keller cone of the recorded edge with a small fan around the recorded
direction. Paths are processed in batches that share the same sequence of
interaction kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import EPS_HIT, RayCone, perpendicular_frame
from .scene import Scene
from .tracer import (
    Interaction,
    Kind,
    PropagationPath,
    canonical_faces,
    dedup_paths,
    surface_ids,
    validate_paths,
)

SQRT3 = np.sqrt(3.0)
CHILD_AZIMUTHS = np.deg2rad(np.arange(0, 360, 60))
# Keller fan offsets in units of the child half-angle; the recorded
# direction goes first so ties keep it.
FAN = np.array([0.0, -0.5, 0.5, -1.0, 1.0])


class Termination(str, Enum):
    TOLERANCE = "tolerance"
    MAX_ITERATIONS = "max_iterations"
    LOST_PATH = "lost_path"


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 10
    angle_tolerance: float = float(np.deg2rad(0.01))
    keep_history: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    i: int
    cone: RayCone
    error_angle: float
    length: float
    candidates: int
    path: PropagationPath | None = None


@dataclass(eq=False)
class RefinementTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    terminated_by: Termination = Termination.MAX_ITERATIONS
    valid: bool = True

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error_angle for r in self.iterations])


def sub_cones(cone: RayCone) -> list[RayCone]:
    """Six cones of half-angle ``theta/sqrt(3)`` tilted by ``theta/sqrt(3)``
    at azimuths 0, 60, ..., 300 degrees; together they cover the parent."""
    rho = cone.half_angle / SQRT3
    return [RayCone(cone.origin, a, rho) for a in _child_axes(cone.axis[None], rho)[0]]


def _child_axes(axes: np.ndarray, rho) -> np.ndarray:
    """``(P, 3)`` parent axes -> ``(P, 6, 3)`` child axes."""
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (len(axes),))[:, None, None]
    e1, e2 = perpendicular_frame(axes)
    side = np.cos(CHILD_AZIMUTHS)[None, :, None] * e1[:, None] + np.sin(CHILD_AZIMUTHS)[None, :, None] * e2[:, None]
    c = np.cos(rho) * axes[:, None] + np.sin(rho) * side
    return c / np.linalg.norm(c, axis=-1, keepdims=True)


def error_decibels(before: float, after: float) -> float:
    """Error reduction ``10 log10(before / after)``; ``inf`` when the error
    vanished."""
    if before <= 0:
        raise ValueError("before must be positive")
    if after < 0:
        raise ValueError("after must be non-negative")
    if after == 0:
        return float("inf")
    return float(10.0 * np.log10(before / after))


@dataclass
class _Batch:
    """Per-path constants for a group sharing one kind signature."""

    kinds: tuple[Kind, ...]
    members: list[int]
    planes: list  # per interaction: (normals (P,3), offsets (P,)) or None
    edges: list  # per interaction: dict of wedge arrays or None


def _build_batch(kinds, members, paths, scene: Scene) -> _Batch:
    planes, edges = [], []
    for j, kind in enumerate(kinds):
        ids = [paths[m].interactions[j].index for m in members]
        if kind is Kind.REFLECTION:
            planes.append((scene.normals[ids], scene.offsets[ids]))
            edges.append(None)
        else:
            ws = [scene.wedges[i] for i in ids]
            nodes = [paths[m].nodes(scene.tx, scene.rx) for m in members]
            before = np.array([
                sum(np.linalg.norm(b - a) for a, b in zip(nd[: j + 1], nd[1 : j + 2])) for nd in nodes
            ])
            after = np.array([
                sum(np.linalg.norm(b - a) for a, b in zip(nd[j + 1 : -1], nd[j + 2 :])) for nd in nodes
            ])
            phi = np.array([
                float(w.azimuth(paths[m].interactions[j].direction)) for w, m in zip(ws, members)
            ])
            edges.append(
                dict(
                    start=np.array([w.start for w in ws]),
                    dir=np.array([w.direction for w in ws]),
                    ref=np.array([w.ref for w in ws]),
                    side=np.array([w.side for w in ws]),
                    opening=np.array([w.exterior_angle for w in ws]),
                    scale=(before + after) / np.maximum(after, 1e-12),
                    phi=phi,
                )
            )
            planes.append(None)
    return _Batch(kinds, members, planes, edges)


def _propagate(batch: _Batch, sel, tx, rx, axes, rho, fan):
    """Trace rays through the batch's interaction sequences.

    ``axes`` is ``(P, C, 3)``; ``fan`` the Keller offsets (in units of
    ``rho``, one per fan slot). Returns a dict of ``(P, C, F, ...)`` arrays.
    """
    P, C = axes.shape[:2]
    F = len(fan)
    O = np.broadcast_to(tx, (P, C, F, 3)).copy()
    U = np.broadcast_to(axes[:, :, None, :], (P, C, F, 3)).copy()
    L = np.zeros((P, C, F))
    ok = np.ones((P, C, F), dtype=bool)
    points, phis = [], []
    for j, kind in enumerate(batch.kinds):
        if kind is Kind.REFLECTION:
            nrm, off = batch.planes[j]
            nrm = nrm[sel][:, None, None, :]
            off = off[sel][:, None, None]
            un = np.sum(U * nrm, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (off - np.sum(O * nrm, axis=-1)) / un
            ok &= (un < 0) & (t > EPS_HIT)
            t = np.where(ok, t, 0.0)
            O = O + t[..., None] * U
            L = L + t
            U = U - 2.0 * un[..., None] * nrm
            phis.append(None)
        else:
            ed = {k: v[sel] for k, v in batch.edges[j].items()}
            e = ed["dir"][:, None, None, :]
            w0 = O - ed["start"][:, None, None, :]
            b = np.sum(U * e, axis=-1)
            d = np.sum(U * w0, axis=-1)
            ee = np.sum(e * w0, axis=-1)
            denom = 1.0 - b * b
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (b * ee - d) / denom
                z = (ee - b * d) / denom
            ok &= (denom > 1e-15) & (s > EPS_HIT)
            z = np.where(ok, z, 0.0)
            q = ed["start"][:, None, None, :] + z[..., None] * e
            inc = q - O
            seg = np.linalg.norm(inc, axis=-1)
            ok &= seg > EPS_HIT
            inc = inc / np.where(seg > 0, seg, 1.0)[..., None]
            cb = np.sum(inc * e, axis=-1)
            sb = np.sqrt(np.clip(1.0 - cb * cb, 0.0, None))
            with np.errstate(divide="ignore"):
                dphi = fan[None, None, :] * (rho[:, None, None] * ed["scale"][:, None, None]) / np.where(sb > 0, sb, np.inf)
            phi = ed["phi"][:, None, None] + dphi
            phi = np.mod(phi, 2 * np.pi)
            ok &= (phi > 1e-9) & (phi < ed["opening"][:, None, None] - 1e-9)
            U = (
                cb[..., None] * e
                + sb[..., None]
                * (np.cos(phi)[..., None] * ed["ref"][:, None, None, :] + np.sin(phi)[..., None] * ed["side"][:, None, None, :])
            )
            O = q
            L = L + seg
            phis.append(phi)
        points.append(O)
    v = rx - O
    along = np.sum(v * U, axis=-1)
    perp = np.linalg.norm(np.cross(v, U), axis=-1)
    ok &= along > 0
    err = np.where(ok, np.arctan2(perp, L + along), np.inf)
    return dict(err=err, points=points, phis=phis, U=U, O=O, along=along, perp=perp, L=L, ok=ok)


def _assemble(path: PropagationPath, tx, res, idx, axis, rho, kinds) -> PropagationPath:
    """Build the path chosen at flat index ``idx = (p, c, f)``."""
    p, c, f = idx
    inter = []
    for j, kind in enumerate(kinds):
        pt = res["points"][j][p, c, f].copy()
        old = path.interactions[j]
        if kind is Kind.DIFFRACTION:
            nxt = res["points"][j + 1][p, c, f] if j + 1 < len(kinds) else None
            d = (nxt - pt) if nxt is not None else res["U"][p, c, f]
            inter.append(Interaction(kind, old.index, pt, d / np.linalg.norm(d)))
        else:
            inter.append(Interaction(kind, old.index, pt))
    launch = axis
    if inter and inter[0].kind is Kind.DIFFRACTION:
        launch = inter[0].point - tx
        launch = launch / np.linalg.norm(launch)
    u = res["U"][p, c, f]
    along = res["along"][p, c, f]
    return PropagationPath(
        interactions=tuple(inter),
        launch_direction=launch.copy(),
        arrival_direction=u / np.linalg.norm(u),
        length=float(res["L"][p, c, f] + along),
        miss_distance=float(res["perp"][p, c, f]),
        error_angle=float(res["err"][p, c, f]),
        end_point=res["O"][p, c, f] + along * u,
        cone=RayCone(tx.copy(), axis.copy(), float(rho)),
        launch_index=path.launch_index,
        method="sbr-refined",
    )


def _refine_batch(batch: _Batch, paths, scene: Scene, cfg: RefineConfig, traces, results):
    tx, rx = scene.tx, scene.rx
    members = batch.members
    has_diff = Kind.DIFFRACTION in batch.kinds
    fan = FAN if has_diff else FAN[:1]
    axes = np.array([paths[m].cone.axis for m in members])
    half = np.array([paths[m].cone.half_angle for m in members])
    err = np.array([paths[m].error_angle for m in members])
    active = err > cfg.angle_tolerance
    # Best state seen so far; None stands for the unrefined input path.
    best_err = err.copy()
    best_state: list = [None] * len(members)
    best_path: list = [None] * len(members)
    lost = np.zeros(len(members), dtype=bool)
    for k, m in enumerate(members):
        if not active[k]:
            traces[m].terminated_by = Termination.TOLERANCE
    for i in range(1, cfg.max_iterations + 1):
        sel = np.flatnonzero(active)
        if not len(sel):
            break
        rho = half[sel] / SQRT3
        child = _child_axes(axes[sel], rho)
        res = _propagate(batch, sel, tx, rx, child, rho, fan)
        flat = res["err"].reshape(len(sel), -1)
        choice = np.argmin(flat, axis=1)
        for s_i, k in enumerate(sel):
            m = members[k]
            b = choice[s_i]
            if not np.isfinite(flat[s_i, b]):
                traces[m].terminated_by = Termination.LOST_PATH
                active[k] = False
                lost[k] = True
                continue
            c, f = divmod(int(b), len(fan))
            if has_diff:
                for j, ed in enumerate(batch.edges):
                    if ed is not None:
                        ed["phi"][k] = res["phis"][j][s_i, c, f]
            axes[k] = child[s_i, c]
            half[k] = rho[s_i]
            err[k] = flat[s_i, b]
            done = err[k] <= cfg.angle_tolerance or i == cfg.max_iterations
            path = None
            if cfg.keep_history or done:
                path = _assemble(paths[m], tx, res, (s_i, c, f), axes[k], rho[s_i], batch.kinds)
            if err[k] < best_err[k]:
                best_err[k] = err[k]
                best_state[k] = (axes[k].copy(), half[k], _phis(batch, k))
                best_path[k] = path
            traces[m].iterations.append(
                IterationRecord(
                    i,
                    RayCone(tx, axes[k].copy(), float(rho[s_i])),
                    float(err[k]),
                    float(res["L"][s_i, c, f] + res["along"][s_i, c, f]),
                    int(np.isfinite(flat[s_i]).sum()),
                    path,
                )
            )
            if err[k] <= cfg.angle_tolerance:
                traces[m].terminated_by = Termination.TOLERANCE
                active[k] = False
    for k, m in enumerate(members):
        if lost[k] or best_state[k] is None:
            results[m] = paths[m]
        elif best_path[k] is not None:
            results[m] = best_path[k]
        else:
            axis, rho, phis = best_state[k]
            results[m] = _rebuild(paths[m], batch, k, axis, rho, phis, scene)


def _phis(batch: _Batch, k: int) -> dict:
    return {j: float(ed["phi"][k]) for j, ed in enumerate(batch.edges) if ed is not None}


def _rebuild(path, batch: _Batch, k, axis, rho, phis, scene: Scene) -> PropagationPath:
    """Re-trace one stored axis with its stored Keller azimuths (no fan)."""
    for j, phi in phis.items():
        batch.edges[j]["phi"][k] = phi
    sel = np.array([k])
    res = _propagate(batch, sel, scene.tx, scene.rx, axis[None, None, :], np.array([rho]), FAN[:1])
    return _assemble(path, scene.tx, res, (0, 0, 0), axis, rho, batch.kinds)


def refine_paths(paths, scene: Scene, cfg: RefineConfig = RefineConfig()):
    """Refine many paths; returns ``[(path, trace), ...]`` in input order.

    The trace records the sub-cone chosen at every iteration. The returned
    path is the lowest-error one seen over the run (the input included),
    so the final error never exceeds the initial one; a lost path comes
    back unchanged. ``trace.valid`` holds the validity test on the result.
    """
    paths = list(paths)
    traces = [RefinementTrace() for _ in paths]
    results: list[PropagationPath | None] = [None] * len(paths)
    groups: dict[tuple, list[int]] = {}
    for m, p in enumerate(paths):
        if p.cone is None:
            raise ValueError("only SBR paths (with a source cone) can be refined")
        traces[m].iterations.append(
            IterationRecord(0, p.cone, p.error_angle, p.length, 1, p if cfg.keep_history else None)
        )
        groups.setdefault(tuple(i.kind for i in p.interactions), []).append(m)
    for kinds, members in groups.items():
        batch = _build_batch(kinds, members, paths, scene)
        _refine_batch(batch, paths, scene, cfg, traces, results)
    for m, v in enumerate(validate_paths(results, scene)):
        traces[m].valid = bool(v)
    return list(zip(results, traces))


def refine_path(path: PropagationPath, scene: Scene, cfg: RefineConfig = RefineConfig()):
    """Refine one path; see :func:`refine_paths`."""
    return refine_paths([path], scene, cfg)[0]


def refine_and_finalize(paths, scene: Scene, cfg: RefineConfig = RefineConfig()):
    """Refine, then run the validity and duplicate tests on the results."""
    refined = refine_paths(paths, scene, cfg)
    labels = surface_ids(scene)
    kept = [canonical_faces(p, scene, labels) for p, t in refined if t.valid]
    return dedup_paths(kept), refined
