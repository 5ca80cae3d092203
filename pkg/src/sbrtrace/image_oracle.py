"""Image-method reference tracer.

Specular paths come from mirroring Tx across every admissible face sequence
and back-substituting the reflection points from Rx. Single diffraction
uses the Fermat point on each edge, found in closed form by unfolding Tx
and Rx into one plane around the edge line.
"""

from __future__ import annotations

import numpy as np

from .geometry import EPS_HIT
from .scene import Scene
from .tracer import Interaction, Kind, PropagationPath, finalize_paths, validate_path

MAX_IM_ORDER = 3


def _exact_path(scene: Scene, interactions) -> PropagationPath:
    nodes = [scene.tx, *(i.point for i in interactions), scene.rx]
    first = nodes[1] - nodes[0]
    last = nodes[-1] - nodes[-2]
    length = float(sum(np.linalg.norm(b - a) for a, b in zip(nodes[:-1], nodes[1:])))
    return PropagationPath(
        interactions=tuple(interactions),
        launch_direction=first / np.linalg.norm(first),
        arrival_direction=last / np.linalg.norm(last),
        length=length,
        miss_distance=0.0,
        error_angle=0.0,
        end_point=scene.rx.copy(),
        method="im",
    )


def _same_plane(scene: Scene, a: int, b: int) -> bool:
    return bool(
        np.allclose(scene.normals[a], scene.normals[b], atol=1e-9)
        and abs(scene.offsets[a] - scene.offsets[b]) < 1e-9
    )


def _backtrack(scene: Scene, seq, images) -> list[Interaction] | None:
    """Reflection points for face sequence ``seq`` given the Tx images, or
    None when a point misses its face plane segment."""
    target = scene.rx
    points = []
    for j in range(len(seq) - 1, -1, -1):
        f = seq[j]
        n, off = scene.normals[f], scene.offsets[f]
        src = images[j + 1]
        d = src - target
        denom = float(np.dot(n, d))
        if abs(denom) < 1e-15:
            return None
        t = (off - float(np.dot(n, target))) / denom
        if not 0.0 < t < 1.0:
            return None
        p = target + t * d
        points.append(Interaction(Kind.REFLECTION, f, p))
        target = p
    return points[::-1]


def im_reflections(scene: Scene, max_order: int) -> list[PropagationPath]:
    """All valid specular paths with up to ``max_order`` reflections (LOS
    included as the empty sequence)."""
    if not 0 <= max_order <= MAX_IM_ORDER:
        raise ValueError(f"image-method order must be in [0, {MAX_IM_ORDER}]")
    out = []
    los = _exact_path(scene, ())
    if validate_path(los, scene):
        out.append(los)
    n_faces = len(scene.faces)

    def visit(seq, images):
        src = images[-1]
        if seq:
            pts = _backtrack(scene, seq, images)
            if pts is not None:
                path = _exact_path(scene, pts)
                if validate_path(path, scene):
                    out.append(path)
        if len(seq) == max_order:
            return
        for f in range(n_faces):
            if seq and (f == seq[-1] or _same_plane(scene, f, seq[-1])):
                continue
            n, off = scene.normals[f], scene.offsets[f]
            h = float(np.dot(n, src)) - off
            if h <= EPS_HIT:  # source behind the face: no reflection
                continue
            visit(seq + (f,), images + [src - 2.0 * h * n])

    visit((), [scene.tx])
    # a point on the seam of two coplanar triangles is found through both
    return finalize_paths(out, scene)


def fermat_point(wedge, a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Point on the wedge's edge line minimising ``|a p| + |p b|``.

    Returns the edge parameter (meters from ``wedge.start``) and the point.
    """
    e = wedge.direction
    za = float(np.dot(a - wedge.start, e))
    zb = float(np.dot(b - wedge.start, e))
    ra = float(np.linalg.norm((a - wedge.start) - za * e))
    rb = float(np.linalg.norm((b - wedge.start) - zb * e))
    if ra + rb == 0.0:
        z = 0.5 * (za + zb)
    else:
        z = za + (zb - za) * ra / (ra + rb)
    return z, wedge.start + z * e


def im_single_diffraction(scene: Scene) -> list[PropagationPath]:
    """Exact first-order diffraction paths over the convex wedges."""
    out = []
    for w in scene.wedges:
        if not w.convex:
            continue
        z, q = fermat_point(w, scene.tx, scene.rx)
        if not EPS_HIT < z < w.length - EPS_HIT:
            continue
        d = scene.rx - q
        path = _exact_path(scene, (Interaction(Kind.DIFFRACTION, w.id, q, d / np.linalg.norm(d)),))
        if validate_path(path, scene):
            out.append(path)
    return out


def im_paths(scene: Scene, max_reflection_order: int, max_diffraction_order: int = 0) -> list[PropagationPath]:
    paths = im_reflections(scene, max_reflection_order)
    if max_diffraction_order:
        paths += im_single_diffraction(scene)
    return sorted(paths, key=lambda p: (len(p.key), p.key))
