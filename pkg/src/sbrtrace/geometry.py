"""Floating-point geometry kernels shared by the tracer, refiner and oracle.

Vectors are plain ``numpy`` arrays of shape ``(3,)`` (or ``(..., 3)`` for the
batched helpers). Angles are radians throughout and are computed with
``atan2`` so that tiny angles keep full relative precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Self-intersection offset used when re-launching from a hit point (meters).
EPS_HIT = 1e-6

_TRI_AREA_MIN = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v`` scaled to unit length along its last axis."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class RayCone:
    """A ray cone: apex, unit axis and half-angle (radians)."""

    origin: np.ndarray
    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ValueError(f"cone half-angle {self.half_angle} outside (0, pi/2)")


@dataclass(frozen=True)
class SpherePoint:
    azimuth: float
    pitch: float

    @classmethod
    def from_direction(cls, d: np.ndarray) -> "SpherePoint":
        x, y, z = (float(c) for c in d)
        return cls(float(np.arctan2(y, x)), float(np.arctan2(z, np.hypot(x, y))))

    def to_direction(self) -> np.ndarray:
        cp = np.cos(self.pitch)
        return np.array([cp * np.cos(self.azimuth), cp * np.sin(self.azimuth), np.sin(self.pitch)])


def triangle_area(tri: np.ndarray) -> float:
    a, b, c = np.asarray(tri, dtype=float)
    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))


def intersect_triangle(ray: Ray, tri: np.ndarray, eps: float = EPS_HIT):
    """Moller-Trumbore intersection of one ray with one triangle.

    Returns ``(t, (u, v))`` for the hit with ``t > eps`` or ``None``.
    ``u`` and ``v`` are the barycentric weights of the second and third
    vertex.
    """
    a, b, c = np.asarray(tri, dtype=float)
    e1 = b - a
    e2 = c - a
    p = np.cross(ray.direction, e2)
    det = float(np.dot(e1, p))
    if abs(det) < 1e-15:
        return None
    inv = 1.0 / det
    s = ray.origin - a
    u = float(np.dot(s, p)) * inv
    if u < 0.0 or u > 1.0:
        return None
    q = np.cross(s, e1)
    v = float(np.dot(ray.direction, q)) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(np.dot(e2, q)) * inv
    if t <= eps:
        return None
    return t, (u, v)


def intersect_triangles(origins, directions, tris, eps: float = EPS_HIT):
    """Batched Moller-Trumbore.

    ``origins``/``directions`` are ``(N, 3)``, ``tris`` is ``(M, 3, 3)``.
    Returns a ``(N, M)`` array of hit distances with ``inf`` for misses.
    """
    origins = np.asarray(origins, dtype=float)
    directions = np.asarray(directions, dtype=float)
    n, m = len(origins), len(tris)
    if n == 0 or m == 0:
        return np.full((n, m), np.inf)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    d = directions[:, None, :]
    p = np.cross(d, e2[None])
    det = np.einsum("mk,nmk->nm", e1, p)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origins[:, None, :] - a[None]
    u = np.einsum("nmk,nmk->nm", s, p) * inv
    q = np.cross(s, e1[None])
    v = np.einsum("nk,nmk->nm", directions, q) * inv
    t = np.einsum("mk,nmk->nm", e2, q) * inv
    hit = ok & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > eps)
    return np.where(hit, t, np.inf)


def mirror_reflect(incident: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Specular reflection ``d - 2 (d.n) n``; works on stacked vectors."""
    incident = np.asarray(incident, dtype=float)
    normal = np.asarray(normal, dtype=float)
    dn = np.sum(incident * normal, axis=-1, keepdims=True)
    return incident - 2.0 * dn * normal


def mirror_point(p: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Mirror ``p`` across the plane ``{x : n.x = offset}``."""
    return p - 2.0 * (np.dot(normal, p) - offset) * normal


def point_to_ray_distance(p: np.ndarray, ray: Ray) -> tuple[float, float]:
    """Perpendicular distance from ``p`` to the ray's line and the signed
    along-ray coordinate of its foot point."""
    v = np.asarray(p, dtype=float) - ray.origin
    along = float(np.dot(v, ray.direction))
    dist = float(np.linalg.norm(np.cross(v, ray.direction)))
    return dist, along


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two directions, ``atan2(|u x v|, u . v)``."""
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


def angles_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), np.sum(u * v, axis=-1))


def slerp(a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
    """Spherical interpolation between unit vectors ``a`` and ``b``.

    ``t`` may be a scalar or 1-D array; the result has one row per ``t``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    omega = angle_between(a, b)
    so = np.sin(omega)
    wa = np.sin((1.0 - t) * omega) / so
    wb = np.sin(t * omega) / so
    return wa[:, None] * a[None] + wb[:, None] * b[None]


def perpendicular_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair ``(e1, e2)`` orthogonal to ``axis``.

    ``e1`` is the projection of +x (or +y when the axis is near x), so an
    axis along +z gets ``e1 = +x``. Stacked ``(..., 3)`` axes are accepted.
    """
    axis = np.asarray(axis, dtype=float)
    near_x = np.abs(axis[..., 0:1]) >= 0.9
    helper = np.where(near_x, [0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    e1 = helper - np.sum(helper * axis, axis=-1, keepdims=True) * axis
    e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(axis, e1)
    return e1, e2


def tilt(axis: np.ndarray, angle: float, azimuths) -> np.ndarray:
    """Directions at angular distance ``angle`` from ``axis`` at the given
    azimuths (radians) of the :func:`perpendicular_frame`."""
    e1, e2 = perpendicular_frame(axis)
    az = np.atleast_1d(np.asarray(azimuths, dtype=float))
    side = np.cos(az)[:, None] * e1 + np.sin(az)[:, None] * e2
    out = np.cos(angle) * axis[None] + np.sin(angle) * side
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def equal_area_project(p: SpherePoint) -> tuple[float, float]:
    """Sinusoidal projection: ``(azimuth * cos(pitch), pitch)``."""
    return p.azimuth * np.cos(p.pitch), p.pitch


def closest_points_segments(p0, p1, q0, q1):
    """Closest points between segments ``p0p1`` and ``q0q1`` (batched).

    All inputs broadcast to ``(..., 3)``. Returns ``(s, t, dist)`` with the
    segment parameters in ``[0, 1]``.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-300, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        t_clipped = np.clip(t, 0.0, 1.0)
        s = np.where(t != t_clipped, np.clip((b * t_clipped - c) / a, 0.0, 1.0), s)
    t = t_clipped
    cp = p0 + s[..., None] * d1
    cq = q0 + t[..., None] * d2
    return s, t, np.linalg.norm(cp - cq, axis=-1)


def segment_blocked(a, b, tris, exclude=(), eps: float = EPS_HIT) -> bool:
    """True when the open segment ``a -> b`` crosses any triangle not in
    ``exclude`` (indices into ``tris``), ignoring ``eps`` at both ends."""
    d = b - a
    length = float(np.linalg.norm(d))
    if length <= 2 * eps or len(tris) == 0:
        return False
    t = intersect_triangles(a[None], (d / length)[None], tris, eps=eps)[0]
    if exclude:
        t[list(exclude)] = np.inf
    return bool(np.any(t < length - eps))
