"""Per-path channel metrics and the power delay profile.

The power model is deliberately simple: free-space loss over the unfolded
length, the perpendicular-polarisation Fresnel coefficient at every
reflection and a detour-based scalar at every diffraction. It is smooth in
the path geometry, so power errors shrink with the geometric error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SpherePoint, angle_between
from .scene import Material, Scene
from .tracer import Kind, PropagationPath

SPEED_OF_LIGHT = 299_792_458.0
VACUUM_PERMITTIVITY = 8.8541878128e-12


@dataclass(frozen=True)
class PathMetrics:
    aod: SpherePoint
    aoa: SpherePoint
    delay: float  # seconds
    power: float  # dBm
    order: tuple[int, int]  # (reflections, diffractions)


@dataclass(frozen=True)
class ChannelReport:
    metrics: tuple[PathMetrics, ...]
    pdp: tuple[tuple[float, float], ...]  # (delay s, power dBm), by delay


def complex_permittivity(material: Material, frequency: float) -> complex:
    return complex(
        material.relative_permittivity,
        -material.conductivity / (2 * np.pi * frequency * VACUUM_PERMITTIVITY),
    )


def fresnel_perpendicular(cos_incidence: float, eps_c: complex) -> complex:
    """Reflection coefficient for the E field normal to the plane of
    incidence; ``cos_incidence`` is taken from the face normal."""
    c = float(np.clip(cos_incidence, 0.0, 1.0))
    root = np.sqrt(eps_c - (1.0 - c * c))
    return (c - root) / (c + root)


def diffraction_factor(a: np.ndarray, q: np.ndarray, b: np.ndarray, wavelength: float) -> float:
    """Scalar ``1 / (1 + s)`` with ``s`` the detour over the edge point in
    wavelengths."""
    detour = np.linalg.norm(q - a) + np.linalg.norm(b - q) - np.linalg.norm(b - a)
    return 1.0 / (1.0 + max(float(detour), 0.0) / wavelength)


def path_power(path: PropagationPath, scene: Scene, tx_power_dbm: float = 0.0) -> float:
    """Received power in dBm over the path's own geometry (SBR paths end at
    the foot of the receiver on the ray)."""
    if path.length <= 0:
        raise ValueError("path length must be positive")
    lam = scene.wavelength
    power = tx_power_dbm + 20.0 * np.log10(lam / (4.0 * np.pi * path.length))
    nodes = path.nodes(scene.tx)
    for j, it in enumerate(path.interactions):
        prev, p, nxt = nodes[j], nodes[j + 1], nodes[j + 2]
        if it.kind is Kind.REFLECTION:
            d = p - prev
            cos_i = abs(float(np.dot(d, scene.normals[it.index]))) / float(np.linalg.norm(d))
            mat = scene.materials[scene.faces[it.index].material_id]
            gamma = fresnel_perpendicular(cos_i, complex_permittivity(mat, scene.frequency))
            power += 20.0 * np.log10(max(abs(gamma), 1e-300))
        else:
            power += 20.0 * np.log10(diffraction_factor(prev, p, nxt, lam))
    return float(power)


def angles(path: PropagationPath) -> tuple[SpherePoint, SpherePoint]:
    """AOD from the launch direction; AOA points from Rx back along the
    arriving ray."""
    return (
        SpherePoint.from_direction(path.launch_direction),
        SpherePoint.from_direction(-np.asarray(path.arrival_direction)),
    )


def path_delay(path: PropagationPath) -> float:
    return path.length / SPEED_OF_LIGHT


def path_metrics(path: PropagationPath, scene: Scene, tx_power_dbm: float = 0.0) -> PathMetrics:
    aod, aoa = angles(path)
    return PathMetrics(
        aod,
        aoa,
        path_delay(path),
        path_power(path, scene, tx_power_dbm),
        (path.reflection_order, path.diffraction_order),
    )


def pdp(entries) -> ChannelReport:
    """Delay-sorted profile from ``(path, power_dbm)`` pairs; no binning."""
    metrics = []
    for path, power in entries:
        aod, aoa = angles(path)
        metrics.append(
            PathMetrics(aod, aoa, path_delay(path), float(power), (path.reflection_order, path.diffraction_order))
        )
    metrics.sort(key=lambda m: m.delay)
    return ChannelReport(tuple(metrics), tuple((m.delay, m.power) for m in metrics))


def channel_report(paths, scene: Scene, tx_power_dbm: float = 0.0) -> ChannelReport:
    return pdp((p, path_power(p, scene, tx_power_dbm)) for p in paths)


def angular_errors(path: PropagationPath, reference: PropagationPath) -> tuple[float, float]:
    """``(dAOD, dAOA)`` in radians between two versions of a path."""
    return (
        angle_between(path.launch_direction, reference.launch_direction),
        angle_between(path.arrival_direction, reference.arrival_direction),
    )
