"""JSON round trip for propagation paths."""

from __future__ import annotations

import numpy as np

from .channel import angles, path_delay, path_power
from .geometry import RayCone
from .scene import Scene
from .tracer import Interaction, Kind, PropagationPath, format_key


def _vec(v) -> list[float] | None:
    return None if v is None else [float(x) for x in v]


def path_to_dict(path: PropagationPath, scene: Scene, tx_power_dbm: float = 0.0) -> dict:
    aod, aoa = angles(path)
    out = {
        "id": format_key(path.key),
        "method": path.method,
        "interactions": [
            {
                "kind": it.kind.value,
                "index": it.index,
                "point": _vec(it.point),
                "direction": _vec(it.direction),
            }
            for it in path.interactions
        ],
        "launch_direction": _vec(path.launch_direction),
        "arrival_direction": _vec(path.arrival_direction),
        "end_point": _vec(path.end_point),
        "length_m": path.length,
        "miss_distance_m": path.miss_distance,
        "error_angle_rad": path.error_angle,
        "error_angle_deg": float(np.degrees(path.error_angle)),
        "aod_deg": {"azimuth": float(np.degrees(aod.azimuth)), "pitch": float(np.degrees(aod.pitch))},
        "aoa_deg": {"azimuth": float(np.degrees(aoa.azimuth)), "pitch": float(np.degrees(aoa.pitch))},
        "delay_ns": path_delay(path) * 1e9,
        "power_dbm": path_power(path, scene, tx_power_dbm),
        "launch_index": path.launch_index,
    }
    if path.cone is not None:
        out["cone"] = {"axis": _vec(path.cone.axis), "half_angle_rad": path.cone.half_angle}
    return out


def path_from_dict(data: dict, scene: Scene) -> PropagationPath:
    inter = tuple(
        Interaction(
            Kind(it["kind"]),
            int(it["index"]),
            np.array(it["point"], dtype=float),
            None if it.get("direction") is None else np.array(it["direction"], dtype=float),
        )
        for it in data["interactions"]
    )
    cone = None
    if data.get("cone"):
        cone = RayCone(scene.tx.copy(), np.array(data["cone"]["axis"], dtype=float), float(data["cone"]["half_angle_rad"]))
    return PropagationPath(
        interactions=inter,
        launch_direction=np.array(data["launch_direction"], dtype=float),
        arrival_direction=np.array(data["arrival_direction"], dtype=float),
        length=float(data["length_m"]),
        miss_distance=float(data["miss_distance_m"]),
        error_angle=float(data["error_angle_rad"]),
        end_point=np.array(data["end_point"], dtype=float),
        cone=cone,
        launch_index=int(data.get("launch_index", -1)),
        method=data.get("method", "sbr"),
    )
