"""Command-line front end.

Subcommands: ``trace``, ``refine``, ``compare``, ``density-map`` and
``bench``. Result files are deterministic; wall-clock timings go to a
separate ``manifest.json`` next to each output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .channel import path_delay, path_power
from .geometry import angle_between
from .image_oracle import MAX_IM_ORDER, im_paths
from .launcher import Scheme, density_stats, make_grid
from .pathio import path_from_dict, path_to_dict
from .refiner import RefineConfig, refine_and_finalize
from .scene import SceneError, load_scene, make_corner, make_outdoor_blocks, make_shoebox
from .tracer import TraceConfig, finalize_paths, format_key, trace_candidates

GENERATORS = ("shoebox", "corner", "blocks")


class CliError(Exception):
    pass


def _add_scene_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scene")
    g.add_argument("--scene", type=Path, help="scene JSON file")
    g.add_argument("--gen", choices=GENERATORS, help="built-in scene generator")
    g.add_argument("--dims", type=float, nargs=3, default=(5.0, 4.0, 3.0), metavar=("X", "Y", "Z"))
    g.add_argument("--tx", type=float, nargs=3, metavar=("X", "Y", "Z"))
    g.add_argument("--rx", type=float, nargs=3, metavar=("X", "Y", "Z"))
    g.add_argument("--freq", type=float, default=2.4e9, help="carrier frequency in Hz")
    g.add_argument("--tx-power", type=float, default=0.0, help="transmit power in dBm")


def _add_trace_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=21, help="icosahedron subdivision count")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.EQUIANGULAR.value)
    p.add_argument("--refl-order", type=int, default=2)
    p.add_argument("--diff-order", type=int, default=0, choices=(0, 1))
    p.add_argument("--keller-samples", type=int, default=72)


def _scene(args):
    if args.scene is not None and args.gen is not None:
        raise CliError("use either --scene or --gen, not both")
    ends = {k: v for k, v in (("tx", args.tx), ("rx", args.rx)) if v is not None}
    if args.scene is not None:
        scene = load_scene(args.scene)
        return scene.with_endpoints(**ends) if ends else scene
    gen = args.gen or "shoebox"
    if gen == "shoebox":
        return make_shoebox(tuple(args.dims), frequency=args.freq, **ends)
    if gen == "corner":
        return make_corner(frequency=args.freq, **ends)
    return make_outdoor_blocks([(8.0, 2.0, 14.0, 14.0, 10.0)], frequency=args.freq, **ends)


def _trace_config(args) -> TraceConfig:
    return TraceConfig(
        max_reflection_order=args.refl_order,
        max_diffraction_order=args.diff_order,
        n=args.n,
        scheme=Scheme(args.scheme),
        keller_samples=args.keller_samples,
    )


def _config_echo(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _write_manifest(out: Path, args, timings: dict) -> Path:
    manifest = out.with_name(out.stem + ".manifest.json")
    _write_json(
        manifest,
        {
            "tool": "sbrtrace",
            "version": __version__,
            "seed": 0,
            "config": _config_echo(args),
            "wall_clock_ms": {k: round(v * 1e3, 3) for k, v in timings.items()},
        },
    )
    return manifest


def _paths_document(paths, scene, args, method: str, extra=None) -> dict:
    doc = {
        "tool": "sbrtrace",
        "version": __version__,
        "method": method,
        "manifest": Path(args.out).stem + ".manifest.json",
        "config": _config_echo(args),
        "scene": {"name": scene.name, "digest": scene.digest(), "tx": scene.tx.tolist(), "rx": scene.rx.tolist()},
        "paths": [path_to_dict(p, scene, args.tx_power) for p in paths],
    }
    if extra:
        doc.update(extra)
    return doc


def _write_pdp(path: Path, paths, scene, method: str, tx_power: float) -> None:
    rows = sorted(
        (path_delay(p) * 1e9, path_power(p, scene, tx_power), format_key(p.key), p.reflection_order, p.diffraction_order)
        for p in paths
    )
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_ns", "power_dbm", "method", "path_id", "refl_order", "diff_order"])
        for d, pw, pid, r, k in rows:
            w.writerow([f"{d:.9f}", f"{pw:.9f}", method, pid, r, k])


def cmd_trace(args) -> int:
    scene = _scene(args)
    t0 = time.perf_counter()
    if args.method == "im":
        if args.refl_order > MAX_IM_ORDER:
            raise CliError(f"--refl-order above {MAX_IM_ORDER} is not supported by the image method")
        paths = im_paths(scene, args.refl_order, args.diff_order)
    else:
        cfg = _trace_config(args)
        candidates = trace_candidates(scene, cfg)
        paths = finalize_paths(candidates, scene)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    _write_json(out, _paths_document(paths, scene, args, args.method))
    _write_manifest(out, args, {args.method: elapsed})
    if args.pdp:
        _write_pdp(Path(args.pdp), paths, scene, args.method, args.tx_power)
    print(f"{len(paths)} paths -> {out}")
    return 0


def _load_paths(path: Path):
    if not path.exists():
        raise CliError(f"paths file not found: {path}")
    return json.loads(path.read_text())


def cmd_refine(args) -> int:
    scene = _scene(args)
    doc = _load_paths(Path(args.paths))
    if doc["scene"]["digest"] != scene.digest():
        raise CliError("scene digest does not match the paths file; pass the same scene flags")
    paths = [path_from_dict(d, scene) for d in doc["paths"]]
    if any(p.cone is None for p in paths):
        raise CliError("refinement needs SBR paths with their launch cones")
    cfg = RefineConfig(args.iterations, float(np.radians(args.tolerance_deg)), keep_history=bool(args.history))
    t0 = time.perf_counter()
    final, refined = refine_and_finalize(paths, scene, cfg)
    elapsed = time.perf_counter() - t0
    status = [
        {"id": format_key(p.key), "terminated_by": t.terminated_by.value, "valid": t.valid, "iterations": len(t.iterations) - 1}
        for p, t in refined
    ]
    out = Path(args.out)
    _write_json(out, _paths_document(final, scene, args, "sbr-refined", {"refinement": status}))
    _write_manifest(out, args, {"refine": elapsed})
    if args.history:
        _write_history(Path(args.history), refined, scene, args)
    if args.pdp:
        _write_pdp(Path(args.pdp), final, scene, "sbr-refined", args.tx_power)
    print(f"{len(final)} refined paths -> {out}")
    return 0


def _write_history(path: Path, refined, scene, args) -> None:
    orders = [(p.reflection_order, p.diffraction_order) for p, _ in refined]
    refl = min(max((r for r, _ in orders), default=0), MAX_IM_ORDER)
    diff = max((d for _, d in orders), default=0)
    reference = {p.key: p for p in im_paths(scene, refl, diff)}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "i", "error_deg", "error_db", "distance_err_m", "power_err_db"])
        for p, trace in refined:
            ref = reference.get(p.key)
            ref_power = path_power(ref, scene, args.tx_power) if ref is not None else None
            for rec in trace.iterations:
                deg = float(np.degrees(rec.error_angle))
                db = 10.0 * np.log10(deg) if deg > 0 else float("-inf")
                dist = power = ""
                if ref is not None and rec.path is not None:
                    dist = f"{abs(rec.path.length - ref.length):.6e}"
                    power = f"{abs(path_power(rec.path, scene, args.tx_power) - ref_power):.6e}"
                w.writerow([format_key(p.key), rec.i, f"{deg:.6e}", f"{db:.6f}", dist, power])


def cmd_compare(args) -> int:
    a_doc = _load_paths(Path(args.a))
    b_doc = _load_paths(Path(args.b))
    if a_doc["scene"]["digest"] != b_doc["scene"]["digest"]:
        raise CliError("the two path files come from different scenes")
    a = {d["id"]: d for d in a_doc["paths"]}
    b = {d["id"]: d for d in b_doc["paths"]}
    rows, stats = [], []
    for pid in sorted(set(a) | set(b), key=lambda k: (k.count("-"), k)):
        if pid in a and pid in b:
            pa, pb = a[pid], b[pid]
            aod = angle_between(np.array(pa["launch_direction"]), np.array(pb["launch_direction"]))
            aoa = angle_between(np.array(pa["arrival_direction"]), np.array(pb["arrival_direction"]))
            d = [np.degrees(aod), np.degrees(aoa), abs(pa["length_m"] - pb["length_m"]), abs(pa["power_dbm"] - pb["power_dbm"])]
            stats.append(d)
            rows.append([pid, "matched", *(f"{x:.9e}" for x in d)])
        else:
            rows.append([pid, "only_a" if pid in a else "only_b", "", "", "", ""])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "status", "d_aod_deg", "d_aoa_deg", "d_length_m", "d_power_db"])
        w.writerows(rows)
        if stats:
            arr = np.array(stats)
            w.writerow(["mean", "summary", *(f"{x:.9e}" for x in arr.mean(axis=0))])
            w.writerow(["max", "summary", *(f"{x:.9e}" for x in arr.max(axis=0))])
    matched = len(stats)
    print(f"{matched} matched, {len(rows) - matched} unmatched -> {out}")
    return 0


def cmd_density_map(args) -> int:
    grid = make_grid(args.n, args.scheme, args.solid)
    stats = density_stats(grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "nearest_neighbor_angle_deg"])
        for (x, y), nn in zip(stats.projected, np.degrees(stats.nearest_neighbor_angles)):
            w.writerow([f"{x:.9f}", f"{y:.9f}", f"{nn:.9f}"])
    print(f"{len(grid)} rays, CV {stats.coefficient_of_variation:.6f} -> {out}")
    return 0


def _best_time(fn, repeats: int):
    best, result = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def cmd_bench(args) -> int:
    scene = _scene(args)
    cfg = _trace_config(args)
    grid = make_grid(cfg.n, cfg.scheme)
    rows = []
    if args.refl_order <= MAX_IM_ORDER:
        t_im, im = _best_time(lambda: im_paths(scene, args.refl_order, args.diff_order), args.repeats)
        rows.append(["im", t_im, len(im)])
    t_sbr, sbr = _best_time(lambda: finalize_paths(trace_candidates(scene, cfg, grid), scene), args.repeats)
    rows.append(["sbr", t_sbr, len(sbr)])
    candidates = trace_candidates(scene, cfg, grid)
    rcfg = RefineConfig(args.iterations, float(np.radians(args.tolerance_deg)))
    t_ref, (final, _) = _best_time(lambda: refine_and_finalize(candidates, scene, rcfg), args.repeats)
    rows.append(["refine", t_ref, len(final)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "refl_order", "diff_order", "seconds", "paths"])
        for stage, t, n in rows:
            w.writerow([stage, args.refl_order, args.diff_order, f"{t:.6f}", n])
    for stage, t, n in rows:
        print(f"{stage:7s} {t * 1e3:9.3f} ms  {n} paths")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbrtrace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="find propagation paths by SBR or the image method")
    _add_scene_args(p)
    _add_trace_args(p)
    p.add_argument("--method", choices=("sbr", "im"), default="sbr")
    p.add_argument("--out", default="paths.json")
    p.add_argument("--pdp", help="also write a power delay profile CSV")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("refine", help="refine SBR paths with shrinking sub-cones")
    _add_scene_args(p)
    p.add_argument("paths", help="paths.json written by 'trace --method sbr'")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--tolerance-deg", type=float, default=0.01)
    p.add_argument("--history", help="per-iteration error CSV")
    p.add_argument("--out", default="refined.json")
    p.add_argument("--pdp", help="also write a power delay profile CSV")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("compare", help="per-path differences between two path files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("density-map", help="launch-direction density data")
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.EQUIANGULAR.value)
    p.add_argument("--solid", choices=("icosahedron", "octahedron", "tetrahedron"), default="icosahedron")
    p.add_argument("--out", default="density.csv")
    p.set_defaults(func=cmd_density_map)

    p = sub.add_parser("bench", help="wall-clock of the image method, SBR and refinement")
    _add_scene_args(p)
    _add_trace_args(p)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--tolerance-deg", type=float, default=0.01)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, SceneError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
