"""Command-line entry point: ``svbp {perception,plan,gen-scenario,validate-scenario}``.

Outputs go to ``--out``; relative paths resolve under ``$SVBP_OUTPUT_ROOT``
when it is set. Every output directory gets one ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, scenario_io
from ._rng import substream
from .oracle import GibbsConfig
from .perception import PerceptionSettings, generate_scenario, run_sweep
from .planning.metrics import evaluate_run, pass_rate_curve
from .planning.mpc import SvbpPlanner, run_episode
from .planning.scenario import CANONICAL, PlanningScenario, canonical

log = logging.getLogger("svbp")

PASS_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.05), 2)


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def output_dir(out: str | None, command: str, config: dict) -> Path:
    root = Path(os.environ.get("SVBP_OUTPUT_ROOT", "."))
    path = Path(out) if out else Path(f"{command}-{config_hash(config)[:10]}")
    path = path if path.is_absolute() else root / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(path: Path, argv, config: dict, seed: int, outputs: list[str], started: float) -> None:
    manifest = {
        "command_line": list(argv),
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "artifact_version": __version__,
        "outputs": sorted(outputs),
        "wall_time_seconds": round(time.time() - started, 3),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.10g}"


# perception

def _aggregate(cells, keys, value):
    groups = {}
    for c in cells:
        groups.setdefault(tuple(getattr(c, k) for k in keys), []).append(getattr(c, value))
    rows = []
    for key in sorted(groups):
        v = np.asarray(groups[key], dtype=float)
        rows.append([*key, _fmt(float(np.mean(v))), _fmt(float(np.std(v))), len(v)])
    return rows


def cmd_perception(args, argv) -> int:
    started = time.time()
    methods = ("svbp", "pbp") if args.method == "both" else (args.method,)
    settings = PerceptionSettings(
        svbp_iterations=args.svbp_iterations, pbp_iterations=args.pbp_iterations,
        gibbs=GibbsConfig(num_samples=args.gibbs_samples, burn_in=args.gibbs_burn_in,
                          thinning=args.gibbs_thinning))
    config = {"command": "perception", "methods": list(methods), "noise_levels": args.noise_levels,
              "particles": args.particles, "runs": args.runs, "seed": args.seed, "mmd": not args.no_mmd,
              "settings": asdict(settings)}
    out = output_dir(args.out, "perception", config)
    cells = run_sweep(methods, args.noise_levels, args.particles, args.runs, args.seed, settings,
                      with_mmd=not args.no_mmd, jobs=args.jobs, keep_snapshots=args.snapshots,
                      progress=lambda task: log.info("finished noise %d run %d", *task))
    cells.sort(key=lambda c: (c.method, c.noise, c.particles, c.run))
    outputs = ["metrics.csv", "fig3.csv", "fig4.csv", "fig6.csv"]
    _write_csv(out / "metrics.csv",
               ["method", "noise", "particles", "run", "error", "mmd", "seconds", "iterations"],
               [[c.method, c.noise, c.particles, c.run, _fmt(c.error), _fmt(c.mmd), f"{c.seconds:.3f}",
                 c.iterations] for c in cells])
    head = ["method", "noise", "particles"]
    _write_csv(out / "fig3.csv", head + ["mean_error", "std_error", "runs"],
               _aggregate(cells, ("method", "noise", "particles"), "error"))
    _write_csv(out / "fig4.csv", head + ["mean_mmd", "std_mmd", "runs"],
               _aggregate(cells, ("method", "noise", "particles"), "mmd"))
    _write_csv(out / "fig6.csv", ["method", "particles", "noise", "mean_error", "std_error", "runs"],
               _aggregate(cells, ("method", "particles", "noise"), "error"))
    if args.snapshots:
        with (out / "snapshots.jsonl").open("w") as fh:
            for c in cells:
                for rec in c.snapshots:
                    fh.write(json.dumps({"noise": c.noise, "run": c.run, **rec}, separators=(",", ":")) + "\n")
        outputs.append("snapshots.jsonl")
    write_manifest(out, argv, config, args.seed, outputs, started)
    print(out)
    return 0


# planning

def load_planning(spec: str) -> PlanningScenario:
    if spec in CANONICAL:
        return canonical(spec)
    sc = scenario_io.load(spec)
    if not isinstance(sc, PlanningScenario):
        raise UsageError(f"{spec} is not a planning scenario")
    return sc


def _apply_overrides(sc: PlanningScenario, args) -> PlanningScenario:
    planner, harness = sc.planner, sc.harness
    if args.particles is not None:
        planner = replace(planner, num_particles=args.particles)
    if args.iterations is not None:
        planner = replace(planner, iterations_per_step=args.iterations)
    if args.transport is not None:
        harness = replace(harness, transport=args.transport)
    if args.latency is not None:
        harness = replace(harness, latency=args.latency)
    if args.drop is not None:
        harness = replace(harness, drop_probability=args.drop)
    sc = replace(sc, planner=planner, harness=harness)
    if args.max_steps is not None:
        sc = replace(sc, max_steps=args.max_steps)
    return sc


def make_planner(sc: PlanningScenario, method: str, decentralized: bool, seed: int, run: int):
    init_rng = substream(seed, "init", run)
    if method == "gabp":
        if decentralized:
            raise UsageError("--decentralized is only available for --method svbp")
        from .gabp import GabpPlanner
        return GabpPlanner(sc, init_rng)
    if decentralized:
        from .swarm import SwarmPlanner
        return SwarmPlanner(sc, init_rng, substream(seed, "transport", run))
    return SvbpPlanner(sc, init_rng)


def cmd_plan(args, argv) -> int:
    started = time.time()
    try:
        sc = _apply_overrides(load_planning(args.scenario), args)
    except (scenario_io.SchemaError, OSError) as exc:
        raise UsageError(f"cannot load scenario {args.scenario}: {exc}") from None
    problems = [] if args.method in ("svbp", "gabp") else [f"method: unknown {args.method!r}"]
    problems += scenario_io.validate_document(scenario_io.to_document(sc))
    if problems:
        raise UsageError("; ".join(problems))
    config = {"command": "plan", "method": args.method, "decentralized": args.decentralized, "runs": args.runs,
              "seed": args.seed, "snapshot_stride": args.snapshot_stride, "scenario": sc.to_dict()}
    out = output_dir(args.out, "plan", config)
    (out / "runs").mkdir(exist_ok=True)
    metrics, rows, times, outputs = [], [], [], []
    for r in range(args.runs):
        planner = make_planner(sc, args.method, args.decentralized, args.seed, r)
        run = run_episode(sc, planner, seed=r, snapshot_stride=args.snapshot_stride)
        if hasattr(planner, "close"):
            planner.close()
        run.method = args.method + ("-decentralized" if args.decentralized else "")
        name = f"runs/run_{r:03d}.jsonl"
        with (out / name).open("w") as fh:
            run.write_jsonl(fh)
        outputs.append(name)
        m = evaluate_run(run)
        metrics.append(m)
        for i in range(sc.num_robots):
            rows.append([r, i, _fmt(float(m.final_error[i])), int(m.collided[i]), _fmt(float(m.path_time[i])),
                         len(run.records)])
            if not np.isnan(m.path_time[i]):
                times.append([r, i, _fmt(float(m.path_time[i]))])
        log.info("run %d: pass rate %.2f at %.2f m", r, m.pass_rate([sc.success_threshold])[0], sc.success_threshold)
    _write_csv(out / "metrics.csv", ["run", "robot", "final_error", "collided", "path_time", "steps"], rows)
    curve = pass_rate_curve(metrics, PASS_THRESHOLDS)
    _write_csv(out / "pass_rate.csv", ["threshold", "pass_rate", "runs"],
               [[f"{t:.2f}", _fmt(float(p)), args.runs] for t, p in zip(PASS_THRESHOLDS, curve)])
    _write_csv(out / "path_time.csv", ["run", "robot", "path_time"], times)
    outputs += ["metrics.csv", "pass_rate.csv", "path_time.csv"]
    write_manifest(out, argv, config, args.seed, outputs, started)
    print(out)
    return 0


# scenario files

def cmd_gen_scenario(args, argv) -> int:
    if args.kind == "perception":
        sc = generate_scenario(args.nodes, args.noise, seed=args.seed)
    else:
        if args.name not in CANONICAL:
            raise UsageError(f"unknown scenario {args.name!r}; choose from {sorted(CANONICAL)}")
        sc = canonical(args.name)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    scenario_io.dump(sc, path)
    print(path)
    return 0


def cmd_validate_scenario(args, argv) -> int:
    try:
        doc = json.loads(Path(args.file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return 1
    problems = scenario_io.validate_document(doc)
    for p in problems:
        print(f"{args.file}: {p}", file=sys.stderr)
    if not problems:
        print(f"{args.file}: ok")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svbp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("perception", help="noisy-localization sweep (error and MMD vs noise and particle count)")
    pe.add_argument("--noise-levels", type=_int_list, default=[0, 8, 16, 24, 32])
    pe.add_argument("--particles", type=_int_list, default=[50])
    pe.add_argument("--runs", type=int, default=10)
    pe.add_argument("--method", choices=("svbp", "pbp", "both"), default="both")
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--out")
    pe.add_argument("--jobs", type=int, default=1)
    pe.add_argument("--svbp-iterations", type=int, default=100)
    pe.add_argument("--pbp-iterations", type=int, default=50)
    pe.add_argument("--gibbs-samples", type=int, default=5000)
    pe.add_argument("--gibbs-burn-in", type=int, default=1000)
    pe.add_argument("--gibbs-thinning", type=int, default=5)
    pe.add_argument("--no-mmd", action="store_true", help="skip the Gibbs ground truth and MMD")
    pe.add_argument("--snapshots", action="store_true", help="write final particle snapshots")
    pe.set_defaults(func=cmd_perception)

    pl = sub.add_parser("plan", help="multi-robot MPC runs on a planning scenario")
    pl.add_argument("--scenario", required=True, help="scenario file or canonical name")
    pl.add_argument("--method", choices=("svbp", "gabp"), default="svbp")
    pl.add_argument("--decentralized", action="store_true")
    pl.add_argument("--runs", type=int, default=10)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out")
    pl.add_argument("--particles", type=int)
    pl.add_argument("--iterations", type=int, help="solver iterations per MPC step")
    pl.add_argument("--max-steps", type=int)
    pl.add_argument("--transport", choices=("in_process", "loopback_sockets"))
    pl.add_argument("--latency", type=int, help="snapshot delay in iteration ticks")
    pl.add_argument("--drop", type=float, help="snapshot drop probability")
    pl.add_argument("--snapshot-stride", type=int, default=0, help="log particles every k steps (0: never)")
    pl.set_defaults(func=cmd_plan)

    g = sub.add_parser("gen-scenario", help="write a scenario file")
    g.add_argument("--kind", choices=scenario_io.KINDS, default="planning")
    g.add_argument("--name", default="circle8", help="canonical planning scenario")
    g.add_argument("--nodes", type=int, default=8)
    g.add_argument("--noise", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scenario)

    v = sub.add_parser("validate-scenario", help="check a scenario file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate_scenario)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    for name in ("runs", "jobs"):
        if getattr(args, name, 1) < 1:
            parser.error(f"--{name} must be >= 1")
    try:
        return args.func(args, ["svbp", *argv])
    except UsageError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
