"""Batch command-line front end.

Writes into the output directory:

``results.csv``
    one row per trial and scheme:
    ``experiment,scheme,sweep_value,trial_seed,min_rate_bps_hz,penalty_count,iterations,wall_time_s``
``summary.csv``
    mean and standard error of the min rate per scheme and sweep value
``trials.jsonl``
    stored placement and powers of every trial (used by ``--audit``)
``traces/trial_NNNN.csv``
    ``iteration,gbest_fitness,penalty_count`` per MA trial (convergence only)
``convergence_mean.csv``
    the traces averaged over trials (convergence only)
``manifest.json``
    resolved configuration; ``mabs --config manifest.json`` reruns it

Exit codes: 0 success, 1 configuration error, 2 a trial failed (or the
audit found a mismatch).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PAPER_SCALE, ConfigError, RunConfig, parse_config, validate
from .inner import bcd_solve
from .scenario import SchemeKind, generate_scenario, monte_carlo, summarize

logger = logging.getLogger("mabs")

RESULT_HEADER = ["experiment", "scheme", "sweep_value", "trial_seed", "min_rate_bps_hz",
                 "penalty_count", "iterations", "wall_time_s"]
TRACE_HEADER = ["iteration", "gbest_fitness", "penalty_count"]
AUDIT_TOL = 1e-9

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def fmt(x) -> str:
    """Full double precision, 17 significant digits."""
    return f"{float(x):.17g}"


def _open_csv(path: Path):
    return open(path, "w", encoding="utf-8", newline="")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _result_row(cfg: RunConfig, res) -> list:
    failed = res.error is not None
    return [
        cfg.experiment,
        res.scheme.value,
        "" if res.sweep_value is None else res.sweep_value,
        res.seed,
        "nan" if failed else fmt(res.min_rate),
        "" if failed else res.penalty_count,
        "" if failed else res.inner.iterations,
        fmt(res.wall_time) if cfg.record_timing and not failed else "",
    ]


def _trial_record(res, index: int) -> dict:
    rec = {"index": index, "scheme": res.scheme.value, "sweep_value": res.sweep_value,
           "trial_seed": res.seed, "error": res.error}
    if res.error is None:
        rec.update(apv=np.asarray(res.apv).tolist(), power=np.asarray(res.inner.power).tolist(),
                   min_rate=float(res.min_rate))
    return rec


def write_manifest(cfg: RunConfig, out: Path) -> None:
    manifest = {"manifest_version": 1, "package_version": __version__,
                "root_seed": cfg.scenario.rng_seed, "config": cfg.to_dict()}
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(cfg: RunConfig) -> int:
    """Execute the experiment described by ``cfg`` and write its outputs."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, out)
    convergence = cfg.experiment == "convergence"
    if convergence:
        (out / "traces").mkdir(exist_ok=True)

    failures = 0
    index = {"n": 0}
    traces = []
    with _open_csv(out / "results.csv") as res_fh, \
            open(out / "trials.jsonl", "w", encoding="utf-8", newline="\n") as trial_fh:
        writer = _writer(res_fh)
        writer.writerow(RESULT_HEADER)

        def on_result(res):
            nonlocal failures
            i = index["n"]
            index["n"] += 1
            writer.writerow(_result_row(cfg, res))
            trial_fh.write(json.dumps(_trial_record(res, i)) + "\n")
            # keep partial results on disk if a later trial crashes the run
            res_fh.flush()
            trial_fh.flush()
            if res.error is not None:
                failures += 1
                return
            logger.info("%s sweep=%s seed=%d min_rate=%.4f", res.scheme.value, res.sweep_value,
                        res.seed, res.min_rate)
            if convergence and res.trace and res.scheme is SchemeKind.MOVABLE_OPTIMIZED:
                path = out / "traces" / f"trial_{len(traces):04d}.csv"
                with _open_csv(path) as fh:
                    w = _writer(fh)
                    w.writerow(TRACE_HEADER)
                    for t, (f, c) in enumerate(zip(res.trace["gbest_fitness"],
                                                   res.trace["penalty_count"])):
                        w.writerow([t, fmt(f), c])
                traces.append(res.trace)

        results = monte_carlo(cfg.scenario, cfg.schemes, cfg.pso, cfg.num_trials,
                              cfg.sweep_param, cfg.sweep_values or None,
                              keep_trace=convergence, progress=on_result)

    with _open_csv(out / "summary.csv") as fh:
        w = _writer(fh)
        w.writerow(["scheme", "sweep_value", "mean_min_rate_bps_hz", "sem", "n"])
        for (scheme, value), stats in summarize(results).items():
            w.writerow([scheme, "" if value is None else value, fmt(stats["mean"]),
                        fmt(stats["sem"]), stats["n"]])

    if traces:
        fit = np.mean([t["gbest_fitness"] for t in traces], axis=0)
        pen = np.mean([t["penalty_count"] for t in traces], axis=0)
        with _open_csv(out / "convergence_mean.csv") as fh:
            w = _writer(fh)
            w.writerow(["iteration", "mean_gbest_fitness", "mean_penalty_count"])
            for t, (f, c) in enumerate(zip(fit, pen)):
                w.writerow([t, fmt(f), fmt(c)])

    if failures:
        logger.error("%d trial(s) failed", failures)
        return EXIT_SOLVER
    return EXIT_OK


def audit(cfg: RunConfig, out=None) -> list:
    """Recompute every stored min rate from its placement and replayed instance.

    Returns a list of mismatch descriptions (empty when all agree to 1e-9).
    """
    out = Path(cfg.output_dir if out is None else out)
    with open(out / "results.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "trials.jsonl", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    problems = []
    if len(rows) != len(records):
        return [f"results.csv has {len(rows)} rows but trials.jsonl has {len(records)}"]
    for row, rec in zip(rows, records):
        if rec["error"] is not None:
            continue
        scen_cfg = cfg.scenario
        if cfg.sweep_param is not None:
            scen_cfg = dataclasses.replace(scen_cfg, **{cfg.sweep_param: int(rec["sweep_value"])})
        scenario = generate_scenario(scen_cfg, int(row["trial_seed"]))
        sol = bcd_solve(np.array(rec["apv"]), scenario, cfg.pso.rate_tol, cfg.pso.bisect_tol,
                        cfg.pso.max_bcd_iters)
        stored = float(row["min_rate_bps_hz"])
        if abs(sol.min_rate - stored) > AUDIT_TOL:
            problems.append(f"row {rec['index']} ({row['scheme']}, seed {row['trial_seed']}): "
                            f"stored {stored!r}, recomputed {sol.min_rate!r}")
    return problems


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mabs",
        description="Max-min uplink rate experiments for a movable-antenna base station.",
    )
    parser.add_argument("--config", required=True, help="YAML run config or a manifest.json")
    parser.add_argument("--experiment", choices=["convergence", "rate_vs_antennas",
                                                 "rate_vs_paths", "single"],
                        help="override the configured experiment")
    parser.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
    parser.add_argument("--seed", type=int, help="root seed (64-bit unsigned)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--audit", action="store_true",
                        help="recompute every stored rate from its placement afterwards")
    parser.add_argument("--paper-scale", action="store_true",
                        help="swarm of 200 for 300 iterations and 1000 trials")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.paper_scale:
        cfg.pso = dataclasses.replace(cfg.pso, swarm_size=PAPER_SCALE["swarm_size"],
                                      max_iters=PAPER_SCALE["max_iters"])
        cfg.num_trials = PAPER_SCALE["num_trials"]
    if args.experiment:
        cfg.experiment = args.experiment
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        cfg.num_trials = args.trials
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        cfg.scenario = dataclasses.replace(cfg.scenario, rng_seed=args.seed)
    if args.out:
        cfg.output_dir = args.out
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(parse_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    code = run(cfg)
    if args.audit:
        problems = audit(cfg)
        for p in problems:
            print(f"audit mismatch: {p}", file=sys.stderr)
        if problems:
            return EXIT_SOLVER
        print(f"audit passed for {cfg.output_dir}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
