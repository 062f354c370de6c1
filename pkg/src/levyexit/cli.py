"""Command-line experiment runner.

    levyexit --config scenarios/linear_ball.json [--out DIR] [--seed N] [--workers N]
    levyexit --config scenarios/van_der_pol.json --validate-only

For every ε in the config: detect the attractor (once), predict the exit
law, run the Monte Carlo, test it, and write ``prediction.json``,
``records_eps<ε>.csv``, ``summary.json`` and ``convergence.csv``.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 invalid
config, 3 scenario error (attractor, prediction or start point), 4 more
than 10% of paths truncated.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import dynamics as dy
from .config import ExperimentConfig, load_config
from .levy import JumpDecomposition, LevyError
from .montecarlo import ConfigError, ExitRecord, default_workers, run_experiment
from .predictor import PredictionError, QMeasure, _jsonable, predict
from .stats import StatsError, location_fraction_test

log = logging.getLogger("levyexit")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SCENARIO, EXIT_TRUNCATED = 0, 1, 2, 3, 4


def eps_tag(eps: float) -> str:
    return f"{eps:g}"


def write_records(path: Path, records: List[ExitRecord], dim: int):
    cols = ["path_id", "exit_time"] + [f"exit_x{i}" for i in range(dim)] + [
        "exited_at_jump", "n_jumps", "truncated"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            w.writerow([r.path_id, repr(r.exit_time)] + [repr(float(v)) for v in r.exit_point]
                       + [int(r.exited_at_jump), r.n_large_jumps, int(r.truncated)])


def derived_quantities(cfg: ExperimentConfig, preds) -> list:
    out = []
    for p in preds:
        d = JumpDecomposition.build(cfg.model, p.epsilon, cfg.rho)
        out.append({
            "eps": p.epsilon, "rho_eps": d.threshold, "beta_eps": d.beta,
            "delta_eps": p.epsilon**cfg.gamma, "h_eps": p.h_eps, "q_exit": p.q_exit,
            "rate": p.rate, "mean_exit_time": 1.0 / p.rate,
        })
    return out


def _prediction_doc(cfg, P, preds):
    return _jsonable({
        "scenario": cfg.name,
        "attractor": {"kind": P.kind, "period": P.period, "n_points": len(P)},
        "predictions": [p.to_dict() for p in preds],
    })


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig, validate_only: bool = False, workers: Optional[int] = None) -> int:
    try:
        P = cfg.attractor
        q = QMeasure(P, cfg.domain, cfg.coupling, cfg.model, cfg.n_angles)
        preds = [predict(P, cfg.domain, cfg.targets, cfg.coupling, cfg.model, e,
                         cfg.n_angles, q=q) for e in cfg.eps]
    except (dy.AttractorUndetected, dy.FlowError, PredictionError, LevyError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO

    if validate_only:
        print(json.dumps({"scenario": cfg.name, "derived": derived_quantities(cfg, preds)},
                         indent=2))
        return EXIT_OK

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if "json" in cfg.formats:
        _dump(out / "prediction.json", _prediction_doc(cfg, P, preds))

    A = cfg.assertions
    runs, conv, failures = [], [], []
    truncated_badly = False
    for pred in preds:
        sim = cfg.sim_config(pred.epsilon)
        try:
            exp = run_experiment(sim, cfg.scenario(pred.epsilon, pred.rate), workers, A["ks_level"])
        except ConfigError as exc:
            print(f"scenario error: {exc}", file=sys.stderr)
            return EXIT_SCENARIO
        s = exp.summary
        if "csv" in cfg.formats:
            write_records(out / f"records_eps{eps_tag(pred.epsilon)}.csv", exp.records,
                          cfg.field.dim)
        if s["truncated_fraction"] > 0.1:
            truncated_badly = True
        locs = {}
        for name, U in cfg.targets.items():
            try:
                locs[name] = location_fraction_test(exp.records, U, pred.location_law[name])
            except StatsError as exc:
                locs[name] = {"error": str(exc), "passed": False}
        mc = {k: s.get(k) for k in (
            "n", "n_exited", "n_truncated", "n_errors", "mean_exit_time", "var_exit_time",
            "mean_norm", "se_norm", "median_over_mean", "jump_exit_fraction",
            "continuous_exit_fraction", "mean_large_jumps", "ks", "decomposition")}
        runs.append({"scenario": cfg.name, "eps": pred.epsilon, "prediction": pred.to_dict(),
                     "mc": mc, "locations": locs, "warnings": s["warnings"]})
        row = {"eps": pred.epsilon, "rate": pred.rate, "mc_mean_normalized": s.get("mean_norm"),
               "ks_p": (s.get("ks") or {}).get("p_value")}
        for name in cfg.targets:
            row[f"frac_{name}"] = locs[name].get("fraction")
            row[f"pred_{name}"] = pred.location_law[name]
        conv.append(row)
        log.info("eps=%g mean_norm=%s ks_p=%s", pred.epsilon, row["mc_mean_normalized"], row["ks_p"])

    ks_pass = all((r["mc"]["ks"] or {}).get("passed", False) for r in runs)
    if A["ks"] and not ks_pass:
        failures.append("ks")
    if A["mean_norm"] is not None:
        lo, hi = A["mean_norm"]
        checked = runs if A["mean_norm_at"] == "all" else [min(runs, key=lambda r: r["eps"])]
        for r in checked:
            m = r["mc"]["mean_norm"]
            if m is None or not lo <= m <= hi:
                failures.append(f"mean_norm at eps={r['eps']:g}")
    if A["locations"]:
        for r in runs:
            for name, rep in r["locations"].items():
                if not rep.get("passed"):
                    failures.append(f"location {name} at eps={r['eps']:g}")
    if A["monotone_mean"]:
        by_eps = sorted(runs, key=lambda r: -r["eps"])
        errs = [abs(1.0 - r["mc"]["mean_norm"]) for r in by_eps]
        if any(b > a for a, b in zip(errs, errs[1:])):
            failures.append("monotone_mean")
    if truncated_badly:
        failures.append("truncation above 10%")

    summary = {"scenario": cfg.name, "ks_pass": ks_pass, "runs": runs,
               "failures": failures, "passed": not failures}
    if "json" in cfg.formats:
        _dump(out / "summary.json", _jsonable(summary))
    if "csv" in cfg.formats:
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(conv[0]), lineterminator="\n")
            w.writeheader()
            for row in conv:
                w.writerow({k: ("" if v is None else repr(float(v))) for k, v in row.items()})

    for f in failures:
        print(f"assertion failed: {f}", file=sys.stderr)
    if truncated_badly:
        print("more than 10% of paths hit t_max; increase mc.t_max or check the domain",
              file=sys.stderr)
        return EXIT_TRUNCATED
    return EXIT_ASSERT if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levyexit",
                                description="Predict and simulate first exits under small Lévy noise.")
    p.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--validate-only", action="store_true",
                   help="validate, print derived quantities and exit without simulating")
    p.add_argument("--seed", type=int, default=None, help="override mc.base_seed")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $LEVYEXIT_WORKERS or 1)")
    p.add_argument("--out", default=None, metavar="DIR", help="override outputs.directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and args.seed < 0:
        print("config error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None and args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    workers = args.workers if args.workers is not None else default_workers()
    return run(cfg, args.validate_only, workers)


if __name__ == "__main__":
    sys.exit(main())
