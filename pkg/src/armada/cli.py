"""Command-line experiment runner.

Usage: ``armada <subcommand> [--config FILE] [--out DIR] [--jobs N] [--seed N]``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import config as C
from . import experiments as X
from .errors import ArmadaError, ConfigError
from .teacher import synth_teacher_generate, write_representations
from .train import CURVE_COLUMNS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3

RESULT_COLUMNS = [
    "run", "label", "kind", "seed", "alpha", "beta", "gamma", "tau", "manifold_variant", "sigma", "shuffle",
    "frozen_aligner", "capacity_ablation", "student_main", "student_aux", "aligner_main", "aligner_aux",
    "student_test_task_loss", "wall_clock",
]

SCHEMAS = f"""\
output layout (under --out; default $ARMADA_OUT/<subcommand>, or ./armada-out/<subcommand>):
  summary.json          aggregate numbers for the subcommand: means, stds, Welch t-tests
  config.txt            the fully resolved configuration (every key)
  results.csv           one row per distilled run the subcommand asked for (final metrics)
  baselines.csv         one row per undistilled reference run (same columns)
  curves.csv            one row per (run, epoch), distilled and reference runs alike
  runs/<name>/          report.json and epochs.csv for each run; <name> encodes
                        the label, the hyperparameters that differ from the
                        config, and the seed

results.csv / baselines.csv columns:
  {", ".join(RESULT_COLUMNS)}
  kind is "distilled" or "baseline"; hyperparameter columns hold the values the
  run actually used; aligner_* are empty for baselines.

curves.csv columns:
  run, label, seed, {", ".join(CURVE_COLUMNS)}
  losses are per-epoch means over batches; eval_* / aligner_* are held-out scores
  for the main and auxiliary heads; task_ts is the aligner main-head task loss.

exit codes: 0 success, 1 configuration error, 2 runtime or numeric error,
            3 audit property violated (gradcheck, prop1-audit)
"""

# ---------------------------------------------------------------------------
# output helpers


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_json_default, allow_nan=True) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return ""
    return v


def run_row(study: X.Study, rec: X.RunRecord) -> dict:
    spec = rec.spec
    if spec.kind == "baseline":
        cfg = study.train_config(spec.seed, alpha=0.0, beta=0.0, gamma=0.0)
    else:
        cfg = study.train_config(spec.seed, **dict(spec.overrides))
    loss = cfg.effective_loss()
    row = {
        "run": spec.dirname, "label": rec.label, "kind": spec.kind, "seed": spec.seed,
        "alpha": loss.alpha, "beta": loss.beta, "gamma": loss.gamma, "tau": loss.tau,
        "manifold_variant": loss.manifold_variant if spec.kind == "distilled" else "",
        "sigma": spec.sigma, "shuffle": spec.shuffle,
        "frozen_aligner": cfg.frozen_aligner, "capacity_ablation": cfg.capacity_ablation,
        "wall_clock": rec.report.wall_clock,
    }
    for key in ("student_main", "student_aux", "aligner_main", "aligner_aux", "student_test_task_loss"):
        row[key] = rec.final.get(key)
    return row


def write_runs(out: Path, study: X.Study, records: list[X.RunRecord]) -> None:
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    groups = {"results.csv": [r for r in records if r.spec.kind != "baseline"],
              "baselines.csv": [r for r in records if r.spec.kind == "baseline"]}
    for fname, group in groups.items():
        with open(out / fname, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
            w.writeheader()
            for rec in group:
                w.writerow({k: _cell(v) for k, v in run_row(study, rec).items()})
    with open(out / "curves.csv", "w", newline="") as fh:
        cur = csv.DictWriter(fh, fieldnames=["run", "label", "seed"] + CURVE_COLUMNS)
        cur.writeheader()
        for rec in records:
            for entry in rec.report.epochs:
                cur.writerow({"run": rec.spec.dirname, "label": rec.label, "seed": rec.seed,
                              **{k: _cell(entry.get(k)) for k in CURVE_COLUMNS}})
    for rec in records:
        d = runs_dir / rec.spec.dirname
        d.mkdir(exist_ok=True)
        rec.report.write_json(d / "report.json")
        rec.report.write_csv(d / "epochs.csv")


def run_line(rec: X.RunRecord) -> str:
    f = rec.final

    def fmt(key):
        v = f.get(key)
        return "-" if v is None else f"{v:.4f}"

    return (f"{rec.spec.dirname}: student={fmt('student_main')} aux={fmt('student_aux')} "
            f"aligner={fmt('aligner_main')} test_loss={fmt('student_test_task_loss')} "
            f"({rec.report.wall_clock:.1f}s)")


# ---------------------------------------------------------------------------
# subcommands


def _headline(name: str, summary: dict) -> str:
    """One closing line per subcommand with the numbers that matter."""
    if name == "train":
        return f"gain over baseline {summary['gain']:+.4f}"
    if name == "sweep":
        best = max(summary["points"], key=lambda p: p["gain_mean"])
        return (f"{len(summary['points'])} grid points, {summary['rows']} runs; best gain {best['gain_mean']:+.4f} at "
                f"alpha={best['alpha']:g} beta={best['beta']:g} gamma={best['gamma']:g} {best['manifold_variant']}")
    if name == "noise-sweep":
        gains = " ".join(f"{g:+.4f}" for g in summary["gain_mean"])
        return (f"gain by sigma {gains}; sensitivity student={summary['student_sensitivity']:.3g} "
                f"aligner={summary['aligner_sensitivity']:.3g}")
    if name == "shuffle-ablation":
        parts = [f"{v}: {d['aligned_gain']:+.4f} vs {d['shuffled_gain']:+.4f}" for v, d in summary["variants"].items()]
        return "aligned vs shuffled gain: " + "; ".join(parts)
    if name == "frozen-aligner":
        return (f"trained {summary['trained_acc']:.4f} vs frozen {summary['frozen_acc']:.4f}; task-loss t="
                f"{summary['welch_loss_frozen_gt_trained']['t']:+.3f}")
    if name == "capacity-ablation":
        w = summary["welch_full_gt_capacity"]
        return f"full {summary['full_acc']:.4f} vs capacity-matched {summary['capacity_acc']:.4f} (p={w['p']:.3g})"
    if name == "aux-correlation":
        return f"main/aux Spearman {summary['spearman']:.3f} over {len(summary['main'])} points"
    if name == "cluster-report":
        s = summary["summary"]["all"]
        return f"silhouette distilled {s['distilled_silhouette']:.3f} vs baseline {s['baseline_silhouette']:.3f}"
    return ""


TRAINING_COMMANDS: dict[str, Callable[[X.Study], dict]] = {
    "train": X.train_one,
    "sweep": X.sweep,
    "noise-sweep": X.noise_sweep,
    "shuffle-ablation": X.shuffle_ablation,
    "frozen-aligner": X.frozen_aligner,
    "capacity-ablation": X.capacity_ablation,
    "aux-correlation": X.aux_correlation,
    "cluster-report": X.cluster_analysis,
}

HELP = {
    "train": "one distilled run at train.seed, plus its undistilled baseline",
    "sweep": "alpha x beta x gamma x manifold-variant grid over sweep.seeds",
    "noise-sweep": "Gaussian noise on teacher rows at each sweep.sigma, with sensitivity scores",
    "shuffle-ablation": "aligned vs row-shuffled teacher for every sweep.variant",
    "frozen-aligner": "trained vs randomly initialised, never-updated aligner",
    "capacity-ablation": "deeper aligner without projection or auxiliary head (beta = gamma = 0)",
    "aux-correlation": "Spearman correlation of main vs auxiliary head over variant x sigma points",
    "cluster-report": "silhouette and k-means purity of student hidden states, distilled vs undistilled",
    "gradcheck": "finite-difference audit of every loss and combined objective",
    "gen-teacher": "write synthetic teacher tables (train and test split) to representation files",
    "prop1-audit": "check the manifold-loss inequalities on random batch pairs",
}


def cmd_training(name: str, cfg, args, out: Path) -> int:
    study = X.Study(cfg, jobs=args.jobs)
    start = time.perf_counter()
    summary = TRAINING_COMMANDS[name](study)
    records = study.records()
    write_runs(out, study, records)
    write_json(out / "summary.json", {"command": name, "version": __version__, "summary": summary,
                                      "runs": len(records), "wall_clock": time.perf_counter() - start})
    for rec in records:
        print(run_line(rec))
    print(f"{name}: {_headline(name, summary)}")
    return EXIT_OK


def cmd_gradcheck(cfg, args, out: Path) -> int:
    report = X.gradient_audit(instances=args.instances, seed=args.seed or 0, step=args.step, tolerance=args.tolerance)
    write_json(out / "summary.json", {"command": "gradcheck", "summary": report})
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["name", "instances", "max_rel_error", "passed"], extrasaction="ignore")
        w.writeheader()
        for case in report["cases"]:
            w.writerow(case)
            print(f"{case['name']}: max_rel_error={case['max_rel_error']:.2e} "
                  f"{'pass' if case['passed'] else 'FAIL'} ({case['instances']} instances)")
    verdict = "passed" if report["passed"] else "FAILED"
    print(f"gradcheck: {len(report['cases'])} cases {verdict}; worst {report['worst']:.2e} (tol {report['tolerance']:g})")
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


def cmd_prop1(cfg, args, out: Path) -> int:
    report = X.prop1_audit(count=args.count, seed=args.seed or 0)
    write_json(out / "summary.json", {"command": "prop1-audit", "summary": report})
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["count", "violations", "min_triangle_slack", "min_amgm_slack",
                                           "cosine_inapplicable"], extrasaction="ignore")
        w.writeheader()
        w.writerow(report)
    print(f"prop1-audit: {report['count']} batch pairs, {report['violations']} violations; "
          f"min slack triangle={report['min_triangle_slack']:.3g} amgm={report['min_amgm_slack']:.3g}")
    return EXIT_OK if report["violations"] == 0 else EXIT_PROPERTY


def cmd_gen_teacher(cfg, args, out: Path) -> int:
    from .data import make_task

    train, test = make_task(cfg.task)
    tables = synth_teacher_generate([train, test], cfg.teacher)
    rows = []
    for split, table in zip(("train", "test"), tables):
        path = out / f"teacher_{split}.armd"
        write_representations(path, table, seed=cfg.teacher.seed)
        rows.append({"split": split, "path": str(path), "count": table.n, "dim": table.d_t})
        print(f"{split}: wrote {table.n} x {table.d_t} table to {path}")
    write_json(out / "summary.json", {"command": "gen-teacher", "files": rows, "teacher": asdict(cfg.teacher)})
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["split", "path", "count", "dim"])
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (defaults used when omitted)")
    common.add_argument("--out", help="output directory (default: $ARMADA_OUT/<subcommand>)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs (default 1)")
    common.add_argument("--seed", type=int, default=None,
                        help="first training seed; the seed list keeps its length (audits: RNG seed)")

    parser = argparse.ArgumentParser(
        prog="armada",
        description="Distillation experiments with a trainable teacher-student aligner.",
        epilog=SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in list(TRAINING_COMMANDS) + ["gradcheck", "gen-teacher", "prop1-audit"]:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name], epilog=SCHEMAS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "gradcheck":
            p.add_argument("--instances", type=int, default=20, help="random instances per case (default 20)")
            p.add_argument("--step", type=float, default=1e-5, help="central-difference step (default 1e-5)")
            p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error (default 1e-4)")
        if name == "prop1-audit":
            p.add_argument("--count", type=int, default=1000, help="random batch pairs (default 1000)")
    return parser


def output_dir(arg: str | None, command: str) -> Path:
    root = Path(arg) if arg else Path(os.environ.get("ARMADA_OUT", "armada-out")) / command
    root.mkdir(parents=True, exist_ok=True)
    return root


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = C.load(args.config)
        if args.seed is not None:
            cfg = C.with_seed(cfg, args.seed)
        if cfg.teacher_file and not Path(cfg.teacher_file).exists():
            raise ConfigError(f"teacher.file: no such file {cfg.teacher_file}")
        out = output_dir(args.out, args.command)
        (out / "config.txt").write_text(C.dump(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args, out)
        if args.command == "prop1-audit":
            return cmd_prop1(cfg, args, out)
        if args.command == "gen-teacher":
            return cmd_gen_teacher(cfg, args, out)
        return cmd_training(args.command, cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArmadaError, OSError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
