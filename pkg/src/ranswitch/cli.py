"""Command-line front end. Subcommands mirror the methodology stages:
sweep (degradation), select (correlation + clustering), train (tree
policy), run (timeline experiment), reproduce (reference fixtures),
report (SVG plots from run CSVs).

Exit code 0 on success; on failure a single JSON error line goes to
stderr and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness, svgplot
from .kpm_selection import KpmSelector
from .perturbation_lab import (PerturbationConfig, monotonicity_filter,
                               retained_kpms, sweep)
from .phy_pipeline import ExecutionMode, PipelineConfig
from .radio_scene import load_scenario, with_seed
from .switch_policy import (evaluate, feature_importance, save_tree, train)


def _add_common(p, out_required=True):
    p.add_argument("--config", type=Path, default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def cmd_sweep(args) -> int:
    if args.config is not None:
        geometry, scenario, cfg = load_scenario(args.config)
        pipeline_config = PipelineConfig.from_dict(cfg)
    else:
        geometry = harness.SlotGeometry()
        scenario = harness.default_scenarios(args.seed, geometry)[harness.GOOD]
        pipeline_config = PipelineConfig()
    scenario = with_seed(scenario, args.seed)
    pert = PerturbationConfig(slots_per_point=args.slots, seed=args.seed)
    table = sweep(scenario, pert, geometry, pipeline_config)
    scores = monotonicity_filter(table, tau=args.tau)

    args.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out / "degradation.csv")
    harness.write_csv(args.out / "trend_scores.csv",
                      ("kpm", "spearman", "retained", "degenerate"),
                      ([k, v.spearman, v.retained, v.degenerate]
                       for k, v in scores.items()))
    print("retained:", ",".join(retained_kpms(scores)))
    return 0


def cmd_select(args) -> int:
    records = harness.read_kpm_csv(args.kpms)
    selector = KpmSelector(threshold=args.threshold).fit(records)
    args.out.mkdir(parents=True, exist_ok=True)
    selector.matrix_.write_csv(args.out / "correlation.csv")
    harness.write_csv(args.out / "clusters.csv",
                      ("cluster", "members", "representative"),
                      ([i, "|".join(c), r] for i, (c, r) in enumerate(
                          zip(selector.clusters_.clusters,
                              selector.clusters_.representatives))))
    (args.out / "selected.txt").write_text("\n".join(selector.selected_) + "\n")
    print("selected:", ",".join(selector.selected_))
    return 0


def cmd_train(args) -> int:
    if args.config is not None:
        spec = harness.experiment_from_config(args.config, seed=args.seed)
    else:
        spec = harness.default_training_spec(seed=args.seed)
    data = harness.build_labeled_dataset(spec)
    train_set, test_set = data.split(seed=spec.seed, test_fraction=args.test_fraction)
    tree = train(train_set, max_depth=args.max_depth)
    metrics = evaluate(tree, test_set)
    importances = feature_importance(tree)

    args.out.mkdir(parents=True, exist_ok=True)
    save_tree(tree, args.out / "tree.txt")
    harness.write_csv(args.out / "dataset.csv",
                      data.feature_names + ("label",),
                      (list(row) + [int(label)] for row, label in zip(data.x, data.y)))
    harness.write_csv(args.out / "metrics.csv",
                      ("metric", "value"),
                      ([k, v] for k, v in metrics.as_dict().items()))
    harness.write_csv(args.out / "importances.csv",
                      ("feature", "weight"),
                      ([k, v] for k, v in importances.items()))
    print(f"test accuracy: {metrics.accuracy}")
    return 0


def cmd_run(args) -> int:
    if args.config is not None:
        spec = harness.experiment_from_config(
            args.config, seed=args.seed, exec_mode=args.exec, policy=args.policy)
    else:
        spec = harness.default_run_spec(
            seed=args.seed, exec_mode=ExecutionMode(args.exec or "concurrent"),
            policy=args.policy or "oracle")
    result = harness.run_experiment(spec, args.out)
    summary = result["policy"]
    print(f"slots: {len(summary.outcomes)}  decoded bytes: {summary.decoded_bytes}  "
          f"mode changes: {sum(1 for a, b in zip(summary.modes(), summary.modes()[1:]) if a != b)}")
    return 0


def cmd_reproduce(args) -> int:
    checks = harness.reproduce_fixtures(args.fixtures)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        harness.write_csv(args.out / "reproduce.csv",
                          ("check", "passed", "detail"),
                          ([c.name, c.passed, c.detail] for c in checks))
    return 0 if all(c.passed for c in checks) else 2


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    out = args.out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "throughput.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    slots = [int(r["slot"]) for r in rows]
    for stem, label in (("mac_mbps", "MAC throughput [Mbit/s]"),
                        ("phy_mbps", "PHY throughput [Mbit/s]")):
        series = {run: (slots, [float(r[f"{stem}_{run}"]) for r in rows])
                  for run in ("policy", "mmse", "ai")}
        svgplot.line_plot(series, out / f"{stem}.svg",
                          title=label, x_label="slot", y_label=label)
    cdf = {run: [float(r[f"mac_mbps_{run}"]) for r in rows]
           for run in ("policy", "mmse", "ai")}
    svgplot.cdf_plot(cdf, out / "mac_mbps_cdf.svg",
                     title="MAC throughput CDF", x_label="MAC throughput [Mbit/s]")
    print(f"wrote plots to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranswitch",
        description="slot-granular expert-switching simulator and toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run the noise-injection degradation sweep")
    _add_common(p)
    p.add_argument("--slots", type=int, default=500, help="slots per rho point")
    p.add_argument("--tau", type=float, default=0.9, help="monotonicity cutoff")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select", help="correlation clustering + KPM selection")
    p.add_argument("--kpms", type=Path, required=True, help="per-slot KPM CSV")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="collect labeled data and train the tree policy")
    _add_common(p)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--max-depth", type=int, default=2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run a timeline experiment with baselines")
    _add_common(p)
    p.add_argument("--exec", choices=("concurrent", "selected"), default=None)
    p.add_argument("--policy", default=None,
                   help="tree:<path> | fixed:<0|1> | oracle")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reproduce", help="check shipped reference fixtures")
    p.add_argument("--fixtures", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("report", help="render SVG plots from a run directory")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
