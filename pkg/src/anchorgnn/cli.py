"""Command-line entry points.

    anchorgnn train --config experiment.cfg
    anchorgnn evaluate --checkpoint runs/x/checkpoint_seed0.json --anchors runs/x/anchors_seed0.json
    anchorgnn compare --runs runs/
    anchorgnn generate-data --spec data.cfg --out dataset.txt

The ANCHORGNN_OUTPUT_ROOT environment variable prefixes every configured
output directory.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

from .datasets import generate_motif_dataset
from .graphs import save_dataset
from .harness import (
    MetricsReport,
    compare_methods,
    evaluate_checkpoint,
    load_config,
    load_run_record,
    resolve_output_dir,
    run_experiment,
    _motif_spec,
)
from .rng import RngStream


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    output_dir = resolve_output_dir(cfg)
    runs = run_experiment(cfg, output_dir)
    print(f"method={cfg.method} output={output_dir}")
    for run in runs:
        r = run.report
        print(
            f"seed {run.seed}: id_acc={r.id_accuracy:.4f} ood_acc={r.ood_accuracy:.4f} "
            f"id_ece={r.id_ece:.4f} ood_ece={r.ood_ece:.4f} ood_auroc={r.ood_auroc:.4f} "
            f"id_gep={r.id_gep_mae:.4f} ood_gep={r.ood_gep_mae:.4f} "
            f"({run.wall_time:.1f}s)"
        )
    return 0


def _cmd_evaluate(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.anchors)
    for name in MetricsReport.FIELDS:
        print(f"{name} = {getattr(report, name):.6f}")
    return 0


def _cmd_compare(args) -> int:
    pattern = os.path.join(args.runs, "**", "metrics_seed*.csv")
    paths = sorted(glob.glob(pattern, recursive=True))
    if not paths:
        print(f"no metrics CSVs found under {args.runs}", file=sys.stderr)
        return 1
    grouped: dict[str, list] = {}
    for path in paths:
        run = load_run_record(path)
        grouped.setdefault(run.method, []).append(run)
    csv_text, table_text = compare_methods(grouped)
    out_csv = os.path.join(args.runs, "comparison.csv")
    with open(out_csv, "w") as fh:
        fh.write(csv_text)
    print(table_text, end="")
    print(f"\nwrote {out_csv}")
    return 0


def _cmd_generate_data(args) -> int:
    cfg = load_config(args.spec)
    data = cfg.data
    spec = _motif_spec(data)
    rng = RngStream(data["data_seed"])
    shift = data["shift"] if data["shift"] in ("none", "covariate", "concept") else "none"
    graphs, split = generate_motif_dataset(spec, data["n_graphs"], rng, shift=shift)
    save_dataset(graphs, args.out, num_classes=spec.num_classes)
    print(
        f"wrote {len(graphs)} graphs to {args.out} "
        f"(train={len(split.train)} val={len(split.val)} "
        f"test_id={len(split.test_id)} test_ood={len(split.test_ood)})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorgnn",
                                     description="anchored-GNN uncertainty experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a configured experiment over its seeds")
    p_train.add_argument("--config", required=True, help="experiment config file")
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="re-evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint JSON")
    p_eval.add_argument("--anchors", default=None, help="frozen anchor-set JSON")
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="tabulate metrics CSVs from run directories")
    p_cmp.add_argument("--runs", required=True, help="directory containing run outputs")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_gen = sub.add_parser("generate-data", help="emit a synthetic dataset file")
    p_gen.add_argument("--spec", required=True, help="config file with a [data] section")
    p_gen.add_argument("--out", required=True, help="output dataset path")
    p_gen.set_defaults(fn=_cmd_generate_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
