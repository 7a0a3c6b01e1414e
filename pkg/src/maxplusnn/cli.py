"""Command-line interface.

Subcommands: train, eval, prune-sweep, equiv-check, gradcheck, gen-data,
report. Exit codes: 0 success, 1 usage/config error, 2 check failure,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    PRESETS,
    apply_override,
    load_config,
    make_dataset,
    make_head_spec,
    make_train_config,
    validate_config,
)
from .datasets import gen_max_affine, save_features_csv
from .equivalence import check_maxout_equivalence, check_relu_equivalence
from .gradcheck import gradcheck_head
from .heads import VARIANTS, HeadSpec, build_head, expected_census
from .metrics import aggregate_runs
from .optim import evaluate, train
from .pruning import build_prune_plan, prune_and_eval
from .runio import (
    RunReport,
    load_checkpoint,
    prepare_run_dir,
    read_curves_csv,
    read_run_report,
    read_sweep_csv,
    save_checkpoint,
    write_curves_csv,
    write_run_report,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK = 2
EXIT_RUNTIME = 3

CLI_HEADS = ("relu", "maxout", "zhang", "dense-morph", "sparse-morph")

DEFAULT_GRIDS = {
    "mtat-like": ([0.8, 0.9, 0.95, 0.98], [0.8, 0.9, 0.95, 0.98]),
    "synthetic": ([0.8, 0.9, 0.95, 0.98], [0.8, 0.9, 0.95, 0.98]),
    "cifar10": ([0.7, 0.8, 0.9], [0.7, 0.8, 0.9, 0.95]),
}


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1, not argparse's default 2 (2 is for failed checks).
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _head_arg(value: str) -> str:
    return value.replace("-", "_")


def _resolved_config(args) -> dict:
    overrides = []
    if getattr(args, "head", None):
        overrides.append(f"head.variant={_head_arg(args.head)}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    overrides.extend(args.set or [])
    return load_config(args.config, args.preset, overrides)


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    dataset = make_dataset(cfg)
    spec = make_head_spec(cfg, dataset)
    # Freeze inferred fields into the snapshot so the run is self-describing.
    cfg["head"]["d_in"] = spec.d_in
    cfg["head"]["d_out"] = spec.d_out
    cfg["head"]["batchnorm"] = spec.batchnorm
    out = args.out or f"runs/{cfg['name']}-{spec.variant}-seed{cfg['seed']}"
    run_dir = prepare_run_dir(out, args.force)

    model = build_head(spec)
    result = train(model, dataset, make_train_config(cfg))
    eval_split = "test" if "test" in dataset.splits else "val"
    metrics = evaluate(model, dataset, eval_split)

    report = RunReport(
        name=f"{cfg['name']}/{spec.variant}/seed{cfg['seed']}",
        variant=spec.variant,
        seed=cfg["seed"],
        task=dataset.task,
        metrics=metrics,
        param_census=model.census(),
        expected_census=expected_census(spec),
        best_epoch=result.best_epoch,
        best_val_loss=result.best_val_loss,
        diverged=result.diverged,
        eval_split=eval_split,
        config=cfg,
    )
    (run_dir / "config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    save_checkpoint(run_dir / "checkpoint.npz", model, result.optimizer_state,
                    extra_meta={"best_epoch": result.best_epoch})
    write_curves_csv(run_dir / "curves.csv", result.curves)
    write_run_report(run_dir / "report.json", report)

    summary = ", ".join(f"{k}={v:.4f}" for k, v in metrics.items())
    print(f"{report.name}: best epoch {result.best_epoch}, {eval_split} {summary}")
    print(f"artifacts in {run_dir}")
    if result.diverged:
        print(f"training diverged: {result.divergence_note}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _load_run(run_dir: Path):
    cfg = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    validate_config(cfg)
    model, _, _ = load_checkpoint(run_dir / "checkpoint.npz")
    return cfg, model


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    cfg, model = _load_run(run_dir)
    dataset = make_dataset(cfg)
    metrics = evaluate(model, dataset, args.split)
    print(json.dumps({"run": str(run_dir), "split": args.split, "metrics": metrics},
                     sort_keys=True, indent=2))
    return EXIT_OK


def _parse_grid(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--r1/--r2", f"not a comma-separated float list: {text!r}") \
            from None
    if not values or not all(0.0 <= v < 1.0 for v in values):
        raise ConfigError("--r1/--r2", f"ratios must lie in [0, 1): {text!r}")
    return values


def cmd_prune_sweep(args) -> int:
    run_dir = Path(args.run)
    cfg, model = _load_run(run_dir)
    dataset = make_dataset(cfg)
    default_r1, default_r2 = DEFAULT_GRIDS.get(cfg["name"],
                                               DEFAULT_GRIDS["synthetic"])
    r1s = _parse_grid(args.r1) if args.r1 else default_r1
    r2s = _parse_grid(args.r2) if args.r2 else default_r2
    split = "test" if "test" in dataset.splits else "val"
    pairs = [(r1, r2) for r2 in r2s for r1 in r1s]

    def one(pair):
        r1, r2 = pair
        plan = build_prune_plan(model.spec, r1, r2)
        rep = prune_and_eval(model, plan, dataset, split)
        row = {"variant": rep.variant, "r1": r1, "r2": r2,
               "remaining_params": rep.param_census,
               "expected_remaining": rep.expected_census,
               "degenerate": rep.degenerate, "seed": rep.seed}
        row.update(rep.metrics)
        return row

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, pairs))
    else:
        rows = [one(p) for p in pairs]
    out = Path(args.out) if args.out else run_dir / "sweep.csv"
    write_sweep_csv(out, rows)
    print(f"{len(rows)} rows -> {out}")
    return EXIT_OK


def cmd_equiv_check(args) -> int:
    relu_rep = check_relu_equivalence(args.trials, args.max_dim, args.seed,
                                      tolerance=args.tolerance,
                                      inject_error=args.inject_error)
    maxout_rep = check_maxout_equivalence(args.trials, args.max_dim, seed=args.seed,
                                          tolerance=args.tolerance,
                                          inject_error=args.inject_error)
    ok = True
    for name, rep in (("relu-rewrite", relu_rep), ("maxout-rewrite", maxout_rep)):
        verdict = "ok" if rep.passed else "FAIL"
        print(f"{name}: max deviation {rep.max_deviation:.3e} over {rep.trials} trials "
              f"(tolerance {rep.tolerance:.0e}) {verdict}")
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    variants = list(VARIANTS) if args.head == "all" else [_head_arg(args.head)]
    d_in, d_h, d_out = args.dims
    ok = True
    for variant in variants:
        spec = HeadSpec(variant, d_in, d_h, d_out, batchnorm=not args.no_batchnorm,
                        seed=args.seed)
        res = gradcheck_head(spec, seed=args.seed)
        verdict = "ok" if res.passed(args.threshold) else "FAIL"
        note = f", {res.resamples} resamples" if res.resamples else ""
        print(f"{variant}: max rel err {res.max_rel_err:.3e} over {res.checked} "
              f"parameters (worst {res.worst_param}{note}) {verdict}")
        ok &= res.passed(args.threshold)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen_data(args) -> int:
    dataset = gen_max_affine(args.n, args.d, args.k_pieces, args.tags, seed=args.seed)
    save_features_csv(args.out, dataset)
    print(f"{dataset.n_samples} samples x {dataset.n_features} features, "
          f"{dataset.targets.shape[1]} tags -> {args.out}")
    return EXIT_OK


def _fmt_mean_se(mean: float, se) -> str:
    return f"{mean:.4f} ± {se:.4f}" if se is not None else f"{mean:.4f} (n=1)"


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# Run summary", ""]
    wrote_any = False

    if args.runs:
        reports = []
        curves = []
        for run in args.runs:
            run = Path(run)
            reports.append(read_run_report(run / "report.json"))
            if (run / "curves.csv").exists():
                curves.extend({**row, "variant": reports[-1].variant,
                               "seed": reports[-1].seed}
                              for row in read_curves_csv(run / "curves.csv"))
        by_variant: dict = {}
        for rep in reports:
            by_variant.setdefault(rep.variant, []).append(rep)
        metric_names = sorted(reports[0].metrics)
        lines += ["## Test metrics (mean ± standard error over seeds)", "",
                  "| variant | n | " + " | ".join(metric_names) + " |",
                  "|---|---|" + "---|" * len(metric_names)]
        summary_rows = []
        for variant in sorted(by_variant):
            group = by_variant[variant]
            agg = aggregate_runs(group)
            cells = [_fmt_mean_se(*agg[m]) for m in metric_names]
            lines.append(f"| {variant} | {len(group)} | " + " | ".join(cells) + " |")
            row = {"variant": variant, "n": len(group)}
            for m in metric_names:
                row[f"{m}_mean"] = agg[m][0]
                row[f"{m}_se"] = agg[m][1]
            summary_rows.append(row)
        _write_plain_csv(out_dir / "summary.csv", summary_rows)
        if curves:
            early = [{k: row.get(k) for k in
                      ("variant", "seed", "epoch", "phase", "train_loss", "val_loss")
                      } | {k: v for k, v in row.items() if k.startswith("val_")}
                     for row in curves if row.get("epoch", 0) <= 25]
            _write_plain_csv(out_dir / "convergence.csv", early)
            lines += ["", f"First-25-epoch curves: convergence.csv "
                          f"({len(early)} rows)"]
        wrote_any = True

    if args.sweeps:
        rows = []
        for path in args.sweeps:
            rows.extend(read_sweep_csv(path))
        metric = "roc_auc" if any("roc_auc" in r for r in rows) else "accuracy"
        grouped: dict = {}
        for r in rows:
            key = (r["r1"], r["r2"], r["variant"])
            grouped.setdefault(key, []).append(float(r[metric]))
        variants = sorted({k[2] for k in grouped})
        ratio_pairs = sorted({(k[0], k[1]) for k in grouped})
        lines += ["", f"## Pruning sweep ({metric}, mean over seeds)", "",
                  "| r1 | r2 | " + " | ".join(variants) + " |",
                  "|---|---|" + "---|" * len(variants)]
        pruning_rows = []
        for r1, r2 in ratio_pairs:
            cells = []
            out_row = {"r1": r1, "r2": r2}
            for v in variants:
                vals = grouped.get((r1, r2, v))
                cell = f"{np.mean(vals):.4f}" if vals else "-"
                cells.append(cell)
                out_row[v] = float(np.mean(vals)) if vals else None
            lines.append(f"| {r1} | {r2} | " + " | ".join(cells) + " |")
            pruning_rows.append(out_row)
        _write_plain_csv(out_dir / "pruning.csv", pruning_rows)
        wrote_any = True

    if not wrote_any:
        print("nothing to report: pass --runs and/or --sweeps", file=sys.stderr)
        return EXIT_USAGE
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"report in {out_dir}")
    return EXIT_OK


def _write_plain_csv(path, rows) -> None:
    import csv as _csv
    if not rows:
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in cols])


def build_parser() -> _Parser:
    parser = _Parser(prog="maxplusnn",
                     description="Hybrid linear-morphological heads over the "
                                 "max-plus semiring: train, prune, verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="base configuration to start from")
        p.add_argument("--head", choices=CLI_HEADS, help="head variant")
        p.add_argument("--seed", type=int, help="root RNG seed")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config field by dotted path "
                            "(repeatable), e.g. --set train.batch_size=256")

    p = sub.add_parser("train", help="train one head and write a run directory")
    add_config_flags(p)
    p.add_argument("--out", help="run directory (default runs/<name>-<head>-seed<seed>)")
    p.add_argument("--force", action="store_true",
                   help="allow writing into an existing nonempty run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on one split")
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune-sweep",
                       help="evaluate a ratio grid of one-shot pruned models")
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--r1", help="comma-separated r1 grid (default per preset)")
    p.add_argument("--r2", help="comma-separated r2 grid (default per preset)")
    p.add_argument("--out", help="sweep CSV path (default <run>/sweep.csv)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.set_defaults(func=cmd_prune_sweep)

    p = sub.add_parser("equiv-check",
                       help="randomized exactness check of the ReLU/maxout rewrites")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.add_argument("--inject-error", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_equiv_check)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the backward pass")
    p.add_argument("--head", default="all", choices=CLI_HEADS + ("all",))
    p.add_argument("--dims", type=int, nargs=3, default=[8, 6, 4],
                   metavar=("D_IN", "D_HIDDEN", "D_OUT"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--no-batchnorm", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark as CSV")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--tags", type=int, default=50)
    p.add_argument("--k-pieces", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("report",
                       help="aggregate runs/sweeps into markdown + CSV tables")
    p.add_argument("--runs", nargs="*", default=[], help="run directories")
    p.add_argument("--sweeps", nargs="*", default=[], help="sweep CSV files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
