"""Command-line entry point: ``repeatnet <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure
(divergence or a failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import CheckpointError
from .data import DataFormatError, load_dataset
from .planner import PlanError, ScalePolicy, count_flops, flops_matched_search, realize
from .tensor import NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path):
    from .train import RunConfig
    try:
        return RunConfig.load(path)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    except TypeError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    from .train import train
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.epochs is not None:
        cfg.run["epochs"] = args.epochs
    summary, _ = train(cfg, args.out)
    print(json.dumps(asdict(summary), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .train import evaluate
    _, extra = load_checkpoint(args.checkpoint)
    name = args.dataset or extra.get("dataset", "mnist")
    ds = load_dataset(name, args.split, args.data)
    acc = evaluate(args.checkpoint, ds)
    print(f"{name} {args.split} accuracy: {acc:.2f}%")
    return EXIT_OK


def _accounting_table(plan) -> str:
    acc = plan.accounting
    flops = count_flops(plan)
    rows = [
        ("conv weights (trainable)", acc["conv_weights"]),
        ("transform params (beta)", acc["beta_params"]),
        ("mask latents (1 bit stored)", acc["mask_latents"]),
        ("batch norm params", acc["bn_params"]),
        ("dense params", acc["dense_params"]),
        ("trainable scalars", acc["trainable_scalars"]),
        ("stored size (bits)", acc["stored_bits"]),
        ("conv FLOPs", flops["conv"]),
        ("dense FLOPs", flops["dense"]),
        ("inference FLOPs", flops["total"]),
        ("elementwise FLOPs (separate)", flops["elementwise"]),
    ]
    lines = [f"plan: {plan.arch.name or 'custom'}  scale={plan.scale.mode} x{plan.scale.factor} "
             f"variant={plan.scale.variant}"]
    lines += [f"  {k:<30}{v:>14,}" for k, v in rows]
    lines.append("  conv units:")
    for u in plan.conv_units():
        g = plan.groups[u.group]
        lines.append(f"    {u.name:<22}{u.in_ch:>5} -> {u.out_ch:<5} k={u.kernel} group={u.group} "
                     f"g1={g.gamma1} g2={g.gamma2} depth={g.depth}")
    return "\n".join(lines)


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    arch, policy = cfg.arch_spec, cfg.policy
    match = None
    if args.flops_target is not None:
        mode = args.mode or (policy.mode if policy.mode != "none" else "width")
        match = flops_matched_search(arch, args.flops_target, mode, args.variant or policy.variant)
        policy = match.policy
    plan = realize(arch, policy)
    if args.json:
        d = plan.to_dict()
        d["flops"] = {k: v for k, v in count_flops(plan).items() if k != "per_layer"}
        if match is not None:
            d["flops_match"] = {"target": match.target, "achieved": match.achieved, "ratio": match.ratio}
        print(json.dumps(d, indent=2, sort_keys=True))
    else:
        print(_accounting_table(plan))
        if match is not None:
            print(f"  flops match: target {match.target:,} achieved {match.achieved:,} "
                  f"(ratio {match.ratio:.3f})")
    return EXIT_OK


def cmd_relcont(args) -> int:
    from .stats import relative_contribution
    try:
        rc = relative_contribution(args.base, args.repeat, args.dense)
    except ZeroDivisionError as exc:
        raise UsageError(str(exc)) from None
    print(f"{rc:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, run_suites
    names = list(SUITES) if "all" in args.module else args.module
    results = run_suites(names, probes=args.probes, seed=args.seed)
    failed = False
    for name, err in results.items():
        ok = err < GRADCHECK_TOL
        failed |= not ok
        print(f"{name:<10} max rel err {err:.3e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def _label(run_dir: Path) -> tuple[str, str]:
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        return run_dir.name, "?"
    scale = json.loads(cfg_path.read_text()).get("scale") or {}
    pol = ScalePolicy.from_dict(scale) if scale else ScalePolicy()
    if pol.mode == "none":
        return "Base", "1x"
    method = "Dense" if pol.dense_equivalent else pol.variant
    if pol.mode == "width":
        return method, f"{pol.factor}x width"
    reps = ",".join(f"{k}:{v}" for k, v in sorted(pol.depth_repeats.items()))
    return method, f"depth {reps}"


def cmd_aggregate(args) -> int:
    from .stats import aggregate_runs, format_table
    paths = sorted(Path(args.runs).rglob("summary.json"))
    if not paths:
        raise FileNotFoundError(f"no summary.json under {args.runs}")
    by_config: dict[str, list] = {}
    labels = {}
    for p in paths:
        s = json.loads(p.read_text())
        by_config.setdefault(s.get("config_id", ""), []).append(s)
        labels.setdefault(s.get("config_id", ""), _label(p.parent))
    rows = []
    for cid, summaries in by_config.items():
        if len(summaries) < 2:
            print(f"skipping config {cid or '?'}: only {len(summaries)} run", file=sys.stderr)
            continue
        method, scale = labels[cid]
        rows.append((method, scale, aggregate_runs(summaries)))
    if not rows:
        raise UsageError("no configuration has at least 2 runs to aggregate")
    print(format_table(rows))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .report import emit_plot, read_metrics_csv
    series = {}
    for path in args.metrics:
        rows = read_metrics_csv(path)
        if rows and args.y not in rows[0]:
            raise DataFormatError(f"{path}: no column {args.y!r}")
        label = Path(path).parent.name or Path(path).stem
        series[label] = [(r["epoch"], r[args.y]) for r in rows]
    emit_plot(series, args.out, title=args.title, xlabel="epoch", ylabel=args.y)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .gradcheck import SUITES
    p = _Parser(prog="repeatnet", description="Filter-repetition CNN scaling toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one seeded run")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, help="override run.seed")
    t.add_argument("--epochs", type=int, help="override run.epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset root (default $REPEATNET_DATA_DIR or ./data)")
    e.add_argument("--dataset", choices=["mnist", "cifar10"], help="default: recorded in the checkpoint")
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plan", help="print the realized plan's parameter / size / FLOPs accounting")
    pl.add_argument("--config", required=True)
    pl.add_argument("--flops-target", type=int, help="pick the scale factor whose FLOPs is closest")
    pl.add_argument("--mode", choices=["width", "depth"], help="scaling mode for --flops-target")
    pl.add_argument("--variant", choices=["linear", "s", "f"], help="variant for --flops-target")
    pl.add_argument("--json", action="store_true")
    pl.set_defaults(func=cmd_plan)

    r = sub.add_parser("relcont", help="relative contribution (percent)")
    r.add_argument("--base", type=float, required=True)
    r.add_argument("--repeat", type=float, required=True)
    r.add_argument("--dense", type=float, required=True)
    r.set_defaults(func=cmd_relcont)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", nargs="+", default=["all"], choices=["all", *SUITES])
    g.add_argument("--probes", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("aggregate", help="mean / sample std over seeded runs")
    a.add_argument("--runs", required=True, help="directory searched recursively for summary.json")
    a.set_defaults(func=cmd_aggregate)

    pt = sub.add_parser("plot", help="SVG line chart from metrics CSV files")
    pt.add_argument("--metrics", nargs="+", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--y", default="test_acc", help="column to plot against epoch")
    pt.add_argument("--title", default="")
    pt.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, DataFormatError, CheckpointError, PlanError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
