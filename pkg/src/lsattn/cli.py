"""Command line interface: cost tables, scaling sweeps, probes, and training.

Every subcommand writes CSV to --out (stdout by default). Exit codes: 0 on
success, 1 when `check` finds a violated invariant, 2 for unusable flags or
configurations.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import ExitStack
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import fmt, run_norm_probe, run_scaling, sweep_csv_rows, write_csv
from .checks import run_all_checks
from .config import LSConfig
from .errors import ConfigError, DivergenceError, ShapeError
from .flops import ArchSpec, count_flops, load_preset_file, preset_arch, PRESETS
from .lm import ModelConfig, dualln_ablation, train

USAGE_ERROR = 2
CHECK_FAILURE = 1


def _add_arch_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--d", type=int, default=64, help="model width")
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--ffn", type=int, default=128, help="feed-forward width")
    parser.add_argument("--mode", choices=("bidirectional", "causal"), default="bidirectional")
    parser.add_argument("--w", type=int, default=8, help="window segment size")
    parser.add_argument("--r", type=int, default=32, help="projection rank")
    parser.add_argument("--l", type=int, default=16, help="causal projection segment length")
    parser.add_argument("--dual-ln", action="store_true",
                        help="normalize window and projected branches separately")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsattn",
        description="Long-short attention: FLOP tables, scaling sweeps, probes, toy LM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_flops = sub.add_parser("flops", help="closed-form FLOP table for one architecture")
    p_flops.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_flops.add_argument("--preset-file", type=Path, default=None,
                         help="key = value file describing the architecture")
    p_flops.add_argument("--variant", choices=("full", "window", "projection", "long-short"),
                         default=None)
    p_flops.add_argument("--n", type=int, default=None, help="sequence length")
    p_flops.add_argument("--docs", type=int, default=None)
    _add_arch_flags(p_flops)
    p_flops.add_argument("--out", type=Path, default=None)

    p_sweep = sub.add_parser("sweep", help="wall time / memory / FLOPs over sequence lengths")
    p_sweep.add_argument("--n", required=True,
                         help="comma-separated increasing sequence lengths, e.g. 256,512,1024")
    p_sweep.add_argument("--variant", choices=("full", "window", "projection", "long-short"),
                         required=True)
    p_sweep.add_argument("--reps", type=int, default=5)
    p_sweep.add_argument("--seed", type=int, default=0)
    _add_arch_flags(p_sweep)
    p_sweep.add_argument("--out", type=Path, default=None)

    p_norms = sub.add_parser("norms", help="window-vs-projected norm ratios at init")
    p_norms.add_argument("--n", type=int, default=256)
    p_norms.add_argument("--d", type=int, default=64)
    p_norms.add_argument("--heads", type=int, default=2)
    p_norms.add_argument("--w", type=int, default=8)
    p_norms.add_argument("--r", type=int, default=8)
    p_norms.add_argument("--layers", type=int, default=1)
    p_norms.add_argument("--seeds", type=int, default=10)
    p_norms.add_argument("--projection", choices=("dynamic", "identity"), default="dynamic")
    p_norms.add_argument("--out", type=Path, default=None)

    p_train = sub.add_parser("train", help="train the byte-level LM on a corpus file")
    p_train.add_argument("--corpus", type=Path, required=True)
    p_train.add_argument("--steps", type=int, default=200)
    p_train.add_argument("--lr", type=float, default=0.5)
    p_train.add_argument("--seq-len", type=int, default=64)
    p_train.add_argument("--d", type=int, default=32)
    p_train.add_argument("--heads", type=int, default=2)
    p_train.add_argument("--layers", type=int, default=2)
    p_train.add_argument("--ffn", type=int, default=64)
    p_train.add_argument("--w", type=int, default=4)
    p_train.add_argument("--r", type=int, default=1)
    p_train.add_argument("--l", type=int, default=4)
    p_train.add_argument("--batch", type=int, default=8)
    p_train.add_argument("--dropout", type=float, default=0.0)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-dual-ln", action="store_true")
    p_train.add_argument("--out", type=Path, default=None)

    p_ablate = sub.add_parser("ablate", help="paired training runs with and without dual LN")
    p_ablate.add_argument("--corpus", type=Path, required=True)
    p_ablate.add_argument("--steps", type=int, default=250)
    p_ablate.add_argument("--seeds", type=int, default=5)
    p_ablate.add_argument("--lr", type=float, default=0.5)
    p_ablate.add_argument("--seq-len", type=int, default=64)
    p_ablate.add_argument("--d", type=int, default=32)
    p_ablate.add_argument("--heads", type=int, default=2)
    p_ablate.add_argument("--layers", type=int, default=2)
    p_ablate.add_argument("--ffn", type=int, default=64)
    p_ablate.add_argument("--w", type=int, default=4)
    p_ablate.add_argument("--r", type=int, default=1)
    p_ablate.add_argument("--l", type=int, default=4)
    p_ablate.add_argument("--batch", type=int, default=8)
    p_ablate.add_argument("--out", type=Path, default=None)

    p_check = sub.add_parser("check", help="run the invariant suite; nonzero exit on failure")
    p_check.add_argument("--seed", type=int, default=1)

    return parser


def _open_out(stack: ExitStack, out: Path | None):
    if out is None:
        return sys.stdout
    return stack.enter_context(open(out, "w", newline=""))


def _cmd_flops(args) -> int:
    if args.preset_file is not None:
        arch = load_preset_file(args.preset_file)
        if args.variant is not None:
            arch = replace(arch, variant=args.variant)
    elif args.preset is not None:
        arch = preset_arch(args.preset, args.variant, window=args.w, rank=args.r)
    else:
        arch = ArchSpec(
            layers=args.layers, model_dim=args.d, heads=args.heads, ffn_dim=args.ffn,
            seq_len=args.n if args.n else 2048, variant=args.variant or "full",
            window=args.w, rank=args.r, seg_len=args.l, mode=args.mode,
            dual_ln=args.dual_ln, docs=args.docs or 1,
        )
    if args.preset is not None or args.preset_file is not None:
        overrides = {}
        if args.n is not None:
            overrides["seq_len"] = args.n
        if args.docs is not None:
            overrides["docs"] = args.docs
        if overrides:
            arch = replace(arch, **overrides)
    report = count_flops(arch)
    with ExitStack() as stack:
        stream = _open_out(stack, args.out)
        rows = [["component", "flops_per_layer"]]
        for name, value in sorted(report.components.items()):
            rows.append([name, str(value)])
        rows.append(["layers", str(report.layers)])
        rows.append(["docs", str(report.docs)])
        rows.append(["total", str(report.total)])
        rows.append(["total_formatted", report.formatted])
        write_csv(rows, stream)
    return 0


def _cmd_sweep(args) -> int:
    try:
        seq_lens = [int(part) for part in args.n.split(",") if part]
    except ValueError:
        raise ConfigError(f"--n must be comma-separated integers, got {args.n!r}")
    rows = run_scaling(
        seq_lens, args.variant, window=args.w, rank=args.r, seg_len=args.l,
        mode=args.mode, dual_ln=args.dual_ln, layers=args.layers,
        model_dim=args.d, heads=args.heads, ffn_dim=args.ffn,
        reps=args.reps, seed=args.seed,
    )
    with ExitStack() as stack:
        write_csv(sweep_csv_rows(rows), _open_out(stack, args.out))
    return 0


def _cmd_norms(args) -> int:
    rows = run_norm_probe(
        seq_len=args.n, model_dim=args.d, heads=args.heads, window=args.w,
        rank=args.r, layers=args.layers, seeds=tuple(range(args.seeds)),
        projection=args.projection,
    )
    with ExitStack() as stack:
        write_csv(rows, _open_out(stack, args.out))
    return 0


def _model_config(args, dual_ln: bool) -> ModelConfig:
    attention = LSConfig(
        seq_len=args.seq_len, model_dim=args.d, heads=args.heads,
        window=args.w, rank=args.r, seg_len=args.l, mode="causal", dual_ln=dual_ln,
    )
    return ModelConfig(
        attention=attention, layers=args.layers, ffn_dim=args.ffn,
        dropout=getattr(args, "dropout", 0.0), learning_rate=args.lr,
        steps=args.steps, batch_size=args.batch, seed=args.seed,
    )


def _read_corpus(path: Path) -> np.ndarray:
    if not path.exists():
        raise ConfigError(f"corpus file {path} does not exist")
    return np.frombuffer(path.read_bytes(), dtype=np.uint8)


def _cmd_train(args) -> int:
    cfg = _model_config(args, dual_ln=not args.no_dual_ln)
    _, report = train(cfg, _read_corpus(args.corpus))
    with ExitStack() as stack:
        stream = _open_out(stack, args.out)
        rows = [["step", "train_loss_nats", "val_bpc", "wall_ms"]]
        for step in report.steps:
            rows.append([str(step.step), fmt(step.train_loss_nats),
                         fmt(step.val_bpc), fmt(step.wall_ms)])
        rows.append(["final", "", fmt(report.final_val_bpc), ""])
        write_csv(rows, stream)
    return 0


def _cmd_ablate(args) -> int:
    corpus = _read_corpus(args.corpus)
    with ExitStack() as stack:
        stream = _open_out(stack, args.out)
        rows = [["seed", "step", "val_bpc_with_dual_ln", "val_bpc_without_dual_ln"]]
        for seed in range(args.seeds):
            run_args = argparse.Namespace(**{**vars(args), "seed": seed})
            cfg = _model_config(run_args, dual_ln=True)
            with_report, without_report = dualln_ablation(cfg, corpus)
            for a, b in zip(with_report.steps, without_report.steps):
                rows.append([str(seed), str(a.step), fmt(a.val_bpc), fmt(b.val_bpc)])
            rows.append([str(seed), "final", fmt(with_report.final_val_bpc),
                         fmt(without_report.final_val_bpc)])
        write_csv(rows, stream)
    return 0


def _cmd_check(args) -> int:
    results = run_all_checks(seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail}")
        failed += not result.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return CHECK_FAILURE if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "flops": _cmd_flops,
        "sweep": _cmd_sweep,
        "norms": _cmd_norms,
        "train": _cmd_train,
        "ablate": _cmd_ablate,
        "check": _cmd_check,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ShapeError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"run `lsattn {args.command} --help` for usage", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
