"""Command-line entry point.

Subcommands: synth | warmup | pretrain | train | infer | eval | gradcheck
| paramcount. Settings come from an optional ``--config FILE`` (key=value
lines) and may be overridden with ``--key=value`` flags. Exit codes:
0 success, 1 validation error (bad flag, missing file, bad config),
2 runtime failure (divergence, failed check).
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from . import metrics, pipeline, synthdata, verify
from .config import ConfigError, RunConfig
from .propagation import count_parameters
from .tensor import NonFiniteError, ShapeError

USAGE = __doc__

_OVERRIDE = re.compile(r"^--([A-Za-z_][A-Za-z_0-9]*)=(.*)$")


class CliError(ValueError):
    """Bad invocation; reported with usage text, exit code 1."""


def _split_args(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate ``--key=value`` overrides from positional/known args."""
    plain, overrides = [], []
    for a in argv:
        m = _OVERRIDE.match(a)
        if m and m.group(1) not in ("config", "pred", "gt", "data_root", "split"):
            overrides.append(f"{m.group(1)}={m.group(2)}")
        else:
            plain.append(a)
    return plain, overrides


def _load_config(args, overrides: list[str]) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        return RunConfig.from_file(path, overrides)
    return RunConfig().with_overrides(overrides)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camoprop", add_help=True,
                                     exit_on_error=False)
    parser.add_argument("--config", default=None, help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "warmup", "pretrain", "train", "paramcount",
                 "gradcheck"):
        sub.add_parser(name, exit_on_error=False)
    p_infer = sub.add_parser("infer", exit_on_error=False)
    p_infer.add_argument("--data_root", default=None,
                         help="dataset root holding index.txt (defaults to "
                              "<data_dir>/holdout)")
    p_eval = sub.add_parser("eval", exit_on_error=False)
    p_eval.add_argument("--pred", required=True, help="prediction root")
    p_eval.add_argument("--gt", required=True, help="ground-truth dataset root")
    p_eval.add_argument("--split", default=None, help=argparse.SUPPRESS)
    return parser


def _cmd_synth(cfg: RunConfig) -> int:
    if not cfg.data_dir:
        raise CliError("synth requires data_dir (e.g. --data_dir=out/data)")
    root = Path(cfg.data_dir)
    synthdata.write_dataset(root / "train", pipeline.generate_train_sequences(cfg))
    synthdata.write_dataset(root / "holdout",
                            pipeline.generate_holdout_sequences(cfg))
    pipeline.write_stamp(root, cfg, "synth")
    print(f"wrote {cfg.train_sequences} train and {cfg.holdout_sequences} "
          f"holdout sequences under {root}")
    return 0


def _cmd_warmup(cfg: RunConfig) -> int:
    _, ckpt = pipeline.warmup_stubs(cfg)
    print(f"warmup checkpoint: {ckpt}")
    return 0


def _cmd_pretrain(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    stubs = pipeline.load_stubs(cfg, out / "checkpoints" / "warmup")
    prop = pipeline.build_prop(cfg)
    res = pipeline.train_stage(cfg, "pretrain", stubs, prop)
    print(f"pretrain checkpoint: {res.checkpoint} "
          f"(final loss {res.loss_history[-1]:.4f})")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    stubs = pipeline.load_stubs(cfg, out / "checkpoints" / "warmup")
    prop = pipeline.load_prop_params(cfg, out / "checkpoints" / "pretrain")
    res = pipeline.train_stage(cfg, "main", stubs, prop)
    print(f"main checkpoint: {res.checkpoint} "
          f"(final loss {res.loss_history[-1]:.4f})")
    return 0


def _cmd_infer(cfg: RunConfig, data_root: str | None) -> int:
    out = Path(cfg.out_dir)
    stubs = pipeline.load_stubs(cfg, out / "checkpoints" / "warmup")
    stage = "main" if (out / "checkpoints" / "main").exists() else "pretrain"
    prop = pipeline.load_prop_params(cfg, out / "checkpoints" / stage)
    if data_root is None:
        if not cfg.data_dir:
            raise CliError("infer needs --data_root or data_dir in the config")
        data_root = str(Path(cfg.data_dir) / "holdout")
    samples = synthdata.read_dataset(data_root)
    pipeline.predict_dataset(cfg, stubs, prop, samples, out / "predictions")
    pipeline.write_stamp(out, cfg, "infer")
    print(f"predicted {len(samples)} sequences into {out / 'predictions'}")
    return 0


def _cmd_eval(cfg: RunConfig, pred: str, gt: str) -> int:
    rows, aggregate = pipeline.evaluate_dirs(pred, gt)
    out = Path(cfg.out_dir)
    pipeline.write_metric_files(out, rows, aggregate)
    pipeline.write_stamp(out, cfg, "eval")
    sys.stdout.write(metrics.format_table(rows + [("mean", aggregate)]))
    return 0


def _cmd_gradcheck(_cfg: RunConfig) -> int:
    worst = verify.run_suite()
    failed = False
    for name, err in worst.items():
        ok = err <= verify.TOL
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: max rel err {err:.3e}")
    return 2 if failed else 0


def _cmd_paramcount(cfg: RunConfig) -> int:
    prop = pipeline.build_prop(cfg)
    n = count_parameters(prop.named_params())
    print(f"propagation parameters: {n}")
    if n >= 1_000_000:
        print("FAIL: parameter budget (< 1,000,000) exceeded", file=sys.stderr)
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    plain, overrides = _split_args(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(plain)
        cfg = _load_config(args, overrides)
        if args.command == "synth":
            return _cmd_synth(cfg)
        if args.command == "warmup":
            return _cmd_warmup(cfg)
        if args.command == "pretrain":
            return _cmd_pretrain(cfg)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "infer":
            return _cmd_infer(cfg, args.data_root)
        if args.command == "eval":
            return _cmd_eval(cfg, args.pred, args.gt)
        if args.command == "gradcheck":
            return _cmd_gradcheck(cfg)
        if args.command == "paramcount":
            return _cmd_paramcount(cfg)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ConfigError, argparse.ArgumentError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return 1
    except SystemExit as e:
        # argparse --help exits 0; anything else is a usage error
        code = e.code if isinstance(e.code, int) else 1
        return 0 if code == 0 else 1
    except (pipeline.DivergenceError, NonFiniteError, ShapeError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
