"""Command-line entry point.

Commands: prepare-data (build frame caches), train, eval, gradcheck,
ablate, inspect. Every command prints an effective-config block first, so
any run can be reproduced from its own log.

Exit codes: 0 success, 3 missing/unreadable files, 4 bad architecture or
configuration, 5 numeric failure (non-finite values or a failed gradient
check), 1 other documented errors. Unknown flags are rejected by the
parser (exit 2).
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import load_checkpoint
from .config import (
    DATA_DIR_ENV,
    DATASETS,
    INPUT_SHAPES,
    TrainConfig,
    apply_overrides,
    default_config,
    format_effective,
    parse_config_file,
    parse_override,
)
from .datasets import load_dataset, prepare_cache
from .errors import IOFailure, NumericError, SpecError, StscError
from .gradcheck import CHECK_NAMES, run_suite, summarize
from .training import ablate, build_network, evaluate, train

__all__ = ["main", "EXIT_OK", "EXIT_ERROR", "EXIT_IO", "EXIT_SPEC", "EXIT_NUMERIC"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_IO = 3
EXIT_SPEC = 4
EXIT_NUMERIC = 5


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=DATASETS, default="shd")
    p.add_argument("--config", default="", help="key=value file applied over dataset defaults")
    p.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config field override; repeatable, wins over --config",
    )
    p.add_argument("--data-dir", default="", help=f"dataset root (or ${DATA_DIR_ENV})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="", help="output directory for metrics and checkpoints")


def _build_config(args) -> TrainConfig:
    cfg = default_config(args.dataset)
    pairs: dict[str, str] = {}
    if args.config:
        pairs.update(parse_config_file(args.config))
    for item in args.override:
        key, value = parse_override(item)
        pairs[key] = value
    if args.data_dir:
        pairs["data_dir"] = args.data_dir
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return apply_overrides(cfg, pairs)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stscnet", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="aggregate raw event files into frame caches")
    p.add_argument("--dataset", choices=DATASETS, required=True)
    p.add_argument("--data-dir", default="", help=f"dataset root (or ${DATA_DIR_ENV})")
    p.add_argument("--T", type=int, default=0, help="timesteps; 0 = dataset default")
    p.add_argument("--fixed-duration-us", type=int, default=0)

    for name, helptext in (
        ("train", "train a network and write metrics/checkpoints"),
        ("eval", "evaluate a checkpoint on one split"),
        ("ablate", "run a sweep over policies, kernel sizes, or variants"),
        ("inspect", "print the parsed architecture and parameter counts"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_args(p)
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", choices=("train", "test"), default="test")
        if name == "ablate":
            p.add_argument("--grid", choices=("policies", "kernels", "variants"),
                           required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward rule")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--check", action="append", default=[], choices=CHECK_NAMES,
                   metavar="NAME", help="restrict to named checks; repeatable")
    p.add_argument("--fault-inject", action="store_true",
                   help="bias one backward rule on purpose; the run must fail")
    return ap


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------


def _cmd_prepare_data(args) -> int:
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV, "")
    if not data_dir:
        raise IOFailure(f"prepare-data needs --data-dir or ${DATA_DIR_ENV}")
    t_steps = args.T or default_config(args.dataset).T
    print("# effective-config")
    print(f"dataset={args.dataset}")
    print(f"data_dir={data_dir}")
    print(f"T={t_steps}")
    print(f"fixed_duration_us={args.fixed_duration_us}")
    info = prepare_cache(args.dataset, data_dir, t_steps, args.fixed_duration_us, log=print)
    for split, entry in info["splits"].items():
        print(f"{split}: {entry['samples']} samples, sample shape {entry['shape']}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    print(format_effective(cfg))
    result = train(cfg, out_dir=args.out or None, log=print)
    print(f"best: test_acc={result.best_acc:.4f} at epoch {result.best_epoch}")
    print(f"final: test_acc={result.final_acc:.4f}")
    if args.out:
        print(f"wrote {args.out}/metrics.csv, best.ckpt, final.ckpt")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _build_config(args)
    print(format_effective(cfg))
    bundle = load_dataset(cfg)
    net = build_network(cfg, bundle.input_shape)
    net.load_state(load_checkpoint(args.checkpoint))
    split = bundle.train if args.split == "train" else bundle.test
    acc = evaluate(net, split.frames, split.labels, cfg.batch_size)
    print(f"{args.split} accuracy: {acc:.4f} ({len(split)} samples)")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    print("# effective-config")
    print(f"seeds={args.seeds}")
    print(f"tol={args.tol}")
    print(f"fault_inject={'true' if args.fault_inject else 'false'}")
    names = tuple(args.check) if args.check else None
    results = run_suite(seeds=args.seeds, tol=args.tol,
                        fault_inject=args.fault_inject, names=names)
    print(summarize(results))
    if any(not r.passed for r in results):
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _build_config(args)
    print(format_effective(cfg))
    rows = ablate(cfg, args.grid, out_dir=args.out or None, log=print)
    print("policy,K_F,K_G,variant,final_acc,best_acc")
    for r in rows:
        print(
            f"{r['policy']},{r['K_F']},{r['K_G']},{r['variant']},"
            f"{float(r['final_acc'])!r},{float(r['best_acc'])!r}"
        )
    if args.out:
        print(f"wrote {args.out}/ablate_{args.grid}.csv")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    cfg = _build_config(args)
    print(format_effective(cfg))
    net = build_network(cfg, INPUT_SHAPES[cfg.dataset])
    print(net.describe())
    return EXIT_OK


_COMMANDS = {
    "prepare-data": _cmd_prepare_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except IOFailure as e:
        print(f"error (io): {e}", file=sys.stderr)
        return EXIT_IO
    except SpecError as e:
        print(f"error (spec): {e}", file=sys.stderr)
        return EXIT_SPEC
    except NumericError as e:
        print(f"error (numeric): {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except StscError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
