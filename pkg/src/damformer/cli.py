"""``damformer synth|train|eval|predict|gradcheck``

Exit codes: 0 success, 1 usage/config error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .data import FormatError, GenerationError, SyntheticDataset, write_split
from .tensor import ConfigError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="damformer", description="Dual-task siamese Transformer for building damage assessment")
    p.add_argument("command", choices=["synth", "train", "eval", "predict", "gradcheck"])
    p.add_argument("--config", default="default", help="config file or preset name (default, overfit, toy)")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", help="output directory (overrides run.out_dir)")
    p.add_argument("--checkpoint", help="DFW1 checkpoint for eval/predict")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override")
    p.add_argument("--quiet", action="store_true")
    return p


def _load(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise cfgmod.ConfigFileError(f"--set expects KEY=VALUE, got {item!r}")
        cfgmod.apply(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out:
        cfg.run.out_dir = args.out
    cfg.validate()
    return cfg


def _checkpoint(args, cfg) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.run.out_dir) / "model.dfw"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return path


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    # imported late so `damformer --help` stays fast
    from . import train as tr

    try:
        cfg = _load(args)
        out = Path(cfg.run.out_dir)
        if args.command == "synth":
            d = cfg.data
            for split, count, offset in (("train", d.n_train, 0), ("eval", d.n_eval, d.n_train)):
                ds = SyntheticDataset(d.synth, count, offset)
                write_split(out / split, [ds[i] for i in range(count)], start=offset)
            print(f"wrote {d.n_train} train / {d.n_eval} eval pairs under {out}")
        elif args.command == "train":
            res = tr.train(cfg, out)
            last = res.history[-1] if res.history else {}
            print(f"checkpoint {res.checkpoint}  final L_overall={last.get('overall', float('nan')):.6f}")
        elif args.command == "eval":
            model = tr.load_model(cfg, _checkpoint(args, cfg))
            report = tr.evaluate(cfg, model)
            out.mkdir(parents=True, exist_ok=True)
            (out / "metrics.txt").write_text(report.to_kv(), encoding="utf-8")
            print(report.to_table(), end="")
            print(report.to_kv(), end="")
        elif args.command == "predict":
            model = tr.load_model(cfg, _checkpoint(args, cfg))
            files = tr.predict(cfg, model, out / "predictions")
            print(f"wrote {len(files)} files under {out / 'predictions'}")
        elif args.command == "gradcheck":
            from .gradcheck import full_model_check, op_suite

            ops = op_suite(seed=cfg.run.seed)
            worst_op = max(ops, key=ops.get)
            print(f"checked {len(ops)} ops; max relative error {ops[worst_op]:.3e} ({worst_op})")
            results = full_model_check(seed=cfg.run.seed)
            worst = max(results, key=lambda r: r.error)
            print(f"checked {len(results)} parameter tensors; max relative error {worst.error:.3e} ({worst.name})")
            return EXIT_OK if max(worst.error, ops[worst_op]) < GRADCHECK_TOL else EXIT_NUMERIC
    except (cfgmod.ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, GenerationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # shape-mismatched checkpoints and malformed masks
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
