"""``beamsim`` command line: dataset, train, eval, coverage."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .pipeline import RunConfig


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value TOML file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--design", help="edge, edge-face or a JSON layout file")
    common.add_argument("--scale", type=float, help="multiplies the train and test set sizes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--n-rf", type=_int_list, dest="n_rf", help="comma list, e.g. 1,5")
    common.add_argument("--n-b", type=_int_list, dest="n_b", help="comma list, e.g. 5,10,20,40")
    common.add_argument("--method", type=_str_list, dest="methods", help="comma list of sn,mnps,mnbs,gifp,hpbs")
    common.add_argument("--train-size", type=int, dest="train_size", help="use only the first N training samples")
    common.add_argument("--rays", choices=["csv", "bin"], help="also write a ray dump (dataset command)")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="beamsim", description="Beam alignment simulator for multi-panel devices.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("dataset", parents=[common], help="generate train/test RSS datasets")
    sub.add_parser("train", parents=[common], help="train sn / mnps / mnbs selectors")
    sub.add_parser("eval", parents=[common], help="sweep methods over budgets and RF chains")
    sub.add_parser("coverage", parents=[common], help="write the spherical coverage CSV")
    return p


OVERRIDES = ("seed", "design", "scale", "out", "n_rf", "n_b", "methods", "train_size", "rays", "epochs")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = pipeline.load_config(args.config) if args.config else {}
    for key in OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    return RunConfig.from_mapping(data).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "dataset":
            pipeline.cmd_dataset(cfg)
        elif args.command == "train":
            pipeline.cmd_train(cfg)
        elif args.command == "eval":
            res = pipeline.cmd_eval(cfg)
            if res.violations:
                return 3
        elif args.command == "coverage":
            pipeline.cmd_coverage(cfg)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"beamsim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
