"""Command-line entry point: ``gradshift <command> [options]``.

Every command prints the run directory it created on stdout. Failures exit
with status 1 (bad input) or 2 (usage) and a single line on stderr of the
form ``gradshift: error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses as dc
import logging
import sys
from typing import List, Optional

from . import __version__
from .pipeline import (
    PipelineError,
    RunConfig,
    cmd_attack,
    cmd_explain,
    cmd_gen_data,
    cmd_report,
    cmd_train,
    load_config,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"gradshift: error: usage: {message}\n")


def _global_flags(parser, default) -> None:
    # global flags are accepted before or after the command; the subcommand
    # copies use SUPPRESS so they do not overwrite values given earlier
    parser.add_argument("--config", default=default, help="RunConfig JSON file")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--out", default=default, help="parent directory for run directories (default: runs)")
    parser.add_argument("--quiet", action="store_true", default=default, help="only print the run directory and errors")


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)

    p = _Parser(prog="gradshift", description=__doc__.splitlines()[0])
    _global_flags(p, None)
    p.add_argument("--version", action="version", version=f"gradshift {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic phantom corpus")
    g.add_argument("--n-per-class", type=int, help="phantom sources per class")

    t = sub.add_parser("train", parents=[common], help="train a model on a corpus")
    t.add_argument("--corpus", help="corpus directory or gen-data run directory")
    t.add_argument("--lambda", dest="lam", type=float, help="mask-loss weight; 0 trains the classifier alone")
    t.add_argument("--epochs", type=int)

    for name, helptext in (("explain", "write GRAD-CAM overlays"), ("attack", "run adversarial attacks")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint", required=True, help="checkpoint file or training run directory")
        s.add_argument("images", nargs="*", help="image files (default: the training run's test split)")
        s.add_argument("--limit", type=int, help="at most this many images")
        if name == "explain":
            s.add_argument("--target-class", type=int, help="class to explain (default: predicted)")
        else:
            s.add_argument("--mode", choices=["misclassify", "explain_shift"])
            s.add_argument("--steps", type=int)
            s.add_argument("--step-size", type=float)
            s.add_argument("--budget", type=float, help="total L-infinity budget")
            s.add_argument("--objective", choices=["rank", "hotspot"],
                           help="explain_shift objective: reverse the map's rank order (default) or drain its hotspot")
            s.add_argument("--target", choices=["none", "auto"], help="explain_shift steering target")
            s.add_argument("--cam-class", type=int, help="class whose map is compared (default: predicted)")

    r = sub.add_parser("report", parents=[common], help="summarise training and attack runs")
    r.add_argument("runs", nargs="+", help="run directories")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise PipelineError("seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg.out = args.out
    c = args.command
    if c == "gen-data" and args.n_per_class is not None:
        cfg.data.n_per_class = args.n_per_class
    if c == "train":
        if args.lam is not None:
            cfg.model = dc.replace(cfg.model, loss_weight_mask=args.lam, mtl_enabled=args.lam > 0)
        if args.epochs is not None:
            cfg.train.epochs = args.epochs
    if c in ("explain", "attack") and args.limit is not None:
        cfg.select.limit = args.limit
    if c == "explain" and args.target_class is not None:
        cfg.explain.target_class = args.target_class
    if c == "attack":
        changes = {}
        for key, attr in (("mode", "mode"), ("steps", "steps"), ("step_size", "step_size"), ("budget", "linf_budget")):
            if getattr(args, key) is not None:
                changes[attr] = getattr(args, key)
        if args.cam_class is not None:
            changes["cam_class"] = args.cam_class
        if args.objective is not None:
            changes["objective"] = args.objective
        if args.target is not None:
            changes["target_region"] = None if args.target == "none" else "auto"
        if changes:
            try:
                cfg.attack = dc.replace(cfg.attack, **changes)
            except ValueError as exc:
                raise PipelineError(str(exc)) from None
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet is True else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        c = args.command
        if c == "gen-data":
            out = cmd_gen_data(cfg)
        elif c == "train":
            out = cmd_train(cfg, corpus=args.corpus)
        elif c == "explain":
            out = cmd_explain(cfg, args.checkpoint, args.images)
        elif c == "attack":
            out = cmd_attack(cfg, args.checkpoint, args.images)
        else:
            out = cmd_report(args.runs, cfg)
    except PipelineError as exc:
        print(f"gradshift: error: input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort one-line diagnostic
        msg = str(exc).replace("\n", " ")
        print(f"gradshift: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
