"""Adapter CLI: train-matcher, train-generator, serve."""

from __future__ import annotations

import argparse
import json
import sys

from .checkpoints import ModelCheckpoint
from .service import serve
from .training import (GeneratorHyperparams, MatcherHyperparams,
                       train_generator, train_matcher)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repair-adapter")
    sub = parser.add_subparsers(dest="command", required=True)

    tm = sub.add_parser("train-matcher",
                        help="fit the pattern matcher on mined patterns")
    tm.add_argument("--pairs", required=True)
    tm.add_argument("--patterns", required=True)
    tm.add_argument("--out", required=True)
    tm.add_argument("--split", action="append", default=None)
    tm.add_argument("--epochs", type=int, default=10)
    tm.add_argument("--lr", type=float, default=1e-5)
    tm.add_argument("--max-input-len", type=int, default=512)
    tm.add_argument("--max-output-len", type=int, default=512)
    tm.add_argument("--batch-size", type=int, default=16)
    tm.add_argument("--hidden", type=int, default=128)
    tm.add_argument("--seed", type=int, default=0)

    tg = sub.add_parser("train-generator",
                        help="fit the repair generator (two-phase)")
    tg.add_argument("--pairs", required=True)
    tg.add_argument("--out", required=True)
    tg.add_argument("--phase", choices=["bug_fix", "vul_fix"], required=True)
    tg.add_argument("--parent", default=None,
                    help="bug_fix checkpoint dir (required for vul_fix)")
    tg.add_argument("--split", action="append", default=None)
    tg.add_argument("--epochs", type=int, default=10)
    tg.add_argument("--lr", type=float, default=5e-5)
    tg.add_argument("--max-len", type=int, default=2048)
    tg.add_argument("--batch-size", type=int, default=8)
    tg.add_argument("--hidden", type=int, default=256)
    tg.add_argument("--seed", type=int, default=0)

    sv = sub.add_parser("serve", help="serve the wire protocol")
    sv.add_argument("--matcher", default=None, help="matcher checkpoint dir")
    sv.add_argument("--generator", default=None,
                    help="generator checkpoint dir")
    sv.add_argument("--port", type=int, default=8430)
    sv.add_argument("--instruct-upstream", default=None,
                    help="base URL to proxy /v1/instruct to")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train-matcher":
        hp = MatcherHyperparams(
            learning_rate=args.lr, epochs=args.epochs,
            max_input_len=args.max_input_len,
            max_output_len=args.max_output_len,
            batch_size=args.batch_size, hidden=args.hidden, seed=args.seed)
        result = train_matcher(args.pairs, args.patterns, args.out, hp,
                               splits=args.split)
        print(json.dumps({"checkpoint": result.checkpoint.path,
                          "final_loss": result.loss_history[-1]}))
        return 0
    if args.command == "train-generator":
        parent = ModelCheckpoint.load(args.parent) if args.parent else None
        hp = GeneratorHyperparams(
            learning_rate=args.lr, epochs=args.epochs, max_len=args.max_len,
            batch_size=args.batch_size, hidden=args.hidden, seed=args.seed)
        try:
            result = train_generator(args.pairs, args.out, args.phase,
                                     parent=parent, hyperparams=hp,
                                     splits=args.split)
        except ValueError as exc:
            print(f"repair-adapter: {exc}", file=sys.stderr)
            return 1
        print(json.dumps({"checkpoint": result.checkpoint.path,
                          "final_loss": result.loss_history[-1]}))
        return 0
    serve(args.matcher, args.generator, args.port, args.instruct_upstream)
    return 0


if __name__ == "__main__":
    sys.exit(main())
