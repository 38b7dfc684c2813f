"""Command-line interface: train a checkpoint, serve it over HTTP."""

from __future__ import annotations

import argparse
import sys

from .serve import serve_forever
from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structune-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune on a dataset JSONL file")
    p.add_argument("--data", required=True)
    p.add_argument("--base", default="tiny", help='"tiny" or a saved base model path')
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--rank", type=int, default=TrainConfig.lora_rank)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.peak_lr)
    p.add_argument("--max-length", type=int, default=TrainConfig.max_length)
    p.add_argument("--seed", type=int, default=TrainConfig.seed)
    p.add_argument("--micro-batch-size", type=int, default=TrainConfig.micro_batch_size)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--separator", default=TrainConfig.separator)
    p.add_argument("--padding-side", default=TrainConfig.padding_side)

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8311)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.command == "train":
            config = TrainConfig(
                lora_rank=args.rank,
                epochs=args.epochs,
                batch_size=args.batch_size,
                peak_lr=args.lr,
                max_length=args.max_length,
                seed=args.seed,
                micro_batch_size=args.micro_batch_size,
                max_steps=args.max_steps,
                separator=args.separator,
                padding_side=args.padding_side,
            )
            out = train(args.data, args.base, config, args.out)
            print(out)
            return 0
        serve_forever(args.checkpoint, args.host, args.port)
        return 0
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
