"""Command-line entry point: ``simspoof {train,evaluate,selfcheck,gen-data}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .autograd import NonFiniteError
from .config import ConfigFileError, format_config, load_config, parse_overrides
from .data import DataError, export_corpus, generate_synthetic_corpus
from .encoder import ConfigError
from .episodes import EpisodeError
from .metrics import MetricError
from .model import CheckpointError
from .selfcheck import format_report, run_selfcheck
from .train import TrainingError, evaluate, train, train_seeds

# expected failures: reported as one line, no traceback
USER_ERRORS = (ConfigFileError, ConfigError, DataError, EpisodeError, MetricError, CheckpointError,
               TrainingError, NonFiniteError, OSError)


def _seed_list(text: str) -> list:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _load(args):
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigFileError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        pairs.append((key.strip(), raw.strip(), "--set"))
    return load_config(args.config, **parse_overrides(pairs))


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out or cfg.out_dir)
    if args.seeds:
        best, results = train_seeds(cfg, args.seeds, out_dir=out, log=print)
        for seed, r in zip(args.seeds, results):
            print(f"seed {seed}: best epoch {r.best_epoch}, dev EER {r.best_dev_eer:.4f}, checkpoint {r.checkpoint}")
        print(f"best checkpoint: {best.checkpoint}")
        return 0
    result = train(cfg, out_dir=out, log=print)
    print(f"best epoch {result.best_epoch}, dev EER {result.best_dev_eer:.4f}, checkpoint {result.checkpoint}")
    return 0


def cmd_evaluate(args) -> int:
    _, report = evaluate(args.checkpoint, args.data, args.partition, args.out)
    print(report.to_text(), end="")
    if args.out:
        print(f"scores and report written to {args.out}")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(args.seed)
    print(format_report(results), end="")
    return 0 if all(r.passed for r in results) else 1


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    corpus = generate_synthetic_corpus(cfg.synth_config())
    paths = export_corpus(corpus, args.out)
    (Path(args.out) / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    for partition, path in paths.items():
        print(f"{partition}: {len(corpus.partition(partition))} trials -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simspoof", description="Spoofing-detection training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="flat 'key = value' config file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int, help="override the config seed")
    group.add_argument("--seeds", type=_seed_list, help="comma-separated seeds; one run each, best reported")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a partition with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synthetic", help="'synthetic' or a corpus directory")
    p.add_argument("--partition", default="eval", choices=("train", "dev", "eval"))
    p.add_argument("--out", help="directory for scores.txt, report.txt and report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selfcheck", help="run the built-in gradient and oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("gen-data", help="write the synthetic corpus as WAV files and protocols")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
