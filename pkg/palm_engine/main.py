"""Command-line entry points: ``palm train | eval-ppl | parse | eval-parse | selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from .checkpoint import ensure_vocabulary, load_checkpoint, restore_model
from .config import MODES, VERSION, RunConfig
from .core import CHECKPOINT_FILENAME, PalmCore, prepare_data, run_training
from .corpus import Vocabulary, tokenize
from .data import DataRepository
from .errors import ConfigError, PalmError, ParseError
from .parser import align_for_evaluation, parse_report
from .selftest import SUITES, run_selftest
from .treebank import read_bracketed

logger = logging.getLogger("palm_engine")


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")
    sys.stdout.flush()


def _configure_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("palm_engine")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _run_config(args: argparse.Namespace, base: Optional[RunConfig] = None) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        config = base or RunConfig()
    changes: Dict[str, Any] = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "parse_max_len", None) is not None:
        changes["parse_max_len"] = args.parse_max_len
    return config.replace(**changes) if changes else config


def _checkpoint_path(args: argparse.Namespace) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    config = RunConfig.load(args.config) if args.config else RunConfig()
    return Path(config.output_dir) / CHECKPOINT_FILENAME


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    repo = DataRepository(base_path=args.corpus)
    train_lines = repo.load_lines(config.train_path)
    valid_lines = repo.load_lines(config.valid_path)
    train_trees = repo.load_trees(config.train_trees_path) if config.train_trees_path else None
    valid_trees = repo.load_optional_trees(config.valid_trees_path)
    vocab = None
    if config.vocab_path:
        vocab_file = repo.resolve(config.vocab_path, required=False)
        if vocab_file is not None:
            vocab = Vocabulary.load(vocab_file)
    data = prepare_data(
        config,
        train_lines,
        valid_lines,
        train_trees=train_trees,
        valid_trees=valid_trees,
        vocab=vocab,
    )
    output_dir = args.output or config.output_dir
    logger.info("training mode %s, seed %d, output in %s", config.mode, config.seed, output_dir)
    outcome = run_training(config, data, output_dir=output_dir)
    for entry in outcome.fit.history:
        _emit({"command": "train", **entry})
    _emit({"command": "train", "mode": config.mode, "seed": config.seed, **outcome.report()})
    return 0


def cmd_eval_ppl(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(_checkpoint_path(args))
    config = _run_config(args, checkpoint.run_config)
    repo = DataRepository(base_path=args.corpus)
    if config.vocab_path:
        vocab_file = repo.resolve(config.vocab_path, required=False)
        if vocab_file is not None:
            ensure_vocabulary(checkpoint, Vocabulary.load(vocab_file))
    core = PalmCore(restore_model(checkpoint), checkpoint.vocab, checkpoint.run_config)
    inputs = args.input or [config.valid_path, config.test_path]
    for name in inputs:
        path = repo.resolve(name, required=bool(args.input))
        if path is None:
            continue
        lines = repo.load_lines(path)
        _emit({"command": "eval-ppl", "input": str(path), "ppl": core.perplexity(lines)})
    return 0


def _read_sentences(path: str) -> List[Optional[List[str]]]:
    sentences: List[Optional[List[str]]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            tokens = tokenize(line)
            if not tokens:
                logger.warning("line %d of %s is empty; skipped", number, path)
                sentences.append(None)
                continue
            sentences.append(tokens)
    return sentences


def cmd_parse(args: argparse.Namespace) -> int:
    if not args.input:
        raise ParseError("parse needs --input")
    core = PalmCore.from_checkpoint(_checkpoint_path(args))
    sentences = _read_sentences(args.input[0])
    kept = [tokens for tokens in sentences if tokens is not None]
    trees = core.parse_many(kept, args.parse_max_len)
    lines = [tree.to_bracketed(tokens) for tree, tokens in zip(trees, kept)]
    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        _emit(
            {
                "command": "parse",
                "output": args.output,
                "sentences": len(kept),
                "skipped_lines": len(sentences) - len(kept),
            }
        )
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval_parse(args: argparse.Namespace) -> int:
    if not args.pred or not args.gold:
        raise ParseError("eval-parse needs --pred and --gold")
    config = _run_config(args)
    pred = read_bracketed(Path(args.pred).read_text(encoding="utf-8"), labeled=False)
    gold = read_bracketed(Path(args.gold).read_text(encoding="utf-8"), labeled=True)
    pred, gold, skipped = align_for_evaluation(
        pred,
        gold,
        wsj40=args.wsj40,
        punctuation_tags=config.punctuation_tag_set,
        max_length=config.wsj40_max_len,
    )
    report = parse_report(pred, gold, skipped_sentences=skipped)
    _emit({"command": "eval-parse", "wsj40": args.wsj40, **report})
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    unknown = [name for name in args.suites if name not in SUITES]
    if unknown:
        raise ConfigError(f"unknown selftest suite(s): {', '.join(unknown)}")
    results = run_selftest(args.suites or None)
    for result in results:
        _emit(
            {
                "command": "selftest",
                "suite": result.name,
                "passed": result.passed,
                "detail": result.detail,
                "seconds": round(result.seconds, 3),
            }
        )
    failed = [result.name for result in results if not result.passed]
    if failed:
        logger.error("selftest failed: %s", ", ".join(failed))
        return 1
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval-ppl": cmd_eval_ppl,
    "parse": cmd_parse,
    "eval-parse": cmd_eval_parse,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palm", description="Parsing-as-language-modeling engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default="INFO", help="Logging level for stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key = value run configuration file")
        sub.add_argument("--seed", type=int, help="Override the configured seed")
        return sub

    train = add("train", "Train a model and write its checkpoint and metrics")
    train.add_argument("--mode", choices=MODES, help="U (unsupervised), S (supervised) or RB")
    train.add_argument("--corpus", help="Directory searched for relative corpus paths")
    train.add_argument("--output", help="Output directory (defaults to output_dir)")

    eval_ppl = add("eval-ppl", "Report perplexity of a checkpoint")
    eval_ppl.add_argument("--checkpoint", help="Checkpoint file")
    eval_ppl.add_argument("--corpus", help="Directory searched for relative corpus paths")
    eval_ppl.add_argument("--input", nargs="*", help="Corpus files (defaults to valid and test)")

    parse = add("parse", "Greedy top-down parses, one bracketed tree per line")
    parse.add_argument("--checkpoint", help="Checkpoint file")
    parse.add_argument("--input", nargs=1, help="One tokenized sentence per line")
    parse.add_argument("--output", help="Tree file (defaults to stdout)")
    parse.add_argument("--parse-max-len", type=int, help="Cap on right-span length, 0 for none")

    eval_parse = add("eval-parse", "Unlabeled F1 and branching statistics")
    eval_parse.add_argument("--pred", help="Predicted trees, unlabeled brackets")
    eval_parse.add_argument("--gold", help="Gold trees, labeled brackets")
    eval_parse.add_argument("--wsj40", action="store_true", help="Drop punctuation and sentences over 40 words")

    selftest = add("selftest", "Span oracle, gradient check, tree recovery and right-branching suites")
    selftest.add_argument("suites", nargs="*", help=f"Subset of: {', '.join(SUITES)}")
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    _configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except PalmError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
