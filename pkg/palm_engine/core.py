"""Facade wiring corpus, model, trainer and parser together."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint, restore_model
from .config import RunConfig
from .corpus import (
    Vocabulary,
    Window,
    build_vocab,
    encode_stream,
    make_windows,
    tokenize,
)
from .errors import ConfigError, CorpusError
from .lm import LanguageModel
from .metrics import MetricsLog
from .parser import ParseTree, extract_scores, greedy_parse
from .training import FitResult, Trainer, evaluate_ppl
from .treebank import GoldTree, align_oracle, tree_lines
from .utils import apply_thread_limit, resolve_dtype, seed_stream, thread_limit

logger = logging.getLogger(__name__)

VOCAB_FILENAME = "vocab.txt"
CHECKPOINT_FILENAME = "model.ckpt"
METRICS_FILENAME = "metrics.jsonl"
CONFIG_FILENAME = "config.cfg"


@dataclass
class PreparedData:
    vocab: Vocabulary
    train_windows: List[Window]
    valid_windows: List[Window]


def _check_tree_text(lines: Sequence[str], trees: Sequence[GoldTree], name: str) -> None:
    expected = tree_lines(trees)
    if len(expected) != len(lines):
        raise CorpusError(f"{name}: {len(trees)} trees for {len(lines)} sentences")
    for index, (line, tree_line) in enumerate(zip(lines, expected), start=1):
        if tokenize(line) != tokenize(tree_line):
            raise CorpusError(f"{name}: sentence {index} does not match its gold tree")


def windows_for(
    lines: Sequence[str],
    vocab: Vocabulary,
    batch_size: int,
    bptt: int,
    *,
    trees: Optional[Sequence[GoldTree]] = None,
    max_span: int = 1,
) -> List[Window]:
    stream = encode_stream(lines, vocab)
    oracle = align_oracle(trees, max_span) if trees is not None else None
    batch = max(1, min(batch_size, len(stream) // 2))
    if batch < batch_size:
        logger.debug("using %d lanes instead of %d for a %d-token stream", batch, batch_size, len(stream))
    return make_windows(stream, batch, bptt, oracle=oracle)


def prepare_data(
    config: RunConfig,
    train_lines: Sequence[str],
    valid_lines: Sequence[str],
    *,
    train_trees: Optional[Sequence[GoldTree]] = None,
    valid_trees: Optional[Sequence[GoldTree]] = None,
    vocab: Optional[Vocabulary] = None,
) -> PreparedData:
    """Vocabulary plus train / validation windows, with oracle targets when trees exist."""

    if config.mode == "S" and train_trees is None:
        raise ConfigError("mode S needs gold trees for the training text (train_trees_path)")
    if train_trees is not None:
        _check_tree_text(train_lines, train_trees, "train")
    if valid_trees is not None:
        _check_tree_text(valid_lines, valid_trees, "valid")
    vocab = vocab or build_vocab(train_lines, config.min_count)
    train = windows_for(
        train_lines, vocab, config.batch_size, config.bptt, trees=train_trees, max_span=config.max_span
    )
    valid = windows_for(
        valid_lines, vocab, config.eval_batch_size, config.bptt, trees=valid_trees, max_span=config.max_span
    )
    logger.info(
        "vocabulary %d types, %d train windows, %d valid windows", len(vocab), len(train), len(valid)
    )
    return PreparedData(vocab, train, valid)


def build_model(config: RunConfig, vocab_size: int) -> LanguageModel:
    seed_stream(config.seed, "init")
    model = LanguageModel(config.model_config(vocab_size))
    return model.to(resolve_dtype(config.precision))


@dataclass
class TrainingOutcome:
    model: LanguageModel
    vocab: Vocabulary
    fit: FitResult
    output_dir: Optional[Path] = None

    def report(self) -> Dict[str, Any]:
        return {
            "best_epoch": self.fit.best_epoch,
            "best_valid_ppl": self.fit.best_valid_ppl,
            "switched_epoch": self.fit.switched_epoch,
            "checkpoint": self.fit.checkpoint_path,
        }


def run_training(
    config: RunConfig,
    data: PreparedData,
    *,
    output_dir: Optional[str | Path] = None,
    progress: bool = True,
) -> TrainingOutcome:
    """Train per ``config``; with ``output_dir`` also write vocab, config, metrics and checkpoint."""

    apply_thread_limit()
    model = build_model(config, len(data.vocab))
    metrics = None
    checkpoint_path = None
    root = None
    if output_dir is not None:
        root = Path(output_dir)
        root.mkdir(parents=True, exist_ok=True)
        data.vocab.save(root / VOCAB_FILENAME)
        config.save(root / CONFIG_FILENAME)
        metrics = MetricsLog(str(root / METRICS_FILENAME))
        metrics.reset()
        checkpoint_path = root / CHECKPOINT_FILENAME
    trainer = Trainer(
        model, config, data.vocab, metrics=metrics, checkpoint_path=checkpoint_path, progress=progress
    )
    seed_stream(config.seed, "dropout")
    fit = trainer.fit(data.train_windows, data.valid_windows)
    return TrainingOutcome(model=model, vocab=data.vocab, fit=fit, output_dir=root)


class PalmCore:
    """A trained model with its vocabulary: parsing and perplexity."""

    def __init__(self, model: LanguageModel, vocab: Vocabulary, config: RunConfig) -> None:
        self.model = model.eval()
        self.vocab = vocab
        self.config = config

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "PalmCore":
        checkpoint = load_checkpoint(path)
        return cls(restore_model(checkpoint), checkpoint.vocab, checkpoint.run_config)

    def scores(self, tokens: Sequence[str], parse_max_len: Optional[int] = None):
        limit = self.config.parse_max_len if parse_max_len is None else parse_max_len
        return extract_scores(
            self.model, self.vocab.encode(tokens), eos_id=self.vocab.eos_id, parse_max_len=limit
        )

    def parse(self, sentence: str | Sequence[str], parse_max_len: Optional[int] = None) -> ParseTree:
        tokens = tokenize(sentence) if isinstance(sentence, str) else list(sentence)
        return greedy_parse(self.scores(tokens, parse_max_len), len(tokens))

    def parse_many(
        self,
        sentences: Sequence[str | Sequence[str]],
        parse_max_len: Optional[int] = None,
        *,
        workers: Optional[int] = None,
    ) -> List[ParseTree]:
        """Parse sentences on a thread pool; output order follows input order."""

        limit = workers or thread_limit()
        if limit == 1 or len(sentences) < 2:
            return [self.parse(sentence, parse_max_len) for sentence in sentences]
        with ThreadPoolExecutor(max_workers=limit) as pool:
            return list(pool.map(lambda sentence: self.parse(sentence, parse_max_len), sentences))

    def windows(self, lines: Sequence[str], batch_size: Optional[int] = None) -> List[Window]:
        return windows_for(lines, self.vocab, batch_size or self.config.eval_batch_size, self.config.bptt)

    def perplexity(self, lines: Sequence[str], batch_size: Optional[int] = None) -> float:
        return evaluate_ppl(self.model, self.windows(lines, batch_size))


__all__ = [
    "VOCAB_FILENAME",
    "CHECKPOINT_FILENAME",
    "METRICS_FILENAME",
    "CONFIG_FILENAME",
    "PreparedData",
    "windows_for",
    "prepare_data",
    "build_model",
    "TrainingOutcome",
    "run_training",
    "PalmCore",
]
