"""PaLM engine: a span-attention language model that doubles as an unsupervised parser."""

from .config import VERSION, RunConfig
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    PalmError,
    ParseError,
    TrainingDivergedError,
    TreeFormatError,
    VocabularyMismatchError,
)
from .corpus import Vocabulary, build_vocab, encode_stream, make_windows
from .treebank import GoldTree, align_oracle, oracle_targets, read_bracketed, wsj40_filter
from .rrnn import RationalRNN, naive_span, run_chain, span_table
from .span_attention import SpanAttention
from .lm import LanguageModel, ModelConfig, joint_loss, lm_loss
from .training import Trainer, evaluate_ppl, train_epoch
from .parser import (
    ParseTree,
    ScoreMatrix,
    branching_stats,
    extract_scores,
    greedy_parse,
    right_branching_scores,
    unlabeled_f1,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import MetricsLog
from .data import DataRepository
from .core import PalmCore, prepare_data, run_training
from .main import main

__all__ = [
    "VERSION",
    "RunConfig",
    "PalmError",
    "CorpusError",
    "TreeFormatError",
    "ConfigError",
    "CheckpointError",
    "VocabularyMismatchError",
    "ParseError",
    "TrainingDivergedError",
    "Vocabulary",
    "build_vocab",
    "encode_stream",
    "make_windows",
    "GoldTree",
    "read_bracketed",
    "oracle_targets",
    "align_oracle",
    "wsj40_filter",
    "RationalRNN",
    "run_chain",
    "span_table",
    "naive_span",
    "SpanAttention",
    "ModelConfig",
    "LanguageModel",
    "lm_loss",
    "joint_loss",
    "train_epoch",
    "evaluate_ppl",
    "Trainer",
    "ParseTree",
    "ScoreMatrix",
    "extract_scores",
    "greedy_parse",
    "right_branching_scores",
    "unlabeled_f1",
    "branching_stats",
    "save_checkpoint",
    "load_checkpoint",
    "MetricsLog",
    "DataRepository",
    "PalmCore",
    "prepare_data",
    "run_training",
    "main",
]
