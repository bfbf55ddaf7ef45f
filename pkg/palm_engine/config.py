"""Configuration constants and the flat key=value run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, FrozenSet

from .errors import ConfigError

if TYPE_CHECKING:  # pragma: no cover
    from .lm import ModelConfig

VERSION = "0.3.0"

UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

ENV_THREADS = "PALM_THREADS"
ENV_DATA_PATH = "PALM_DATA_PATH"
ENV_REMOTE_DATASET = "PALM_REMOTE_DATASET"
ENV_CACHE_DIR = "PALM_DATASET_CACHE_DIR"

# Conventional PTB punctuation part-of-speech tags removed for WSJ-40.
DEFAULT_PUNCTUATION_TAGS: tuple[str, ...] = ("''", "``", ",", ".", ":", "-LRB-", "-RRB-", "#", "$")
EMPTY_ELEMENT_TAGS: tuple[str, ...] = ("-NONE-",)
WSJ40_MAX_LENGTH = 40

MODES = ("U", "S", "RB")
PRECISIONS = ("float32", "float64")
OPTIMIZER_SWITCHES = ("none", "epoch", "nonmono")
GATES = ("static", "conditioned")


@dataclass
class RunConfig:
    """Every knob of a training / evaluation / parsing run.

    Serialized as a flat ``key = value`` file. Relative data paths are
    resolved by :class:`~palm_engine.data.DataRepository`.
    """

    mode: str = "U"
    seed: int = 1111
    precision: str = "float32"

    train_path: str = "train.txt"
    valid_path: str = "valid.txt"
    test_path: str = "test.txt"
    train_trees_path: str = ""
    valid_trees_path: str = ""
    vocab_path: str = ""
    output_dir: str = "runs/desk"
    min_count: int = 1

    embed_size: int = 64
    hidden_size: int = 128
    num_layers: int = 3
    rrnn_size: int = 32
    attn_hidden: int = 0
    max_span: int = 10
    insertion_layer: int = 2
    gate: str = "static"
    tie_weights: bool = True
    zero_context: bool = False
    dropout_input: float = 0.1
    dropout_hidden: float = 0.1
    dropout_output: float = 0.1
    lam: float = 0.01

    batch_size: int = 16
    eval_batch_size: int = 10
    bptt: int = 35
    lr: float = 1e-3
    asgd_lr: float = 1.0
    weight_decay: float = 1.2e-6
    clip: float = 0.25
    epochs: int = 20
    optimizer_switch: str = "none"
    asgd_switch_epoch: int = 40
    nonmono: int = 5

    parse_max_len: int = 0
    punctuation_tags: str = " ".join(DEFAULT_PUNCTUATION_TAGS)
    wsj40_max_len: int = WSJ40_MAX_LENGTH

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.optimizer_switch not in OPTIMIZER_SWITCHES:
            raise ConfigError(
                f"optimizer_switch must be one of {OPTIMIZER_SWITCHES}, got {self.optimizer_switch!r}"
            )
        if self.gate not in GATES:
            raise ConfigError(f"gate must be one of {GATES}, got {self.gate!r}")
        if self.max_span < 1:
            raise ConfigError("max_span must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if not 1 <= self.insertion_layer <= self.num_layers - 1:
            raise ConfigError(
                f"insertion_layer must lie in [1, {self.num_layers - 1}], got {self.insertion_layer}"
            )
        for name in ("batch_size", "eval_batch_size", "bptt", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    # ------------------------------------------------------------------
    # Derived views
    # ------------------------------------------------------------------

    @property
    def punctuation_tag_set(self) -> FrozenSet[str]:
        return frozenset(self.punctuation_tags.split())

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def model_config(self, vocab_size: int) -> "ModelConfig":
        from .lm import ModelConfig

        lam = self.lam if self.mode == "S" else 0.0
        return ModelConfig(
            vocab_size=vocab_size,
            embed_size=self.embed_size,
            hidden_size=self.hidden_size,
            num_layers=self.num_layers,
            rrnn_size=self.rrnn_size,
            attn_hidden=self.attn_hidden or self.hidden_size,
            max_span=self.max_span,
            lam=lam,
            dropout_input=self.dropout_input,
            dropout_hidden=self.dropout_hidden,
            dropout_output=self.dropout_output,
            insertion_layer=self.insertion_layer,
            gate=self.gate,
            tie_weights=self.tie_weights,
            zero_context=self.zero_context,
            right_branching=self.mode == "RB",
        )

    # ------------------------------------------------------------------
    # key = value serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = [f"# palm-engine {VERSION} run configuration"]
        for field in fields(self):
            lines.append(f"{field.name} = {_format_value(getattr(self, field.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        known = {field.name: field for field in fields(cls)}
        values: Dict[str, Any] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {number}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {number}: unknown key {key!r}")
            values[key] = _coerce(key, value, known[key].type)
        return cls(**values)

    def save(self, path: str | Path) -> None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, value: str, annotation: Any) -> Any:
    # Annotations are strings under postponed evaluation.
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    try:
        if kind == "bool":
            lowered = value.lower()
            if lowered in {"true", "1", "yes"}:
                return True
            if lowered in {"false", "0", "no"}:
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


__all__ = [
    "VERSION",
    "UNK_TOKEN",
    "EOS_TOKEN",
    "ENV_THREADS",
    "ENV_DATA_PATH",
    "ENV_REMOTE_DATASET",
    "ENV_CACHE_DIR",
    "DEFAULT_PUNCTUATION_TAGS",
    "EMPTY_ELEMENT_TAGS",
    "WSJ40_MAX_LENGTH",
    "MODES",
    "RunConfig",
]
