"""Text side of the corpus: vocabularies, token streams and BPTT windows."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import torch

from .config import EOS_TOKEN, UNK_TOKEN
from .errors import CorpusError

logger = logging.getLogger(__name__)

RESERVED_TOKENS = (UNK_TOKEN, EOS_TOKEN)


@dataclass(frozen=True)
class Vocabulary:
    """Dense bijection between tokens and ids.

    Regular tokens come first (descending count, ties lexicographic), the
    reserved ``<unk>`` and ``<eos>`` symbols close the list.
    """

    itos: tuple[str, ...]
    stoi: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mapping = {token: index for index, token in enumerate(self.itos)}
        if len(mapping) != len(self.itos):
            raise CorpusError("vocabulary contains duplicate tokens")
        for token in RESERVED_TOKENS:
            if token not in mapping:
                raise CorpusError(f"vocabulary is missing reserved token {token!r}")
        object.__setattr__(self, "stoi", mapping)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: object) -> bool:
        return token in self.stoi

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS_TOKEN]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        unk = self.unk_id
        return [self.stoi.get(token, unk) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[int(index)] for index in ids]

    def save(self, path: str | Path) -> None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with Path(path).open("r", encoding="utf-8") as handle:
            tokens = [line.rstrip("\n") for line in handle]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tuple(tokens))


@dataclass(frozen=True)
class TokenStream:
    """Continuous id sequence with end-of-sentence flags."""

    ids: np.ndarray
    boundaries: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class OracleStream:
    """Oracle span targets laid out along a :class:`TokenStream`."""

    targets: np.ndarray  # [N, m]
    supervised: np.ndarray  # [N] bool

    @property
    def max_span(self) -> int:
        return int(self.targets.shape[1])


@dataclass
class Window:
    """One BPTT batch: ``targets[b, t]`` follows ``inputs[b, t]`` in lane ``b``."""

    inputs: torch.Tensor  # [B, T] long
    targets: torch.Tensor  # [B, T] long
    index: int
    oracle: Optional[torch.Tensor] = None  # [B, T, m]
    supervised: Optional[torch.Tensor] = None  # [B, T] bool

    @property
    def is_first(self) -> bool:
        """True for the window that starts every lane (state must be fresh)."""

        return self.index == 0

    @property
    def num_tokens(self) -> int:
        return int(self.targets.numel())


def tokenize(line: str) -> List[str]:
    return line.split()


def build_vocab(lines: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts: Counter[str] = Counter()
    saw_token = False
    for line in lines:
        tokens = tokenize(line)
        saw_token = saw_token or bool(tokens)
        counts.update(token for token in tokens if token not in RESERVED_TOKENS)
    if not saw_token:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = [token for token, count in counts.items() if count >= min_count]
    kept.sort(key=lambda token: (-counts[token], token))
    dropped = len(counts) - len(kept)
    if dropped:
        logger.debug("mapped %d rare token types to %s", dropped, UNK_TOKEN)
    return Vocabulary(tuple(kept) + RESERVED_TOKENS)


def encode_stream(lines: Iterable[str], vocab: Vocabulary) -> TokenStream:
    ids: List[int] = []
    flags: List[bool] = []
    eos = vocab.eos_id
    for line in lines:
        encoded = vocab.encode(tokenize(line))
        ids.extend(encoded)
        flags.extend([False] * len(encoded))
        ids.append(eos)
        flags.append(True)
    return TokenStream(np.asarray(ids, dtype=np.int64), np.asarray(flags, dtype=bool))


def make_windows(
    stream: TokenStream,
    batch_size: int,
    bptt_len: int,
    *,
    oracle: Optional[OracleStream] = None,
) -> List[Window]:
    """Cut ``stream`` into ``batch_size`` contiguous lanes and BPTT windows.

    Trailing tokens that do not fill a lane are dropped; the last ragged
    window of each lane is kept.
    """

    if bptt_len < 1:
        raise CorpusError(f"bptt_len must be >= 1, got {bptt_len}")
    if batch_size < 1:
        raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
    if len(stream) < batch_size * 2:
        raise CorpusError(
            f"stream of {len(stream)} tokens is too short for {batch_size} lanes"
        )
    if oracle is not None and oracle.targets.shape[0] != len(stream):
        raise CorpusError("oracle targets are not aligned with the token stream")

    lane_len = len(stream) // batch_size
    usable = lane_len * batch_size
    lanes = torch.from_numpy(stream.ids[:usable].reshape(batch_size, lane_len).copy())
    if oracle is not None:
        y_lanes = torch.from_numpy(
            oracle.targets[:usable].reshape(batch_size, lane_len, -1).copy()
        )
        supervised_lanes = torch.from_numpy(oracle.supervised[:usable].reshape(batch_size, lane_len).copy())

    windows: List[Window] = []
    for index, start in enumerate(range(0, lane_len - 1, bptt_len)):
        length = min(bptt_len, lane_len - 1 - start)
        window = Window(
            inputs=lanes[:, start : start + length],
            targets=lanes[:, start + 1 : start + 1 + length],
            index=index,
        )
        if oracle is not None:
            # Supervision belongs to the input position whose attention it targets.
            window.oracle = y_lanes[:, start : start + length]
            window.supervised = supervised_lanes[:, start : start + length]
        windows.append(window)
    return windows


def read_lines(path: str | Path) -> List[str]:
    """Read a one-sentence-per-line corpus file, skipping blank lines."""

    with Path(path).open("r", encoding="utf-8") as handle:
        return [line.strip() for line in handle if line.strip()]


__all__ = [
    "RESERVED_TOKENS",
    "Vocabulary",
    "TokenStream",
    "OracleStream",
    "Window",
    "tokenize",
    "build_vocab",
    "encode_stream",
    "make_windows",
    "read_lines",
]
