"""Gold constituency trees: bracket reading, WSJ-40 filtering, oracle targets.

Spans are 1-based and inclusive on both ends, ``(i, j)`` covering tokens
``i..j``. Node labels are discarded on read; preterminal labels survive as
per-token tags because punctuation removal needs them.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .config import DEFAULT_PUNCTUATION_TAGS, EMPTY_ELEMENT_TAGS, WSJ40_MAX_LENGTH
from .corpus import OracleStream
from .errors import CorpusError, TreeFormatError

logger = logging.getLogger(__name__)

Span = Tuple[int, int]

_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


@dataclass(frozen=True)
class TreeNode:
    start: int
    end: int
    children: Tuple["TreeNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def span(self) -> Span:
        return (self.start, self.end)

    def walk(self) -> Iterable["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class GoldTree:
    """Unlabeled (possibly n-ary) bracketing over a token list."""

    tokens: Tuple[str, ...]
    root: TreeNode
    tags: Tuple[Optional[str], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.root.span != (1, len(self.tokens)):
            raise CorpusError(
                f"root span {self.root.span} does not cover {len(self.tokens)} tokens"
            )
        if self.tags and len(self.tags) != len(self.tokens):
            raise CorpusError("tag list does not match token list")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def has_tags(self) -> bool:
        return bool(self.tags) and all(tag is not None for tag in self.tags)

    def spans(self) -> Set[Span]:
        return {node.span for node in self.root.walk()}

    def brackets(self, include_trivial: bool = False) -> Set[Span]:
        spans = self.spans()
        if include_trivial:
            return spans
        return {span for span in spans if span[0] != span[1] and span != self.root.span}

    def remove_positions(self, positions: AbstractSet[int]) -> Optional["GoldTree"]:
        """Drop the 1-based token ``positions`` and re-index the remaining spans.

        Returns ``None`` when nothing survives. Emptied nodes disappear and
        the resulting unary chains collapse.
        """

        pruned = _prune(self.root, positions)
        if pruned is None:
            return None
        keep = [index for index in range(1, len(self.tokens) + 1) if index not in positions]
        counter = [0]
        root = _reindex(pruned, counter)
        tokens = tuple(self.tokens[index - 1] for index in keep)
        tags = tuple(self.tags[index - 1] for index in keep) if self.tags else ()
        return GoldTree(tokens=tokens, root=root, tags=tags)

    def to_bracketed(self) -> str:
        return _format(self.root, self.tokens)


# ----------------------------------------------------------------------
# Reading
# ----------------------------------------------------------------------

_Raw = Union[str, list]


def read_bracketed(text: str, *, labeled: bool = True) -> List[GoldTree]:
    """Read every bracketed tree in ``text``.

    With ``labeled`` true the first atom of a bracket holding more than one
    item is a label (PTB style, ``(NP the dog)``); with ``labeled`` false every
    atom is a word (the unlabeled parse output format, ``((a b) c)``).
    """

    trees: List[GoldTree] = []
    stack: List[list] = []
    start_line = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        for token in _TOKEN_RE.findall(line):
            if token == "(":
                if not stack:
                    start_line = line_number
                stack.append([])
            elif token == ")":
                if not stack:
                    raise TreeFormatError("unexpected ')'", line_number)
                done = stack.pop()
                if stack:
                    stack[-1].append(done)
                else:
                    trees.append(_build_tree(done, labeled, line_number))
            else:
                if not stack:
                    raise TreeFormatError(f"token {token!r} outside brackets", line_number)
                stack[-1].append(token)
    if stack:
        raise TreeFormatError("unbalanced brackets: missing ')'", start_line)
    return trees


def _build_tree(raw: list, labeled: bool, line_number: int) -> GoldTree:
    words: List[str] = []
    tags: List[Optional[str]] = []
    shape = _shape(raw, labeled, words, tags, line_number)
    counter = [0]
    root = _reindex(shape, counter)
    return GoldTree(tokens=tuple(words), root=root, tags=tuple(tags))


def _shape(raw: list, labeled: bool, words: List[str], tags: List[Optional[str]], line_number: int):
    """Turn a raw bracket into nested lists of leaf positions."""

    items = list(raw)
    label: Optional[str] = None
    if labeled and len(items) >= 2 and isinstance(items[0], str):
        label, items = items[0], items[1:]
    if not items:
        raise TreeFormatError("empty bracket", line_number)
    if label is not None and len(items) == 1 and isinstance(items[0], str):
        words.append(items[0])
        tags.append(label)
        return len(words)
    children = []
    for item in items:
        if isinstance(item, str):
            words.append(item)
            tags.append(None)
            children.append(len(words))
        else:
            children.append(_shape(item, labeled, words, tags, line_number))
    return children


def _prune(node: TreeNode, removed: AbstractSet[int]):
    if node.is_leaf:
        return None if node.start in removed else node.start
    kept = [child for child in (_prune(c, removed) for c in node.children) if child is not None]
    return kept or None


def _reindex(shape, counter: List[int]) -> TreeNode:
    if isinstance(shape, int):
        counter[0] += 1
        return TreeNode(counter[0], counter[0])
    children = [_reindex(child, counter) for child in shape]
    if len(children) == 1:
        return children[0]
    return TreeNode(children[0].start, children[-1].end, tuple(children))


def _format(node: TreeNode, tokens: Sequence[str]) -> str:
    if node.is_leaf:
        return tokens[node.start - 1]
    return "(" + " ".join(_format(child, tokens) for child in node.children) + ")"


# ----------------------------------------------------------------------
# WSJ-40 protocol
# ----------------------------------------------------------------------


@dataclass
class Wsj40Result:
    trees: List[GoldTree]
    kept_indices: List[int]
    removed_positions: List[frozenset]
    dropped_long: int = 0
    dropped_empty: int = 0


def punctuation_positions(
    tree: GoldTree,
    punctuation_tags: AbstractSet[str] = frozenset(DEFAULT_PUNCTUATION_TAGS),
    punctuation_tokens: Optional[AbstractSet[str]] = None,
) -> frozenset:
    if punctuation_tokens is None and not tree.has_tags:
        raise CorpusError(
            "punctuation removal needs part-of-speech leaves or a punctuation token set"
        )
    drop_tags = set(punctuation_tags) | set(EMPTY_ELEMENT_TAGS)
    positions = set()
    for index, token in enumerate(tree.tokens, start=1):
        tag = tree.tags[index - 1] if tree.tags else None
        if (tag is not None and tag in drop_tags) or (
            punctuation_tokens is not None and token in punctuation_tokens
        ):
            positions.add(index)
    return frozenset(positions)


def wsj40_filter(
    trees: Sequence[GoldTree],
    *,
    punctuation_tags: AbstractSet[str] = frozenset(DEFAULT_PUNCTUATION_TAGS),
    punctuation_tokens: Optional[AbstractSet[str]] = None,
    max_length: int = WSJ40_MAX_LENGTH,
) -> Wsj40Result:
    """Remove punctuation leaves, then drop sentences longer than ``max_length``."""

    result = Wsj40Result(trees=[], kept_indices=[], removed_positions=[])
    for index, tree in enumerate(trees):
        positions = punctuation_positions(tree, punctuation_tags, punctuation_tokens)
        stripped = tree.remove_positions(positions) if positions else tree
        if stripped is None:
            result.dropped_empty += 1
            continue
        if len(stripped) > max_length:
            result.dropped_long += 1
            continue
        result.trees.append(stripped)
        result.kept_indices.append(index)
        result.removed_positions.append(positions)
    logger.info(
        "wsj40: kept %d of %d trees (%d too long, %d emptied)",
        len(result.trees),
        len(trees),
        result.dropped_long,
        result.dropped_empty,
    )
    return result


# ----------------------------------------------------------------------
# Oracle span supervision
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSpanTargets:
    """Per-token normalized indicator over span lengths (row ``t-1``, column ``i``)."""

    targets: np.ndarray  # [n, m]
    masked: np.ndarray  # [n] bool, True where the raw vector is all zero


def oracle_targets(tree: GoldTree, m: int) -> OracleSpanTargets:
    """Entry ``i`` at token ``t`` marks span ``[t-i, t]`` as a nontrivial gold constituent."""

    if m < 1:
        raise CorpusError(f"max span length must be >= 1, got {m}")
    n = len(tree)
    raw = np.zeros((n, m), dtype=np.float64)
    for start, end in tree.brackets(include_trivial=False):
        offset = end - start
        if offset < m:
            raw[end - 1, offset] = 1.0
    totals = raw.sum(axis=1)
    masked = totals == 0
    targets = np.divide(raw, totals[:, None], out=np.zeros_like(raw), where=~masked[:, None])
    return OracleSpanTargets(targets=targets, masked=masked)


def align_oracle(trees: Sequence[GoldTree], m: int) -> OracleStream:
    """Lay oracle targets along the stream ``encode_stream`` builds from the trees.

    The end-of-sentence slot after each sentence is never supervised.
    """

    rows: List[np.ndarray] = []
    supervised: List[np.ndarray] = []
    for tree in trees:
        oracle = oracle_targets(tree, m)
        rows.append(oracle.targets)
        supervised.append(~oracle.masked)
        rows.append(np.zeros((1, m), dtype=np.float64))
        supervised.append(np.zeros(1, dtype=bool))
    if not rows:
        return OracleStream(np.zeros((0, m)), np.zeros(0, dtype=bool))
    return OracleStream(np.concatenate(rows), np.concatenate(supervised))


def tree_lines(trees: Iterable[GoldTree]) -> List[str]:
    """Token lines matching the trees, for :func:`~palm_engine.corpus.encode_stream`."""

    return [" ".join(tree.tokens) for tree in trees]


__all__ = [
    "Span",
    "TreeNode",
    "GoldTree",
    "read_bracketed",
    "Wsj40Result",
    "punctuation_positions",
    "wsj40_filter",
    "OracleSpanTargets",
    "oracle_targets",
    "align_oracle",
    "tree_lines",
]
