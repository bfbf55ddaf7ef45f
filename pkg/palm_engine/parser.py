"""Greedy top-down decoding from span attention scores, and parse evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import AbstractSet, Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch

from .config import DEFAULT_PUNCTUATION_TAGS, WSJ40_MAX_LENGTH
from .errors import ParseError
from .lm import LanguageModel
from .treebank import GoldTree, Span, TreeNode, wsj40_filter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParseTree:
    """Unlabeled binary tree; leaves are single tokens, spans are 1-based."""

    start: int
    end: int
    left: Optional["ParseTree"] = None
    right: Optional["ParseTree"] = None

    def __post_init__(self) -> None:
        if (self.left is None) != (self.right is None):
            raise ValueError("internal nodes need both children")
        if self.left is not None and self.right is not None:
            if (
                self.left.start != self.start
                or self.right.end != self.end
                or self.left.end + 1 != self.right.start
            ):
                raise ValueError(
                    f"children {self.left.span} and {self.right.span} do not partition {self.span}"
                )

    def __len__(self) -> int:
        return self.end - self.start + 1

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def span(self) -> Span:
        return (self.start, self.end)

    @property
    def children(self) -> Tuple["ParseTree", ...]:
        if self.left is None or self.right is None:
            return ()
        return (self.left, self.right)

    def walk(self) -> Iterable["ParseTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def internal_nodes(self) -> List["ParseTree"]:
        return [node for node in self.walk() if not node.is_leaf]

    def brackets(self, include_trivial: bool = False) -> Set[Span]:
        return tree_brackets(self, include_trivial)

    def to_bracketed(self, tokens: Optional[Sequence[str]] = None) -> str:
        """``((a b) c)`` style; a single-token tree prints as ``(w)``."""

        words = tokens if tokens is not None else [str(i) for i in range(1, self.end + 1)]
        if len(words) < self.end:
            raise ValueError(f"{len(words)} tokens for a tree over {self.end} positions")
        if self.is_leaf:
            return f"({words[self.start - 1]})"
        return _bracket(self, words)


def _bracket(root: ParseTree, words: Sequence[str]) -> str:
    parts: List[str] = []
    stack: List[Any] = [root]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            parts.append(item)
        elif item.is_leaf:
            parts.append(words[item.start - 1])
        else:
            parts.append("(")
            stack.extend([")", item.right, " ", item.left])
    return "".join(parts)


@dataclass(frozen=True)
class ScoreMatrix:
    """``rows[j-1][k]`` scores the span ``[j-k, j]``.

    ``max_len`` records a deliberate cap on the row length (parse-time
    ``parse_max_len``); decoding then only considers right spans up to it.
    """

    rows: Tuple[np.ndarray, ...]
    max_len: Optional[int] = None

    def __post_init__(self) -> None:
        for index, row in enumerate(self.rows, start=1):
            if not np.all(np.isfinite(row)):
                raise ParseError(f"non-finite score in row {index}")

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, j: int) -> np.ndarray:
        if not 1 <= j <= len(self.rows):
            raise ParseError(f"missing score row s[{j}]")
        return self.rows[j - 1]

    def score(self, j: int, k: int) -> float:
        row = self.row(j)
        if not 0 <= k < row.shape[0]:
            raise ParseError(f"missing score s[{j}][{k}]")
        return float(row[k])

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]], max_len: Optional[int] = None) -> "ScoreMatrix":
        return cls(tuple(np.asarray(row, dtype=np.float64) for row in rows), max_len)


# ----------------------------------------------------------------------
# Scores and decoding
# ----------------------------------------------------------------------


@torch.no_grad()
def extract_scores(
    model: LanguageModel,
    ids: Sequence[int],
    *,
    eos_id: int,
    parse_max_len: int = 0,
) -> ScoreMatrix:
    """Run ``ids + [eos]`` through ``model`` and read off span scores.

    Row ``j`` comes from input position ``j`` and holds ``min(j, width)``
    entries, ``width`` being ``parse_max_len`` or, when 0, the sentence length.
    """

    n = len(ids)
    if n == 0:
        raise ParseError("cannot parse an empty sentence")
    width = min(parse_max_len, n) if parse_max_len > 0 else n
    was_training = model.training
    model.eval()
    try:
        device = next(model.parameters()).device
        inputs = torch.tensor([list(ids) + [eos_id]], dtype=torch.long, device=device)
        record = model(inputs, max_span=width).record
    finally:
        model.train(was_training)
    scores = record.scores[0].detach().cpu().double().numpy()
    rows = tuple(scores[j - 1, : min(j, width)].copy() for j in range(1, n + 1))
    return ScoreMatrix(rows, max_len=width if width < n else None)


def greedy_parse(scores: ScoreMatrix, n: int) -> ParseTree:
    """Split ``[i, j]`` into ``[i, j-k-1]`` and ``[j-k, j]`` maximizing ``s[j][k]``.

    Only ``k < j - i`` keeps both children nonempty. Ties go to the larger
    ``k``; every right-spine span of a tree encoded as 0/1 scores ties with
    the true right child, which is always the longest of them.
    """

    if n < 1:
        raise ParseError(f"cannot parse {n} tokens")
    if len(scores) < n:
        raise ParseError(f"missing score row s[{len(scores) + 1}] for a sentence of {n} tokens")

    # Splits top-down, nodes bottom-up; no recursion, trees may be very deep.
    middles: Dict[Span, int] = {}
    pending: List[Span] = [(1, n)]
    while pending:
        i, j = pending.pop()
        if i == j:
            continue
        middle = j - _best_offset(scores, i, j)
        middles[(i, j)] = middle
        pending.extend([(i, middle - 1), (middle, j)])

    built: Dict[Span, ParseTree] = {}
    order: List[Tuple[Span, bool]] = [((1, n), False)]
    while order:
        (i, j), ready = order.pop()
        if i == j:
            built[(i, j)] = ParseTree(i, i)
            continue
        middle = middles[(i, j)]
        if ready:
            built[(i, j)] = ParseTree(i, j, built.pop((i, middle - 1)), built.pop((middle, j)))
        else:
            order.extend([((i, j), True), ((i, middle - 1), False), ((middle, j), False)])
    return built[(1, n)]


def _best_offset(scores: ScoreMatrix, i: int, j: int) -> int:
    """Largest ``k < j - i`` with the highest ``s[j][k]``."""

    row = scores.row(j)
    limit = j - i
    if row.shape[0] < limit:
        capped = scores.max_len is not None and row.shape[0] == min(j, scores.max_len)
        if not capped or row.shape[0] == 0:
            raise ParseError(f"missing score s[{j}][{row.shape[0]}]")
        limit = row.shape[0]
    return limit - 1 - int(np.argmax(row[:limit][::-1]))


def right_branching_scores(n: int) -> ScoreMatrix:
    """Scores ``k + 1``: the longest available right span always wins."""

    if n < 1:
        raise ParseError(f"cannot build scores for {n} tokens")
    return ScoreMatrix(tuple(np.arange(1, j + 1, dtype=np.float64) for j in range(1, n + 1)))


def tree_brackets(tree: ParseTree, include_trivial: bool = False) -> Set[Span]:
    spans = {node.span for node in tree.walk()}
    if include_trivial:
        return spans
    return {span for span in spans if span[0] != span[1] and span != tree.span}


def binarize(node: TreeNode) -> ParseTree:
    """Right-factored binary tree keeping every span of ``node``."""

    if node.is_leaf:
        return ParseTree(node.start, node.end)
    children = [binarize(child) for child in node.children]
    tree = children[-1]
    for child in reversed(children[:-1]):
        tree = ParseTree(child.start, tree.end, child, tree)
    return tree


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------


@dataclass
class F1Report:
    precision: float
    recall: float
    f1: float
    matched: int
    predicted: int
    gold: int
    sentences: int


def unlabeled_f1(pred_trees: Sequence[Any], gold_trees: Sequence[Any]) -> F1Report:
    """Corpus-level bracket F1 in percent; single tokens and the root are not counted.

    Trees are anything with ``len`` and ``brackets(include_trivial)``
    (:class:`ParseTree` or :class:`~palm_engine.treebank.GoldTree`).
    """

    if len(pred_trees) != len(gold_trees):
        raise ParseError(f"{len(pred_trees)} predicted trees for {len(gold_trees)} gold trees")
    matched = predicted = gold = 0
    for index, (pred, ref) in enumerate(zip(pred_trees, gold_trees), start=1):
        if len(pred) != len(ref):
            raise ParseError(
                f"sentence {index}: predicted tree covers {len(pred)} tokens, gold {len(ref)}"
            )
        pred_spans = pred.brackets(include_trivial=False)
        gold_spans = ref.brackets(include_trivial=False)
        matched += len(pred_spans & gold_spans)
        predicted += len(pred_spans)
        gold += len(gold_spans)
    precision = 100.0 * matched / predicted if predicted else 0.0
    recall = 100.0 * matched / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return F1Report(precision, recall, f1, matched, predicted, gold, len(gold_trees))


@dataclass
class BranchingStats:
    left: float
    right: float
    counted: int


def branching_stats(trees: Iterable[Any]) -> BranchingStats:
    """Share of left / right splits among binary nodes spanning three or more tokens.

    A split is left when the right child is a single token and right when
    the left child is. Works on any tree whose nodes expose ``start``,
    ``end`` and ``children``; n-ary nodes are not splits and are skipped.
    """

    left = right = counted = 0
    for tree in trees:
        root = getattr(tree, "root", tree)
        for node in root.walk():
            if len(node.children) != 2 or node.end - node.start + 1 < 3:
                continue
            first, second = node.children
            counted += 1
            if second.start == second.end:
                left += 1
            elif first.start == first.end:
                right += 1
    if counted == 0:
        return BranchingStats(0.0, 0.0, 0)
    return BranchingStats(100.0 * left / counted, 100.0 * right / counted, counted)


def parse_report(
    pred_trees: Sequence[Any],
    gold_trees: Sequence[Any],
    *,
    skipped_sentences: int = 0,
) -> dict:
    scores = unlabeled_f1(pred_trees, gold_trees)
    branching = branching_stats(pred_trees)
    return {
        "precision": scores.precision,
        "recall": scores.recall,
        "f1": scores.f1,
        "counted_sentences": scores.sentences,
        "skipped_sentences": skipped_sentences,
        "%left": branching.left,
        "%right": branching.right,
    }


def align_for_evaluation(
    pred_trees: Sequence[GoldTree],
    gold_trees: Sequence[GoldTree],
    *,
    wsj40: bool = False,
    punctuation_tags: AbstractSet[str] = frozenset(DEFAULT_PUNCTUATION_TAGS),
    max_length: int = WSJ40_MAX_LENGTH,
) -> Tuple[List[GoldTree], List[GoldTree], int]:
    """Pair predicted and gold trees sentence by sentence.

    With ``wsj40`` the gold side goes through :func:`wsj40_filter`. Predicted
    trees may cover either the original sentences (the same punctuation
    positions are then removed from them) or the already filtered ones.
    Returns ``(pred, gold, skipped_sentences)``.
    """

    gold = list(gold_trees)
    pred = list(pred_trees)
    skipped = 0
    if wsj40:
        filtered = wsj40_filter(gold, punctuation_tags=punctuation_tags, max_length=max_length)
        skipped = len(gold) - len(filtered.trees)
        if len(pred) == len(gold):
            kept: List[GoldTree] = []
            for index, positions, target in zip(
                filtered.kept_indices, filtered.removed_positions, filtered.trees
            ):
                tree = pred[index]
                if len(tree) == len(gold[index]) and positions:
                    stripped = tree.remove_positions(positions)
                    if stripped is None:
                        raise ParseError(f"sentence {index + 1}: prediction emptied by filtering")
                    tree = stripped
                if len(tree) != len(target):
                    raise ParseError(
                        f"sentence {index + 1}: predicted tree covers {len(tree)} tokens, "
                        f"gold {len(gold[index])} ({len(target)} after filtering)"
                    )
                kept.append(tree)
            pred = kept
        elif len(pred) != len(filtered.trees):
            raise ParseError(
                f"{len(pred)} predicted trees match neither the {len(gold)} gold trees "
                f"nor the {len(filtered.trees)} kept by WSJ-40 filtering"
            )
        gold = filtered.trees
    if len(pred) != len(gold):
        raise ParseError(f"{len(pred)} predicted trees for {len(gold)} gold trees")
    for index, (left, right) in enumerate(zip(pred, gold), start=1):
        if left.tokens != right.tokens:
            raise ParseError(
                f"sentence {index}: predicted tokens {' '.join(left.tokens)!r} "
                f"do not match gold {' '.join(right.tokens)!r}"
            )
    return pred, gold, skipped


__all__ = [
    "ParseTree",
    "ScoreMatrix",
    "extract_scores",
    "greedy_parse",
    "right_branching_scores",
    "tree_brackets",
    "binarize",
    "F1Report",
    "unlabeled_f1",
    "BranchingStats",
    "branching_stats",
    "parse_report",
    "align_for_evaluation",
]
