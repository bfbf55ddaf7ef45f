"""Seeded toy treebanks and random binary trees for tests and desk-scale runs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .parser import ParseTree, ScoreMatrix
from .treebank import GoldTree, read_bracketed
from .utils import numpy_rng

LEXICON: Dict[str, Tuple[str, ...]] = {
    "DT": ("the", "a", "every", "this"),
    "DTS": ("the", "some", "these", "many"),
    "JJ": ("small", "old", "red", "quiet", "happy"),
    "NN": ("dog", "cat", "bird", "farmer", "child", "river", "garden", "house"),
    "NNS": ("dogs", "cats", "birds", "farmers", "children", "rivers", "gardens", "houses"),
    "VBZ": ("sees", "chases", "likes", "finds", "hears", "paints"),
    "VBP": ("see", "chase", "like", "find", "hear", "paint"),
    "VBZI": ("sleeps", "laughs", "waits", "arrives"),
    "VBPI": ("sleep", "laugh", "wait", "arrive"),
    "IN": ("near", "behind", "under", "with"),
    "RB": ("quickly", "slowly", "again"),
}

# Lexicon classes printed under a shared treebank tag.
TAGS: Dict[str, str] = {"DTS": "DT", "VBZI": "VBZ", "VBPI": "VBP"}


class TemplateGrammar:
    """A handful of weighted phrase templates with nested NPs and PPs.

    The verb agrees in number with the head of the subject NP, which may be
    followed by PP modifiers carrying nouns of either number. Sentences come
    out as labeled PTB-style brackets with preterminal tags, ending in ``(. .)``.
    """

    def __init__(
        self, rng: np.random.Generator, max_depth: int = 3, subject_modifier: float = 0.4
    ) -> None:
        self.rng = rng
        self.max_depth = max_depth
        self.subject_modifier = subject_modifier

    def _word(self, kind: str) -> str:
        words = LEXICON[kind]
        return f"({TAGS.get(kind, kind)} {words[self.rng.integers(len(words))]})"

    def _plural(self) -> bool:
        return bool(self.rng.random() < 0.5)

    def noun_phrase(self, depth: int, plural: bool, modifier: float = 0.2) -> str:
        det, noun = ("DTS", "NNS") if plural else ("DT", "NN")
        if depth < self.max_depth and self.rng.random() < modifier:
            return f"(NP (NP {self._word(det)} {self._word(noun)}) {self.prep_phrase(depth + 1)})"
        if self.rng.random() < 0.45:
            return f"(NP {self._word(det)} {self._word('JJ')} {self._word(noun)})"
        return f"(NP {self._word(det)} {self._word(noun)})"

    def prep_phrase(self, depth: int) -> str:
        return f"(PP {self._word('IN')} {self.noun_phrase(depth, self._plural())})"

    def verb_phrase(self, depth: int, plural: bool) -> str:
        transitive, intransitive = ("VBP", "VBPI") if plural else ("VBZ", "VBZI")
        roll = self.rng.random()
        if roll < 0.2:
            return f"(VP {self._word(intransitive)} {self._word('RB')})"
        if roll < 0.35 and depth < self.max_depth:
            return (
                f"(VP {self._word(transitive)} {self.noun_phrase(depth + 1, self._plural())} "
                f"{self.prep_phrase(depth + 1)})"
            )
        return f"(VP {self._word(transitive)} {self.noun_phrase(depth + 1, self._plural())})"

    def sentence(self) -> str:
        plural = self._plural()
        subject = self.noun_phrase(1, plural, self.subject_modifier)
        return f"(S {subject} {self.verb_phrase(1, plural)} (. .))"


def generate_treebank(num_tokens: int, seed: int, stream: str = "synthetic") -> List[GoldTree]:
    """Sentences from :class:`TemplateGrammar` until ``num_tokens`` words are reached."""

    grammar = TemplateGrammar(numpy_rng(seed, stream))
    trees: List[GoldTree] = []
    total = 0
    while total < num_tokens:
        (tree,) = read_bracketed(grammar.sentence())
        trees.append(tree)
        total += len(tree)
    return trees


@dataclass
class SyntheticCorpus:
    train: List[GoldTree]
    valid: List[GoldTree]
    test: List[GoldTree]

    def write(self, directory: str | Path) -> Path:
        """Write ``{train,valid,test}.txt`` and ``{train,valid,test}.trees``."""

        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for name, trees in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            (root / f"{name}.txt").write_text(
                "".join(" ".join(tree.tokens) + "\n" for tree in trees), encoding="utf-8"
            )
            (root / f"{name}.trees").write_text(
                "".join(_labeled(tree) + "\n" for tree in trees), encoding="utf-8"
            )
        return root


def _labeled(tree: GoldTree) -> str:
    """Bracketed output with generic ``X`` labels and the preterminal tags kept."""

    def render(node) -> str:
        if node.is_leaf:
            tag = tree.tags[node.start - 1] if tree.tags else None
            word = tree.tokens[node.start - 1]
            return f"({tag} {word})" if tag else word
        return "(X " + " ".join(render(child) for child in node.children) + ")"

    return render(tree.root)


def synthetic_corpus(num_tokens: int = 5000, seed: int = 0) -> SyntheticCorpus:
    """Train / valid / test split at 80 / 10 / 10 percent of ``num_tokens``."""

    return SyntheticCorpus(
        train=generate_treebank(int(num_tokens * 0.8), seed, "synthetic-train"),
        valid=generate_treebank(int(num_tokens * 0.1), seed, "synthetic-valid"),
        test=generate_treebank(int(num_tokens * 0.1), seed, "synthetic-test"),
    )


# ----------------------------------------------------------------------
# Random binary trees
# ----------------------------------------------------------------------


def random_binary_tree(n: int, rng: np.random.Generator, start: int = 1) -> ParseTree:
    """Uniform split points, recursively, over ``[start, start + n - 1]``."""

    if n < 1:
        raise ValueError("a tree needs at least one token")
    if n == 1:
        return ParseTree(start, start)
    left_size = int(rng.integers(1, n))
    left = random_binary_tree(left_size, rng, start)
    right = random_binary_tree(n - left_size, rng, start + left_size)
    return ParseTree(start, start + n - 1, left, right)


def tree_scores(tree: ParseTree) -> ScoreMatrix:
    """0/1 scores: ``s[j][k] = 1`` iff ``[j-k, j]`` is a node of ``tree`` (leaves included)."""

    n = tree.end
    spans = tree.brackets(include_trivial=True)
    rows = []
    for j in range(1, n + 1):
        rows.append([1.0 if (j - k, j) in spans else 0.0 for k in range(j)])
    return ScoreMatrix.from_rows(rows)


__all__ = [
    "LEXICON",
    "TemplateGrammar",
    "generate_treebank",
    "SyntheticCorpus",
    "synthetic_corpus",
    "random_binary_tree",
    "tree_scores",
]
