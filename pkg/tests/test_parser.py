import numpy as np
import pytest
import torch

from palm_engine.errors import ParseError
from palm_engine.lm import LanguageModel, ModelConfig
from palm_engine.parser import (
    ParseTree,
    ScoreMatrix,
    align_for_evaluation,
    binarize,
    branching_stats,
    extract_scores,
    greedy_parse,
    parse_report,
    right_branching_scores,
    tree_brackets,
    unlabeled_f1,
)
from palm_engine.synthetic import random_binary_tree, tree_scores
from palm_engine.treebank import read_bracketed


def leaf(i):
    return ParseTree(i, i)


def node(left, right):
    return ParseTree(left.start, right.end, left, right)


def right_branching(n, start=1):
    if n == 1:
        return leaf(start)
    return node(leaf(start), right_branching(n - 1, start + 1))


def gold(text):
    return read_bracketed(text, labeled=False)


def test_dominant_short_right_span_gives_left_branching():
    scores = ScoreMatrix.from_rows([[0.0], [0.0, 0.0], [10.0, 0.0, 0.0]])
    tree = greedy_parse(scores, 3)
    assert tree == node(node(leaf(1), leaf(2)), leaf(3))
    assert tree.to_bracketed() == "((1 2) 3)"


def test_single_token_and_forced_split():
    assert greedy_parse(ScoreMatrix.from_rows([[0.0]]), 1) == leaf(1)
    assert greedy_parse(ScoreMatrix.from_rows([[0.0], [5.0, -5.0]]), 2) == node(leaf(1), leaf(2))


def test_greedy_parse_recovers_random_binary_trees():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        tree = random_binary_tree(n, rng)
        assert greedy_parse(tree_scores(tree), n) == tree


def test_right_branching_scores_decode_right_branching():
    assert greedy_parse(right_branching_scores(4), 4).to_bracketed() == "(1 (2 (3 4)))"
    trees = [greedy_parse(right_branching_scores(n), n) for n in range(2, 31)]
    for n, tree in zip(range(2, 31), trees):
        assert tree == right_branching(n)
    stats = branching_stats(trees)
    assert (stats.left, stats.right) == (0.0, 100.0)


def test_adding_a_constant_to_a_row_keeps_the_tree():
    rng = np.random.default_rng(3)
    rows = [rng.normal(size=j) for j in range(1, 9)]
    base = greedy_parse(ScoreMatrix.from_rows(rows), 8)
    shifted = [row + 5.0 * index for index, row in enumerate(rows)]
    assert greedy_parse(ScoreMatrix.from_rows(shifted), 8) == base


def test_random_scores_always_give_valid_binary_trees():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 25))
        tree = greedy_parse(ScoreMatrix.from_rows([rng.normal(size=j) for j in range(1, n + 1)]), n)
        assert tree.span == (1, n)
        assert len(tree.internal_nodes()) == n - 1
        assert sorted(node.start for node in tree.walk() if node.is_leaf) == list(range(1, n + 1))


def test_missing_and_non_finite_scores():
    with pytest.raises(ParseError):
        greedy_parse(ScoreMatrix.from_rows([[0.0], []]), 2)
    with pytest.raises(ParseError):
        greedy_parse(ScoreMatrix.from_rows([[0.0]]), 2)
    with pytest.raises(ParseError):
        ScoreMatrix.from_rows([[float("nan")]])
    with pytest.raises(ParseError):
        ScoreMatrix.from_rows([[0.0]]).score(1, 1)


def test_capped_rows_still_decode():
    rows = [[0.0] * min(j, 2) for j in range(1, 6)]
    tree = greedy_parse(ScoreMatrix.from_rows(rows, max_len=2), 5)
    assert len(tree.internal_nodes()) == 4


def test_parse_tree_validates_children():
    with pytest.raises(ValueError):
        ParseTree(1, 3, leaf(1), leaf(3))
    with pytest.raises(ValueError):
        ParseTree(1, 2, leaf(1), None)


def test_single_token_prints_as_parenthesized_word():
    assert leaf(1).to_bracketed(["w"]) == "(w)"
    assert right_branching(3).to_bracketed(["a", "b", "c"]) == "(a (b c))"


def test_tree_brackets_examples():
    assert tree_brackets(node(node(leaf(1), leaf(2)), leaf(3))) == {(1, 2)}
    assert tree_brackets(right_branching(4)) == {(2, 4), (3, 4)}
    assert tree_brackets(right_branching(2)) == set()
    assert (1, 4) in tree_brackets(right_branching(4), include_trivial=True)


def test_f1_exact_match_is_100():
    tree = node(node(leaf(1), leaf(2)), node(leaf(3), leaf(4)))
    report = unlabeled_f1([tree], gold("((a b) (c d))"))
    assert (report.precision, report.recall, report.f1) == (100.0, 100.0, 100.0)
    rb = right_branching(5)
    assert unlabeled_f1([rb], [rb]).f1 == 100.0


def test_f1_zero_overlap():
    report = unlabeled_f1([node(node(leaf(1), leaf(2)), leaf(3))], gold("(a (b c))"))
    assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)


def test_f1_partial_overlap_is_micro_averaged():
    pred = [right_branching(4), right_branching(4)]
    reference = gold("((a b) (c d))\n(a ((b c) d))")
    report = unlabeled_f1(pred, reference)
    assert (report.matched, report.predicted, report.gold) == (2, 4, 4)
    assert report.f1 == pytest.approx(50.0)


def test_f1_against_n_ary_gold():
    pred = [node(node(node(leaf(1), leaf(2)), leaf(3)), leaf(4))]
    report = unlabeled_f1(pred, gold("((a b c) d)"))
    assert (report.matched, report.predicted, report.gold) == (1, 2, 1)
    assert report.precision == pytest.approx(50.0)
    assert report.recall == pytest.approx(100.0)
    assert report.f1 == pytest.approx(200.0 / 3.0)


def test_f1_rejects_misaligned_inputs():
    with pytest.raises(ParseError):
        unlabeled_f1([right_branching(3)], [])
    with pytest.raises(ParseError):
        unlabeled_f1([right_branching(3)], gold("((a b) (c d))"))


def test_binarize_keeps_gold_spans():
    (tree,) = gold("((a b) (c d e) f)")
    binary = binarize(tree.root)
    assert tree.brackets() <= binary.brackets()
    assert len(binary.internal_nodes()) == 5
    (binary_gold,) = gold("((a b) (c d))")
    assert unlabeled_f1([binarize(binary_gold.root)], [binary_gold]).f1 == 100.0


def test_branching_stats_fixtures():
    five = branching_stats([right_branching(5)])
    assert (five.left, five.right, five.counted) == (0.0, 100.0, 3)
    balanced = branching_stats([node(node(leaf(1), leaf(2)), node(leaf(3), leaf(4)))])
    assert (balanced.left, balanced.right, balanced.counted) == (0.0, 0.0, 1)
    mixed = branching_stats([node(node(leaf(1), node(leaf(2), leaf(3))), leaf(4))])
    assert (mixed.left, mixed.right, mixed.counted) == (50.0, 50.0, 2)
    assert branching_stats([right_branching(2)]).counted == 0


def test_branching_stats_on_gold_trees_skip_n_ary_nodes():
    stats = branching_stats(gold("((a b c) (d (e f)))"))
    assert (stats.left, stats.right, stats.counted) == (0.0, 50.0, 2)


def test_parse_report_schema():
    report = parse_report([right_branching(3)], gold("(a (b c))"), skipped_sentences=2)
    assert set(report) == {"precision", "recall", "f1", "counted_sentences", "skipped_sentences", "%left", "%right"}
    assert report["f1"] == 100.0
    assert report["skipped_sentences"] == 2
    assert report["%right"] == 100.0


def test_alignment_with_wsj40_filtering(ptb_fixture):
    pred = read_bracketed("((the dog) (saw (a cat)))\n(a (bird (sang .)))", labeled=False)
    aligned_pred, aligned_gold, skipped = align_for_evaluation(pred, ptb_fixture, wsj40=True)
    assert skipped == 0
    assert aligned_gold[1].tokens == ("a", "bird", "sang")
    assert aligned_pred[1].tokens == ("a", "bird", "sang")
    report = parse_report(aligned_pred, aligned_gold)
    assert report["counted_sentences"] == 2
    assert (unlabeled_f1(aligned_pred, aligned_gold).matched) == 3


def test_alignment_accepts_already_filtered_predictions(ptb_fixture):
    pred = read_bracketed("((the dog) (saw (a cat)))\n((a bird) sang)", labeled=False)
    aligned_pred, aligned_gold, _ = align_for_evaluation(pred, ptb_fixture, wsj40=True)
    assert unlabeled_f1(aligned_pred, aligned_gold).f1 == 100.0


def test_alignment_reports_first_mismatched_sentence(ptb_fixture):
    pred = read_bracketed("((the dog) (saw (a cat)))\n((a fish) (sang .))", labeled=False)
    with pytest.raises(ParseError, match="sentence 2"):
        align_for_evaluation(pred, ptb_fixture)


def _model(**changes):
    torch.manual_seed(0)
    config = ModelConfig(vocab_size=9, embed_size=8, hidden_size=12, rrnn_size=4, attn_hidden=6, max_span=3, **changes)
    return LanguageModel(config).eval()


def test_extract_scores_row_lengths_and_determinism():
    model = _model()
    ids = [1, 2, 3, 4, 5, 6]
    scores = extract_scores(model, ids, eos_id=8)
    assert [scores.row(j).shape[0] for j in range(1, 7)] == [1, 2, 3, 4, 5, 6]
    again = extract_scores(model, ids, eos_id=8)
    for j in range(1, 7):
        assert np.array_equal(scores.row(j), again.row(j))
    capped = extract_scores(model, ids, eos_id=8, parse_max_len=2)
    assert [capped.row(j).shape[0] for j in range(1, 7)] == [1, 2, 2, 2, 2, 2]
    tree = greedy_parse(capped, 6)
    assert len(tree.internal_nodes()) == 5
    with pytest.raises(ParseError):
        extract_scores(model, [], eos_id=8)


def test_right_branching_model_parses_right_branching():
    model = _model(right_branching=True)
    trees = [greedy_parse(extract_scores(model, list(range(n)), eos_id=8), n) for n in range(2, 9)]
    assert branching_stats(trees).right == 100.0


def test_extract_scores_restores_training_mode():
    model = _model()
    model.train()
    extract_scores(model, [1, 2, 3], eos_id=8)
    assert model.training
    model.eval()
    extract_scores(model, [1, 2, 3], eos_id=8)
    assert not model.training


@pytest.mark.parametrize("shape", ["right", "left"])
def test_very_long_sentences_decode_and_print(shape):
    n = 1500
    if shape == "right":
        scores = right_branching_scores(n)
    else:
        scores = ScoreMatrix.from_rows(-np.arange(j, dtype=np.float64) for j in range(1, n + 1))
    tree = greedy_parse(scores, n)
    assert tree.span == (1, n)
    assert len(tree.internal_nodes()) == n - 1
    stats = branching_stats([tree])
    assert stats.counted == n - 2
    text = tree.to_bracketed()
    if shape == "right":
        assert stats.right == 100.0
        assert text.startswith("(1 (2 (3 ")
        assert text.endswith(f"({n - 1} {n}" + ")" * (n - 1))
    else:
        assert stats.left == 100.0
        assert text.startswith("(" * (n - 1) + "1 2) 3)")
        assert text.endswith(f" {n})")
