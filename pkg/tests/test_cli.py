import json
import logging

import pytest

from palm_engine.config import VERSION
from palm_engine.main import main


@pytest.fixture(autouse=True)
def _restore_logger():
    logger = logging.getLogger("palm_engine")
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)
    logger.propagate = propagate


def _records(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.splitlines() if line.strip()]


@pytest.fixture
def corpus_dir(tmp_path, small_corpus):
    return small_corpus.write(tmp_path / "corpus")


@pytest.fixture
def config_file(tmp_path, tiny_run_config):
    path = tmp_path / "run.cfg"
    tiny_run_config.save(path)
    return path


def _train(corpus_dir, config_file, output, *extra):
    return main(
        ["train", "--config", str(config_file), "--corpus", str(corpus_dir), "--output", str(output), *extra]
    )


def test_version(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["--version"])
    assert exit_info.value.code == 0
    assert VERSION in capsys.readouterr().out


def test_selftest_subset_passes(capsys):
    assert main(["selftest", "tree_recovery", "right_branching"]) == 0
    records = _records(capsys)
    assert [record["suite"] for record in records] == ["tree_recovery", "right_branching"]
    assert all(record["passed"] for record in records)


def test_selftest_unknown_suite_fails(capsys):
    assert main(["selftest", "no_such_suite"]) == 1
    assert _records(capsys) == []


def test_train_then_eval_ppl(tmp_path, corpus_dir, config_file, capsys):
    output = tmp_path / "out"
    assert _train(corpus_dir, config_file, output) == 0
    records = _records(capsys)
    report = records[-1]
    assert report["mode"] == "U"
    assert report["checkpoint"] == str(output / "model.ckpt")
    assert [record["split"] for record in records[:-1]] == ["train", "valid"] * 2
    for name in ("model.ckpt", "vocab.txt", "metrics.jsonl", "config.cfg"):
        assert (output / name).is_file()

    checkpoint = str(output / "model.ckpt")
    assert main(["eval-ppl", "--checkpoint", checkpoint, "--input", str(corpus_dir / "valid.txt")]) == 0
    (result,) = _records(capsys)
    assert result["ppl"] == pytest.approx(report["best_valid_ppl"], rel=1e-6)

    assert main(["eval-ppl", "--checkpoint", checkpoint, "--corpus", str(corpus_dir)]) == 0
    assert [record["input"] for record in _records(capsys)] == [
        str(corpus_dir / "valid.txt"),
        str(corpus_dir / "test.txt"),
    ]


def test_training_is_deterministic(tmp_path, corpus_dir, config_file, capsys):
    assert _train(corpus_dir, config_file, tmp_path / "a", "--seed", "5") == 0
    assert _train(corpus_dir, config_file, tmp_path / "b", "--seed", "5") == 0
    capsys.readouterr()

    def metrics(name):
        lines = (tmp_path / name / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
        entries = [json.loads(line) for line in lines]
        for entry in entries:
            entry.pop("wall_time_s")
        return entries

    assert metrics("a") == metrics("b")


def test_supervised_training_needs_trees(tmp_path, corpus_dir, config_file, capsys):
    assert _train(corpus_dir, config_file, tmp_path / "out", "--mode", "S") == 1


def test_supervised_training_reports_attention_loss(tmp_path, corpus_dir, tiny_run_config, capsys):
    path = tmp_path / "s.cfg"
    tiny_run_config.replace(mode="S", lam=0.5, train_trees_path="train.trees", valid_trees_path="valid.trees").save(path)
    assert _train(corpus_dir, path, tmp_path / "out") == 0
    records = _records(capsys)
    train = [record for record in records if record.get("split") == "train"]
    valid = [record for record in records if record.get("split") == "valid"]
    assert all(record["attn_ce"] > 0 for record in train)
    assert all(0.0 <= record["agreement"] <= 1.0 for record in valid)


def test_parse_writes_one_tree_per_nonempty_line(tmp_path, corpus_dir, config_file, capsys):
    output = tmp_path / "out"
    assert _train(corpus_dir, config_file, output) == 0
    capsys.readouterr()
    sentences = tmp_path / "sentences.txt"
    sentences.write_text("the dog saw a cat\n\ndog\n", encoding="utf-8")
    checkpoint = str(output / "model.ckpt")

    assert main(["parse", "--checkpoint", checkpoint, "--input", str(sentences)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[1] == "(dog)"
    assert lines[0].replace("(", "").replace(")", "").split() == ["the", "dog", "saw", "a", "cat"]

    trees = tmp_path / "trees.txt"
    assert main(["parse", "--checkpoint", checkpoint, "--input", str(sentences), "--output", str(trees)]) == 0
    (summary,) = _records(capsys)
    assert summary["sentences"] == 2
    assert summary["skipped_lines"] == 1
    assert trees.read_text(encoding="utf-8").splitlines() == lines


def test_eval_parse_on_matching_trees(tmp_path, capsys):
    gold = tmp_path / "gold.trees"
    pred = tmp_path / "pred.trees"
    gold.write_text(
        "(S (NP (DT the) (NN dog)) (VP (VBD saw) (NP (DT a) (NN cat))))\n"
        "(S (NP (DT a) (NN bird)) (VP (VBD sang) (. .)))\n",
        encoding="utf-8",
    )
    pred.write_text("((the dog) (saw (a cat)))\n((a bird) (sang .))\n", encoding="utf-8")
    assert main(["eval-parse", "--pred", str(pred), "--gold", str(gold)]) == 0
    (report,) = _records(capsys)
    assert report["f1"] == 100.0
    assert report["counted_sentences"] == 2
    assert report["skipped_sentences"] == 0

    assert main(["eval-parse", "--pred", str(pred), "--gold", str(gold), "--wsj40"]) == 0
    (report,) = _records(capsys)
    assert report["wsj40"] is True
    assert report["f1"] == 100.0


def test_eval_parse_mismatch_fails(tmp_path, capsys):
    gold = tmp_path / "gold.trees"
    pred = tmp_path / "pred.trees"
    gold.write_text("(S (NP (DT the) (NN dog)) (VP (VBD ran)))\n", encoding="utf-8")
    pred.write_text("(the (cat ran))\n", encoding="utf-8")
    assert main(["eval-parse", "--pred", str(pred), "--gold", str(gold)]) == 1


def test_corrupt_checkpoint_fails(tmp_path, capsys):
    bogus = tmp_path / "model.ckpt"
    bogus.write_bytes(b"not a checkpoint")
    sentences = tmp_path / "sentences.txt"
    sentences.write_text("a b\n", encoding="utf-8")
    assert main(["eval-ppl", "--checkpoint", str(bogus), "--input", str(sentences)]) == 1
    assert main(["parse", "--checkpoint", str(bogus), "--input", str(sentences)]) == 1
    assert capsys.readouterr().out == ""
