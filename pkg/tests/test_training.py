import math

import pytest
import torch

from palm_engine.core import build_model, windows_for
from palm_engine.corpus import build_vocab
from palm_engine.errors import TrainingDivergedError
from palm_engine.lm import LanguageModel, ModelConfig
from palm_engine.training import (
    OptimizerSchedule,
    Trainer,
    attention_agreement,
    build_optimizer,
    evaluate,
    evaluate_ppl,
    train_epoch,
)
from palm_engine.treebank import tree_lines


def _tiny_model(vocab_size, seed=0, **changes):
    torch.manual_seed(seed)
    values = dict(
        vocab_size=vocab_size,
        embed_size=8,
        hidden_size=12,
        rrnn_size=4,
        attn_hidden=6,
        max_span=4,
        dropout_input=0.0,
        dropout_hidden=0.0,
        dropout_output=0.0,
    )
    values.update(changes)
    return LanguageModel(ModelConfig(**values))


def test_loss_decreases_when_overfitting_two_sentences():
    lines = ["the dog saw a cat", "a cat saw the dog"]
    vocab = build_vocab(lines)
    windows = windows_for(lines * 4, vocab, 2, 6)
    model = _tiny_model(len(vocab))
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-2)
    stats = [train_epoch(model, windows, optimizer, clip=0.25, lam=0.0, epoch=epoch, progress=False) for epoch in range(1, 51)]
    assert stats[-1].lm_nll < stats[0].lm_nll
    assert stats[-1].ppl < stats[0].ppl
    assert stats[0].tokens == sum(window.num_tokens for window in windows)


def test_zero_learning_rate_leaves_parameters_bitwise_unchanged(tiny_run_config):
    lines = ["a b c d", "d c b a"] * 3
    vocab = build_vocab(lines)
    windows = windows_for(lines, vocab, 2, 5)
    model = build_model(tiny_run_config, len(vocab))
    before = {name: value.clone() for name, value in model.state_dict().items()}
    optimizer = build_optimizer(model, tiny_run_config.replace(lr=0.0))
    train_epoch(model, windows, optimizer, clip=0.25, lam=0.0, progress=False)
    for name, value in model.state_dict().items():
        assert torch.equal(value, before[name]), name


def test_attention_supervision_lowers_attention_cross_entropy(small_corpus):
    trees = small_corpus.train
    lines = tree_lines(trees)
    vocab = build_vocab(lines)
    windows = windows_for(lines, vocab, 4, 20, trees=trees, max_span=4)
    model = _tiny_model(len(vocab), lam=1.0)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-2)
    first = train_epoch(model, windows, optimizer, clip=0.25, lam=1.0, epoch=1, progress=False)
    for epoch in range(2, 13):
        last = train_epoch(model, windows, optimizer, clip=0.25, lam=1.0, epoch=epoch, progress=False)
    assert first.supervised_tokens > 0
    assert last.attn_ce < first.attn_ce


def test_untrained_perplexity_is_close_to_vocabulary_size():
    generator = torch.Generator().manual_seed(0)
    words = [f"w{i}" for i in range(48)]
    lines = [" ".join(words[int(i)] for i in torch.randint(0, 48, (12,), generator=generator)) for _ in range(30)]
    vocab = build_vocab(words)
    windows = windows_for(lines, vocab, 2, 10)
    ppl = evaluate_ppl(_tiny_model(len(vocab)), windows)
    assert 0.8 * len(vocab) < ppl < 1.2 * len(vocab)


def test_cyclic_corpus_becomes_predictable():
    lines = [" ".join(["a", "b"] * 80)]
    vocab = build_vocab(lines)
    windows = windows_for(lines, vocab, 2, 8)
    model = _tiny_model(len(vocab))
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-2)
    for epoch in range(1, 101):
        train_epoch(model, windows, optimizer, clip=0.25, lam=0.0, epoch=epoch, progress=False)
    assert evaluate_ppl(model, windows) < 1.5


def test_non_finite_loss_aborts_training():
    lines = ["a b c", "c b a"] * 3
    vocab = build_vocab(lines)
    windows = windows_for(lines, vocab, 2, 4)
    model = _tiny_model(len(vocab))
    with torch.no_grad():
        model.decoder.bias.fill_(float("nan"))
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    with pytest.raises(TrainingDivergedError) as info:
        train_epoch(model, windows, optimizer, clip=0.25, lam=0.0, epoch=3, progress=False)
    assert info.value.epoch == 3
    assert info.value.window_index == 0
    assert math.isnan(info.value.losses["lm_nll"])


def test_evaluate_reports_supervised_cross_entropy(small_corpus):
    lines = tree_lines(small_corpus.valid)
    vocab = build_vocab(tree_lines(small_corpus.train) + lines)
    windows = windows_for(lines, vocab, 2, 10, trees=small_corpus.valid, max_span=4)
    model = _tiny_model(len(vocab))
    stats = evaluate(model, windows, lam=0.01)
    assert stats.supervised_tokens > 0
    assert stats.attn_ce > 0
    assert 0.0 <= attention_agreement(model, windows) <= 1.0


def test_schedule_switches_after_fixed_epoch(tiny_run_config):
    model = _tiny_model(7)
    schedule = OptimizerSchedule(model, tiny_run_config.replace(optimizer_switch="epoch", asgd_switch_epoch=2))
    assert not schedule.end_epoch(1, 3.0)
    assert schedule.kind == "adam"
    assert schedule.end_epoch(2, 3.0)
    assert schedule.kind == "asgd" and schedule.switched_epoch == 2


def test_schedule_switches_after_non_improving_epochs(tiny_run_config):
    model = _tiny_model(7)
    schedule = OptimizerSchedule(model, tiny_run_config.replace(optimizer_switch="nonmono", nonmono=2))
    assert not schedule.end_epoch(1, 3.0)
    assert not schedule.end_epoch(2, 3.5)
    assert schedule.end_epoch(3, 3.2)
    assert schedule.switched_epoch == 3


def test_schedule_none_keeps_adam(tiny_run_config):
    schedule = OptimizerSchedule(_tiny_model(7), tiny_run_config)
    for epoch in range(1, 50):
        schedule.end_epoch(epoch, 10.0)
    assert schedule.kind == "adam"


def test_averaged_parameters_are_swapped_in_and_restored(tiny_run_config):
    lines = ["a b c d", "d c b a"] * 3
    vocab = build_vocab(lines)
    windows = windows_for(lines, vocab, 2, 5)
    model = _tiny_model(len(vocab))
    schedule = OptimizerSchedule(model, tiny_run_config.replace(optimizer_switch="epoch", asgd_lr=0.5))
    schedule.switch_to_asgd(0)
    for _ in range(2):
        train_epoch(model, windows, schedule.optimizer, clip=0.25, lam=0.0, progress=False)
    current = [parameter.detach().clone() for parameter in schedule.parameters]
    with schedule.averaged():
        averaged = [parameter.detach().clone() for parameter in schedule.parameters]
        for parameter in schedule.parameters:
            torch.testing.assert_close(parameter, schedule.optimizer.state[parameter]["ax"])
    assert any(not torch.equal(a, b) for a, b in zip(averaged, current))
    for parameter, saved in zip(schedule.parameters, current):
        assert torch.equal(parameter, saved)


def test_trainer_tracks_best_epoch_and_saves(tmp_path, tiny_run_config, small_corpus):
    lines = tree_lines(small_corpus.train)
    valid_lines = tree_lines(small_corpus.valid)
    vocab = build_vocab(lines)
    model = build_model(tiny_run_config, len(vocab))
    trainer = Trainer(model, tiny_run_config, vocab, checkpoint_path=tmp_path / "model.ckpt", progress=False)
    result = trainer.fit(windows_for(lines, vocab, 2, 8), windows_for(valid_lines, vocab, 2, 8), epochs=3)
    assert [entry["split"] for entry in result.history] == ["train", "valid"] * 3
    assert result.best_valid_ppl == min(result.valid_ppls())
    assert result.valid_ppls()[result.best_epoch - 1] == result.best_valid_ppl
    assert (tmp_path / "model.ckpt").exists()
    assert result.checkpoint_path == str(tmp_path / "model.ckpt")
    assert result.switched_epoch is None
