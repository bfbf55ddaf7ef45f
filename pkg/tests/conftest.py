from __future__ import annotations

import pytest
import torch

from palm_engine.config import RunConfig
from palm_engine.lm import LanguageModel, ModelConfig
from palm_engine.synthetic import synthetic_corpus
from palm_engine.treebank import read_bracketed


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for name in ("PALM_REMOTE_DATASET", "PALM_DATA_PATH", "PALM_THREADS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        vocab_size=11,
        embed_size=8,
        hidden_size=12,
        num_layers=3,
        rrnn_size=4,
        attn_hidden=6,
        max_span=4,
        dropout_input=0.0,
        dropout_hidden=0.0,
        dropout_output=0.0,
    )


@pytest.fixture
def tiny_model(tiny_model_config) -> LanguageModel:
    torch.manual_seed(0)
    return LanguageModel(tiny_model_config).eval()


@pytest.fixture
def tiny_run_config(tmp_path) -> RunConfig:
    return RunConfig(
        embed_size=8,
        hidden_size=12,
        rrnn_size=4,
        attn_hidden=6,
        max_span=4,
        batch_size=2,
        eval_batch_size=2,
        bptt=8,
        epochs=2,
        lr=3e-3,
        dropout_input=0.0,
        dropout_hidden=0.0,
        dropout_output=0.0,
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(num_tokens=400, seed=0)


@pytest.fixture
def ptb_fixture():
    """Two tagged sentences, the second with punctuation."""

    text = (
        "(S (NP (DT the) (NN dog)) (VP (VBD saw) (NP (DT a) (NN cat))))\n"
        "(S (NP (DT a) (NN bird)) (VP (VBD sang)) (. .))\n"
    )
    return read_bracketed(text)
