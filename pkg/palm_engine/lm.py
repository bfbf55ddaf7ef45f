"""Recurrent language model with span attention before its last layer."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .rrnn import RationalRNN, causal_span_reprs
from .span_attention import (
    AttentionRecord,
    SpanAttention,
    context_vector,
    log_attention_weights,
    merge,
    right_branching_scores,
    score_spans,
)

logger = logging.getLogger(__name__)

LayerState = Tuple[torch.Tensor, torch.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_size: int = 64
    hidden_size: int = 128
    num_layers: int = 3
    rrnn_size: int = 32
    attn_hidden: int = 128
    max_span: int = 10
    lam: float = 0.01
    dropout_input: float = 0.1
    dropout_hidden: float = 0.1
    dropout_output: float = 0.1
    insertion_layer: Optional[int] = None
    gate: str = "static"
    tie_weights: bool = True
    zero_context: bool = False
    right_branching: bool = False

    def __post_init__(self) -> None:
        if self.insertion_layer is None:
            object.__setattr__(self, "insertion_layer", self.num_layers - 1)
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.num_layers < 2:
            raise ValueError("the span attention block needs at least two recurrent layers")
        if not 1 <= self.insertion_layer <= self.num_layers - 1:
            raise ValueError(
                f"insertion_layer must lie in [1, {self.num_layers - 1}], got {self.insertion_layer}"
            )
        if self.max_span < 1:
            raise ValueError("max_span must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{key: value for key, value in values.items() if key in known})


@dataclass
class CarriedState:
    """State handed from one BPTT window to the next along each lane.

    ``tail`` keeps the last ``m-1`` insertion-layer hidden vectors so spans can
    reach back across the window boundary; the rational chains are rebuilt
    over it each window, which also rebases their log-forget sums.
    """

    hidden: List[LayerState]
    tail: torch.Tensor  # [B, L, d_h], L <= m - 1

    @property
    def batch_size(self) -> int:
        return int(self.tail.shape[0])

    @property
    def tail_len(self) -> int:
        return int(self.tail.shape[1])

    def detach(self) -> "CarriedState":
        return CarriedState(
            hidden=[(h.detach(), c.detach()) for h, c in self.hidden],
            tail=self.tail.detach(),
        )


@dataclass
class LMOutput:
    logits: torch.Tensor  # [B, T, V]
    record: AttentionRecord
    state: CarriedState


@dataclass
class LossBreakdown:
    lm_nll: torch.Tensor
    attn_ce: torch.Tensor
    total: torch.Tensor
    supervised_tokens: int = 0
    extras: Dict[str, float] = field(default_factory=dict)

    def as_floats(self) -> Dict[str, float]:
        return {
            "lm_nll": float(self.lm_nll.detach()),
            "attn_ce": float(self.attn_ce.detach()),
            "total": float(self.total.detach()),
        }


class LanguageModel(nn.Module):
    """Embedding, stacked LSTMs, span attention before layer ``insertion_layer``."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        hidden = config.hidden_size
        self.embedding = nn.Embedding(config.vocab_size, config.embed_size)
        layers = []
        for index in range(config.num_layers):
            input_size = config.embed_size if index == 0 else hidden
            last = index == config.num_layers - 1
            output_size = config.embed_size if (last and config.tie_weights) else hidden
            layers.append(nn.LSTM(input_size, output_size, batch_first=True))
        self.rnns = nn.ModuleList(layers)
        self.span_forward = RationalRNN(hidden, config.rrnn_size)
        self.span_backward = RationalRNN(hidden, config.rrnn_size)
        self.attention = SpanAttention(
            hidden, 2 * config.rrnn_size, config.attn_hidden, gate=config.gate
        )
        self.decoder = nn.Linear(layers[-1].hidden_size, config.vocab_size)
        if config.tie_weights:
            self.decoder.weight = self.embedding.weight
        self.drop_input = nn.Dropout(config.dropout_input)
        self.drop_hidden = nn.Dropout(config.dropout_hidden)
        self.drop_output = nn.Dropout(config.dropout_output)
        self.init_weights()
        if config.right_branching:
            for parameter in self.attention.scorer.parameters():
                parameter.requires_grad_(False)

    def init_weights(self) -> None:
        init_range = 0.1
        self.embedding.weight.data.uniform_(-init_range, init_range)
        self.decoder.bias.data.zero_()
        if not self.config.tie_weights:
            self.decoder.weight.data.uniform_(-init_range, init_range)

    def init_state(self, batch_size: int) -> CarriedState:
        weight = next(self.parameters())
        hidden = [
            (
                weight.new_zeros(1, batch_size, rnn.hidden_size),
                weight.new_zeros(1, batch_size, rnn.hidden_size),
            )
            for rnn in self.rnns
        ]
        tail = weight.new_zeros(batch_size, 0, self.config.hidden_size)
        return CarriedState(hidden=hidden, tail=tail)

    def forward(
        self,
        inputs: torch.Tensor,
        state: Optional[CarriedState] = None,
        *,
        max_span: Optional[int] = None,
    ) -> LMOutput:
        """Logits for ``x_{t+1}`` at every input position ``t`` of ``inputs [B, T]``.

        ``max_span`` widens attention beyond the training ``m`` (parse time).
        """

        batch_size = inputs.shape[0]
        if state is None:
            state = self.init_state(batch_size)
        if state.batch_size != batch_size or len(state.hidden) != len(self.rnns):
            raise ValueError(
                f"carried state for {state.batch_size} lanes / {len(state.hidden)} layers "
                f"does not fit a batch of {batch_size} and {len(self.rnns)} layers"
            )
        if state.tail.shape[-1] != self.config.hidden_size:
            raise ValueError("carried tail width does not match the model's hidden size")

        x = self.drop_input(self.embedding(inputs))
        hidden: List[LayerState] = []
        record: Optional[AttentionRecord] = None
        tail = state.tail
        last = len(self.rnns) - 1
        for index, rnn in enumerate(self.rnns):
            if index == self.config.insertion_layer:
                x, record, tail = self._attend(x, state.tail, max_span)
            x, layer_state = rnn(x, state.hidden[index])
            hidden.append(layer_state)
            x = self.drop_output(x) if index == last else self.drop_hidden(x)
        assert record is not None
        logits = self.decoder(x)
        return LMOutput(logits, record, CarriedState(hidden=hidden, tail=tail))

    def _attend(
        self, h: torch.Tensor, tail: torch.Tensor, max_span: Optional[int]
    ) -> Tuple[torch.Tensor, AttentionRecord, torch.Tensor]:
        width = max_span or self.config.max_span
        sequence = torch.cat([tail.to(h.dtype), h], dim=1)
        values, mask = causal_span_reprs(
            self.span_forward.params, self.span_backward.params, sequence, width
        )
        offset = tail.shape[1]
        reprs = values[:, offset:]
        mask = mask[offset:]
        if self.config.right_branching:
            scores = right_branching_scores(mask, h)
        else:
            scores = score_spans(self.attention, h, reprs)
        log_weights = log_attention_weights(scores, mask)
        weights = torch.exp(log_weights)
        context = context_vector(weights, reprs)
        if self.config.zero_context:
            context = torch.zeros_like(context)
        merged = merge(self.attention, h, context)
        keep = self.config.max_span - 1
        new_tail = sequence[:, sequence.shape[1] - keep :] if keep > 0 else sequence[:, :0]
        return merged, AttentionRecord(scores, weights, log_weights, mask), new_tail


def lm_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean token negative log-likelihood in nats; perplexity is ``exp`` of it."""

    if logits.shape[:-1] != targets.shape:
        raise ValueError(
            f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}"
        )
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def joint_loss(
    lm_nll: torch.Tensor,
    record: AttentionRecord,
    oracle: Optional[torch.Tensor],
    supervised: Optional[torch.Tensor],
    lam: float,
) -> LossBreakdown:
    """``total = lm_nll + lam * mean_t H(y_t, w_t)`` over supervised tokens."""

    zero = lm_nll.new_zeros(())
    if oracle is None or supervised is None or not bool(supervised.any()):
        return LossBreakdown(lm_nll, zero, lm_nll)

    width = record.log_weights.shape[-1]
    targets = oracle.to(record.log_weights.dtype)
    if targets.shape[-1] < width:
        targets = F.pad(targets, (0, width - targets.shape[-1]))
    overflow = targets[..., width:].sum()
    targets = targets[..., :width]
    available = record.mask.expand_as(targets)
    used = available & (targets > 0)
    log_weights = torch.where(used, record.log_weights, torch.zeros_like(record.log_weights))
    per_token = -(targets * log_weights).sum(dim=-1)
    shortfall = float(overflow) + float((targets * (~available)).sum())
    if shortfall > 0:
        logger.debug("oracle mass %.4f fell outside the available spans", shortfall)
    attn_ce = per_token[supervised].mean()
    total = lm_nll if lam == 0 else lm_nll + lam * attn_ce
    return LossBreakdown(
        lm_nll,
        attn_ce,
        total,
        supervised_tokens=int(supervised.sum()),
        extras={"oracle_shortfall": shortfall},
    )


__all__ = [
    "ModelConfig",
    "CarriedState",
    "LMOutput",
    "LossBreakdown",
    "LanguageModel",
    "lm_loss",
    "joint_loss",
]
