"""Span scoring, attention weights, context vectors and the residual merge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn


class SpanAttention(nn.Module):
    """Scorer MLP over ``[h; g(span)]`` plus the gated tanh-MLP merge.

    The residual gate is a learned per-dimension vector (``gate="static"``)
    or a sigmoid of a projection of ``[h; a]`` (``gate="conditioned"``).
    """

    def __init__(
        self,
        hidden_size: int,
        span_size: int,
        scorer_hidden: Optional[int] = None,
        gate: str = "static",
    ) -> None:
        super().__init__()
        if gate not in {"static", "conditioned"}:
            raise ValueError(f"unknown gate kind {gate!r}")
        self.hidden_size = hidden_size
        self.span_size = span_size
        self.gate_kind = gate
        joint = hidden_size + span_size
        self.scorer = nn.Sequential(
            nn.Linear(joint, scorer_hidden or hidden_size),
            nn.Tanh(),
            nn.Linear(scorer_hidden or hidden_size, 1),
        )
        self.merge_mlp = nn.Sequential(nn.Linear(joint, hidden_size), nn.Tanh())
        if gate == "static":
            self.gate_logit = nn.Parameter(torch.zeros(hidden_size))
        else:
            self.gate_proj = nn.Linear(joint, hidden_size)

    def residual_gate(self, joint: torch.Tensor) -> torch.Tensor:
        if self.gate_kind == "static":
            return torch.sigmoid(self.gate_logit)
        return torch.sigmoid(self.gate_proj(joint))


@dataclass
class AttentionRecord:
    """Scores and weights of every timestep; ``mask[t, i]`` marks available spans."""

    scores: torch.Tensor  # [B, T, K]
    weights: torch.Tensor  # [B, T, K]
    log_weights: torch.Tensor  # [B, T, K], -inf where unavailable
    mask: torch.Tensor  # [T, K] bool

    @property
    def available(self) -> torch.Tensor:
        return self.mask.sum(dim=-1)

    def detach(self) -> "AttentionRecord":
        return AttentionRecord(
            self.scores.detach(), self.weights.detach(), self.log_weights.detach(), self.mask
        )


def score_spans(params: SpanAttention, h_next: torch.Tensor, span_reprs: torch.Tensor) -> torch.Tensor:
    """One scalar per span: ``s_i = MLP([h_next; g_i])``.

    ``h_next`` is ``[..., d_h]`` and ``span_reprs`` ``[..., K, 2*d_r]``.
    """

    if span_reprs.shape[-2] < 1:
        raise ValueError("score_spans needs at least one span")
    if span_reprs.shape[-1] != params.span_size:
        raise ValueError(
            f"span width {span_reprs.shape[-1]} does not match scorer span size {params.span_size}"
        )
    if h_next.shape[-1] != params.hidden_size:
        raise ValueError(
            f"hidden width {h_next.shape[-1]} does not match scorer hidden size {params.hidden_size}"
        )
    expanded = h_next.unsqueeze(-2).expand(*span_reprs.shape[:-1], h_next.shape[-1])
    return params.scorer(torch.cat([expanded, span_reprs], dim=-1)).squeeze(-1)


def log_attention_weights(scores: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Log-softmax over the last axis; unavailable spans get ``-inf``."""

    if scores.shape[-1] < 1:
        raise ValueError("attention needs at least one score")
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    # Softmax is shift invariant, so the shift carries no gradient.
    shift = scores.amax(dim=-1, keepdim=True).detach()
    shifted = scores - shift
    return shifted - torch.log(torch.exp(shifted).sum(dim=-1, keepdim=True))


def attention_weights(scores: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return torch.exp(log_attention_weights(scores, mask))


def context_vector(weights: torch.Tensor, span_reprs: torch.Tensor) -> torch.Tensor:
    """``a = sum_i w_i g_i``."""

    if weights.shape[-1] != span_reprs.shape[-2]:
        raise ValueError(
            f"{weights.shape[-1]} weights for {span_reprs.shape[-2]} span representations"
        )
    return (weights.unsqueeze(-1) * span_reprs).sum(dim=-2)


def merge(params: SpanAttention, h: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """``g_r * MLP([h; a]) + (1 - g_r) * h``."""

    if h.shape[-1] != params.hidden_size or a.shape[-1] != params.span_size:
        raise ValueError(
            f"merge expects widths ({params.hidden_size}, {params.span_size}), "
            f"got ({h.shape[-1]}, {a.shape[-1]})"
        )
    joint = torch.cat([h, a], dim=-1)
    gate = params.residual_gate(joint)
    return gate * params.merge_mlp(joint) + (1.0 - gate) * h


def right_branching_scores(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Deterministic scores ``k + 1`` for offset ``k``: the longest span always wins."""

    offsets = torch.arange(1, mask.shape[-1] + 1, dtype=like.dtype, device=like.device)
    return offsets.expand(*like.shape[:-1], mask.shape[-1]).clone()


__all__ = [
    "SpanAttention",
    "AttentionRecord",
    "score_spans",
    "log_attention_weights",
    "attention_weights",
    "context_vector",
    "merge",
    "right_branching_scores",
]
