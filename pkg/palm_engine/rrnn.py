"""Rational RNN cell and span representations by forget-gate subtraction.

The unigram rational cell is

    f_t = sigmoid(W_f h_t + b_f)
    u_t = (1 - f_t) * tanh(W_u h_t + b_u)
    c_t = f_t * c_{t-1} + u_t

Because ``c_t`` is linear in ``c_{t-1}``, the state of a chain restarted at
position ``i`` can be read off a single left-to-right run:

    c_{i,j} = c_j - c_{i-1} * prod_{k=i..j} f_k

Gate products are carried as prefix sums of ``log f``; states stay linear.
Tables are dense ``[..., n, K, d_r]`` tensors indexed by end position ``j``
(row ``j-1``) and offset ``k`` (span ``[j-k, j]``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

GATE_EPS = 1e-6

FORWARD = "forward"
BACKWARD = "backward"


class RrnnParams(NamedTuple):
    w_f: torch.Tensor  # [d_r, d_h]
    w_u: torch.Tensor  # [d_r, d_h]
    b_f: torch.Tensor  # [d_r]
    b_u: torch.Tensor  # [d_r]

    @property
    def input_size(self) -> int:
        return int(self.w_f.shape[1])

    @property
    def output_size(self) -> int:
        return int(self.w_f.shape[0])


class RationalRNN(nn.Module):
    """Parameter holder for one direction of the rational cell."""

    def __init__(self, input_size: int, output_size: int) -> None:
        super().__init__()
        self.forget = nn.Linear(input_size, output_size)
        self.candidate = nn.Linear(input_size, output_size)

    @property
    def params(self) -> RrnnParams:
        return RrnnParams(
            self.forget.weight, self.candidate.weight, self.forget.bias, self.candidate.bias
        )


@dataclass(frozen=True)
class RrnnTrace:
    """Everything a chain run produces, in processing order.

    ``states[..., t, :]`` is ``c_t`` for ``t = 0..n`` (``c_0`` is the initial
    state) and ``log_forget[..., t, :]`` is ``sum_{k<=t} log f_k`` with
    ``log_forget[..., 0, :] = 0``. A reverse trace is the forward trace of the
    flipped sequence.
    """

    states: torch.Tensor  # [..., n+1, d_r]
    forget: torch.Tensor  # [..., n, d_r]
    candidate: torch.Tensor  # [..., n, d_r]
    log_forget: torch.Tensor  # [..., n+1, d_r]
    reverse: bool = False

    @property
    def length(self) -> int:
        return int(self.forget.shape[-2])

    @property
    def c(self) -> torch.Tensor:
        return self.states[..., 1:, :]


@dataclass(frozen=True)
class SpanTable:
    """Span representations ``c_{j-k, j}`` for every end ``j`` and offset ``k < K``."""

    values: torch.Tensor  # [..., n, K, d_r]
    mask: torch.Tensor  # [n, K] bool, False where the span would cross position 1
    direction: str = FORWARD

    @property
    def length(self) -> int:
        return int(self.values.shape[-3])

    @property
    def max_len(self) -> int:
        return int(self.values.shape[-2])

    def span(self, i: int, j: int) -> torch.Tensor:
        if not 1 <= i <= j <= self.length:
            raise IndexError(f"span [{i}, {j}] outside a table over {self.length} positions")
        if j - i >= self.max_len:
            raise IndexError(
                f"span [{i}, {j}] longer than the table's maximum length {self.max_len}"
            )
        return self.values[..., j - 1, j - i, :]


# ----------------------------------------------------------------------
# Cell
# ----------------------------------------------------------------------


def _gates(params: RrnnParams, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    if h.shape[-1] != params.input_size:
        raise ValueError(
            f"input width {h.shape[-1]} does not match cell input size {params.input_size}"
        )
    forget = torch.sigmoid(F.linear(h, params.w_f, params.b_f)).clamp(GATE_EPS, 1.0 - GATE_EPS)
    candidate = (1.0 - forget) * torch.tanh(F.linear(h, params.w_u, params.b_u))
    return forget, candidate


def _check_finite(tensor: torch.Tensor, name: str) -> None:
    if not bool(torch.isfinite(tensor).all()):
        raise FloatingPointError(f"non-finite values in {name}")


def rrnn_step(
    params: RrnnParams, h_t: torch.Tensor, c_prev: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """One cell update; returns ``(c_t, f_t, u_t)``."""

    _check_finite(h_t, "h_t")
    if c_prev.shape[-1] != params.output_size:
        raise ValueError(
            f"state width {c_prev.shape[-1]} does not match cell size {params.output_size}"
        )
    forget, candidate = _gates(params, h_t)
    return forget * c_prev + candidate, forget, candidate


def run_chain(
    params: RrnnParams,
    h: torch.Tensor,
    c_init: Optional[torch.Tensor] = None,
    *,
    reverse: bool = False,
) -> RrnnTrace:
    """Run the cell over ``h[..., 1..n, :]`` (right to left when ``reverse``)."""

    if h.dim() < 2 or h.shape[-2] < 1:
        raise ValueError(f"run_chain needs at least one position, got shape {tuple(h.shape)}")
    _check_finite(h, "h")
    if reverse:
        h = h.flip(-2)
    forget, candidate = _gates(params, h)
    state = (
        c_init
        if c_init is not None
        else forget.new_zeros(forget.shape[:-2] + forget.shape[-1:])
    )
    states = [state]
    for t in range(forget.shape[-2]):
        state = forget[..., t, :] * state + candidate[..., t, :]
        states.append(state)
    log_forget = torch.cumsum(torch.log(forget), dim=-2)
    log_forget = torch.cat([torch.zeros_like(log_forget[..., :1, :]), log_forget], dim=-2)
    return RrnnTrace(torch.stack(states, dim=-2), forget, candidate, log_forget, reverse)


# ----------------------------------------------------------------------
# Span tables
# ----------------------------------------------------------------------


def _span_indices(n: int, max_len: int, device: torch.device) -> Tuple[torch.Tensor, torch.Tensor]:
    ends = torch.arange(1, n + 1, device=device).unsqueeze(1)
    offsets = torch.arange(max_len, device=device).unsqueeze(0)
    starts = ends - offsets
    return starts, starts >= 1


def _subtract_spans(
    states: torch.Tensor, log_forget: torch.Tensor, max_len: int
) -> Tuple[torch.Tensor, torch.Tensor]:
    n = states.shape[-2] - 1
    starts, mask = _span_indices(n, max_len, states.device)
    before = (starts - 1).clamp(min=0)
    c_end = states[..., 1:, :].unsqueeze(-2)
    log_end = log_forget[..., 1:, :].unsqueeze(-2)
    # log_end - log_forget[before] <= 0, so the decay never overflows.
    decay = torch.exp(log_end - log_forget[..., before, :])
    values = c_end - states[..., before, :] * decay
    values = torch.where(mask.unsqueeze(-1), values, torch.zeros_like(values))
    return values, mask


def span_table(trace: RrnnTrace, max_len: Optional[int] = None) -> SpanTable:
    """Every span of length ``<= max_len`` (all spans when ``None``) from one trace."""

    n = trace.length
    width = n if max_len is None else max_len
    if width < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    values, mask = _subtract_spans(trace.states, trace.log_forget, width)
    if not trace.reverse:
        return SpanTable(values, mask, FORWARD)

    # Original span [j-k, j] is the reversed span ending at n+1-(j-k), offset k.
    ends = torch.arange(1, n + 1, device=values.device).unsqueeze(1)
    offsets = torch.arange(width, device=values.device).unsqueeze(0)
    reversed_end = (n - ends + offsets).clamp(max=n - 1)
    mirrored = values[..., reversed_end, offsets.expand_as(reversed_end), :]
    _, mask = _span_indices(n, width, values.device)
    mirrored = torch.where(mask.unsqueeze(-1), mirrored, torch.zeros_like(mirrored))
    return SpanTable(mirrored, mask, BACKWARD)


def causal_backward_table(
    params: RrnnParams, h: torch.Tensor, max_len: Optional[int] = None
) -> SpanTable:
    """Backward spans grown leftwards from each end position.

    ``c_{i,j} = f_i * c_{i+1,j} + u_i`` starting from ``c_{j,j} = u_j``; the
    entry for end ``j`` never touches positions after ``j``.
    """

    _check_finite(h, "h")
    forget, candidate = _gates(params, h)
    n = forget.shape[-2]
    width = n if max_len is None else max_len
    if width < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    positions = torch.arange(n, device=forget.device)
    columns = [candidate]
    for offset in range(1, width):
        start = (positions - offset).clamp(min=0)
        columns.append(forget[..., start, :] * columns[-1] + candidate[..., start, :])
    values = torch.stack(columns, dim=-2)
    _, mask = _span_indices(n, width, forget.device)
    values = torch.where(mask.unsqueeze(-1), values, torch.zeros_like(values))
    return SpanTable(values, mask, BACKWARD)


def naive_span(
    params: RrnnParams,
    h: torch.Tensor,
    i: int,
    j: int,
    *,
    reverse: bool = False,
) -> torch.Tensor:
    """Brute-force ``c_{i,j}``: rerun the cell from zero state over ``i..j``."""

    n = h.shape[-2]
    if not 1 <= i <= j <= n:
        raise IndexError(f"span [{i}, {j}] outside a sequence of {n} positions")
    steps = range(j - 1, i - 2, -1) if reverse else range(i - 1, j)
    state = h.new_zeros(h.shape[:-2] + (params.output_size,))
    for position in steps:
        state, _, _ = rrnn_step(params, h[..., position, :], state)
    return state


def bidir_span_repr(fwd: SpanTable, bwd: SpanTable, i: int, j: int) -> torch.Tensor:
    """``g([i, j]) = [c_fwd(i, j); c_bwd(i, j)]``."""

    return torch.cat([fwd.span(i, j), bwd.span(i, j)], dim=-1)


def causal_span_reprs(
    forward_params: RrnnParams,
    backward_params: RrnnParams,
    h: torch.Tensor,
    max_len: int,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Bidirectional representations of the ``max_len`` spans ending at each position.

    Returns ``values [..., n, max_len, 2*d_r]`` and ``mask [n, max_len]``.
    """

    forward = span_table(run_chain(forward_params, h), max_len)
    backward = causal_backward_table(backward_params, h, max_len)
    return torch.cat([forward.values, backward.values], dim=-1), forward.mask


__all__ = [
    "GATE_EPS",
    "FORWARD",
    "BACKWARD",
    "RrnnParams",
    "RationalRNN",
    "RrnnTrace",
    "SpanTable",
    "rrnn_step",
    "run_chain",
    "span_table",
    "causal_backward_table",
    "naive_span",
    "bidir_span_repr",
    "causal_span_reprs",
]
