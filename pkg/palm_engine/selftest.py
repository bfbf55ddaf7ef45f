"""Tiny-scale correctness suites run by ``palm selftest``."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import rrnn
from .lm import LanguageModel, ModelConfig, joint_loss, lm_loss
from .parser import branching_stats, greedy_parse, right_branching_scores
from .synthetic import random_binary_tree, tree_scores
from .utils import derive_seed, numpy_rng

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_params(generator: torch.Generator, d_r: int, d_h: int) -> rrnn.RrnnParams:
    def draw(*shape: int) -> torch.Tensor:
        return torch.randn(*shape, generator=generator, dtype=torch.float64) * 0.5

    return rrnn.RrnnParams(draw(d_r, d_h), draw(d_r, d_h), draw(d_r), draw(d_r))


def _rerun_errors(
    params: rrnn.RrnnParams, h: torch.Tensor, table: rrnn.SpanTable, reverse: bool
) -> Tuple[float, Tuple[int, int]]:
    """Worst relative error of ``table`` against zero-state reruns of the cell.

    One rerun starts at every position (every end position when ``reverse``);
    they advance together, one cell step per sequence position.
    """

    n = h.shape[-2]
    anchors = torch.arange(1, n + 1).unsqueeze(-1)
    states = h.new_zeros(n, params.output_size)
    worst, worst_span = 0.0, (1, 1)
    for t in (range(n, 0, -1) if reverse else range(1, n + 1)):
        stepped, _, _ = rrnn.rrnn_step(params, h[t - 1].expand(n, -1), states)
        live = anchors >= t if reverse else anchors <= t
        states = torch.where(live, stepped, states)
        if reverse:
            ends = torch.arange(t, n + 1)
            actual = table.values[ends - 1, ends - t]
            expected = states[t - 1 :]
        else:
            actual = table.values[t - 1, :t]
            expected = states[:t].flip(0)
        scale = expected.abs().amax(dim=-1).clamp(min=1.0)
        errors = (actual - expected).abs().amax(dim=-1) / scale
        index = int(errors.argmax())
        if float(errors[index]) > worst:
            worst = float(errors[index])
            worst_span = (t, t + index) if reverse else (t - index, t)
    return worst, worst_span


def span_oracle(draws: int = 500, seed: int = 0, *, max_n: int = 50, tolerance: float = 1e-10) -> SuiteResult:
    """Subtraction-based span tables against brute-force reruns of the cell.

    Every span is checked against reruns from a zero state; one random span
    per draw and direction is also recomputed with :func:`~palm_engine.rrnn.naive_span`.
    """

    generator = torch.Generator().manual_seed(derive_seed(seed, "span_oracle"))
    worst = 0.0
    for draw in range(draws):
        d_r = int(torch.randint(1, 17, (1,), generator=generator))
        d_h = int(torch.randint(1, 9, (1,), generator=generator))
        n = int(torch.randint(1, max_n + 1, (1,), generator=generator))
        params = _random_params(generator, d_r, d_h)
        h = torch.randn(n, d_h, generator=generator, dtype=torch.float64)
        j = int(torch.randint(1, n + 1, (1,), generator=generator))
        i = int(torch.randint(1, j + 1, (1,), generator=generator))
        for reverse in (False, True):
            table = rrnn.span_table(rrnn.run_chain(params, h, reverse=reverse))
            error, span = _rerun_errors(params, h, table, reverse)
            expected = rrnn.naive_span(params, h, i, j, reverse=reverse)
            spot = float((table.span(i, j) - expected).abs().max() / expected.abs().max().clamp(min=1.0))
            if spot > error:
                error, span = spot, (i, j)
            worst = max(worst, error)
            if error > tolerance:
                direction = "backward" if reverse else "forward"
                return SuiteResult(
                    "span_oracle",
                    False,
                    f"draw {draw}: {direction} span [{span[0]}, {span[1]}] off by {error:.3e}",
                )
    return SuiteResult("span_oracle", True, f"{draws} draws, worst relative error {worst:.2e}")


def _tiny_config(seed: int) -> ModelConfig:
    torch.manual_seed(derive_seed(seed, "gradient_check"))
    return ModelConfig(
        vocab_size=7,
        embed_size=6,
        hidden_size=8,
        num_layers=3,
        rrnn_size=4,
        attn_hidden=5,
        max_span=4,
        lam=0.5,
        dropout_input=0.0,
        dropout_hidden=0.0,
        dropout_output=0.0,
    )


def finite_difference_errors(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.nn.Parameter],
    rng: np.random.Generator,
    *,
    samples: int = 40,
    eps: float = 1e-5,
) -> List[float]:
    """Relative errors between autograd and central differences at random entries."""

    for parameter in parameters:
        parameter.grad = None
    loss_fn().backward()
    errors: List[float] = []
    sizes = np.array([parameter.numel() for parameter in parameters])
    for _ in range(samples):
        which = int(rng.choice(len(parameters), p=sizes / sizes.sum()))
        parameter = parameters[which]
        flat = parameter.data.view(-1)
        index = int(rng.integers(flat.numel()))
        analytic = float(parameter.grad.view(-1)[index])
        original = float(flat[index])
        with torch.no_grad():
            flat[index] = original + eps
            plus = float(loss_fn())
            flat[index] = original - eps
            minus = float(loss_fn())
            flat[index] = original
        numeric = (plus - minus) / (2 * eps)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return errors


def gradient_check(seeds: int = 10, *, tolerance: float = 1e-3, samples: int = 40) -> SuiteResult:
    """Full model (LM + attention supervision) against central differences, in float64."""

    worst = 0.0
    for seed in range(seeds):
        config = _tiny_config(seed)
        model = LanguageModel(config).double()
        model.train()
        rng = numpy_rng(seed, "gradient_check")
        inputs = torch.as_tensor(rng.integers(0, 7, size=(2, 6)))
        targets = torch.as_tensor(rng.integers(0, 7, size=(2, 6)))
        oracle = torch.as_tensor(rng.random((2, 6, config.max_span)))
        oracle = oracle / oracle.sum(dim=-1, keepdim=True)
        supervised = torch.ones(2, 6, dtype=torch.bool)

        def loss() -> torch.Tensor:
            output = model(inputs)
            nll = lm_loss(output.logits, targets)
            return joint_loss(nll, output.record, oracle, supervised, config.lam).total

        parameters = [p for p in model.parameters() if p.requires_grad]
        errors = finite_difference_errors(loss, parameters, rng, samples=samples)
        worst = max(worst, max(errors))
        if worst > tolerance:
            return SuiteResult(
                "gradient_check", False, f"seed {seed}: relative error {worst:.3e} > {tolerance:g}"
            )
    return SuiteResult("gradient_check", True, f"{seeds} seeds, worst relative error {worst:.2e}")


def tree_recovery(count: int = 1000, *, max_n: int = 20, seed: int = 0) -> SuiteResult:
    """Greedy decoding of 0/1 tree scores gives back the encoded tree."""

    rng = numpy_rng(seed, "tree_recovery")
    for index in range(count):
        n = int(rng.integers(2, max_n + 1))
        tree = random_binary_tree(n, rng)
        decoded = greedy_parse(tree_scores(tree), n)
        if decoded != tree:
            return SuiteResult(
                "tree_recovery",
                False,
                f"tree {index} (n={n}): decoded {decoded.to_bracketed()} from {tree.to_bracketed()}",
            )
    return SuiteResult("tree_recovery", True, f"{count} trees recovered")


def right_branching(max_n: int = 30) -> SuiteResult:
    """Decreasing-length scores decode to fully right-branching trees."""

    trees = []
    for n in range(2, max_n + 1):
        tree = greedy_parse(right_branching_scores(n), n)
        node = tree
        while not node.is_leaf:
            if not node.left.is_leaf:
                return SuiteResult("right_branching", False, f"n={n}: {tree.to_bracketed()}")
            node = node.right
        trees.append(tree)
    stats = branching_stats(trees)
    if stats.right != 100.0 or stats.left != 0.0:
        return SuiteResult(
            "right_branching", False, f"branching stats {stats.left:.1f}% / {stats.right:.1f}%"
        )
    return SuiteResult("right_branching", True, f"n in [2, {max_n}], {stats.counted} splits")


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "span_oracle": span_oracle,
    "gradient_check": gradient_check,
    "tree_recovery": tree_recovery,
    "right_branching": right_branching,
}


def run_selftest(names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    results: List[SuiteResult] = []
    for name in names or list(SUITES):
        if name not in SUITES:
            raise KeyError(f"unknown selftest suite {name!r}")
        started = time.perf_counter()
        try:
            result = SUITES[name]()
        except Exception as exc:  # noqa: BLE001
            result = SuiteResult(name, False, f"{type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - started
        logger.info("%s: %s (%s)", name, "pass" if result.passed else "FAIL", result.detail)
        results.append(result)
    return results


__all__ = [
    "SuiteResult",
    "span_oracle",
    "finite_difference_errors",
    "gradient_check",
    "tree_recovery",
    "right_branching",
    "SUITES",
    "run_selftest",
]
