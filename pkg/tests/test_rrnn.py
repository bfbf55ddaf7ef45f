import math

import pytest
import torch

from palm_engine import rrnn
from palm_engine.rrnn import (
    RrnnParams,
    bidir_span_repr,
    causal_backward_table,
    causal_span_reprs,
    naive_span,
    rrnn_step,
    run_chain,
    span_table,
)


def random_params(d_r=3, d_h=4, seed=0, dtype=torch.float64):
    generator = torch.Generator().manual_seed(seed)

    def draw(*shape):
        return (torch.randn(*shape, generator=generator) * 0.5).to(dtype)

    return RrnnParams(draw(d_r, d_h), draw(d_r, d_h), draw(d_r), draw(d_r))


def random_inputs(n, d_h=4, seed=1, dtype=torch.float64):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(n, d_h, generator=generator).to(dtype)


def test_zero_input_and_biases_halve_the_state():
    params = random_params()
    params = params._replace(b_f=torch.zeros(3, dtype=torch.float64), b_u=torch.zeros(3, dtype=torch.float64))
    c_prev = torch.tensor([1.0, -2.0, 4.0], dtype=torch.float64)
    c, f, u = rrnn_step(params, torch.zeros(4, dtype=torch.float64), c_prev)
    torch.testing.assert_close(f, torch.full((3,), 0.5, dtype=torch.float64))
    torch.testing.assert_close(u, torch.zeros(3, dtype=torch.float64))
    torch.testing.assert_close(c, 0.5 * c_prev)


def test_zero_state_gives_candidate():
    params = random_params()
    h = random_inputs(1)[0]
    c, _, u = rrnn_step(params, h, torch.zeros(3, dtype=torch.float64))
    torch.testing.assert_close(c, u)


def test_step_matches_scalar_hand_computation():
    params = random_params(d_r=3, d_h=2, seed=5)
    h = torch.tensor([0.3, -1.1], dtype=torch.float64)
    c_prev = torch.tensor([0.2, -0.4, 1.5], dtype=torch.float64)
    c, _, _ = rrnn_step(params, h, c_prev)
    for r in range(3):
        pre_f = sum(float(params.w_f[r, k]) * float(h[k]) for k in range(2)) + float(params.b_f[r])
        pre_u = sum(float(params.w_u[r, k]) * float(h[k]) for k in range(2)) + float(params.b_u[r])
        f = 1.0 / (1.0 + math.exp(-pre_f))
        u = (1.0 - f) * math.tanh(pre_u)
        assert float(c[r]) == pytest.approx(f * float(c_prev[r]) + u, rel=1e-12)


def test_step_rejects_bad_widths_and_non_finite_input():
    params = random_params()
    with pytest.raises(ValueError):
        rrnn_step(params, torch.zeros(5, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))
    with pytest.raises(ValueError):
        rrnn_step(params, torch.zeros(4, dtype=torch.float64), torch.zeros(2, dtype=torch.float64))
    with pytest.raises(FloatingPointError):
        rrnn_step(params, torch.full((4,), float("nan"), dtype=torch.float64), torch.zeros(3, dtype=torch.float64))


def test_run_chain_single_step_uses_initial_state():
    params = random_params()
    h = random_inputs(1)
    c_init = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    trace = run_chain(params, h, c_init)
    torch.testing.assert_close(trace.c[0], trace.forget[0] * c_init + trace.candidate[0])


def test_prefix_forget_sums_match_direct_product():
    trace = run_chain(random_params(), random_inputs(12))
    product = trace.forget.prod(dim=0)
    torch.testing.assert_close(torch.exp(trace.log_forget[-1]), product, rtol=1e-6, atol=0)


def test_reverse_chain_is_forward_chain_of_flipped_input():
    params = random_params()
    h = random_inputs(7)
    backward = run_chain(params, h, reverse=True)
    forward = run_chain(params, h.flip(0))
    torch.testing.assert_close(backward.states, forward.states)
    assert backward.reverse


def test_run_chain_rejects_empty_sequence():
    with pytest.raises(ValueError):
        run_chain(random_params(), torch.zeros(0, 4, dtype=torch.float64))


def test_single_token_spans_equal_candidates():
    trace = run_chain(random_params(), random_inputs(6))
    table = span_table(trace)
    for j in range(1, 7):
        torch.testing.assert_close(table.span(j, j), trace.candidate[j - 1])


def test_full_span_equals_last_state():
    trace = run_chain(random_params(), random_inputs(6))
    torch.testing.assert_close(span_table(trace).span(1, 6), trace.c[-1])


@pytest.mark.parametrize("dtype, tolerance, n", [(torch.float64, 1e-10, 30), (torch.float32, 1e-5, 12)])
def test_span_table_matches_naive_reruns(dtype, tolerance, n):
    for seed in range(5):
        params = random_params(d_r=5, d_h=4, seed=seed, dtype=dtype)
        h = random_inputs(n, seed=seed + 100, dtype=dtype)
        forward = span_table(run_chain(params, h))
        backward = span_table(run_chain(params, h, reverse=True))
        for j in range(1, n + 1):
            for i in range(1, j + 1):
                for table, reverse in ((forward, False), (backward, True)):
                    expected = naive_span(params, h, i, j, reverse=reverse)
                    scale = float(expected.abs().max().clamp(min=1.0))
                    error = float((table.span(i, j) - expected).abs().max()) / scale
                    assert error < tolerance, (seed, i, j, reverse)


def test_naive_span_from_position_one_is_the_chain_state():
    params = random_params()
    h = random_inputs(5)
    trace = run_chain(params, h)
    for j in range(1, 6):
        torch.testing.assert_close(naive_span(params, h, 1, j), trace.c[j - 1])


def test_naive_span_rejects_out_of_range():
    with pytest.raises(IndexError):
        naive_span(random_params(), random_inputs(3), 2, 4)


def test_truncated_table_masks_spans_crossing_the_start():
    table = span_table(run_chain(random_params(), random_inputs(5)), max_len=3)
    assert table.values.shape == (5, 3, 3)
    assert table.mask.tolist()[0] == [True, False, False]
    assert table.mask.tolist()[4] == [True, True, True]
    with pytest.raises(IndexError):
        table.span(1, 4)


def test_causal_backward_table_agrees_with_reverse_trace():
    params = random_params()
    h = random_inputs(9)
    expected = span_table(run_chain(params, h, reverse=True), max_len=4)
    actual = causal_backward_table(params, h, max_len=4)
    torch.testing.assert_close(actual.values, expected.values, rtol=1e-10, atol=1e-10)
    assert torch.equal(actual.mask, expected.mask)


def test_causal_backward_table_ignores_later_positions():
    params = random_params()
    h = random_inputs(8)
    changed = h.clone()
    changed[5:] += 3.0
    before = causal_backward_table(params, h, max_len=3).values
    after = causal_backward_table(params, changed, max_len=3).values
    torch.testing.assert_close(before[:5], after[:5], rtol=0, atol=0)


def test_span_table_extends_spans_one_step_at_a_time():
    params = random_params()
    trace = run_chain(params, random_inputs(7))
    table = span_table(trace)
    for i in range(1, 7):
        for j in range(i + 1, 8):
            expected = trace.forget[j - 1] * table.span(i, j - 1) + trace.candidate[j - 1]
            torch.testing.assert_close(table.span(i, j), expected, rtol=1e-10, atol=1e-12)


def test_bidirectional_representation():
    params_f, params_b = random_params(seed=1), random_params(seed=2)
    h = random_inputs(6)
    forward = span_table(run_chain(params_f, h))
    backward = span_table(run_chain(params_b, h, reverse=True))
    single = bidir_span_repr(forward, backward, 3, 3)
    assert single.shape == (6,)
    torch.testing.assert_close(single[:3], run_chain(params_f, h).candidate[2])
    torch.testing.assert_close(single[3:], run_chain(params_b, h.flip(0)).candidate[3])
    pair = bidir_span_repr(forward, backward, 2, 5)
    torch.testing.assert_close(
        pair,
        torch.cat([naive_span(params_f, h, 2, 5), naive_span(params_b, h, 2, 5, reverse=True)]),
    )


def test_causal_span_reprs_shapes():
    values, mask = causal_span_reprs(random_params(seed=1), random_params(seed=2), random_inputs(7).unsqueeze(0), 3)
    assert values.shape == (1, 7, 3, 6)
    assert mask.shape == (7, 3)


def _as_params(w_f, w_u, b_f, b_u):
    return RrnnParams(w_f, w_u, b_f, b_u)


def test_span_table_gradcheck():
    params = random_params(d_r=2, d_h=3)
    leaves = [tensor.clone().requires_grad_(True) for tensor in params]
    h = random_inputs(5, d_h=3).requires_grad_(True)

    def fn(w_f, w_u, b_f, b_u, inputs):
        return span_table(run_chain(_as_params(w_f, w_u, b_f, b_u), inputs), max_len=3).values

    assert torch.autograd.gradcheck(fn, (*leaves, h))


def test_causal_backward_table_gradcheck():
    params = random_params(d_r=2, d_h=3)
    leaves = [tensor.clone().requires_grad_(True) for tensor in params]
    h = random_inputs(5, d_h=3).requires_grad_(True)

    def fn(w_f, w_u, b_f, b_u, inputs):
        return causal_backward_table(_as_params(w_f, w_u, b_f, b_u), inputs, max_len=3).values

    assert torch.autograd.gradcheck(fn, (*leaves, h))


def test_rational_rnn_module_exposes_params():
    module = rrnn.RationalRNN(4, 3)
    params = module.params
    assert params.input_size == 4 and params.output_size == 3
