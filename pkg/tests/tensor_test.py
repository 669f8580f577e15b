import logging

import numpy as np
import pytest

from mcreplay.detector import tensor as tensor_module
from mcreplay.detector.errors import DimensionError, InputError, NumericError
from mcreplay.detector.tensor import (
    FlatView,
    Graph,
    LSTMWeights,
    Tensor,
    conv1d_maps,
    conv1d_valid,
    filter_and_sum,
    grad_check,
    linear,
    lstm_cell,
    max_pool,
    mul,
    relu,
    reshape,
    softmax,
    softmax_cross_entropy,
    take,
    total,
)

_LOGGER = logging.getLogger(__name__)


def param(values, name=None):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, name=name)


def weighted_sum(out: Tensor, seed: int = 0) -> Tensor:
    """Scalar with a generic gradient for every output element."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return total(mul(out, Tensor(w)))


def test_conv1d_valid_examples():
    np.testing.assert_array_equal(conv1d_valid(Tensor([1, 2, 3]), Tensor([1])).values, [1, 2, 3])
    np.testing.assert_array_equal(conv1d_valid(Tensor([1, 2, 3, 4]), Tensor([1, 1])).values, [3, 5, 7])
    rng = np.random.default_rng(0)
    assert conv1d_valid(Tensor(rng.standard_normal(882)), Tensor(rng.standard_normal(630))).shape == (253,)


def test_conv1d_valid_is_true_convolution():
    out = conv1d_valid(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 0.0]))
    # kernel[0] multiplies the latest sample
    np.testing.assert_array_equal(out.values, [2.0, 3.0])


def test_conv1d_valid_rejects_long_kernel():
    with pytest.raises(DimensionError):
        conv1d_valid(Tensor([1.0, 2.0]), Tensor([1.0, 1.0, 1.0]))


def test_conv1d_valid_linearity():
    rng = np.random.default_rng(1)
    x, y, k = rng.standard_normal(50), rng.standard_normal(50), rng.standard_normal(7)
    lhs = conv1d_valid(Tensor(2.5 * x - 0.5 * y), Tensor(k)).values
    rhs = 2.5 * conv1d_valid(Tensor(x), Tensor(k)).values - 0.5 * conv1d_valid(Tensor(y), Tensor(k)).values
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_conv1d_valid_gradients():
    rng = np.random.default_rng(2)
    x, k = param(rng.standard_normal(20)), param(rng.standard_normal(5))
    report = grad_check(lambda: weighted_sum(conv1d_valid(x, k)), [x, k])
    assert report.max_rel_error < 1e-6


def test_max_pool_examples():
    assert max_pool(Tensor([1.0, 3.0, 2.0]), 3).values.tolist() == [3.0]
    assert max_pool(Tensor([1.0, 2, 3, 4, 5, 6]), 3, 3).values.tolist() == [3.0, 6.0]
    with pytest.raises(DimensionError):
        max_pool(Tensor([1.0, 2.0]), 3)


def test_max_pool_tie_goes_to_lowest_index():
    x = param([5.0, 5.0])
    with Graph() as graph:
        out = max_pool(x, 2)
        graph.backward(total(out))
    assert out.values.tolist() == [5.0]
    assert x.grad.tolist() == [1.0, 0.0]


def test_max_pool_never_exceeds_input_max():
    x = np.random.default_rng(3).standard_normal((4, 30))
    pooled = max_pool(Tensor(x), 4, 2).values
    assert pooled.max() <= x.max()
    np.testing.assert_array_equal(max_pool(Tensor(x), 30).values[:, 0], x.max(axis=1))


def test_relu_examples():
    assert relu(Tensor([-1.0, 0.0, 2.0])).values.tolist() == [0.0, 0.0, 2.0]
    assert relu(Tensor([3.5])).values.tolist() == [3.5]
    x = param([-1.0, -2.0, -0.5])
    with Graph() as graph:
        out = relu(x)
        graph.backward(total(out))
    assert out.values.tolist() == [0.0, 0.0, 0.0]
    assert x.grad.tolist() == [0.0, 0.0, 0.0]


def test_relu_subgradient_at_zero():
    x = param([0.0])
    with Graph() as graph:
        graph.backward(total(relu(x)))
    assert x.grad.tolist() == [0.0]


def test_linear_examples():
    x = Tensor([1.0, 2.0])
    assert linear(x, Tensor([[1.0, 1.0]]), Tensor([1.0])).values.tolist() == [4.0]
    np.testing.assert_array_equal(linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).values, [1.0, 2.0])
    with pytest.raises(DimensionError):
        linear(x, Tensor(np.ones((2, 3))))


def test_linear_gradients_batch():
    rng = np.random.default_rng(4)
    x, w, b = param(rng.standard_normal((3, 4))), param(rng.standard_normal((2, 4))), param(rng.standard_normal(2))
    assert grad_check(lambda: weighted_sum(linear(x, w, b)), [x, w, b]).max_rel_error < 1e-6


def lstm_params(rng, inputs, hidden, scale=0.5):
    return LSTMWeights(
        param(scale * rng.standard_normal((4 * hidden, inputs))),
        param(scale * rng.standard_normal((4 * hidden, hidden))),
        param(scale * rng.standard_normal(4 * hidden)),
    )


def test_lstm_zero_weights_give_zero_state():
    H, I = 3, 2
    weights = LSTMWeights(Tensor(np.zeros((4 * H, I))), Tensor(np.zeros((4 * H, H))), Tensor(np.zeros(4 * H)))
    h, c = lstm_cell(Tensor([1.0, -1.0]), Tensor(np.zeros(H)), Tensor(np.zeros(H)), weights)
    np.testing.assert_array_equal(h.values, np.zeros(H))


def test_lstm_forget_bias_limit():
    rng = np.random.default_rng(5)
    H, I = 4, 3
    weights = lstm_params(rng, I, H)
    bias = weights.bias.values.copy()
    bias[H : 2 * H] = 20.0
    weights = weights._replace(bias=Tensor(bias))
    x, h0, c0 = rng.standard_normal(I), rng.standard_normal(H), rng.standard_normal(H)
    _, c = lstm_cell(Tensor(x), Tensor(h0), Tensor(c0), weights)
    gates = weights.w_ih.values @ x + weights.w_hh.values @ h0 + bias
    i = 1 / (1 + np.exp(-gates[:H]))
    g = np.tanh(gates[2 * H : 3 * H])
    np.testing.assert_allclose(c.values, c0 + i * g, atol=1e-6)


def test_lstm_gradients():
    rng = np.random.default_rng(6)
    H, I = 3, 4
    weights = lstm_params(rng, I, H)
    x, h0, c0 = param(rng.standard_normal((2, I))), param(rng.standard_normal((2, H))), param(rng.standard_normal((2, H)))

    def f():
        h, c = lstm_cell(x, h0, c0, weights)
        h2, c2 = lstm_cell(h, h, c, LSTMWeights(weights.w_hh, weights.w_hh, weights.bias))
        return weighted_sum(h2 + c2)

    report = grad_check(f, [x, h0, c0, *weights], floor=1e-6)
    assert report.max_rel_error < 1e-4


def test_lstm_shape_mismatch():
    rng = np.random.default_rng(7)
    weights = lstm_params(rng, 2, 3)
    with pytest.raises(DimensionError):
        lstm_cell(Tensor(np.zeros(2)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), weights)


def test_softmax_cross_entropy_examples():
    assert softmax_cross_entropy(Tensor([0.0, 0.0]), 1).item() == pytest.approx(np.log(2), abs=1e-12)
    assert softmax_cross_entropy(Tensor([10.0, -10.0]), 0).item() == pytest.approx(2.06e-9, rel=1e-2)


def test_softmax_cross_entropy_weight_is_linear():
    logits = param([0.3, -1.2])
    with Graph() as graph:
        one = softmax_cross_entropy(logits, 1, 1.0)
        graph.backward(one)
    g1 = logits.grad.copy()
    logits.zero_grad()
    with Graph() as graph:
        two = softmax_cross_entropy(logits, 1, 2.0)
        graph.backward(two)
    assert two.item() == 2 * one.item()
    np.testing.assert_array_equal(logits.grad, 2 * g1)


def test_softmax_cross_entropy_gradient_formula():
    logits = param([0.5, 1.5])
    with Graph() as graph:
        graph.backward(softmax_cross_entropy(logits, 0, 0.7))
    expected = 0.7 * (softmax(logits.values) - np.array([1.0, 0.0]))
    np.testing.assert_allclose(logits.grad, expected, atol=1e-15)


def test_softmax_properties():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((10, 2)) * 5
    np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-12)
    for row in logits:
        shifted = row + 123.0
        assert softmax_cross_entropy(Tensor(shifted), 1).item() == pytest.approx(
            softmax_cross_entropy(Tensor(row), 1).item(), abs=1e-9
        )


def test_softmax_cross_entropy_batch_mean():
    logits = Tensor([[0.0, 1.0], [2.0, -1.0]])
    rows = [softmax_cross_entropy(Tensor(r), t).item() for r, t in zip(logits.values, [1, 0])]
    assert softmax_cross_entropy(logits, [1, 0]).item() == pytest.approx(np.mean(rows), abs=1e-15)
    with pytest.raises(InputError):
        softmax_cross_entropy(logits, [2, 0])


def test_non_finite_values_are_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        softmax_cross_entropy(Tensor([np.inf, 0.0]), 0)


def test_grad_check_square():
    theta = param([3.0])
    report = grad_check(lambda: total(mul(theta, theta)), [theta], eps=1e-5)
    assert report.analytic[0] == pytest.approx(6.0)
    assert report.max_rel_error < 1e-9


def test_grad_check_skips_relu_kink():
    theta = param([0.0, 1.0, -2.0])
    report = grad_check(lambda: total(relu(theta)), [theta])
    assert report.coordinates.tolist() == [1, 2]
    assert report.skipped == 1
    assert report.max_rel_error < 1e-9


def test_grad_check_skips_pooling_ties():
    theta = param([5.0, 5.0, 1.0, 3.0])
    report = grad_check(lambda: total(max_pool(theta, 2)), [theta])
    assert report.coordinates.tolist() == [2, 3]
    assert report.skipped == 2
    assert report.max_rel_error < 1e-9


def test_grad_check_refills_skipped_draws():
    theta = param([0.0, 0.0, 1.0, -2.0, 3.0])
    for seed in range(5):
        report = grad_check(lambda: total(relu(theta)), [theta], coords=3, seed=seed)
        assert report.coordinates.tolist() == [2, 3, 4]
        assert report.skipped <= 2


def _square_dropping_last(x: Tensor) -> Tensor:
    values = x.values

    def backward(g):
        grad = 2 * values * g
        grad[..., -1] = 0
        return (grad,)

    return tensor_module._emit("square", (x,), values * values, backward)


def test_grad_check_catches_a_zeroed_coordinate():
    theta = param([1.0, -0.5, 2.0])
    report = grad_check(lambda: total(_square_dropping_last(theta)), [theta])
    assert report.coordinates.tolist() == [0, 1, 2]
    assert report.analytic[2] == 0.0
    assert report.numeric[2] == pytest.approx(4.0)
    assert report.max_rel_error == pytest.approx(1.0)


def test_every_leaf_receives_a_gradient():
    used, unused = param([1.0, 2.0]), param([3.0])
    with Graph() as graph:
        loss = total(mul(used, used))
        graph.backward(loss)
    assert unused.grad is None  # never touched by the graph
    with Graph() as graph:
        relu(unused)  # recorded but never reaches the loss
        loss = total(mul(used, used))
        graph.backward(loss)
    assert unused.grad.tolist() == [0.0]


def test_ops_outside_graph_record_nothing():
    x = param([1.0, 2.0])
    out = relu(x)
    assert not out.requires_grad
    with Graph() as graph:
        out = relu(x)
    assert out.requires_grad and len(graph.nodes) == 1


def test_backward_needs_scalar():
    x = param([1.0, 2.0])
    with Graph() as graph:
        out = relu(x)
        with pytest.raises(DimensionError):
            graph.backward(out)


def test_shape_ops_gradients():
    rng = np.random.default_rng(9)
    x = param(rng.standard_normal((2, 3, 4)))
    report = grad_check(lambda: weighted_sum(take(reshape(x, (6, 4)), 2, axis=0)), [x])
    assert report.max_rel_error < 1e-8


def naive_filter_and_sum(frames, bank):
    F, C, M = frames.shape
    _, P, N = bank.shape
    out = np.zeros((F, P, M - N + 1))
    for f in range(F):
        for p in range(P):
            for c in range(C):
                out[f, p] += np.convolve(frames[f, c], bank[c, p], "valid")
    return out


def test_filter_and_sum_matches_convolve():
    rng = np.random.default_rng(10)
    frames, bank = rng.standard_normal((3, 2, 40)), rng.standard_normal((2, 5, 11))
    out = filter_and_sum(Tensor(frames), Tensor(bank)).values
    np.testing.assert_allclose(out, naive_filter_and_sum(frames, bank), rtol=0, atol=1e-10)


def test_filter_and_sum_gradients():
    rng = np.random.default_rng(11)
    frames, bank = param(rng.standard_normal((2, 3, 17))), param(rng.standard_normal((3, 2, 6)))
    report = grad_check(lambda: weighted_sum(filter_and_sum(frames, bank)), [frames, bank])
    assert report.max_rel_error < 1e-6


def test_conv1d_maps_matches_loop_and_gradients():
    rng = np.random.default_rng(12)
    x, k, b = param(rng.standard_normal((2, 12))), param(rng.standard_normal((3, 4))), param(rng.standard_normal(3))
    out = conv1d_maps(x, k, b).values
    for row in range(2):
        for m in range(3):
            np.testing.assert_allclose(out[row, m], np.convolve(x.values[row], k.values[m], "valid") + b.values[m], atol=1e-12)
    assert grad_check(lambda: weighted_sum(conv1d_maps(x, k, b)), [x, k, b]).max_rel_error < 1e-6


def test_flat_view_round_trip():
    a, b = param(np.arange(6.0).reshape(2, 3)), param([7.0, 8.0])
    view = FlatView([a, b])
    assert view.size == 8
    flat = view.values()
    np.testing.assert_array_equal(flat, np.arange(9.0)[[0, 1, 2, 3, 4, 5, 7, 8]])
    view.set(6, -1.0)
    assert b.values[0] == -1.0 and view.get(6) == -1.0
    view.assign(flat)
    np.testing.assert_array_equal(view.values(), flat)
    with pytest.raises(DimensionError):
        view.get(8)
