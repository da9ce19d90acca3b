import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seaco.layers import init_lstm, init_mha, lstm_cell, lstm_forward, multi_head_attention
from seaco.numerics import (
    ConfigurationError,
    DimensionError,
    ModelParams,
    NumericError,
    Parameter,
    Tensor,
    cross_entropy,
    grad_check,
    layer_norm,
    matmul,
    softmax,
    tsum,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestMatmul:
    def test_identity(self, rng):
        M = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(M)).data, M)

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_grad_of_sum_is_ones_times_bT(self, rng):
        a = Parameter("a", rng.standard_normal((4, 5)))
        b = Parameter("b", rng.standard_normal((5, 2)))
        tsum(matmul(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.ones((4, 2)) @ b.data.T)
        assert grad_check(lambda: tsum(matmul(a, b)), [a, b]) < 1e-6

    def test_batched_broadcast_grad(self, rng):
        a = Parameter("a", rng.standard_normal((2, 3, 4)))
        w = Parameter("w", rng.standard_normal((4, 5)))
        assert grad_check(lambda: tsum(matmul(a, w) * matmul(a, w)), [a, w]) < 1e-6

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 1\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 1))))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_stabilised(self):
        y = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-300)

    def test_jacobian_matches_finite_differences(self, rng):
        x = Parameter("x", rng.standard_normal(7))
        weights = rng.standard_normal(7)
        # a random linear functional probes every row of the Jacobian
        assert grad_check(lambda: tsum(softmax(x) * weights), [x]) < 1e-6

    def test_empty_axis(self):
        with pytest.raises(DimensionError):
            softmax(Tensor(np.zeros((3, 0))), axis=-1)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
    def test_rows_are_probability_vectors(self, x):
        y = softmax(Tensor(x), axis=-1).data
        assert np.all(y >= 0) and np.all(y <= 1)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


class TestAttention:
    def _params(self, rng, d=8, heads=2):
        p = ModelParams()
        init_mha(p, "att", d, heads, rng)
        for q in p:
            if q.name.endswith(".b"):
                q.data[:] = rng.standard_normal(q.shape) * 0.1
        return p

    def test_single_key_returns_projected_value(self, rng):
        p = self._params(rng)
        v = rng.standard_normal((1, 8))
        expected = (v @ p["att.v.w"].data + p["att.v.b"].data) @ p["att.o.w"].data + p["att.o.b"].data
        for _ in range(3):
            q = rng.standard_normal((5, 8))
            out, w = multi_head_attention(Tensor(q), Tensor(v), Tensor(v), p, "att", 2)
            np.testing.assert_allclose(out.data, np.repeat(expected, 5, axis=0), atol=1e-12)
            np.testing.assert_array_equal(w.data, 1.0)

    def test_self_attention_rows_sum_to_one(self, rng):
        p = ModelParams()
        init_mha(p, "att", 8, 4, rng)
        x = Tensor(rng.standard_normal((6, 8)))
        out, w = multi_head_attention(x, x, x, p, "att", 4)
        assert w.shape == (4, 6, 6)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)

    def test_gradients(self, rng):
        p = self._params(rng)
        q = Parameter("q", rng.standard_normal((2, 3, 8)))
        kv = Parameter("kv", rng.standard_normal((4, 8)))
        probe = rng.standard_normal((2, 3, 8))

        def f():
            out, _ = multi_head_attention(q, kv, kv, p, "att", 2)
            return tsum(out * probe)

        assert grad_check(f, list(p) + [q, kv]) < 1e-4

    def test_indivisible_heads(self, rng):
        with pytest.raises(ConfigurationError):
            init_mha(ModelParams(), "att", 8, 3, rng)
        p = self._params(rng)
        x = Tensor(np.zeros((2, 8)))
        with pytest.raises(ConfigurationError):
            multi_head_attention(x, x, x, p, "att", 3)


class TestLSTM:
    def test_zero_input_zero_params_gives_zero_states(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 4, 5, rng)
        for q in p:
            q.data[:] = 0.0
        hs, h = lstm_forward(Tensor(np.zeros((6, 4))), p, "lstm")
        np.testing.assert_array_equal(hs.data, 0.0)
        np.testing.assert_array_equal(h.data, 0.0)

    def test_single_step_is_one_cell(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 4, 5, rng)
        x = rng.standard_normal((1, 4))
        hs, _ = lstm_forward(Tensor(x), p, "lstm")
        h, _ = lstm_cell(Tensor(x), Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 5))), p, "lstm")
        np.testing.assert_array_equal(hs.data, h.data)

    def test_init_ranges_and_forget_bias(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 4, 5, rng)
        assert np.abs(p["lstm.w_ih"].data).max() <= 0.1
        np.testing.assert_array_equal(p["lstm.b"].data[5:10], 1.0)
        assert not p["lstm.b"].data[:5].any() and not p["lstm.b"].data[10:].any()

    def test_zero_length(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 4, 5, rng)
        hs, _ = lstm_forward(Tensor(np.zeros((0, 4))), p, "lstm")
        assert hs.shape == (0, 5)

    def test_gradients(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 3, 4, rng)
        x = Parameter("x", rng.standard_normal((3, 3)))
        probe = rng.standard_normal((3, 4))
        assert grad_check(lambda: tsum(lstm_forward(x, p, "lstm")[0] * probe), list(p) + [x]) < 1e-4

    def test_masked_lengths_freeze_state(self, rng):
        p = ModelParams()
        init_lstm(p, "lstm", 3, 4, rng)
        x = rng.standard_normal((2, 5, 3))
        _, h = lstm_forward(Tensor(x), p, "lstm", lengths=[5, 2])
        _, h_short = lstm_forward(Tensor(x[1, :2]), p, "lstm")
        np.testing.assert_allclose(h.data[1], h_short.data, atol=1e-14)


def scalar_cross_entropy(logits, targets, ignore):
    total, count = 0.0, 0
    for row, t in zip(logits, targets):
        if t == ignore:
            continue
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[t]
        count += 1
    return total / count if count else 0.0


class TestCrossEntropy:
    def test_certain_prediction_has_zero_loss(self):
        logits = np.full((2, 4), -1e4)
        logits[0, 1] = logits[1, 3] = 0.0
        assert cross_entropy(Tensor(logits), [1, 3]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_give_log_v(self):
        assert cross_entropy(Tensor(np.zeros((3, 8))), [0, 4, 7]).item() == pytest.approx(np.log(8))

    def test_matches_scalar_loop(self, rng):
        logits = rng.standard_normal((5, 8)) * 3
        targets = [1, 0, 7, 0, 3]
        got = cross_entropy(Tensor(logits), targets, ignore_index=0).item()
        assert abs(got - scalar_cross_entropy(logits, targets, 0)) < 1e-12

    def test_gradient_is_softmax_minus_onehot(self, rng):
        logits = Parameter("z", rng.standard_normal((5, 8)))
        targets = np.array([1, 0, 7, 0, 3])
        cross_entropy(logits, targets, ignore_index=0).backward()
        p = np.exp(logits.data) / np.exp(logits.data).sum(1, keepdims=True)
        expected = p - np.eye(8)[targets]
        expected[targets == 0] = 0.0
        np.testing.assert_allclose(logits.grad, expected / 3, atol=1e-14)

    def test_all_ignored(self, rng):
        logits = Parameter("z", rng.standard_normal((3, 4)))
        loss = cross_entropy(logits, [0, 0, 0], ignore_index=0)
        assert loss.item() == 0.0
        loss.backward()
        np.testing.assert_array_equal(logits.grad, 0.0)

    def test_target_out_of_range(self):
        with pytest.raises(DimensionError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        p = Parameter("p", rng.standard_normal((3, 4)))
        assert grad_check(lambda: tsum(p * p), [p]) < 1e-8

    def test_frozen_parameter_reports_zero(self, rng):
        p = Parameter("p", rng.standard_normal(3), trainable=False)
        q = Parameter("q", rng.standard_normal(3))
        f = lambda: tsum(p * q)  # noqa: E731
        assert grad_check(f, [p, q]) < 1e-8
        f().backward()
        assert p.grad is None

    def test_non_finite_raises(self):
        p = Parameter("p", [1.0])
        with pytest.raises(NumericError):
            grad_check(lambda: tsum(p * np.inf), [p])

    def test_layer_norm(self, rng):
        x = Parameter("x", rng.standard_normal((3, 6)))
        g = Parameter("g", rng.standard_normal(6))
        b = Parameter("b", rng.standard_normal(6))
        probe = rng.standard_normal((3, 6))
        assert grad_check(lambda: tsum(layer_norm(x, g, b) * probe), [x, g, b]) < 1e-5


def test_forward_is_deterministic(rng):
    p = ModelParams()
    init_mha(p, "att", 8, 2, rng)
    x = Tensor(rng.standard_normal((2, 5, 8)))
    a, _ = multi_head_attention(x, x, x, p, "att", 2)
    b, _ = multi_head_attention(x, x, x, p, "att", 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_duplicate_parameter_names_rejected():
    p = ModelParams()
    p.new("a", [1.0])
    with pytest.raises(KeyError):
        p.new("a", [2.0])
