import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seaco.cif import (
    DegenerateInputError,
    fire_counts,
    init_predictor,
    integrate_and_fire,
    predict_weights,
    quantity_loss,
    scale_weights,
)
from seaco.numerics import DimensionError, ModelParams, Parameter, Tensor, grad_check, no_grad, tsum


def sequential_cif(e, alpha, threshold=1.0):
    """Frame-by-frame accumulate/split/fire loop; residual below threshold dropped."""
    fired, acc, vec = [], 0.0, np.zeros(e.shape[1])
    for frame, a in zip(e, alpha):
        while acc + a >= threshold - 1e-12:
            part = threshold - acc
            fired.append(vec + part * frame)
            a -= part
            acc, vec = 0.0, np.zeros(e.shape[1])
        acc += a
        vec = vec + a * frame
    return np.array(fired).reshape(len(fired), e.shape[1])


class TestIntegrateAndFire:
    def test_worked_example(self):
        e = Tensor(np.eye(5))
        alpha = Tensor([0.4, 0.8, 0.3, 0.5, 0.2])
        out = integrate_and_fire(e, alpha)
        assert out.fired_count == 2
        np.testing.assert_allclose(out.E.data[0], [0.4, 0.6, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(out.E.data[1], [0, 0.2, 0.3, 0.5, 0], atol=1e-12)

    def test_unit_weights_are_identity(self):
        e = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = integrate_and_fire(Tensor(e), Tensor([1.0, 1.0]))
        assert out.fired_count == 2
        np.testing.assert_allclose(out.E.data, e, atol=1e-12)

    def test_below_threshold_never_fires(self):
        out = integrate_and_fire(Tensor(np.ones((3, 2))), Tensor([0.2, 0.3, 0.4]))
        assert out.fired_count == 0 and out.E.shape == (0, 2)

    def test_random_instances_match_sequential_loop(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            T = int(rng.integers(1, 20))
            e = rng.standard_normal((T, 3))
            alpha = rng.uniform(0, 1, T)
            ref = sequential_cif(e, alpha)
            got = integrate_and_fire(Tensor(e), Tensor(alpha))
            assert got.fired_count == len(ref)
            if len(ref):
                worst = max(worst, np.abs(got.E.data - ref).max())
        assert worst < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
    def test_fired_rows_are_unit_weight_combinations(self, alpha):
        T = len(alpha)
        out = integrate_and_fire(Tensor(np.eye(T)), Tensor(alpha))
        assert out.fired_count == fire_counts(np.array(alpha))
        # on one-hot frames each fired row holds its combination weights
        if out.fired_count:
            np.testing.assert_allclose(out.E.data.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(out.E.data >= -1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            integrate_and_fire(Tensor(np.zeros((3, 2))), Tensor([0.5, 0.5]))

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            integrate_and_fire(Tensor(np.zeros((2, 2))), Tensor([0.5, -0.1]))

    def test_tail_firing(self):
        e = Tensor(np.eye(3))
        with no_grad():
            out = integrate_and_fire(e, Tensor([0.6, 0.6, 0.5]), tail_threshold=0.5)
        # residual 0.7 fires and is renormalised to unit weight
        assert out.fired_count == 2
        np.testing.assert_allclose(out.E.data[1], [0, 0.2 / 0.7, 0.5 / 0.7], atol=1e-12)

    def test_tail_firing_requires_no_grad(self):
        alpha = Parameter("a", [0.6, 0.6])
        with pytest.raises(ValueError):
            integrate_and_fire(Tensor(np.eye(2)), alpha, tail_threshold=0.5)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        e = Parameter("e", rng.standard_normal((6, 4)))
        alpha = Parameter("alpha", [0.35, 0.5, 0.45, 0.3, 0.6, 0.55])
        probe = rng.standard_normal((2, 4))
        f = lambda: tsum(integrate_and_fire(e, alpha, n_fire=2).E * probe)  # noqa: E731
        assert grad_check(f, [e, alpha]) < 1e-6


class TestScaleWeights:
    def test_doubles(self):
        out = scale_weights(Tensor([0.5, 0.5]), 2)
        np.testing.assert_allclose(out.data, [1.0, 1.0])

    def test_sum_hits_target(self):
        out = scale_weights(Tensor([0.3, 0.5, 0.3]), 2)
        assert abs(out.data.sum() - 2.0) < 1e-9

    def test_scaled_weights_fire_target_count(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            T, L = int(rng.integers(2, 20)), int(rng.integers(1, 8))
            a = scale_weights(Tensor(rng.uniform(0.01, 1, T)), L)
            assert fire_counts(a.data) == L

    def test_zero_sum(self):
        with pytest.raises(DegenerateInputError):
            scale_weights(Tensor([0.0, 0.0]), 1)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            scale_weights(Tensor([0.5]), 0)

    def test_gradient(self):
        a = Parameter("a", [0.2, 0.7, 0.4])
        probe = np.array([1.0, -2.0, 0.5])
        assert grad_check(lambda: tsum(scale_weights(a, 3) * probe), [a]) < 1e-7


class TestQuantityLoss:
    def test_exact_count(self):
        assert quantity_loss(Tensor([0.5, 0.5]), 1).item() == 0.0

    def test_overshoot(self):
        assert quantity_loss(Tensor([0.6, 0.6]), 1).item() == pytest.approx(0.2)

    def test_batch_mean(self):
        loss = quantity_loss(Tensor([[0.6, 0.6], [0.5, 0.0]]), [1, 1])
        assert loss.item() == pytest.approx(0.35)


class TestPredictWeights:
    def _params(self, d=4, seed=0):
        p = ModelParams()
        init_predictor(p, d, np.random.default_rng(seed))
        return p

    def test_zero_params_give_half(self):
        p = self._params()
        for q in p:
            q.data[:] = 0.0
        a = predict_weights(Tensor(np.random.default_rng(0).standard_normal((5, 4))), p)
        np.testing.assert_array_equal(a.data, 0.5)

    def test_open_unit_interval(self):
        p = self._params()
        a = predict_weights(Tensor(np.random.default_rng(1).standard_normal((3, 7, 4))), p)
        assert np.all((a.data > 0) & (a.data < 1))

    def test_padding_gets_zero_weight(self):
        p = self._params()
        x = np.random.default_rng(2).standard_normal((2, 6, 4))
        a = predict_weights(Tensor(x), p, lengths=[6, 3])
        np.testing.assert_array_equal(a.data[1, 3:], 0.0)
        # padding does not leak into the valid frames
        alone = predict_weights(Tensor(x[1, :3]), p)
        np.testing.assert_allclose(a.data[1, :3], alone.data, atol=1e-14)

    def test_sum_gradient(self):
        p = self._params(seed=4)
        e = Tensor(np.random.default_rng(4).standard_normal((6, 4)))
        assert grad_check(lambda: tsum(predict_weights(e, p)), list(p)) < 1e-5
