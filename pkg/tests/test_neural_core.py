import numpy as np
import pytest

from dynimp.core.neural_core import (
    AdamConfig,
    AdamState,
    DenseParams,
    LstmParams,
    LstmState,
    adam_step,
    clip_global_norm,
    dense_backward,
    dense_forward,
    grad_check,
    lstm_backward,
    lstm_cell_forward,
    lstm_sequence_forward,
)
from dynimp.exceptions import NonDeterministicClosureError, ShapeMismatchError


def lstm_closure(xs, weights):
    """Loss sum(h_t * weights) through the whole sequence."""
    def closure(named):
        params = LstmParams.from_named(named)
        hs, caches, _ = lstm_sequence_forward(params, xs)
        grads, _ = lstm_backward(params, caches, weights)
        return float(np.sum(hs * weights)), grads.named()
    return closure


class TestLstm:
    def test_zero_parameter_step(self):
        params = LstmParams.zeros(input_size=3, hidden_size=2)
        state, cache = lstm_cell_forward(params, np.array([0.3, -1.0, 2.0]), LstmState(np.zeros(2), np.ones(2)))
        # every gate sits at 0.5 and the candidate at 0, so c = 0.5 and h = 0.5 * tanh(0.5)
        assert state.c == pytest.approx([0.5, 0.5])
        assert state.h == pytest.approx([0.2311, 0.2311], abs=1e-4)
        assert cache.i == pytest.approx([0.5, 0.5])

    def test_initialisation(self, rng):
        params = LstmParams.initialize(3, 4, rng)
        assert params.b_g.tolist() == [1.0] * 4
        assert params.b_i.tolist() == [0.0] * 4
        assert np.abs(params.w_c).max() <= 1.0 / np.sqrt(7)
        assert np.abs(params.u_o).max() <= 1.0 / np.sqrt(7)

    def test_sequence_shapes(self, rng):
        params = LstmParams.initialize(3, 4, rng)
        hs, caches, final = lstm_sequence_forward(params, rng.normal(size=(2, 5, 3)))
        assert hs.shape == (2, 5, 4)
        assert len(caches) == 5
        assert np.array_equal(final.h, hs[:, -1, :])

    def test_backward_matches_finite_differences(self, rng):
        for _ in range(5):
            steps, inputs, hidden = rng.integers(1, 6), rng.integers(1, 4), rng.integers(1, 5)
            params = LstmParams.initialize(inputs, hidden, rng)
            closure = lstm_closure(rng.normal(size=(steps, inputs)), rng.normal(size=(steps, hidden)))
            report = grad_check(closure, params.named())
            assert report.passed, report.worst

    def test_batched_backward_matches_finite_differences(self, rng):
        params = LstmParams.initialize(3, 4, rng)
        closure = lstm_closure(rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 4)))
        report = grad_check(closure, params.named())
        assert report.passed, report.worst

    def test_batched_gradient_is_sum_of_single_gradients(self, rng):
        params = LstmParams.initialize(2, 3, rng)
        xs = rng.normal(size=(3, 4, 2))
        dhs = rng.normal(size=(3, 4, 3))
        batched, _ = lstm_backward(params, lstm_sequence_forward(params, xs)[1], dhs)
        singles = [lstm_backward(params, lstm_sequence_forward(params, xs[b])[1], dhs[b])[0] for b in range(3)]
        for name, value in batched.named().items():
            assert np.allclose(value, sum(s.named()[name] for s in singles), rtol=1e-12, atol=1e-12), name

    def test_input_gradient(self, rng):
        params = LstmParams.initialize(2, 3, rng)
        xs = rng.normal(size=(4, 2))
        weights = rng.normal(size=(4, 3))
        hs, caches, _ = lstm_sequence_forward(params, xs)
        _, dxs = lstm_backward(params, caches, weights)
        eps = 1e-6
        bumped = xs.copy()
        bumped[1, 0] += eps
        plus = np.sum(lstm_sequence_forward(params, bumped)[0] * weights)
        bumped[1, 0] -= 2 * eps
        minus = np.sum(lstm_sequence_forward(params, bumped)[0] * weights)
        assert dxs[1, 0] == pytest.approx((plus - minus) / (2 * eps), rel=1e-5, abs=1e-8)

    def test_shape_mismatch(self):
        params = LstmParams.zeros(3, 2)
        with pytest.raises(ShapeMismatchError):
            lstm_cell_forward(params, np.zeros(4), LstmState.zeros(2))


class TestDense:
    def test_initialisation(self, rng):
        layer = DenseParams.initialize(16, 3, rng)
        assert layer.W.shape == (3, 16)
        assert np.abs(layer.W).max() <= 0.25
        assert layer.b.tolist() == [0.0] * 3

    @pytest.mark.parametrize("activation", ["identity", "sigmoid", "tanh"])
    def test_backward_matches_finite_differences(self, rng, activation):
        layer = DenseParams.initialize(4, 3, rng)
        x = rng.normal(size=(5, 4))
        weights = rng.normal(size=(5, 3))

        def closure(named):
            params = DenseParams.from_named(named)
            y, cache = dense_forward(params, x, activation)
            grads, _ = dense_backward(params, cache, weights)
            return float(np.sum(y * weights)), grads.named()

        assert grad_check(closure, layer.named()).passed

    def test_time_distributed_weight_gradient(self, rng):
        layer = DenseParams.initialize(4, 3, rng)
        x = rng.normal(size=(2, 5, 4))
        dy = rng.normal(size=(2, 5, 3))
        _, cache = dense_forward(layer, x)
        grads, dx = dense_backward(layer, cache, dy)
        assert grads.W.shape == (3, 4)
        assert np.allclose(grads.W, np.einsum("bth,btd->hd", dy, x))
        assert np.allclose(grads.b, dy.sum(axis=(0, 1)))
        assert dx.shape == x.shape


class TestGradCheck:
    def test_detects_wrong_gradient(self):
        def closure(named):
            w = named["w"]
            return float(np.sum(w ** 2)), {"w": 4.0 * w}
        report = grad_check(closure, {"w": np.array([1.0, -2.0])})
        assert not report.passed
        assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)
        assert report.checked == 2

    def test_sampling(self, rng):
        def closure(named):
            w = named["w"]
            return float(np.sum(w ** 2)), {"w": 2.0 * w}
        report = grad_check(closure, {"w": rng.normal(size=(6, 6))}, samples=10, rng=rng)
        assert report.checked == 10
        assert report.passed

    def test_non_deterministic_closure(self):
        calls = []

        def closure(named):
            calls.append(1)
            return float(len(calls)), {"w": np.zeros(1)}
        with pytest.raises(NonDeterministicClosureError):
            grad_check(closure, {"w": np.zeros(1)})

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda named: (0.0, named), {"w": np.zeros(1)}, epsilon=0.0)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"p": np.array([1.0, 1.0])}
        grads = {"p": np.array([0.5, -2.0])}
        state = AdamState.zeros_like(params)
        updated, new_state = adam_step(params, grads, state, AdamConfig(lr=0.1))
        assert updated["p"] == pytest.approx([0.9, 1.1], abs=1e-6)
        assert new_state.step == 1
        assert params["p"].tolist() == [1.0, 1.0]
        assert state.step == 0

    def test_constant_gradient_steps_approach_learning_rate(self):
        params = {"p": np.array([0.0, 0.0])}
        grads = {"p": np.array([0.3, -5.0])}
        state = AdamState.zeros_like(params)
        hyper = AdamConfig(lr=0.01)
        for _ in range(200):
            previous = params["p"]
            params, state = adam_step(params, grads, state, hyper)
        assert params["p"] - previous == pytest.approx([-0.01, 0.01], rel=1e-6)
        assert params["p"] == pytest.approx([-2.0, 2.0], rel=1e-6)

    def test_mismatched_names(self):
        params = {"p": np.zeros(1)}
        with pytest.raises(ShapeMismatchError):
            adam_step(params, {"q": np.zeros(1)}, AdamState.zeros_like(params), AdamConfig())

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        assert clipped["a"] == pytest.approx([0.6])
        assert clipped["b"] == pytest.approx([0.8])
        unchanged, _ = clip_global_norm(grads, 10.0)
        assert unchanged is grads
