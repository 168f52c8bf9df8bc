import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacap.errors import InputError, ShapeError
from adacap.net import MlpParams, backward, forward, init_params
from oracles import central_diff, rel_err


def _loop_layer(a, w, b):
    """Straight-line ReLU(a @ w + b) with Python loops."""
    out = []
    for row in a:
        vals = []
        for j in range(len(b)):
            z = b[j] + sum(row[k] * w[k][j] for k in range(len(row)))
            vals.append(z if z > 0 else 0.0)
        out.append(vals)
    return out


class TestInit:
    def test_biases_zero(self):
        params = init_params(3, 4, 1, seed=7)
        for _, b in params.layers:
            assert np.all(b == 0.0)

    def test_deterministic(self):
        a = init_params(3, 4, 1, seed=7)
        b = init_params(3, 4, 1, seed=7)
        for (wa, _), (wb, _) in zip(a.layers, b.layers):
            assert np.array_equal(wa, wb)

    def test_glorot_interval(self):
        params = init_params(8, 8, 2, seed=3)
        bound = np.sqrt(6 / 16)
        assert bound == pytest.approx(0.6124, abs=1e-4)
        w1 = params.layers[0][0]
        assert np.all(np.abs(w1) < bound)

    def test_shapes(self):
        params = init_params(5, 7, 3, seed=0)
        assert [w.shape for w, _ in params.layers] == [(5, 7), (7, 7), (7, 7)]
        assert params.log_lambda is None


class TestForward:
    def test_relu_clips(self):
        params = MlpParams(layers=[(np.eye(2), np.zeros(2))], depth=1, width=2)
        tape = forward(params, [[-1.0, 2.0]])
        assert tape.a_last.tolist() == [[0.0, 2.0]]

    def test_nan_rejected(self):
        params = init_params(2, 3, 1, seed=0)
        with pytest.raises(InputError):
            forward(params, [[np.nan, 1.0]])

    def test_shape_mismatch(self):
        params = init_params(2, 3, 1, seed=0)
        with pytest.raises(ShapeError):
            forward(params, np.ones((4, 3)))

    def test_matches_loop_oracle(self):
        params = init_params(2, 3, 2, seed=5)
        params.layers[0][1][:] = [0.1, -0.2, 0.3]
        x = [[1.0, 0.0], [0.0, 1.0]]
        tape = forward(params, x)
        a = x
        for i, (w, b) in enumerate(params.layers, start=1):
            a = _loop_layer(a, w.tolist(), b.tolist())
            np.testing.assert_allclose(tape.activations[i], a, rtol=0, atol=1e-15)

    def test_tape_starts_with_input(self):
        params = init_params(3, 4, 2, seed=1)
        x = np.arange(6.0).reshape(2, 3)
        tape = forward(params, x)
        assert np.array_equal(tape.activations[0], x)
        assert all(np.all(a >= 0) for a in tape.activations[1:])

    def test_deterministic(self):
        params = init_params(3, 4, 2, seed=1)
        x = np.random.default_rng(0).standard_normal((5, 3))
        t1, t2 = forward(params, x), forward(params, x)
        for a, b in zip(t1.activations, t2.activations):
            assert np.array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(d=st.integers(1, 6), width=st.integers(1, 6), depth=st.integers(1, 4), n=st.integers(1, 5))
    def test_shape_algebra(self, d, width, depth, n):
        params = init_params(d, width, depth, seed=0)
        tape = forward(params, np.ones((n, d)))
        assert tape.a_last.shape == (n, width)


class TestBackward:
    def test_linear_layer(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(1, 2, size=(4, 3))
        params = MlpParams(layers=[(rng.uniform(0.1, 1, size=(3, 2)), np.zeros(2))], depth=1, width=2)
        tape = forward(params, x)
        assert np.all(tape.pre_activations[0] > 0)
        ((dw, db),) = backward(tape, params, np.ones((4, 2)))
        np.testing.assert_allclose(dw, x.T @ np.ones((4, 2)))
        np.testing.assert_allclose(db, [4.0, 4.0])

    def test_zero_preactivation_blocks_gradient(self):
        params = MlpParams(layers=[(np.array([[1.0, 1.0]]), np.array([0.0, 1.0]))], depth=1, width=2)
        tape = forward(params, [[0.0]])
        ((dw, db),) = backward(tape, params, np.ones((1, 2)))
        assert db[0] == 0.0 and db[1] == 1.0
        assert dw[0, 0] == 0.0

    def test_upstream_shape(self):
        params = init_params(2, 3, 1, seed=0)
        tape = forward(params, np.ones((4, 2)))
        with pytest.raises(ShapeError):
            backward(tape, params, np.ones((4, 2)))

    @pytest.mark.parametrize("activation", ["relu", "selu"])
    @pytest.mark.parametrize("seed", range(6))
    def test_finite_differences(self, activation, seed):
        rng = np.random.default_rng(seed)
        n, d, width, depth = rng.integers(2, 16), rng.integers(1, 8), rng.integers(1, 8), rng.integers(1, 4)
        params = init_params(int(d), int(width), int(depth), activation, seed=seed)
        for _, b in params.layers:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.standard_normal((int(n), int(d)))
        up = rng.standard_normal((int(n), int(width)))
        tape = forward(params, x)
        # stay away from the ReLU kink
        assert min(np.min(np.abs(z)) for z in tape.pre_activations) > 1e-4
        grads = backward(tape, params, up)

        def f():
            return float(np.sum(up * forward(params, x).a_last))

        for (w, b), (dw, db) in zip(params.layers, grads):
            assert rel_err(dw, central_diff(f, w, 1e-5)) < 1e-4
            assert rel_err(db, central_diff(f, b, 1e-5)) < 1e-4


def test_json_round_trip():
    params = init_params(3, 4, 2, seed=11)
    params.log_lambda = np.log(123.456)
    text = json.dumps(params.to_dict())
    again = MlpParams.from_dict(json.loads(text))
    assert again.log_lambda == params.log_lambda
    for (wa, ba), (wb, bb) in zip(params.layers, again.layers):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)
    assert set(json.loads(text)) == {"depth", "width", "activation", "log_lambda", "layers"}
