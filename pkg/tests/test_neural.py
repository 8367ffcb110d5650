import math

import numpy as np
import pytest

from fishinteract import neural
from fishinteract.dli import dli_spec, mli_spec
from gradcheck import tiny_network, worst_relative_error


def test_dense_examples():
    layer = neural.Dense(2, 2, "none")
    layer.W[...] = np.eye(2)
    layer.b[...] = 0
    np.testing.assert_array_equal(neural.dense_forward(layer, [1, 2]), [1, 2])
    layer.activation = "relu"
    np.testing.assert_array_equal(neural.dense_forward(layer, [-1, 2]), [0, 2])
    flat = neural.Dense(2, 1, "tanh")
    flat.W[...] = 0
    flat.b[...] = 0
    assert neural.dense_forward(flat, [3.0, -7.0])[0] == 0.0


def test_dense_shape_mismatch():
    with pytest.raises(neural.ShapeError):
        neural.dense_forward(neural.Dense(3, 2), [1.0, 2.0])


def test_lstm_zero_weights():
    layer = neural.LSTM(3, 4, rng=np.random.default_rng(0))
    for p in layer.params():
        p[...] = 0
    out = neural.lstm_forward(layer, np.random.default_rng(1).normal(size=(6, 3)))
    np.testing.assert_array_equal(out, 0)


def test_lstm_causality_and_bounds(rng):
    layer = neural.LSTM(3, 5, rng=rng)
    seq = rng.normal(size=(7, 3)) * 5
    full = neural.lstm_forward(layer, seq)
    for T in range(1, 8):
        np.testing.assert_allclose(neural.lstm_forward(layer, seq[:T]), full[:T], rtol=0, atol=1e-15)
    assert np.all(np.abs(full) < 1)


def test_lstm_empty_sequence():
    with pytest.raises(neural.ShapeError):
        neural.lstm_forward(neural.LSTM(3, 2), np.empty((0, 3)))


def test_lstm_forget_bias():
    layer = neural.LSTM(3, 4)
    h = layer.hidden
    np.testing.assert_array_equal(layer.b[h : 2 * h], 1.0)


@pytest.mark.parametrize("eps,sigma,expected", [((0, 0), (1, 1), 0.0), ((2, 0), (1, 1), 2.0),
                                                ((0, 0), (math.e, math.e), 2.0)])
def test_nll_examples(eps, sigma, expected):
    assert neural.nll_loss(eps, sigma) == pytest.approx(expected, abs=1e-12)


def test_nll_rejects_bad_sigma():
    with pytest.raises(ValueError):
        neural.nll_loss((0, 0), (1, 0))


def test_nll_gradient_examples():
    d_eps, d_sigma = neural.nll_grad((0.0, 0.0), (1.0, 2.0))
    np.testing.assert_array_equal(d_eps, 0)
    assert d_sigma[0] == 1.0


def test_batch_loss_matches_per_sample(rng):
    out = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 2))
    loss, _ = neural.gaussian_nll(out, y)
    per = [neural.nll_loss(out[k, :2] - y[k], np.exp(out[k, 2:])) for k in range(6)]
    assert loss == pytest.approx(np.mean(per), rel=1e-12)


def test_backward_without_forward():
    net = neural.build_network(dli_spec(3, (3, 3)))
    with pytest.raises(neural.NoForwardCacheError):
        net.backward(np.zeros((1, 4)))


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    net, X, y = tiny_network(seed)
    assert worst_relative_error(net, X, y) < 1e-4


def test_mli_gradients():
    rng = np.random.default_rng(5)
    net = neural.build_network(mli_spec(4, (3, 5)), rng)
    X = rng.uniform(-1, 1, (4, 11))
    y = rng.normal(size=(4, 2))
    assert worst_relative_error(net, X, y) < 1e-4


def test_numerical_hygiene(rng):
    net = neural.build_network(dli_spec(8, (8, 8)), rng)
    for p in net.params():
        p[...] = rng.uniform(-1, 1, p.shape)
    X = rng.uniform(-10, 10, (16, 5, 11))
    out = net.forward(X)
    loss, grad = neural.gaussian_nll(np.clip(out, -20, 20), rng.normal(size=(16, 2)))
    net.zero_grad()
    net.backward(grad)
    assert np.all(np.isfinite(out)) and np.isfinite(loss)
    assert all(np.all(np.isfinite(g)) for g in net.grads())


def test_adam_zero_gradient():
    p = [np.array([1.0, -2.0])]
    opt = neural.Adam(p, lr=0.1)
    opt.step(p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = [np.zeros(3)]
    opt = neural.Adam(p, lr=1e-3)
    opt.step(p, [np.full(3, 0.7)])
    np.testing.assert_allclose(p[0], -1e-3, rtol=1e-6)


def test_adam_decay_and_determinism():
    a, b = [np.ones(2)], [np.ones(2)]
    oa, ob = neural.Adam(a, lr=1e-2, decay=0.5), neural.Adam(b, lr=1e-2, decay=0.5)
    for k in range(4):
        g = [np.array([0.3, -1.0]) * (k + 1)]
        oa.step(a, g)
        ob.step(b, g)
    np.testing.assert_array_equal(a[0], b[0])
    assert oa.current_lr() == pytest.approx(1e-2 / 3)


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    with pytest.raises(neural.ShapeError):
        neural.Adam(p).step(p, [np.zeros(2)])


def test_loss_halves_in_200_steps(rng):
    net = neural.build_network(dli_spec(8, (8, 8)), rng)
    X = rng.uniform(-1, 1, (64, 5, 11))
    y = X[:, -1, :2] * 3 + 1
    params = net.params()
    opt = neural.Adam(params, lr=1e-2, decay=0)
    first = None
    for _ in range(200):
        net.zero_grad()
        loss, grad = neural.gaussian_nll(net.forward(X), y)
        first = loss if first is None else first
        net.backward(grad)
        opt.step(params, net.grads())
    assert loss <= 0.5 * first


def test_topology_parameter_counts():
    assert neural.build_network(dli_spec()).n_params() == 195_588
    assert neural.build_network(mli_spec()).n_params() == 34_948


def test_checkpoint_round_trip(tmp_path, rng):
    net = neural.build_network(dli_spec(4, (3, 3)), rng)
    neural.save_checkpoint(tmp_path / "a.npz", net, {"seed": 3})
    neural.save_checkpoint(tmp_path / "b.npz", net, {"seed": 3})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back, meta = neural.load_checkpoint(tmp_path / "a.npz", expected_spec=dli_spec(4, (3, 3)))
    assert meta == {"seed": 3}
    for p, q in zip(net.params(), back.params()):
        np.testing.assert_array_equal(p, q)
    with pytest.raises(neural.ShapeError):
        neural.load_checkpoint(tmp_path / "a.npz", expected_spec=dli_spec(5, (3, 3)))
