"""A small float64 neural-network stack: Dense and LSTM layers with exact
backpropagation (through time for the LSTM), Adam, and the diagonal Gaussian
negative log-likelihood.

Arrays are batch-first: sequences are (B, T, F), vectors are (B, F).
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NoForwardCacheError(RuntimeError):
    pass


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "none": (lambda z: z, lambda z, a: np.ones_like(z)),
}


class Dense:
    kind = "dense"

    def __init__(self, n_in, n_out, activation="none", rng=None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = int(n_in), int(n_out), activation
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, (n_out, n_in))
        self.b = rng.uniform(-bound, bound, n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        a = _ACTIVATIONS[self.activation][0](z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad):
        if self._cache is None:
            raise NoForwardCacheError("backward called before forward")
        x, z, a = self._cache
        dz = grad * _ACTIVATIONS[self.activation][1](z, a)
        x2 = x.reshape(-1, self.n_in)
        dz2 = dz.reshape(-1, self.n_out)
        self.dW += dz2.T @ x2
        self.db += dz2.sum(axis=0)
        return dz @ self.W


class LSTM:
    """Standard LSTM; gate blocks are stacked in the order input, forget, candidate, output."""

    kind = "lstm"

    def __init__(self, n_in, hidden, return_sequences=True, rng=None):
        self.n_in, self.hidden, self.return_sequences = int(n_in), int(hidden), bool(return_sequences)
        rng = rng if rng is not None else np.random.default_rng(0)
        H = self.hidden
        bound = 1.0 / np.sqrt(n_in + H)
        self.Wx = rng.uniform(-bound, bound, (4 * H, n_in))
        self.Wh = rng.uniform(-bound, bound, (4 * H, H))
        self.b = rng.uniform(-bound, bound, 4 * H)
        self.b[H : 2 * H] = 1.0
        self.dWx = np.zeros_like(self.Wx)
        self.dWh = np.zeros_like(self.Wh)
        self.db = np.zeros_like(self.b)
        self._cache = None

    @property
    def n_out(self):
        return self.hidden

    def params(self):
        return [self.Wx, self.Wh, self.b]

    def grads(self):
        return [self.dWx, self.dWh, self.db]

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.hidden,
                "return_sequences": self.return_sequences}

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(f"LSTM expects (B, T, {self.n_in}) input, got {x.shape}")
        B, T, _ = x.shape
        if T == 0:
            raise ShapeError("LSTM input sequence is empty")
        H = self.hidden
        xz = x @ self.Wx.T + self.b
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, T, H))
        gates = np.empty((B, T, 4 * H))
        cs = np.empty((B, T, H))
        for t in range(T):
            z = xz[:, t] + h @ self.Wh.T
            g = np.empty_like(z)
            g[:, : 2 * H] = sigmoid(z[:, : 2 * H])
            g[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            g[:, 3 * H :] = sigmoid(z[:, 3 * H :])
            c = g[:, H : 2 * H] * c + g[:, :H] * g[:, 2 * H : 3 * H]
            h = g[:, 3 * H :] * np.tanh(c)
            gates[:, t] = g
            cs[:, t] = c
            hs[:, t] = h
        self._cache = (x, gates, cs, hs)
        return hs if self.return_sequences else hs[:, -1]

    def backward(self, grad):
        if self._cache is None:
            raise NoForwardCacheError("backward called before forward")
        x, gates, cs, hs = self._cache
        B, T, _ = x.shape
        H = self.hidden
        if self.return_sequences:
            dh_out = grad
        else:
            dh_out = np.zeros((B, T, H))
            dh_out[:, -1] = grad
        dz_all = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            g = gates[:, t]
            i, f, cand, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
            tc = np.tanh(c)
            dh = dh_out[:, t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * cand * i * (1 - i)
            dz[:, H : 2 * H] = dc * c_prev * f * (1 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1 - cand * cand)
            dz[:, 3 * H :] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = dz @ self.Wh
        dz2 = dz_all.reshape(-1, 4 * H)
        self.dWx += dz2.T @ x.reshape(-1, self.n_in)
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1).reshape(-1, H)
        self.dWh += dz2.T @ h_prev
        self.db += dz2.sum(axis=0)
        return dz_all @ self.Wx


def dense_forward(layer: Dense, x):
    """Apply a single dense layer to one input vector."""
    return layer.forward(np.asarray(x, dtype=float)[None])[0]


def lstm_forward(layer: LSTM, sequence):
    """Hidden states for a single (T, F) sequence, starting from zero state."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or len(seq) == 0:
        raise ShapeError("sequence must be a non-empty (T, F) array")
    keep = layer.return_sequences
    layer.return_sequences = True
    try:
        return layer.forward(seq[None])[0]
    finally:
        layer.return_sequences = keep


class Network:
    """Layers applied in order; the last layer emits the loss input."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._forwarded = False

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def n_params(self):
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for g in self.grads():
            g[...] = 0.0

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._forwarded = True
        return x

    def backward(self, grad):
        if not self._forwarded:
            raise NoForwardCacheError("backward called before forward")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def spec(self):
        return [layer.spec() for layer in self.layers]

    def copy(self):
        clone = Network([_clone_layer(layer) for layer in self.layers])
        return clone


def _clone_layer(layer):
    if layer.kind == "dense":
        new = Dense(layer.n_in, layer.n_out, layer.activation)
    else:
        new = LSTM(layer.n_in, layer.hidden, layer.return_sequences)
    for dst, src in zip(new.params(), layer.params()):
        dst[...] = src
    return new


def build_network(spec, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    for item in spec:
        if item["type"] == "dense":
            layers.append(Dense(item["n_in"], item["n_out"], item["activation"], rng))
        elif item["type"] == "lstm":
            layers.append(LSTM(item["n_in"], item["n_out"], item["return_sequences"], rng))
        else:
            raise ValueError(f"unknown layer type {item['type']!r}")
    return Network(layers)


def nll_loss(eps, sigma):
    """Gaussian NLL of one prediction error with diagonal covariance diag(sigma**2).

    ``0.5 * eps^T C^-1 eps + 0.5 * log det C``.
    """
    eps = np.asarray(eps, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("standard deviations must be positive")
    return float(0.5 * np.sum((eps / sigma) ** 2) + np.sum(np.log(sigma)))


def nll_grad(eps, sigma):
    """Gradients of :func:`nll_loss` with respect to ``eps`` and ``sigma``."""
    eps = np.asarray(eps, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("standard deviations must be positive")
    return eps / sigma**2, 1.0 / sigma - eps**2 / sigma**3


def gaussian_nll(output, target):
    """Batch-mean NLL for raw outputs ``(mu_x, mu_y, log sigma_x, log sigma_y)``.

    Returns the loss and its gradient with respect to ``output``.
    """
    output = np.asarray(output, dtype=float)
    target = np.asarray(target, dtype=float)
    if output.shape[-1] != 4 or target.shape != output.shape[:-1] + (2,):
        raise ShapeError(f"output {output.shape} and target {target.shape} do not match")
    B = output.shape[0]
    eps = output[:, :2] - target
    log_sigma = output[:, 2:]
    inv_var = np.exp(-2.0 * log_sigma)
    loss = 0.5 * np.sum(eps * eps * inv_var) + np.sum(log_sigma)
    grad = np.empty_like(output)
    grad[:, :2] = eps * inv_var
    grad[:, 2:] = 1.0 - eps * eps * inv_var
    return loss / B, grad / B


class Adam:
    """Adam with bias correction and rate ``lr / (1 + decay * step)``."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, decay=1e-4):
        self.lr, self.beta1, self.beta2, self.eps, self.decay = lr, beta1, beta2, eps, decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def current_lr(self):
        return self.lr / (1.0 + self.decay * self.step_count)

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ShapeError("parameter list does not match optimizer state")
        lr = self.current_lr()
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(state: Adam, params, grads):
    return state.step(params, grads)


def save_checkpoint(path, network: Network, meta=None):
    header = {"version": CHECKPOINT_VERSION, "layers": network.spec(), "meta": meta or {}}
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    arrays.update({f"p{k:03d}": p for k, p in enumerate(network.params())})
    # np.savez stamps entries with the wall clock; a fixed stamp keeps reruns byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)


def load_checkpoint(path, expected_spec=None):
    """Return ``(network, meta)``; shapes are checked against the stored spec."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        if expected_spec is not None and header["layers"] != expected_spec:
            raise ShapeError("checkpoint topology does not match the expected network")
        net = build_network(header["layers"])
        params = net.params()
        for k, p in enumerate(params):
            stored = data[f"p{k:03d}"]
            if stored.shape != p.shape:
                raise ShapeError(f"parameter {k}: stored {stored.shape}, expected {p.shape}")
            p[...] = stored
    return net, header["meta"]
