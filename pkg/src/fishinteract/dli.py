"""Recurrent probabilistic interaction model.

The network reads a window of system states (focal agent first, then its
neighbor, then their distance) and outputs a diagonal Gaussian over the
focal agent's acceleration at the next tick. All quantities are in
normalized units: positions divided by the arena radius, time in seconds.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import neural
from .core import AgentState, SystemState
from .trajio import Dataset

STATE_WIDTH = 11
HISTORY = 5


@dataclass(frozen=True)
class GaussianAccelPrediction:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("sigma must be strictly positive")


def build_state_vector(s_i: AgentState, s_j: AgentState, d_ij=None):
    """11-vector ``[x_i, y_i, vx_i, vy_i, rw_i, x_j, y_j, vx_j, vy_j, rw_j, d_ij]``."""
    if d_ij is None:
        d_ij = float(np.hypot(*(np.asarray(s_i.u) - np.asarray(s_j.u))))
    vec = np.array([*s_i.u, *s_i.v, s_i.r_w, *s_j.u, *s_j.v, s_j.r_w, d_ij], dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValueError("state contains non-finite values")
    return vec


def system_vector(state: SystemState):
    return build_state_vector(state.s_i, state.s_j, state.d_ij)


def state_matrix(u_i, v_i, u_j, v_j, radius=1.0):
    """Vectorized state vectors; the leading dimensions of the inputs broadcast."""
    u_i, v_i, u_j, v_j = (np.asarray(a, dtype=float) for a in (u_i, v_i, u_j, v_j))
    rw_i = radius - np.hypot(u_i[..., 0], u_i[..., 1])
    rw_j = radius - np.hypot(u_j[..., 0], u_j[..., 1])
    d = np.hypot(u_i[..., 0] - u_j[..., 0], u_i[..., 1] - u_j[..., 1])
    return np.concatenate(
        [u_i, v_i, rw_i[..., None], u_j, v_j, rw_j[..., None], d[..., None]], axis=-1
    )


def make_samples(dataset, window=HISTORY, min_index=None):
    """Training windows and target accelerations from a normalized pair dataset.

    A window ends at frame ``n`` and covers frames ``n-window+1 .. n``; its
    target is ``(v[n+1] - v[n]) / dt`` with backward-difference velocities.
    ``min_index`` (default ``window``) is the earliest allowed ``n``, so models
    with different windows can be trained on the same ticks. Every eligible
    tick yields two samples, one per focal agent.

    Returns ``(X, y, skipped)`` where ``skipped`` counts segments too short to
    contribute.
    """
    segments = dataset.segments if isinstance(dataset, Dataset) else dataset
    first = window if min_index is None else max(min_index, window)
    xs, ys = [], []
    skipped = 0
    for seg in segments:
        pos = seg.positions
        if pos.shape[1] != 2:
            raise ValueError("training samples need pair data (2 agents)")
        T = pos.shape[0]
        ends = np.arange(first, T - 1)
        if len(ends) == 0:
            skipped += 1
            continue
        vel = np.full_like(pos, np.nan)
        vel[1:] = np.diff(pos, axis=0) / seg.dt
        acc = (vel[ends + 1] - vel[ends]) / seg.dt
        idx = ends[:, None] + np.arange(-window + 1, 1)[None, :]
        for i, j in ((0, 1), (1, 0)):
            xs.append(state_matrix(pos[idx, i], vel[idx, i], pos[idx, j], vel[idx, j]))
            ys.append(acc[:, i])
    if not xs:
        return np.empty((0, window, STATE_WIDTH)), np.empty((0, 2)), skipped
    return np.concatenate(xs), np.concatenate(ys), skipped


def dli_spec(lstm_units=128, dense_units=(64, 64), n_in=STATE_WIDTH):
    d1, d2 = dense_units
    return [
        {"type": "lstm", "n_in": n_in, "n_out": lstm_units, "return_sequences": True},
        {"type": "dense", "n_in": lstm_units, "n_out": d1, "activation": "relu"},
        {"type": "dense", "n_in": d1, "n_out": d2, "activation": "tanh"},
        {"type": "lstm", "n_in": d2, "n_out": lstm_units, "return_sequences": False},
        {"type": "dense", "n_in": lstm_units, "n_out": d1, "activation": "relu"},
        {"type": "dense", "n_in": d1, "n_out": d2, "activation": "tanh"},
        {"type": "dense", "n_in": d2, "n_out": 4, "activation": "none"},
    ]


def mli_spec(lstm_units=128, dense_units=(64, 64), n_in=STATE_WIDTH):
    # Same seven-layer shape with every recurrent layer replaced by a dense one.
    spec = []
    for item in dli_spec(lstm_units, dense_units, n_in):
        if item["type"] == "lstm":
            item = {"type": "dense", "n_in": item["n_in"], "n_out": item["n_out"], "activation": "relu"}
        spec.append(item)
    return spec


class NonFiniteLossError(FloatingPointError):
    pass


class DLIRegressor(RegressorMixin, BaseEstimator):
    """Gaussian acceleration regressor over windows of pair states.

    ``fit(X, y, X_val, y_val)`` takes windows ``X`` of shape (n, T, 11) and
    accelerations ``y`` of shape (n, 2). ``ablation='mli'`` swaps both LSTMs
    for dense layers and feeds only the last state of each window.
    """

    def __init__(self, ablation="dli", window=HISTORY, lstm_units=128, dense_units=(64, 64),
                 epochs=45, batch_size=512, lr=1e-4, decay=1e-4, seed=0, select_best=True,
                 verbose=False):
        self.ablation = ablation
        self.window = window
        self.lstm_units = lstm_units
        self.dense_units = dense_units
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.decay = decay
        self.seed = seed
        self.select_best = select_best
        self.verbose = verbose

    @property
    def input_window(self):
        return 1 if self.ablation == "mli" else self.window

    def topology(self):
        if self.ablation == "dli":
            return dli_spec(self.lstm_units, tuple(self.dense_units))
        if self.ablation == "mli":
            return mli_spec(self.lstm_units, tuple(self.dense_units))
        raise ValueError(f"unknown ablation {self.ablation!r}")

    def _init_network(self):
        init_seq, shuffle_seq = np.random.SeedSequence(self.seed).spawn(2)
        self.network_ = neural.build_network(self.topology(), np.random.default_rng(init_seq))
        self._shuffle_rng = np.random.default_rng(shuffle_seq)

    def _prep(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != STATE_WIDTH:
            raise ValueError(f"X must be (n, window, {STATE_WIDTH}), got {X.shape}")
        if X.shape[1] < self.input_window:
            raise ValueError(f"windows of length {X.shape[1]} are shorter than {self.input_window}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        X = X[:, -self.input_window :]
        return X[:, 0] if self.ablation == "mli" else X

    def raw_output(self, X, network=None, chunk=4096):
        """Raw network outputs ``(mu_x, mu_y, log sigma_x, log sigma_y)``."""
        net = network or self.network_
        Xp = self._prep(X)
        return np.concatenate([net.forward(Xp[k : k + chunk]) for k in range(0, len(Xp), chunk)]) \
            if len(Xp) else np.empty((0, 4))

    def score_nll(self, X, y, network=None):
        out = self.raw_output(X, network)
        return neural.gaussian_nll(out, np.asarray(y, dtype=float))[0]

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise ValueError("training set is empty")
        if y.shape != (len(X), 2):
            raise ValueError(f"y must be ({len(X)}, 2), got {y.shape}")
        if X_val is not None and len(X_val) == 0:
            raise ValueError("validation set is empty")
        self._init_network()
        Xp = self._prep(X)
        net = self.network_
        params = net.params()
        opt = neural.Adam(params, lr=self.lr, decay=self.decay)
        self.history_ = []
        self.best_epoch_ = 0
        best_net, best_val = net.copy(), np.inf
        for epoch in range(1, self.epochs + 1):
            order = self._shuffle_rng.permutation(len(Xp))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                net.zero_grad()
                out = net.forward(Xp[idx])
                loss, grad = neural.gaussian_nll(out, y[idx])
                if not np.isfinite(loss):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch}, batch starting {start}; "
                        f"max |output| = {np.nanmax(np.abs(out)):.3g}"
                    )
                net.backward(grad)
                opt.step(params, net.grads())
                total += loss * len(idx)
            train_nll = total / len(Xp)
            val_nll = self.score_nll(X_val, y_val, net) if X_val is not None else float("nan")
            self.history_.append((epoch, train_nll, val_nll))
            if self.verbose:
                print(f"epoch {epoch:3d}  train {train_nll:.5f}  val {val_nll:.5f}", flush=True)
            if X_val is not None and val_nll < best_val:
                best_val, best_net, self.best_epoch_ = val_nll, net.copy(), epoch
        self.final_network_ = net
        if self.select_best and X_val is not None and self.epochs > 0:
            self.network_ = best_net
        else:
            self.best_epoch_ = self.epochs
        return self

    def predict_dist(self, X):
        check_is_fitted(self, "network_")
        out = self.raw_output(X)
        return out[:, :2], np.exp(out[:, 2:])

    def predict(self, X):
        return self.predict_dist(X)[0]

    def predict_window(self, window):
        """Prediction for one window of states (SystemStates or an (T, 11) array)."""
        if len(window) and isinstance(window[0], SystemState):
            window = np.stack([system_vector(s) for s in window])
        window = np.asarray(window, dtype=float)
        if window.shape != (self.window, STATE_WIDTH):
            raise ValueError(f"window must have {self.window} states, got shape {window.shape}")
        mu, sigma = self.predict_dist(window[None])
        return GaussianAccelPrediction(mu[0], sigma[0])

    def score(self, X, y, sample_weight=None):
        """Negative mean NLL, so that larger is better."""
        return -self.score_nll(X, y)

    def save(self, path):
        check_is_fitted(self, "network_")
        meta = {"params": _jsonable(self.get_params()),
                "best_epoch": int(getattr(self, "best_epoch_", 0)),
                "epochs_run": len(getattr(self, "history_", []))}
        neural.save_checkpoint(path, self.network_, meta)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            params = json.loads(str(data["header"]))["meta"]["params"]
        params["dense_units"] = tuple(params["dense_units"])
        model = cls(**params)
        model.network_, meta = neural.load_checkpoint(path, expected_spec=model.topology())
        model.best_epoch_ = meta.get("best_epoch", 0)
        return model

    def write_log(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_nll", "val_nll"])
            for epoch, tr, va in self.history_:
                w.writerow([epoch, repr(float(tr)), repr(float(va))])


def _jsonable(params):
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def train(model: DLIRegressor, train_set, val_set):
    """Build samples from normalized datasets and fit ``model``."""
    X, y, _ = make_samples(train_set, model.window)
    Xv, yv, _ = make_samples(val_set, model.window)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("train and validation sets must both yield samples")
    return model.fit(X, y, Xv, yv)
