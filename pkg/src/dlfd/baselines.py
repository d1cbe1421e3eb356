"""Gradient-trained comparison regressors.

Four model kinds share one flat-weight representation:

* ``feedforward``: tanh MLP on the flattened window, linear output.
* ``simple_rnn``: Elman cell ``h = tanh(W x + U h + b)`` run over the N
  window steps, linear readout of the last hidden state.
* ``gru``: update gate z, reset gate r, candidate
  ``n = tanh(W_n x + U_n (r * h) + b_n)``, ``h' = (1 - z) n + z h``.
* ``lstm``: input, forget, cell and output gates, no peepholes.

Recurrent weight packing: ``W`` (G*H x D) row-major, ``U`` (G*H x H), bias
(G*H), then readout ``Wy`` (O x H) and ``by`` (O). Gate blocks inside W, U
and b are stacked in the order z, r, n for GRU and i, f, g, o for LSTM.
Feedforward packing is per layer ``W`` (fan_out x fan_in) then bias.

Training minimises ``mean((y - t)^2) + l1_lambda * |w|_1 / n_k`` with Adam,
where the L1 norm runs over the n_k kernel (non-bias) weights. Setting
``l1_mode="sum"`` drops the 1/n_k factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .ekf import TrainingLog
from .errors import ConfigError, DivergenceError, InputError, ShapeError


class CellKind(str, Enum):
    FEEDFORWARD = "feedforward"
    SIMPLE_RNN = "simple_rnn"
    GRU = "gru"
    LSTM = "lstm"


GATES = {CellKind.SIMPLE_RNN: 1, CellKind.GRU: 3, CellKind.LSTM: 4}


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _layout(kind: CellKind, sizes):
    """Named ``(slice, shape, is_kernel)`` entries in packing order."""
    out = []
    off = 0

    def take(name, shape, kernel):
        nonlocal off
        n = int(np.prod(shape))
        out.append((name, slice(off, off + n), shape, kernel))
        off += n

    if kind == CellKind.FEEDFORWARD:
        for l in range(1, len(sizes)):
            take(f"W{l}", (sizes[l], sizes[l - 1]), True)
            take(f"b{l}", (sizes[l],), False)
    else:
        D, H, O = sizes
        G = GATES[kind]
        take("W", (G * H, D), True)
        take("U", (G * H, H), True)
        take("b", (G * H,), False)
        take("Wy", (O, H), True)
        take("by", (O,), False)
    return out, off


@dataclass(frozen=True, eq=False)
class BaselineModel:
    """A baseline regressor. For recurrent kinds ``layer_sizes`` is
    ``(step_width, hidden, outputs)`` and inputs are ``(N, step_width)``
    windows; feedforward takes flat vectors of width ``layer_sizes[0]``."""

    kind: CellKind
    layer_sizes: tuple
    weights: np.ndarray
    seed: int = 0

    def __post_init__(self):
        kind = CellKind(self.kind)
        object.__setattr__(self, "kind", kind)
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        _check_sizes(kind, sizes)
        w = np.array(self.weights, dtype=float).reshape(-1)
        n = n_weights(kind, sizes)
        if w.shape[0] != n:
            raise ShapeError(f"{kind.value} {sizes} needs {n} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise InputError("weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_w(self) -> int:
        return self.weights.shape[0]

    @property
    def recurrent(self) -> bool:
        return self.kind != CellKind.FEEDFORWARD

    def params(self, w=None) -> dict:
        w = self.weights if w is None else w
        lay, _ = _layout(self.kind, self.layer_sizes)
        return {name: w[sl].reshape(shape) for name, sl, shape, _ in lay}

    def kernel_mask(self) -> np.ndarray:
        lay, n = _layout(self.kind, self.layer_sizes)
        m = np.zeros(n, dtype=bool)
        for _, sl, _, kern in lay:
            m[sl] = kern
        return m

    def with_weights(self, w) -> "BaselineModel":
        return BaselineModel(self.kind, self.layer_sizes, w, self.seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "layer_sizes": list(self.layer_sizes), "seed": self.seed}


def _check_sizes(kind, sizes):
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"layer widths must be positive and at least two, got {sizes}")
    if kind != CellKind.FEEDFORWARD and len(sizes) != 3:
        raise ConfigError(f"{kind.value} takes (step_width, hidden, outputs), got {sizes}")


def n_weights(kind, sizes) -> int:
    return _layout(CellKind(kind), tuple(sizes))[1]


def init_model(kind, layer_sizes, seed: int = 0) -> BaselineModel:
    """Glorot-uniform kernels, zero biases (LSTM forget bias 1)."""
    kind = CellKind(kind)
    sizes = tuple(int(s) for s in layer_sizes)
    _check_sizes(kind, sizes)
    rng = np.random.default_rng(seed)
    lay, n = _layout(kind, sizes)
    w = np.zeros(n)
    for name, sl, shape, kern in lay:
        if kern:
            fo, fi = shape
            if name in ("W", "U"):
                fo = shape[0] // GATES[kind]
            lim = np.sqrt(6.0 / (fi + fo))
            w[sl] = rng.uniform(-lim, lim, sl.stop - sl.start)
    if kind == CellKind.LSTM:
        H = sizes[1]
        b = dict((name, sl) for name, sl, _, _ in lay)["b"]
        w[b.start + H:b.start + 2 * H] = 1.0
    return BaselineModel(kind, sizes, w, seed)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-3
    l1_lambda: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    l1_mode: str = "mean"

    def __post_init__(self):
        if self.l1_mode not in ("mean", "sum"):
            raise ConfigError("l1_mode must be 'mean' or 'sum'")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not self.l1_lambda >= 0:
            raise ConfigError("l1_lambda must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


# forward / backward ---------------------------------------------------------

def _check_batch(model, X):
    X = np.asarray(X, dtype=float)
    s = model.layer_sizes
    if model.recurrent:
        if X.ndim != 3 or X.shape[2] != s[0]:
            raise ShapeError(f"{model.kind.value} expects (batch, N, {s[0]}) windows, got {X.shape}")
    elif X.ndim != 2 or X.shape[1] != s[0]:
        raise ShapeError(f"feedforward expects (batch, {s[0]}) inputs, got {X.shape}")
    return X


def _forward(model, p, X):
    """Returns (outputs, cache)."""
    kind = model.kind
    if kind == CellKind.FEEDFORWARD:
        acts = [X]
        L = len(model.layer_sizes) - 1
        a = X
        for l in range(1, L + 1):
            z = a @ p[f"W{l}"].T + p[f"b{l}"]
            a = z if l == L else np.tanh(z)
            acts.append(a)
        return a, acts
    B, N, _ = X.shape
    H = model.layer_sizes[1]
    W, U, b = p["W"], p["U"], p["b"]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(N):
        x = X[:, t]
        if kind == CellKind.SIMPLE_RNN:
            hn = np.tanh(x @ W.T + h @ U.T + b)
            steps.append((h, hn))
        elif kind == CellKind.GRU:
            ax = x @ W.T + b
            z = _sigmoid(ax[:, :H] + h @ U[:H].T)
            r = _sigmoid(ax[:, H:2 * H] + h @ U[H:2 * H].T)
            n = np.tanh(ax[:, 2 * H:] + (r * h) @ U[2 * H:].T)
            hn = (1.0 - z) * n + z * h
            steps.append((h, z, r, n))
        else:
            a = x @ W.T + h @ U.T + b
            i = _sigmoid(a[:, :H])
            f = _sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = _sigmoid(a[:, 3 * H:])
            cn = f * c + i * g
            tc = np.tanh(cn)
            hn = o * tc
            steps.append((h, c, i, f, g, o, tc))
            c = cn
        h = hn
    y = h @ p["Wy"].T + p["by"]
    return y, (steps, h)


def _backward(model, p, X, cache, dy) -> np.ndarray:
    """Gradient of ``sum(dy * y)`` with respect to the flat weights."""
    kind = model.kind
    lay, n = _layout(kind, model.layer_sizes)
    grad = np.zeros(n)
    gv = {name: grad[sl].reshape(shape) for name, sl, shape, _ in lay}
    if kind == CellKind.FEEDFORWARD:
        acts = cache
        L = len(model.layer_sizes) - 1
        d = dy
        for l in range(L, 0, -1):
            if l < L:
                d = d * (1.0 - acts[l] ** 2)
            gv[f"W{l}"][...] = d.T @ acts[l - 1]
            gv[f"b{l}"][...] = d.sum(axis=0)
            d = d @ p[f"W{l}"]
        return grad
    steps, hN = cache
    H = model.layer_sizes[1]
    U = p["U"]
    gv["Wy"][...] = dy.T @ hN
    gv["by"][...] = dy.sum(axis=0)
    dh = dy @ p["Wy"]
    dc = np.zeros_like(dh)
    gW, gU, gb = gv["W"], gv["U"], gv["b"]
    for t in range(len(steps) - 1, -1, -1):
        x = X[:, t]
        if kind == CellKind.SIMPLE_RNN:
            h, hn = steps[t]
            da = dh * (1.0 - hn * hn)
            gW += da.T @ x
            gU += da.T @ h
            gb += da.sum(axis=0)
            dh = da @ U
        elif kind == CellKind.GRU:
            h, z, r, nn = steps[t]
            dz = dh * (h - nn)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dan = dn * (1.0 - nn * nn)
            drh = dan @ U[2 * H:]
            dr = drh * h
            dh_prev += drh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            da = np.concatenate([daz, dar, dan], axis=1)
            gW += da.T @ x
            gb += da.sum(axis=0)
            gU[:H] += daz.T @ h
            gU[H:2 * H] += dar.T @ h
            gU[2 * H:] += dan.T @ (r * h)
            dh = dh_prev + daz @ U[:H] + dar @ U[H:2 * H]
        else:
            h, c, i, f, g, o, tc = steps[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dc = dc * f
            gW += da.T @ x
            gU += da.T @ h
            gb += da.sum(axis=0)
            dh = da @ U
    return grad


def predict_batch(model: BaselineModel, X) -> np.ndarray:
    X = _check_batch(model, X)
    if X.shape[0] == 0:
        return np.zeros((0, model.layer_sizes[-1]))
    y, _ = _forward(model, model.params(), X)
    return y


def predict(model: BaselineModel, window) -> np.ndarray:
    """Output for one window: ``(N, step_width)`` for recurrent kinds, a flat
    vector for feedforward."""
    return predict_batch(model, np.asarray(window, dtype=float)[None])[0]


def loss_and_grad(model: BaselineModel, X, T, l1_lambda: float = 0.0, w=None, l1_mode: str = "mean"):
    """Objective ``mean((y - T)^2) + l1_lambda * |kernel weights|_1 [/ n_k]`` and
    its (sub)gradient, with sign(0) = 0."""
    X = _check_batch(model, X)
    w = model.weights if w is None else w
    p = model.params(w)
    y, cache = _forward(model, p, X)
    e = y - T
    loss = float(np.mean(e * e))
    grad = _backward(model, p, X, cache, 2.0 * e / e.size)
    if l1_lambda:
        mask = model.kernel_mask()
        lam = l1_lambda / np.count_nonzero(mask) if l1_mode == "mean" else l1_lambda
        loss += lam * float(np.abs(w[mask]).sum())
        grad[mask] += lam * np.sign(w[mask])
    return loss, grad


def model_inputs(model: BaselineModel, demo) -> np.ndarray:
    """Inputs for every sample of a windowed demonstration."""
    return demo.sequence_view() if model.recurrent else demo.X


def sgd_fit(model: BaselineModel, demos: Sequence, cfg: OptimConfig, validation: Optional[Sequence] = None):
    """Adam on shuffled minibatches of windows.

    Each window is a complete training sequence, so minibatches may mix
    demonstrations. When ``validation`` demos are given, the weights with the
    lowest validation MSE seen at an epoch end are returned.
    """
    demos = list(demos)
    if not demos or sum(len(d) for d in demos) == 0:
        raise InputError("cannot train on an empty dataset")
    X = np.concatenate([model_inputs(model, d) for d in demos])
    T = np.concatenate([d.Y for d in demos])
    _check_batch(model, X)
    if T.shape[1] != model.layer_sizes[-1]:
        raise ShapeError(f"targets have width {T.shape[1]}, model outputs {model.layer_sizes[-1]}")
    if validation:
        Xv = np.concatenate([model_inputs(model, d) for d in validation])
        Tv = np.concatenate([d.Y for d in validation])
    rng = np.random.default_rng(cfg.seed)
    w = model.weights.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    k = 0
    log = TrainingLog()
    best = (np.inf, w.copy())
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, worst = 0.0, 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, g = loss_and_grad(model, X[idx], T[idx], cfg.l1_lambda, w, cfg.l1_mode)
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}, batch {s // cfg.batch_size}: non-finite loss")
            k += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            mh = m / (1 - cfg.beta1 ** k)
            vh = v / (1 - cfg.beta2 ** k)
            w = w - cfg.learning_rate * mh / (np.sqrt(vh) + cfg.eps)
            total += loss * len(idx)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"epoch {epoch}: non-finite weights")
        y, _ = _forward(model, model.params(w), X)
        worst = float(np.max(np.abs(y - T)))
        log.append(epoch, total / n, worst)
        if validation:
            yv, _ = _forward(model, model.params(w), Xv)
            vl = float(np.mean((yv - Tv) ** 2))
            if vl < best[0]:
                best = (vl, w.copy())
    if validation and cfg.epochs > 0:
        w = best[1]
    return model.with_weights(w), log
