"""Recurrent multilayer perceptron with a flat weight view.

Hidden layer ``l`` computes ``phi(Wx @ a_{l-1} + Wh @ h_l(prev) + b)``; ``Wh``
exists only for layers listed in ``recurrent_layers`` (Elman-style
self-recurrence). The output layer is linear.

Weight packing order, layer by layer from input to output: ``Wx`` row-major
with shape ``(fan_out, fan_in)``, then ``Wh`` row-major ``(fan_out, fan_out)``
for recurrent layers, then the bias. Rows of the Jacobian returned by
:func:`output_jacobian` follow this order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, ShapeError

ACTIVATIONS = ("tanh", "logistic", "linear")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _dact(name, a):
    # derivative expressed through the activation output
    if name == "tanh":
        return 1.0 - a * a
    if name == "logistic":
        return a * (1.0 - a)
    return np.ones_like(a)


@dataclass(frozen=True)
class RmlpConfig:
    layer_sizes: tuple
    hidden_activation: str = "tanh"
    output_activation: str = "linear"
    # None means every hidden layer is recurrent
    recurrent_layers: Optional[frozenset] = None
    bptt_depth: int = 3
    init_std: float = 0.05
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError("layer_sizes needs at least an input and an output width")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer widths must be positive, got {sizes}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(f"hidden_activation must be one of {ACTIVATIONS}")
        if self.output_activation != "linear":
            raise ConfigError("only a linear output layer is supported")
        n_hidden = len(sizes) - 2
        rec = frozenset(range(1, n_hidden + 1)) if self.recurrent_layers is None else frozenset(
            int(l) for l in self.recurrent_layers)
        if not rec <= set(range(1, n_hidden + 1)):
            raise ConfigError(f"recurrent_layers must be a subset of 1..{n_hidden}, got {sorted(rec)}")
        object.__setattr__(self, "recurrent_layers", rec)
        if self.bptt_depth < 1:
            raise ConfigError("bptt_depth must be >= 1")
        if not self.init_std >= 0:
            raise ConfigError("init_std must be nonnegative")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def layout(self):
        """Per layer ``(fan_in, fan_out, wx_slice, wh_slice|None, b_slice|None)``."""
        out = []
        off = 0
        sizes = self.layer_sizes
        for l in range(1, len(sizes)):
            fi, fo = sizes[l - 1], sizes[l]
            wx = slice(off, off + fi * fo)
            off += fi * fo
            wh = None
            if l in self.recurrent_layers:
                wh = slice(off, off + fo * fo)
                off += fo * fo
            b = None
            if self.bias:
                b = slice(off, off + fo)
                off += fo
            out.append((fi, fo, wx, wh, b))
        return out

    @property
    def n_weights(self) -> int:
        sizes = self.layer_sizes
        n = sum(sizes[l - 1] * sizes[l] + (sizes[l] if self.bias else 0) for l in range(1, len(sizes)))
        return n + sum(sizes[l] ** 2 for l in self.recurrent_layers)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "recurrent_layers": sorted(self.recurrent_layers),
            "bptt_depth": self.bptt_depth,
            "init_std": self.init_std,
            "seed": self.seed,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d) -> "RmlpConfig":
        d = dict(d)
        d["layer_sizes"] = tuple(d["layer_sizes"])
        d["recurrent_layers"] = frozenset(d["recurrent_layers"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RmlpNetwork:
    config: RmlpConfig
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.config.n_weights:
            raise ShapeError(f"expected {self.config.n_weights} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise InputError("weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_w(self) -> int:
        return self.weights.shape[0]

    def layers(self):
        """Views ``(Wx, Wh|None, b|None)`` per layer into the weight vector."""
        w = self.weights
        return [
            (w[wx].reshape(fo, fi), None if wh is None else w[wh].reshape(fo, fo), None if b is None else w[b])
            for fi, fo, wx, wh, b in self.config.layout()
        ]


@dataclass(frozen=True, eq=False)
class RecurrentState:
    """Previous activations of each recurrent layer plus a short input history.

    ``history`` holds ``(input, activations_before_that_step)`` pairs, oldest
    first, at most ``bptt_depth`` long.
    """

    activations: dict
    history: tuple = ()


def init_network(config: RmlpConfig) -> RmlpNetwork:
    rng = np.random.default_rng(config.seed)
    return RmlpNetwork(config, rng.normal(0.0, config.init_std, config.n_weights))


def zero_state(net_or_config) -> RecurrentState:
    cfg = getattr(net_or_config, "config", net_or_config)
    return RecurrentState({l: np.zeros(cfg.layer_sizes[l]) for l in sorted(cfg.recurrent_layers)}, ())


def weights_vector(net: RmlpNetwork) -> np.ndarray:
    return net.weights.copy()


def set_weights(net: RmlpNetwork, v) -> RmlpNetwork:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != net.n_w:
        raise ShapeError(f"weight vector must have length {net.n_w}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError("weight vector contains NaN or Inf")
    return RmlpNetwork(net.config, v)


def _check_input(net, state, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (net.config.n_inputs,):
        raise ShapeError(f"input must have shape ({net.config.n_inputs},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains NaN or Inf")
    for l in net.config.recurrent_layers:
        h = state.activations.get(l)
        if h is None or h.shape != (net.config.layer_sizes[l],):
            raise ShapeError(f"recurrent state for layer {l} does not match the network")
    return x


def _forward(net, layers, x, h_prev):
    """Forward one step; returns (per-layer outputs incl. input, new recurrent dict)."""
    cfg = net.config
    L = len(layers)
    acts = [x]
    a = x
    for l, (Wx, Wh, b) in enumerate(layers, start=1):
        z = Wx @ a
        if Wh is not None:
            z = z + Wh @ h_prev[l]
        if b is not None:
            z = z + b
        a = z if l == L else _act(cfg.hidden_activation, z)
        acts.append(a)
    return acts, {l: acts[l] for l in h_prev}


def forward_step(net: RmlpNetwork, state: RecurrentState, x):
    """Output for one input and the advanced recurrent state."""
    x = _check_input(net, state, x)
    acts, h_new = _forward(net, net.layers(), x, state.activations)
    hist = (state.history + ((x, state.activations),))[-net.config.bptt_depth:]
    return acts[-1].copy(), RecurrentState(h_new, hist)


def output_jacobian(net: RmlpNetwork, state: RecurrentState, x) -> np.ndarray:
    """``H[i, j] = d y_j / d w_i`` by backpropagation through time.

    The current step plus up to ``bptt_depth - 1`` stored steps are unrolled
    with the current weights; the recurrent activations that fed the oldest
    unrolled step are held constant.
    """
    x = _check_input(net, state, x)
    cfg = net.config
    depth = cfg.bptt_depth
    past = state.history[len(state.history) - (depth - 1):] if depth > 1 else ()
    steps = [inp for inp, _ in past] + [x]
    h = past[0][1] if past else state.activations

    layers = net.layers()
    caches = []
    for inp in steps:
        acts, h_next = _forward(net, layers, inp, h)
        caches.append((acts, h))
        h = h_next

    layout = cfg.layout()
    L = len(layers)
    n_y = cfg.n_outputs
    G = np.zeros((n_y, net.n_w))
    carry = {}
    for k in range(len(steps) - 1, -1, -1):
        acts, h_prev = caches[k]
        g = np.eye(n_y) if k == len(steps) - 1 else None
        new_carry = {}
        for l in range(L, 0, -1):
            if l in carry:
                g = carry[l] if g is None else g + carry[l]
            if g is None:
                continue
            Wx, Wh, _ = layers[l - 1]
            fi, fo, wx, wh, b = layout[l - 1]
            delta = g if l == L else g * _dact(cfg.hidden_activation, acts[l])
            G[:, wx] += (delta[:, :, None] * acts[l - 1][None, None, :]).reshape(n_y, -1)
            if wh is not None:
                G[:, wh] += (delta[:, :, None] * h_prev[l][None, None, :]).reshape(n_y, -1)
                new_carry[l] = delta @ Wh
            if b is not None:
                G[:, b] += delta
            g = delta @ Wx if l > 1 else None
        carry = new_carry
    return G.T


def predict_sequence(net: RmlpNetwork, X, state: Optional[RecurrentState] = None) -> np.ndarray:
    """Run the network over rows of ``X`` in order from a (default zero) state."""
    state = state or zero_state(net)
    out = np.empty((len(X), net.config.n_outputs))
    for i, x in enumerate(X):
        out[i], state = forward_step(net, state, x)
    return out
