"""Extended Kalman filter training of the recurrent MLP.

The network weights are the filter state. Each training sample runs

    xi = y - y_hat
    A  = (R + H^T P H)^-1
    K  = P H A
    w <- w + K xi
    P <- sym((I - K H^T) P) + Q

with ``P0 = I / epsilon``, ``R = I / eta`` and ``Q = q I``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as spl

from . import kernels
from .errors import ConfigError, DivergenceError, InputError, NumericalError, ShapeError
from .rmlp import (RecurrentState, RmlpNetwork, forward_step, output_jacobian, predict_sequence,
                   set_weights, zero_state)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EkfConfig:
    epsilon: float = 0.1
    eta: float = 0.01
    q: float = 0.01
    epochs: int = 10
    shuffle_demos: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0.0 <= self.q < 0.1:
            raise ConfigError("q must lie in [0, 0.1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")


@dataclass
class KalmanState:
    w_hat: np.ndarray
    P: np.ndarray
    R: np.ndarray
    q: float
    step_count: int = 0

    @property
    def Q(self) -> np.ndarray:
        return self.q * np.eye(self.w_hat.shape[0])

    def copy(self) -> "KalmanState":
        return KalmanState(self.w_hat.copy(), self.P.copy(), self.R.copy(), self.q, self.step_count)


@dataclass
class TrainingLog:
    """Per-epoch training summary; ``mean_loss`` is the mean of xi^T xi."""

    epochs: list = field(default_factory=list)
    mean_loss: list = field(default_factory=list)
    max_abs_residual: list = field(default_factory=list)

    def append(self, epoch, mean_loss, max_abs):
        self.epochs.append(int(epoch))
        self.mean_loss.append(float(mean_loss))
        self.max_abs_residual.append(float(max_abs))

    def to_tsv(self) -> str:
        rows = ["epoch\tmean_loss\tmax_abs_residual"]
        rows += [f"{e}\t{m!r}\t{a!r}" for e, m, a in zip(self.epochs, self.mean_loss, self.max_abs_residual)]
        return "\n".join(rows) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_tsv())

    @classmethod
    def load(cls, path) -> "TrainingLog":
        out = cls()
        lines = Path(path).read_text().splitlines()
        for line in lines[1:]:
            if line.strip():
                e, m, a = line.split("\t")
                out.append(int(e), float(m), float(a))
        return out


def init_filter(net: RmlpNetwork, cfg: EkfConfig) -> KalmanState:
    n_w = net.n_w
    n_y = net.config.n_outputs
    # a subnormal epsilon or eta overflows to inf; ekf_step reports that as divergence
    with np.errstate(over="ignore"):
        P = np.eye(n_w) / cfg.epsilon
        R = np.eye(n_y) / cfg.eta
    return KalmanState(w_hat=net.weights.copy(), P=P, R=R, q=float(cfg.q))


def ekf_step(state: KalmanState, net: RmlpNetwork, rstate: RecurrentState, x, y, inplace: bool = False):
    """One filter update on sample ``(x, y)``.

    The network is evaluated with ``state.w_hat``; ``net`` supplies the
    architecture. Returns ``(new_state, new_rstate, residual)``. With
    ``inplace=True`` the covariance of ``state`` is overwritten instead of
    copied, which is what :func:`fit` uses.
    """
    y = np.asarray(y, dtype=float)
    n_y = net.config.n_outputs
    if y.shape != (n_y,):
        raise ShapeError(f"target must have shape ({n_y},), got {y.shape}")
    if state.w_hat.shape[0] != net.n_w or state.P.shape != (net.n_w, net.n_w) or state.R.shape != (n_y, n_y):
        raise ShapeError("Kalman state does not match the network")
    cur = set_weights(net, state.w_hat)
    y_hat, rnext = forward_step(cur, rstate, x)
    xi = y - y_hat
    H = output_jacobian(cur, rstate, x)

    P = state.P if inplace else state.P.copy()
    # overflow is reported through the explicit finiteness checks below
    with np.errstate(over="ignore", invalid="ignore"):
        PH = P @ H
        S = state.R + H.T @ PH
        if not np.all(np.isfinite(S)):
            raise DivergenceError(f"non-finite innovation covariance at step {state.step_count}")
        try:
            cho = spl.cho_factor(S, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalError(
                f"R + H^T P H is not positive definite at step {state.step_count}: {e}"
            ) from None
        K = np.ascontiguousarray(spl.cho_solve(cho, PH.T, check_finite=False).T)
        w = state.w_hat + K @ xi
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(K))):
        raise DivergenceError(f"non-finite weights at step {state.step_count}")
    kernels.covariance_update(P, K, np.ascontiguousarray(PH), state.q)
    new = KalmanState(w, P, state.R, state.q, state.step_count + 1)
    return new, rnext, xi


def _sequence_mse(net, demos):
    err = np.concatenate([predict_sequence(net, d.X) - d.Y for d in demos])
    return float(np.mean(err * err))


def fit(net: RmlpNetwork, demos: Sequence, cfg: EkfConfig, return_state: bool = False,
        validation: Optional[Sequence] = None):
    """Train on windowed demonstrations.

    Samples inside a demonstration are visited in temporal order with the
    recurrent state carried forward; the state is reset between
    demonstrations. Demonstration order is reshuffled each epoch when
    ``cfg.shuffle_demos`` is set. With ``validation`` demos, the returned
    network carries the epoch-end weights with the lowest validation MSE
    (the filter itself keeps running on the latest estimate).
    """
    demos = [d for d in demos]
    if not demos or sum(len(d) for d in demos) == 0:
        raise InputError("cannot train on an empty dataset")
    n_in, n_y = net.config.n_inputs, net.config.n_outputs
    for d in demos:
        if d.X.shape[1] != n_in or d.Y.shape[1] != n_y:
            raise ShapeError(f"demonstration {d.demo_id!r} does not match the network's input/output widths")
    rng = np.random.default_rng(cfg.seed)
    state = init_filter(net, cfg)
    log_ = TrainingLog()
    best = (np.inf, None)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(demos)) if cfg.shuffle_demos else np.arange(len(demos))
        total, count, worst = 0.0, 0, 0.0
        for di in order:
            d = demos[di]
            rstate = zero_state(net)
            for i in range(len(d)):
                try:
                    state, rstate, xi = ekf_step(state, net, rstate, d.X[i], d.Y[i], inplace=True)
                except NumericalError as e:
                    raise DivergenceError(f"epoch {epoch}, demo {d.demo_id!r}, sample {i}: {e}") from None
                sq = float(xi @ xi)
                if not np.isfinite(sq):
                    raise DivergenceError(f"epoch {epoch}, demo {d.demo_id!r}, sample {i}: non-finite loss")
                total += sq
                count += 1
                worst = max(worst, float(np.max(np.abs(xi))))
        log_.append(epoch, total / count, worst)
        log.info("ekf epoch %d mean loss %.6g", epoch, total / count)
        if validation:
            vl = _sequence_mse(set_weights(net, state.w_hat), validation)
            if vl < best[0]:
                best = (vl, state.w_hat.copy())
    if validation and cfg.epochs > 0:
        out = set_weights(net, best[1])
        return (out, log_, state) if return_state else (out, log_)
    out = set_weights(net, state.w_hat)
    return (out, log_, state) if return_state else (out, log_)
