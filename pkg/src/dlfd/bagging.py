"""Bootstrap aggregation over any trainer.

A trainer is a callable ``trainer(demos, seed) -> member`` and a member is
anything with ``predict(X) -> (samples, n_y)`` where ``X`` holds the windows
of one demonstration in temporal order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DlfdError, InputError

Z_95 = 1.96


def member_seeds(m: int, base_seed: int) -> list:
    return [int(base_seed) + i for i in range(1, m + 1)]


def bootstrap_resample(demos: Sequence, m: int, base_seed: int = 0) -> list:
    """``m`` resamples, each the size of ``demos``, drawn with replacement
    at the demonstration level. Resample ``i`` uses seed ``base_seed + i``."""
    demos = list(demos)
    if not demos:
        raise InputError("cannot resample an empty dataset")
    if m < 1:
        raise ConfigError("ensemble size must be >= 1")
    out = []
    for s in member_seeds(m, base_seed):
        idx = np.random.default_rng(s).integers(0, len(demos), len(demos))
        out.append([demos[i] for i in idx])
    return out


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple
    member_seeds: tuple
    z_value: float = Z_95

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "member_seeds", tuple(int(s) for s in self.member_seeds))
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")
        if len(self.members) != len(self.member_seeds):
            raise ConfigError("one seed per member is required")
        if not self.z_value > 0:
            raise ConfigError("z_value must be positive")

    @property
    def m(self) -> int:
        return len(self.members)


def _train_one(args):
    trainer, i, data, seed = args
    try:
        return trainer(data, seed)
    except DlfdError as e:
        raise type(e)(f"ensemble member {i}: {e}") from None


def fit_ensemble(trainer: Callable, demos: Sequence, m: int = 5, base_seed: int = 0,
                 z_value: float = Z_95, workers: int = 1) -> Ensemble:
    """Train one member per bootstrap resample.

    With ``workers > 1`` members train in separate processes (the trainer
    must then be picklable); results are collected in member order either way.
    """
    sets = bootstrap_resample(demos, m, base_seed)
    seeds = member_seeds(m, base_seed)
    jobs = [(trainer, i, d, s) for i, (d, s) in enumerate(zip(sets, seeds))]
    if workers > 1 and m > 1:
        with ProcessPoolExecutor(max_workers=min(workers, m)) as ex:
            members = list(ex.map(_train_one, jobs))
    else:
        members = [_train_one(j) for j in jobs]
    return Ensemble(tuple(members), tuple(seeds), z_value)


def aggregate(outputs, z_value: float = Z_95):
    """Mean, sample std (divisor m-1, zero for m=1) and the normal-approximation
    interval ``mean +- z std / sqrt(m)`` over axis 0 of ``outputs``."""
    Y = np.asarray(outputs, dtype=float)
    m = Y.shape[0]
    mean = Y.mean(axis=0)
    std = Y.std(axis=0, ddof=1) if m > 1 else np.zeros_like(mean)
    half = z_value * std / np.sqrt(m)
    return mean, std, mean - half, mean + half


def predict_with_ci(ens: Ensemble, X):
    """``(mean, std, ci_low, ci_high)`` of member predictions on ``X``."""
    return aggregate([mem.predict(X) for mem in ens.members], ens.z_value)
