"""End-to-end training and evaluation shared by the CLI and the tests.

``split -> make_windows(N) -> input normaliser -> target scaler -> trainer``.
Trainers see standardised targets; every prediction leaving this module is
decoded back to physical action units.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines as bl
from . import ekf
from .bagging import Ensemble, aggregate, fit_ensemble, member_seeds
from .dataset import (Normalizer, TargetScaler, WindowedDemo, apply, fit_normalizer, fit_target_scaler,
                      make_windows, sequence_view, split)
from .errors import ConfigError, ParseError
from .metrics import MetricsReport, mean_pose_error, regression_metrics
from .rmlp import RmlpConfig, RmlpNetwork, init_network, predict_sequence
from .serialize import ENSEMBLE_FORMAT, FORMAT_VERSION, dumps, model_from_dict, model_to_dict

MODEL_NAMES = ("kf_rmlp", "feedforward", "rnn", "gru", "lstm")
CELL_FOR = {
    "feedforward": bl.CellKind.FEEDFORWARD,
    "rnn": bl.CellKind.SIMPLE_RNN,
    "gru": bl.CellKind.GRU,
    "lstm": bl.CellKind.LSTM,
}

# pipeline defaults for the synthetic task
DEFAULT_HIDDEN = 4
DEFAULT_EKF = ekf.EkfConfig(epsilon=0.1, eta=0.01, q=1e-5, epochs=10)
DEFAULT_OPTIM = bl.OptimConfig(learning_rate=1e-3, l1_lambda=0.1, epochs=150, batch_size=32)


@dataclass(frozen=True)
class TrainSpec:
    model: str = "kf_rmlp"
    N: int = 3
    hidden: int = DEFAULT_HIDDEN
    bptt_depth: Optional[int] = None
    init_std: float = 0.05
    ekf: ekf.EkfConfig = DEFAULT_EKF
    optim: bl.OptimConfig = DEFAULT_OPTIM
    ensemble: int = 1
    split_seed: int = 0
    seed: int = 0
    select_on_validation: bool = True

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if self.N < 1 or self.hidden < 1 or self.ensemble < 1:
            raise ConfigError("N, hidden and ensemble must be >= 1")
        if self.bptt_depth is not None and self.bptt_depth < 1:
            raise ConfigError("bptt_depth must be >= 1")

    @property
    def depth(self) -> int:
        return self.N if self.bptt_depth is None else self.bptt_depth

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainSpec":
        d = dict(d)
        d["ekf"] = ekf.EkfConfig(**d["ekf"])
        d["optim"] = bl.OptimConfig(**d["optim"])
        return cls(**d)


@dataclass(frozen=True)
class Geometry:
    N: int
    step_dim: int
    calib_dim: int
    n_outputs: int

    @property
    def width(self) -> int:
        return self.N * self.step_dim + self.calib_dim

    @classmethod
    def of(cls, w: WindowedDemo) -> "Geometry":
        return cls(w.N, w.step_dim, w.calib_dim, w.Y.shape[1])


@dataclass(frozen=True, eq=False)
class Member:
    """A trained network plus what it needs to turn normalised windows of
    one demonstration into physical actions."""

    core: object
    scaler: TargetScaler
    geometry: Geometry
    log: Optional[ekf.TrainingLog] = None

    def raw_predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if isinstance(self.core, RmlpNetwork):
            return predict_sequence(self.core, X)
        if self.core.recurrent:
            g = self.geometry
            X = sequence_view(X, g.N, g.step_dim, g.calib_dim)
        return bl.predict_batch(self.core, X)

    def predict(self, X) -> np.ndarray:
        return self.scaler.decode(self.raw_predict(X))


@dataclass(frozen=True, eq=False)
class Trainer:
    """Picklable ``trainer(demos, seed) -> Member`` for one model family."""

    spec: TrainSpec
    scaler: TargetScaler
    geometry: Geometry
    validation: tuple = ()

    def _encode(self, demos):
        return [w.with_targets(self.scaler.encode(w.Y)) for w in demos]

    def build(self, seed: int):
        s, g = self.spec, self.geometry
        if s.model == "kf_rmlp":
            cfg = RmlpConfig((g.width, s.hidden, g.n_outputs), bptt_depth=s.depth, init_std=s.init_std, seed=seed)
            return init_network(cfg)
        kind = CELL_FOR[s.model]
        d_in = g.width if kind == bl.CellKind.FEEDFORWARD else g.step_dim + g.calib_dim
        return bl.init_model(kind, (d_in, s.hidden, g.n_outputs), seed)

    def __call__(self, demos, seed: int) -> Member:
        data = self._encode(demos)
        val = self._encode(self.validation) if self.spec.select_on_validation and self.validation else None
        core = self.build(seed)
        if isinstance(core, RmlpNetwork):
            core, log = ekf.fit(core, data, dataclasses.replace(self.spec.ekf, seed=seed), validation=val)
        else:
            core, log = bl.sgd_fit(core, data, dataclasses.replace(self.spec.optim, seed=seed), validation=val)
        return Member(core, self.scaler, self.geometry, log)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: TrainSpec
    normalizer: Normalizer
    scaler: TargetScaler
    geometry: Geometry
    ensemble: Ensemble
    data_digest: str = ""

    @property
    def is_ensemble(self) -> bool:
        return self.spec.ensemble > 1

    def predict(self, demo: WindowedDemo):
        """``(mean, std, ci_low, ci_high)`` in physical units for the windows of
        one raw (unnormalised) demonstration."""
        X = self.normalizer.transform(demo.X)
        return aggregate([m.predict(X) for m in self.ensemble.members], self.ensemble.z_value)


@dataclass
class Partitions:
    fit: list
    val: list
    test: list
    windows: dict = field(default_factory=dict)


def prepare(demos, N: int, split_seed: int) -> Partitions:
    """Split demonstrations and window every partition (raw inputs)."""
    fit_d, val_d, test_d = split(demos, split_seed)
    return Partitions(fit_d, val_d, test_d,
                      {"fit": make_windows(fit_d, N), "val": make_windows(val_d, N), "test": make_windows(test_d, N)})


def train(demos, spec: TrainSpec, workers: int = 1, data_digest: str = "") -> TrainedModel:
    parts = prepare(demos, spec.N, spec.split_seed)
    fit_w = parts.windows["fit"]
    norm = fit_normalizer(fit_w)
    scaler = fit_target_scaler(fit_w)
    geom = Geometry.of(fit_w[0])
    trainer = Trainer(spec, scaler, geom, tuple(apply(norm, parts.windows["val"])))
    fit_n = apply(norm, fit_w)
    if spec.ensemble > 1:
        ens = fit_ensemble(trainer, fit_n, spec.ensemble, spec.seed, workers=workers)
    else:
        ens = Ensemble((trainer(fit_n, spec.seed),), (spec.seed,))
    return TrainedModel(spec, norm, scaler, geom, ens, data_digest)


def predict_windows(model: TrainedModel, windows: Sequence[WindowedDemo]):
    """Stacked ``(truth, mean, ci_low, ci_high, demo_ids, ts)`` over demos."""
    outs = [model.predict(w) for w in windows]
    truth = np.concatenate([w.Y for w in windows])
    mean = np.concatenate([o[0] for o in outs])
    lo = np.concatenate([o[2] for o in outs])
    hi = np.concatenate([o[3] for o in outs])
    ids = [w.demo_id for w in windows for _ in range(len(w))]
    ts = np.concatenate([w.ts for w in windows])
    return truth, mean, lo, hi, ids, ts


def evaluate(model: TrainedModel, windows: Sequence[WindowedDemo], name: str, threshold: float = 0.01):
    """Report in physical units, with the same metrics on standardised targets
    under ``normalized``. Returns ``(report, (truth, mean, lo, hi, ids, ts))``."""
    traj = predict_windows(model, windows)
    truth, mean = traj[0], traj[1]
    rep = regression_metrics(mean, truth, threshold, name)
    sc = model.scaler
    nz = regression_metrics(sc.encode(mean), sc.encode(truth), threshold, name)
    rep.normalized = {"MAE": nz.mae, "AE": nz.ae, "Loss": nz.loss, "E>0.01": nz.pct_gt_threshold}
    if truth.shape[1] == 7:
        rep.pose_error_mean = mean_pose_error(mean, truth)
    return rep, traj


# ------------------------------------------------------------------ persistence

def save_trained(model: TrainedModel, directory) -> list:
    """Write ``model.json`` plus one member file per ensemble member. Returns
    the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    members = []
    for i, (m, seed) in enumerate(zip(model.ensemble.members, model.ensemble.member_seeds), start=1):
        p = d / f"member_{i:02d}.json"
        p.write_text(dumps(model_to_dict(m.core)))
        paths.append(p)
        if m.log is not None:
            lp = d / f"member_{i:02d}.log.tsv"
            m.log.save(lp)
            paths.append(lp)
        members.append({"file": p.name, "seed": seed})
    doc = {
        "format": ENSEMBLE_FORMAT,
        "version": FORMAT_VERSION,
        "model": model.spec.model,
        "spec": model.spec.to_dict(),
        "split_seed": model.spec.split_seed,
        "data_digest": model.data_digest,
        "geometry": dataclasses.asdict(model.geometry),
        "normalizer": model.normalizer.to_dict(),
        "target_scaler": model.scaler.to_dict(),
        "z_value": model.ensemble.z_value,
        "members": members,
    }
    mp = d / "model.json"
    mp.write_text(dumps(doc))
    return [mp] + paths


def load_trained(directory) -> TrainedModel:
    d = Path(directory)
    mp = d / "model.json" if d.is_dir() else d
    try:
        doc = json.loads(mp.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{mp}: {e}") from None
    if doc.get("format") != ENSEMBLE_FORMAT or doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{mp}: not a dlfd model manifest")
    spec = TrainSpec.from_dict(doc["spec"])
    geom = Geometry(**doc["geometry"])
    scaler = TargetScaler.from_dict(doc["target_scaler"])
    members = []
    for m in doc["members"]:
        core = model_from_dict(json.loads((mp.parent / m["file"]).read_text()))
        members.append(Member(core, scaler, geom))
    ens = Ensemble(tuple(members), tuple(m["seed"] for m in doc["members"]), float(doc["z_value"]))
    return TrainedModel(spec, Normalizer.from_dict(doc["normalizer"]), scaler, geom, ens, doc.get("data_digest", ""))


__all__ = [
    "MODEL_NAMES", "TrainSpec", "Trainer", "Member", "TrainedModel", "Geometry", "prepare", "train",
    "evaluate", "predict_windows", "save_trained", "load_trained", "member_seeds",
]
