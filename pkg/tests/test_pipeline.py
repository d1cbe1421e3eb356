import json

import numpy as np
import pytest

from dlfd import pipeline as pl
from dlfd.baselines import OptimConfig, init_model
from dlfd.ekf import EkfConfig
from dlfd.errors import ConfigError, ParseError
from dlfd.rmlp import RmlpConfig, init_network
from dlfd.serialize import dumps, load_model, model_from_dict, model_to_dict, save_model
from dlfd.tasksim import DATASET_NOISE, SimConfig, simulate_dataset

FAST_EKF = EkfConfig(epochs=1)
FAST_OPT = OptimConfig(epochs=2)


@pytest.fixture(scope="module")
def demos():
    return simulate_dataset(8, 5, SimConfig(steps=16, noise_std=DATASET_NOISE))


@pytest.mark.parametrize("model", [
    init_network(RmlpConfig((5, 4, 3), seed=2, init_std=0.3)),
    init_network(RmlpConfig((5, 4, 3, 2), bias=False, bptt_depth=2, seed=1)),
    init_model("lstm", (3, 4, 2), 3),
    init_model("feedforward", (6, 3, 2), 1),
])
def test_model_file_roundtrip_bit_exact(tmp_path, model):
    w = model.weights.copy()
    w[0] = 0.1 + 0.2
    w[-1] = -1e-310
    model = model.with_weights(w) if hasattr(model, "with_weights") else type(model)(model.config, w)
    back = load_model(save_model(model, tmp_path / "m.json"))
    assert type(back) is type(model)
    assert back.weights.tobytes() == model.weights.tobytes()
    assert dumps(model_to_dict(back)) == dumps(model_to_dict(model))


def test_model_file_errors(tmp_path):
    d = model_to_dict(init_model("gru", (2, 3, 1)))
    with pytest.raises(ParseError):
        model_from_dict(dict(d, version=2))
    with pytest.raises(ParseError):
        model_from_dict(dict(d, n_weights=3))
    with pytest.raises(ParseError):
        model_from_dict(dict(d, kind="transformer"))
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_model(p)


def test_spec_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        pl.TrainSpec(model="svm")
    with pytest.raises(ConfigError):
        pl.TrainSpec(ensemble=0)
    s = pl.TrainSpec(model="gru", ensemble=3, ekf=FAST_EKF, optim=FAST_OPT, split_seed=4)
    assert pl.TrainSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    assert pl.TrainSpec(N=5).depth == 5 and pl.TrainSpec(N=5, bptt_depth=2).depth == 2


def test_prepare_partitions(demos):
    parts = pl.prepare(demos, 3, 0)
    assert (len(parts.fit), len(parts.val), len(parts.test)) == (5, 2, 1)
    assert all(len(w) == 13 for w in parts.windows["fit"])


@pytest.mark.parametrize("name", pl.MODEL_NAMES)
def test_train_predict_save_load(tmp_path, demos, name):
    spec = pl.TrainSpec(model=name, ekf=FAST_EKF, optim=FAST_OPT, split_seed=1, seed=2)
    m = pl.train(demos, spec)
    parts = pl.prepare(demos, spec.N, spec.split_seed)
    rep, (truth, mean, lo, hi, ids, ts) = pl.evaluate(m, parts.windows["test"], name)
    assert mean.shape == truth.shape == (13, 7)
    assert np.array_equal(lo, mean) and np.array_equal(hi, mean)
    assert np.isfinite(rep.loss) and rep.pose_error_mean is not None and set(rep.normalized) == {"MAE", "AE", "Loss", "E>0.01"}
    pl.save_trained(m, tmp_path)
    back = pl.load_trained(tmp_path)
    rep2, traj2 = pl.evaluate(back, parts.windows["test"], name)
    assert traj2[1].tobytes() == mean.tobytes() and rep2.row() == rep.row()


def test_ensemble_manifest_and_ci(tmp_path, demos):
    spec = pl.TrainSpec(model="feedforward", ensemble=3, optim=FAST_OPT, split_seed=0, seed=10)
    m = pl.train(demos, spec)
    assert m.ensemble.member_seeds == (11, 12, 13)
    paths = pl.save_trained(m, tmp_path)
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["format"] == "dlfd-ensemble" and [x["seed"] for x in doc["members"]] == [11, 12, 13]
    assert all((tmp_path / x["file"]).is_file() for x in doc["members"])
    assert {p.name for p in paths} >= {"model.json", "member_01.json", "member_03.json"}
    w = pl.prepare(demos, 3, 0).windows["test"][0]
    mean, std, lo, hi = m.predict(w)
    assert np.all(lo <= mean) and np.all(mean <= hi) and np.any(std > 0)
    mean2, *_ = pl.load_trained(tmp_path).predict(w)
    assert mean2.tobytes() == mean.tobytes()


def test_constant_target_columns_predicted_exactly(demos):
    # the grasping arm stays planar: dz and quaternion x,y are always 0
    spec = pl.TrainSpec(model="rnn", optim=FAST_OPT)
    m = pl.train(demos, spec)
    w = pl.prepare(demos, 3, 0).windows["test"][0]
    mean = m.predict(w)[0]
    assert np.all(mean[:, 2] == 0) and np.all(mean[:, 4:6] == 0)


def test_training_deterministic(demos):
    spec = pl.TrainSpec(model="kf_rmlp", ekf=FAST_EKF, seed=3)
    a = pl.train(demos, spec)
    b = pl.train(demos, spec)
    assert a.ensemble.members[0].core.weights.tobytes() == b.ensemble.members[0].core.weights.tobytes()


def test_load_rejects_foreign_manifest(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ParseError):
        pl.load_trained(tmp_path)
