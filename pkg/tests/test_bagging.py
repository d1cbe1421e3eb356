import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlfd.bagging import Ensemble, aggregate, bootstrap_resample, fit_ensemble, member_seeds, predict_with_ci
from dlfd.errors import ConfigError, InputError


class Const:
    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def predict(self, X):
        return np.broadcast_to(self.v, (len(X), self.v.size)).copy()


class MeanOf:
    """Toy trainer: member predicts the mean of the demos it was given."""

    def __call__(self, demos, seed):
        return Const([np.mean(demos)])


class Failing:
    def __call__(self, demos, seed):
        if seed == 3:
            raise InputError("bad data")
        return Const([0.0])


def test_resample_contract():
    demos = ["a", "b", "c"]
    sets = bootstrap_resample(demos, 2, base_seed=10)
    assert len(sets) == 2
    assert all(len(s) == 3 and set(s) <= set(demos) for s in sets)
    assert sets == bootstrap_resample(demos, 2, base_seed=10)


def test_resample_seeds_follow_base_plus_index():
    assert member_seeds(5, 0) == [1, 2, 3, 4, 5]
    assert member_seeds(3, 40) == [41, 42, 43]
    demos = list(range(20))
    sets = bootstrap_resample(demos, 3, base_seed=7)
    for s, seed in zip(sets, [8, 9, 10]):
        idx = np.random.default_rng(seed).integers(0, 20, 20)
        assert s == [demos[i] for i in idx]


def test_resample_errors():
    with pytest.raises(InputError):
        bootstrap_resample([], 3)
    with pytest.raises(ConfigError):
        bootstrap_resample([1], 0)


def test_fit_ensemble_sizes_and_seeds():
    ens = fit_ensemble(MeanOf(), [1.0, 2.0, 3.0], m=4, base_seed=0)
    assert ens.m == 4 and ens.member_seeds == (1, 2, 3, 4)
    ens5 = fit_ensemble(MeanOf(), [1.0, 2.0, 3.0], m=5, base_seed=0)
    assert ens5.m == 5


def test_member_error_names_index():
    with pytest.raises(InputError, match="member 2"):
        fit_ensemble(Failing(), [1.0, 2.0], m=3, base_seed=0)


def test_ci_two_members_by_hand():
    ens = Ensemble((Const([0.0]), Const([1.0])), (1, 2))
    mean, std, lo, hi = predict_with_ci(ens, np.zeros((1, 3)))
    assert mean[0, 0] == 0.5
    assert std[0, 0] == pytest.approx(np.sqrt(0.5), abs=1e-15)
    assert lo[0, 0] == pytest.approx(0.5 - 1.96 * np.sqrt(0.5) / np.sqrt(2), abs=1e-15)
    assert round(lo[0, 0], 3) == -0.480 and round(hi[0, 0], 3) == 1.480
    assert round(std[0, 0], 5) == 0.70711


def test_identical_members_zero_width():
    ens = Ensemble((Const([2.0, -1.0]),) * 3, (1, 2, 3))
    mean, std, lo, hi = predict_with_ci(ens, np.zeros((2, 1)))
    assert np.all(std == 0) and np.array_equal(lo, mean) and np.array_equal(hi, mean)


def test_single_member_collapses_to_point():
    ens = Ensemble((Const([0.25]),), (1,))
    mean, std, lo, hi = predict_with_ci(ens, np.zeros((3, 1)))
    assert np.all(mean == 0.25) and np.all(std == 0) and np.array_equal(lo, hi)


def test_ensemble_validation():
    with pytest.raises(ConfigError):
        Ensemble((), ())
    with pytest.raises(ConfigError):
        Ensemble((Const([0.0]),), (1, 2))
    with pytest.raises(ConfigError):
        Ensemble((Const([0.0]),), (1,), z_value=0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_aggregation_permutation_invariant(vals, rnd):
    outs = np.array(vals)[:, None, None]
    perm = list(range(len(vals)))
    rnd.shuffle(perm)
    a = aggregate(outs)
    b = aggregate(outs[perm])
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("m", [2, 4, 5])
def test_variance_law(m):
    rng = np.random.default_rng(100 + m)
    sigma2 = 0.7
    preds = rng.normal(0.0, np.sqrt(sigma2), size=(10_000, m))
    means = preds.mean(axis=1)
    assert abs(means.var(ddof=1) - sigma2 / m) <= 0.1 * sigma2 / m


def test_ensemble_mse_not_above_mean_member_mse():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(50, 3))
    members = [Const(0) for _ in range(5)]
    outs = np.stack([truth + rng.normal(0.3, 0.5, truth.shape) for _ in members])
    mean, _, _, _ = aggregate(outs)
    ens_mse = np.mean((mean - truth) ** 2)
    member_mse = np.mean([np.mean((o - truth) ** 2) for o in outs])
    assert ens_mse <= member_mse
