import numpy as np
import pytest

from adacap import metrics
from adacap.errors import ConfigError, DiagnosticError
from adacap.ensemble import (
    EnsembleModel,
    EnsembleSpec,
    fit_ensemble,
    member_predictions,
    predict_ensemble,
    predict_ensemble_label,
    select_members,
)
from adacap.trainer import CLASSIFICATION, TrainConfig, TrainedModel, predict, train

BASE = TrainConfig(width=32, max_iter=20)


def data(n=150, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 5))
    y = np.sin(x[:, 0]) + x[:, 1] * x[:, 2] + 0.3 * rng.standard_normal(n)
    return x, (y - y.mean()) / y.std()


@pytest.fixture(scope="module")
def fitted():
    x, y = data()
    return x, y, fit_ensemble(x, y, EnsembleSpec.bag(1, 4, seed=10), BASE)


class TestSpec:
    def test_constructors(self):
        b1, b2 = EnsembleSpec.bag(1, 10, seed=0), EnsembleSpec.bag(2, 10, seed=10)
        ens = EnsembleSpec.ens(b1, b2)
        assert len(ens.members) == 20
        assert EnsembleSpec.top_k(ens.members, 5).k == 5

    def test_invalid(self):
        with pytest.raises(ConfigError):
            EnsembleSpec.bag(1, 0)
        with pytest.raises(ConfigError):
            EnsembleSpec.top_k([(1, 0), (1, 1)], 3)
        with pytest.raises(ConfigError):
            EnsembleSpec("vote", [(1, 0)])

    def test_round_trip(self):
        spec = EnsembleSpec.top_k([(1, 0), (2, 5)], 1)
        assert EnsembleSpec.from_dict(spec.to_dict()) == spec


class TestSelection:
    def test_best_of_picks_max(self):
        spec = EnsembleSpec.best_of([(1, 3), (1, 1), (1, 2)])
        assert select_members(spec, [0.5, 0.7, 0.6], [3, 1, 2]) == [1]

    def test_best_of_tie_goes_to_lowest_seed(self):
        spec = EnsembleSpec.best_of([(1, 7), (1, 2), (1, 5)])
        assert select_members(spec, [0.9, 0.9, 0.1], [7, 2, 5]) == [1]

    def test_top_k(self):
        spec = EnsembleSpec.top_k([(1, s) for s in range(5)], 2)
        assert select_members(spec, [0.1, 0.5, 0.3, 0.9, 0.2], list(range(5))) == [1, 3]


class TestPredict:
    def test_bag_of_one_is_single_model(self):
        x, y = data(seed=1)
        ens = fit_ensemble(x, y, EnsembleSpec.bag(1, 1, seed=4), BASE)
        single = train(x, y, TrainConfig(width=32, max_iter=20, seed=4))
        assert np.array_equal(predict_ensemble(ens, x), predict(single, x))

    def test_mean_linearity(self, fitted):
        x, _, ens = fitted
        rows = [predict(m, x) for m in ens.models]
        manual = sum(rows) / len(rows)
        assert np.max(np.abs(predict_ensemble(ens, x) - manual)) <= 1e-12

    def test_top_k_full_pool_is_mean(self, fitted):
        x, _, ens = fitted
        top = EnsembleModel(EnsembleSpec.top_k(ens.spec.members, 4), ens.models, [0, 1, 2, 3])
        assert np.array_equal(predict_ensemble(top, x), predict_ensemble(ens, x))

    def test_two_members_average(self, fitted):
        x, _, ens = fitted
        pair = EnsembleModel(ens.spec, ens.models, [0, 1])
        a, b = predict(ens.models[0], x), predict(ens.models[1], x)
        np.testing.assert_allclose(predict_ensemble(pair, x), (a + b) / 2, rtol=0, atol=1e-15)

    def test_identical_members(self, fitted):
        x, _, ens = fitted
        same = EnsembleModel(ens.spec, [ens.models[0]] * 3, [0, 1, 2])
        np.testing.assert_allclose(predict_ensemble(same, x), predict(ens.models[0], x), rtol=1e-15)

    def test_ens_of_two_bags_is_mean_of_all(self):
        x, y = data(n=100, seed=2)
        b1, b2 = EnsembleSpec.bag(1, 2, seed=0), EnsembleSpec.bag(1, 2, seed=2)
        ens = fit_ensemble(x, y, EnsembleSpec.ens(b1, b2), BASE)
        bag1 = fit_ensemble(x, y, b1, BASE)
        bag2 = fit_ensemble(x, y, b2, BASE)
        manual = np.mean(np.vstack([member_predictions(bag1, x), member_predictions(bag2, x)]), axis=0)
        np.testing.assert_allclose(predict_ensemble(ens, x), manual, rtol=0, atol=1e-12)

    def test_save_load(self, fitted, tmp_path):
        x, _, ens = fitted
        again = EnsembleModel.load(ens.save(tmp_path))
        assert np.array_equal(predict_ensemble(again, x), predict_ensemble(ens, x))

    def test_classification_averages_probabilities(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((120, 3))
        y = (x[:, 0] > 0).astype(float)
        ens = fit_ensemble(x, y, EnsembleSpec.bag(1, 3), TrainConfig(width=16, max_iter=15, task=CLASSIFICATION))
        probs = member_predictions(ens, x)
        assert np.all((probs > 0) & (probs < 1))
        np.testing.assert_allclose(predict_ensemble(ens, x), probs.mean(axis=0))
        assert np.array_equal(predict_ensemble_label(ens, x), (probs.mean(axis=0) >= 0.5).astype(int))

    def test_member_failure_reports_index(self, monkeypatch):
        import adacap.ensemble as mod

        def boom(x, y, cfg, pipeline=None):
            if cfg.seed == 1:
                raise DiagnosticError("non-finite loss", iteration=3)
            return train(x, y, cfg)

        monkeypatch.setattr(mod, "train", boom)
        x, y = data(n=60)
        with pytest.raises(DiagnosticError) as info:
            fit_ensemble(x, y, EnsembleSpec.bag(1, 3), BASE)
        assert info.value.member == 1 and info.value.iteration == 3


def test_bagging_reduces_variance():
    x, y = data(n=250, seed=7)
    x_tr, y_tr, x_te, y_te = x[:200], y[:200], x[200:], y[200:]
    cfg = TrainConfig(width=32, max_iter=20)
    singles, bags = [], []
    for r in range(20):
        single = train(x_tr, y_tr, TrainConfig(width=32, max_iter=20, seed=1000 + r))
        singles.append(metrics.r2(y_te, predict(single, x_te)))
        bag = fit_ensemble(x_tr, y_tr, EnsembleSpec.bag(1, 10, seed=10 * r), cfg)
        bags.append(metrics.r2(y_te, predict_ensemble(bag, x_te)))
    assert np.std(bags) < np.std(singles)
