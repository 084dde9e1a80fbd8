import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alpe_lob.baselines import (MODEL_IDS, WINDOW, AlpeForecaster, ConfigError, MLPForecaster,
                                NaiveForecaster, RBFNetwork, RBFNNForecaster, RollingWindow, WindowMLP,
                                _training_pairs, kmeans, make_forecaster, mlp_fit_predict,
                                naive_predict, rbfnn_fit_predict)
from alpe_lob.features import simple_features
from alpe_lob.lob_ingest import LobEvent, SyntheticStreamConfig, generate_synthetic_stream, scale_prices


def stream(n=60, seed=0):
    return generate_synthetic_stream(SyntheticStreamConfig(n_events=n, seed=seed, volatility=0.2))


def random_window(seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(1, 2, size=(WINDOW, 4)), 100 + rng.normal(scale=0.1, size=WINDOW)


def test_rolling_window_capacity_and_eviction():
    w = RollingWindow(3)
    for i in range(5):
        w.push(np.array([float(i)]), 100.0 + i)
        assert len(w) <= 3
    assert w.full
    assert w.mids().tolist() == [102.0, 103.0, 104.0]
    assert w.features()[:, 0].tolist() == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        RollingWindow(0)


# -- naive -------------------------------------------------------------------------------------------

def test_naive_examples():
    w = RollingWindow()
    with pytest.raises(ValueError):
        naive_predict(w)
    w.push(np.zeros(4), 100.0)
    assert naive_predict(w) == 100.0
    w.push(np.zeros(4), 101.5)
    assert naive_predict(w) == 101.5


def test_naive_constant_stream_has_zero_error():
    f = NaiveForecaster()
    evs = [LobEvent(i, 10.01, 1, 9.99, 1) for i in range(20)]
    for e in evs:
        f.observe(e, simple_features(e))
        assert f.predict_next() == 10.0


@given(st.floats(0.01, 100.0))
def test_naive_scale_equivariant(c):
    evs = stream(15)
    a, b = NaiveForecaster(), NaiveForecaster()
    for e, s in zip(evs, scale_prices(evs, c)):
        a.observe(e, simple_features(e))
        b.observe(s, simple_features(s))
        assert b.predict_next() == pytest.approx(c * a.predict_next(), rel=1e-14)


# -- pairs ---------------------------------------------------------------------------------------------

def test_window_of_ten_gives_nine_pairs():
    X, y = random_window(0)
    Xt, yt, x_new = _training_pairs(X, y)
    assert Xt.shape == (9, 4) and yt.shape == (9,)
    np.testing.assert_array_equal(yt, y[1:])
    assert x_new.shape == (4,)


# -- MLP -----------------------------------------------------------------------------------------------

def test_mlp_constant_regression():
    X = np.ones((WINDOW, 4))
    y = np.full(WINDOW, 101.37)
    assert abs(mlp_fit_predict(X, y, seed=3) - 101.37) < 1e-3


def test_mlp_deterministic_and_finite():
    X, y = random_window(1)
    a = mlp_fit_predict(X, y, seed=5)
    assert a == mlp_fit_predict(X, y, seed=5)
    assert np.isfinite(a)


def test_mlp_requires_full_window():
    X, y = random_window(1)
    with pytest.raises(ValueError, match="full window"):
        mlp_fit_predict(X[:5], y[:5])


def test_window_mlp_estimator_learns():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(30, 2))
    y = 3 * X[:, 0] + 1
    model = WindowMLP(n_steps=500, lr=1e-2).fit(X, y)
    assert np.mean((model.predict(X) - y) ** 2) < 0.05 * np.var(y)
    assert model.get_params()["hidden_width"] == 32


# -- RBFNN ---------------------------------------------------------------------------------------------

def test_rbf_identical_features_give_mean_target():
    X = np.full((WINDOW, 4), 3.0)
    y = np.arange(WINDOW, dtype=float) + 100
    assert rbfnn_fit_predict(X, y) == pytest.approx(y[1:].mean(), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_rbf_exact_on_single_activation_targets(seed):
    X = np.random.default_rng(seed).uniform(size=(9, 4))
    probe = RBFNetwork(random_state=seed).fit(X, np.zeros(9))
    y = 2.0 + 3.0 * probe.activations(X)[:, 0]
    fitted = RBFNetwork(random_state=seed).fit(X, y)
    assert np.abs(fitted.predict(X) - y).max() < 1e-8


def test_rbf_deterministic():
    X, y = random_window(2)
    assert rbfnn_fit_predict(X, y, seed=4) == rbfnn_fit_predict(X, y, seed=4)


def test_rbf_requires_full_window():
    X, y = random_window(2)
    with pytest.raises(ValueError, match="full window"):
        rbfnn_fit_predict(X[:9], y[:9])


def test_kmeans_small_and_duplicate_inputs():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(kmeans(pts, 4), [[0.0, 0.0], [1.0, 1.0]])
    rng = np.random.default_rng(0)
    blobs = np.vstack([rng.normal(c, 0.01, size=(10, 2)) for c in (0.0, 5.0)])
    centers = kmeans(blobs, 2, seed=1)
    np.testing.assert_allclose(np.sort(centers[:, 0]), [0.0, 5.0], atol=0.02)


@given(arrays(float, (WINDOW, 3), elements=st.floats(-1e3, 1e3)),
       arrays(float, WINDOW, elements=st.floats(1.0, 1e4)), st.integers(0, 100))
def test_baseline_predictions_finite(X, y, seed):
    assert np.isfinite(rbfnn_fit_predict(X, y, seed=seed))
    assert np.isfinite(mlp_fit_predict(X, y, seed=seed, n_steps=5))


# -- contract and registry --------------------------------------------------------------------------

@pytest.mark.parametrize("model", MODEL_IDS)
def test_reset_restores_initial_behaviour(model):
    evs = stream(25)
    f = make_forecaster(model, 4, seed=3)

    def run():
        out = []
        for e in evs:
            f.observe(e, simple_features(e))
            if f.ready:
                out.append(f.predict_next())
        return out
    first = run()
    f.reset(3)
    assert run() == first


def test_readiness():
    evs = stream(12)
    for cls in (MLPForecaster, RBFNNForecaster):
        f = cls()
        for i, e in enumerate(evs[:WINDOW]):
            assert not f.ready
            f.observe(e, simple_features(e))
        assert f.ready
    a = AlpeForecaster(4)
    assert not a.ready
    with pytest.raises(ValueError):
        a.predict_next()


def test_unknown_model_is_config_error():
    with pytest.raises(ConfigError, match="arima"):
        make_forecaster("arima", 4)


def test_alpe_adapter_rejects_nowcast():
    with pytest.raises(ConfigError):
        make_forecaster("alpe", 4, horizon="same")
