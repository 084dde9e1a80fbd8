"""Rolling-window competitor forecasters and the common forecaster contract.

A forecaster sees events one at a time through ``observe`` and then answers
``predict_next`` with a forecast of the next event's mid. Window baselines
refit from scratch on their latest ``window`` events every time.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .agent import AlpeAgent, AlpeConfig
from .features import apply_minmax, fit_minmax
from .lob_ingest import LobEvent, mid_price
from .nn import DenseNet, DenseNetConfig

WINDOW = 10


class ConfigError(ValueError):
    pass


class Forecaster(ABC):
    """Observe events in order; forecast the next mid from history only."""

    model_id = "?"

    @abstractmethod
    def observe(self, event: LobEvent, features: np.ndarray) -> None: ...

    @abstractmethod
    def predict_next(self) -> float: ...

    @abstractmethod
    def reset(self, seed: int) -> None: ...

    @property
    def ready(self) -> bool:
        return True


class RollingWindow:
    """Last ``capacity`` (features, mid) pairs, oldest evicted first."""

    def __init__(self, capacity: int = WINDOW):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[tuple[np.ndarray, float]] = deque(maxlen=capacity)

    def push(self, features: np.ndarray, mid: float) -> None:
        self._items.append((np.asarray(features, dtype=float), float(mid)))

    def __len__(self) -> int:
        return len(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) == self.capacity

    def features(self) -> np.ndarray:
        return np.vstack([f for f, _ in self._items])

    def mids(self) -> np.ndarray:
        return np.array([m for _, m in self._items])

    def clear(self) -> None:
        self._items.clear()


def _scaled_window(features: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Min-max fit on the window itself, then importance weighting."""
    Xs = apply_minmax(fit_minmax(features), features)
    return Xs if weights is None else Xs * weights


def _training_pairs(features: np.ndarray, mids: np.ndarray, weights=None):
    """Features at i paired with the mid at i + 1; returns (X, y, x_newest)."""
    Xs = _scaled_window(features, weights)
    return Xs[:-1], np.asarray(mids[1:], dtype=float), Xs[-1]


# -- naive ---------------------------------------------------------------------

def naive_predict(window: RollingWindow) -> float:
    if len(window) == 0:
        raise ValueError("naive forecast needs at least one observed event")
    return float(window.mids()[-1])


class NaiveForecaster(Forecaster):
    """Persistence: the next mid equals the last observed mid."""

    model_id = "naive"

    def __init__(self, window: int = WINDOW):
        self.window = RollingWindow(window)

    def observe(self, event, features):
        self.window.push(features, mid_price(event))

    def predict_next(self):
        return naive_predict(self.window)

    def reset(self, seed):
        self.window.clear()

    @property
    def ready(self):
        return len(self.window) > 0


# -- MLP ---------------------------------------------------------------------------

class WindowMLP(RegressorMixin, BaseEstimator):
    """Small ReLU net trained full-batch with Adam on standardized targets."""

    def __init__(self, hidden_layers: int = 2, hidden_width: int = 32, n_steps: int = 50,
                 lr: float = 1e-3, random_state: int = 0):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.n_steps = n_steps
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std())
        z = (y - self.y_mean_) / self.y_scale_ if self.y_scale_ > 0 else np.zeros_like(y)
        cfg = DenseNetConfig(input_dim=X.shape[1], hidden_layers=self.hidden_layers,
                             hidden_width=self.hidden_width, use_batchnorm=False, lr=self.lr)
        self.net_ = DenseNet(cfg, seed=np.random.SeedSequence(self.random_state))
        for _ in range(self.n_steps):
            self.net_.train_step(X, z)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X)
        return self.y_mean_ + self.y_scale_ * self.net_.forward(X)


def mlp_fit_predict(features: np.ndarray, mids: np.ndarray, seed: int = 0, weights=None,
                    hidden_layers: int = 2, hidden_width: int = 32, n_steps: int = 50,
                    lr: float = 1e-3, window: int = WINDOW) -> float:
    if len(mids) != window:
        raise ValueError(f"MLP baseline needs a full window of {window} events, got {len(mids)}")
    X, y, x_new = _training_pairs(features, mids, weights)
    model = WindowMLP(hidden_layers, hidden_width, n_steps, lr, seed).fit(X, y)
    return float(model.predict(x_new[None, :])[0])


class MLPForecaster(Forecaster):
    model_id = "mlp"

    def __init__(self, weights=None, seed: int = 0, window: int = WINDOW, **params):
        self.window = RollingWindow(window)
        self.weights = weights
        self.params = params
        self.seed = seed
        self._last_seq = -1

    def observe(self, event, features):
        self.window.push(features, mid_price(event))
        self._last_seq = event.seq

    @property
    def ready(self):
        return self.window.full

    def predict_next(self):
        # per-event seed keeps forecasts independent of how far the stream runs
        seed = np.random.SeedSequence([self.seed, self._last_seq]).generate_state(1)[0]
        return mlp_fit_predict(self.window.features(), self.window.mids(), int(seed), self.weights,
                               window=self.window.capacity, **self.params)

    def reset(self, seed):
        self.window.clear()
        self.seed = seed
        self._last_seq = -1


# -- RBFNN --------------------------------------------------------------------------

def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations; duplicate centres dropped."""
    X = np.asarray(X, dtype=float)
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] <= k:
        return uniq
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(X.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        probs = d2 / total if total > 0 else np.full(X.shape[0], 1.0 / X.shape[0])
        centers.append(X[rng.choice(X.shape[0], p=probs)])
    C = np.array(centers)
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(C.shape[0]):
            members = X[labels == j]
            if members.shape[0]:
                C[j] = members.mean(axis=0)
    return np.unique(C, axis=0)


class RBFNetwork(RegressorMixin, BaseEstimator):
    """Gaussian RBF layer on k-means centres with a ridge linear readout.

    Width is the median distance between distinct centres (1.0 when fewer
    than two centres survive or the median is 0). The readout has an
    unpenalized intercept: activations and targets are centred first.

    The ridge system is solved once and then refined ``n_refine`` times
    against the unpenalized residual (iterated Tikhonov). The ridge keeps
    the solve well posed for coincident centres while the refinement
    removes most of its shrinkage bias on well-conditioned windows.
    """

    def __init__(self, n_centers: int = 4, ridge: float = 1e-6, n_refine: int = 2,
                 random_state: int = 0):
        self.n_centers = n_centers
        self.ridge = ridge
        self.n_refine = n_refine
        self.random_state = random_state

    def activations(self, X) -> np.ndarray:
        d2 = ((np.atleast_2d(X)[:, None, :] - self.centers_[None]) ** 2).sum(-1)
        return np.exp(-d2 / (2.0 * self.width_ ** 2))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.centers_ = kmeans(X, self.n_centers, self.random_state)
        width = 1.0
        if self.centers_.shape[0] >= 2:
            diff = self.centers_[:, None, :] - self.centers_[None]
            dist = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(self.centers_.shape[0], 1)]
            med = float(np.median(dist))
            if med > 0:
                width = med
        self.width_ = width
        phi = self.activations(X)
        self.phi_mean_ = phi.mean(axis=0)
        self.y_mean_ = float(y.mean())
        P = phi - self.phi_mean_
        yc = y - self.y_mean_
        A = P.T @ P + self.ridge * np.eye(P.shape[1])
        coef = np.linalg.solve(A, P.T @ yc)
        for _ in range(self.n_refine):
            coef = coef + np.linalg.solve(A, P.T @ (yc - P @ coef))
        self.coef_ = coef
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.y_mean_ + (self.activations(check_array(X)) - self.phi_mean_) @ self.coef_


def rbfnn_fit_predict(features: np.ndarray, mids: np.ndarray, k_centers: int = 4, seed: int = 0,
                      weights=None, ridge: float = 1e-6, window: int = WINDOW) -> float:
    if len(mids) != window:
        raise ValueError(f"RBFNN baseline needs a full window of {window} events, got {len(mids)}")
    X, y, x_new = _training_pairs(features, mids, weights)
    model = RBFNetwork(k_centers, ridge, random_state=seed).fit(X, y)
    return float(model.predict(x_new[None, :])[0])


class RBFNNForecaster(Forecaster):
    model_id = "rbfnn"

    def __init__(self, weights=None, seed: int = 0, window: int = WINDOW, k_centers: int = 4,
                 ridge: float = 1e-6):
        self.window = RollingWindow(window)
        self.weights = weights
        self.seed = seed
        self.k_centers = k_centers
        self.ridge = ridge
        self._last_seq = -1

    def observe(self, event, features):
        self.window.push(features, mid_price(event))
        self._last_seq = event.seq

    @property
    def ready(self):
        return self.window.full

    def predict_next(self):
        seed = np.random.SeedSequence([self.seed, self._last_seq]).generate_state(1)[0]
        return rbfnn_fit_predict(self.window.features(), self.window.mids(), self.k_centers, int(seed),
                                 self.weights, self.ridge, self.window.capacity)

    def reset(self, seed):
        self.window.clear()
        self.seed = seed
        self._last_seq = -1


# -- ALPE adapter ---------------------------------------------------------------------

class AlpeForecaster(Forecaster):
    """Contract wrapper; the agent itself only ever sees the current event."""

    model_id = "alpe"

    def __init__(self, n_features: int, weights=None, seed: int = 0, **params):
        self.n_features = n_features
        self.weights = weights
        self.params = {k: v for k, v in params.items() if k != "window"}
        self.reset(seed)

    def observe(self, event, features):
        self._last = self.agent.step(event, features)

    @property
    def ready(self):
        return self._last is not None

    def predict_next(self):
        if self._last is None:
            raise ValueError("no event observed yet")
        return self._last.prediction

    def reset(self, seed):
        if self.params.get("horizon", "next") != "next":
            raise ConfigError("the rolling protocol scores next-event forecasts; use horizon=next")
        self.agent = AlpeAgent(AlpeConfig(seed=seed, **self.params), self.n_features, self.weights)
        self._last = None


MODEL_IDS = ("naive", "mlp", "rbfnn", "alpe")


def make_forecaster(model_id: str, n_features: int, weights=None, seed: int = 0, **params) -> Forecaster:
    if model_id == "naive":
        return NaiveForecaster(**params)
    if model_id == "mlp":
        return MLPForecaster(weights, seed, **params)
    if model_id == "rbfnn":
        return RBFNNForecaster(weights, seed, **params)
    if model_id == "alpe":
        return AlpeForecaster(n_features, weights, seed, **params)
    raise ConfigError(f"unknown model id {model_id!r}; registered: {', '.join(MODEL_IDS)}")


def default_window(model_id: str) -> int:
    return 1 if model_id == "alpe" else WINDOW
