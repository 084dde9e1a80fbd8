"""Batch-free epsilon-greedy mid-price agent.

Each event is seen once. The pending forecast from the previous event is
scored against the new mid, the network takes ``epochs_per_event`` Adam
steps on that single (state, target) pair, epsilon decays, and a new
forecast is issued from the current event's features alone.

Two update rules are available through ``AlpeConfig.policy``:

``"signed"`` (default)
    The network outputs an adjustment ``f`` to the current mid and the
    forecast is ``mid + f``; exploration replaces ``f`` by a uniform offset
    in ``[a_min, a_max]``. The training target keeps the structure of the
    policy-value target but lets each deviation carry its sign::

        target = f + (1 - eps) * ((p - a) + (alpha - f))

    where ``a`` is the executed forecast, ``alpha = a - mid`` its adjustment
    and ``p`` the realized mid. This reduces to ``f + (1 - eps) * (move - f)``.

``"literal"``
    Forecast is the raw network output and the target is
    ``reward - |a - f| * (1 - eps)``. That target is never positive, so on
    price-level data the forecast drifts without bound; kept for comparison.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .features import ExpandingMinMax, simple_features
from .lob_ingest import LobEvent, mid_price
from .nn import DenseNet, DenseNetConfig


@dataclass(frozen=True)
class AlpeConfig:
    a_min: float = -0.1
    a_max: float = 0.1
    eps0: float = 1.0
    eps_min: float = 1e-4
    eps_decay: float = 0.999
    gamma: float = 0.0
    epochs_per_event: int = 2
    hidden_layers: int = 8
    hidden_width: int = 64
    use_batchnorm: bool = True
    bn_momentum: float = 0.99
    zeta: float = 1e-5
    lr: float = 1e-3
    policy: str = "signed"
    horizon: str = "next"
    seed: int = 0

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be below a_max")
        if not 0.0 <= self.eps_min <= self.eps0 <= 1.0:
            raise ValueError("need 0 <= eps_min <= eps0 <= 1")
        if not 0.0 < self.eps_decay <= 1.0:
            raise ValueError("eps_decay must lie in (0, 1]")
        if self.gamma != 0.0:
            raise ValueError("only immediate rewards are supported (gamma must be 0)")
        if self.epochs_per_event < 1:
            raise ValueError("epochs_per_event must be >= 1")
        if self.policy not in ("signed", "literal"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.horizon not in ("next", "same"):
            raise ValueError(f"unknown horizon {self.horizon!r}")

    def net_config(self, input_dim: int) -> DenseNetConfig:
        return DenseNetConfig(input_dim=input_dim, hidden_layers=self.hidden_layers,
                              hidden_width=self.hidden_width, use_batchnorm=self.use_batchnorm,
                              zeta=self.zeta, bn_momentum=self.bn_momentum, lr=self.lr)


def decay_epsilon(eps: float, eps_min: float = 1e-4, eps_decay: float = 0.999) -> float:
    return max(eps_min, eps * eps_decay)


def epsilon_at(t: int, eps0: float = 1.0, eps_min: float = 1e-4, eps_decay: float = 0.999) -> float:
    """Epsilon after ``t`` decays, in closed form."""
    return max(eps_min, eps0 * eps_decay ** t)


def compute_reward(action: float, true_mid: float, eps: float) -> float:
    return -abs(action - true_mid) * (1.0 - eps)


def policy_target(reward: float, action: float, f_pred: float, eps: float) -> float:
    return reward - abs(action - f_pred) * (1.0 - eps)


def signed_policy_target(f_pred: float, action: float, adjustment: float, true_mid: float, eps: float) -> float:
    """Policy target with signed deviations; see the module docstring."""
    return f_pred + (1.0 - eps) * ((true_mid - action) + (adjustment - f_pred))


@dataclass
class AgentStep:
    """Outcome of one event: the forecast it issued and, if an earlier
    forecast was pending, the mid that realized it."""

    seq: int
    prediction: float
    realized: float | None
    epsilon: float
    explored: bool
    reward: float | None = None


@dataclass
class _Pending:
    seq: int
    state: np.ndarray
    action: float
    adjustment: float
    eps: float


class AlpeAgent:
    """Online forecaster; one instance per stream, strictly sequential."""

    def __init__(self, config: AlpeConfig, n_features: int, weights: np.ndarray | None = None,
                 featurizer: Callable[[LobEvent], np.ndarray] = simple_features):
        self.config = config
        self.n_features = n_features
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        if self.weights is not None and self.weights.shape != (n_features,):
            raise ValueError("importance weights must match the feature count")
        self.featurizer = featurizer
        net_seed, act_seed = np.random.SeedSequence(config.seed).spawn(2)
        self.net = DenseNet(config.net_config(n_features), seed=net_seed)
        self.rng = np.random.default_rng(act_seed)
        self.scaler = ExpandingMinMax(n_features)
        self.t = 0
        self.last_seq: int | None = None
        self.pending: _Pending | None = None
        self.last_reward: float | None = None
        self.last_target: float | None = None

    @property
    def epsilon(self) -> float:
        c = self.config
        return epsilon_at(self.t, c.eps0, c.eps_min, c.eps_decay)

    def state_of(self, raw: np.ndarray) -> np.ndarray:
        """Scale by the running min/max and weight by importance (no scaler update)."""
        state = self.scaler.transform(raw)
        return state if self.weights is None else state * self.weights

    def select_action(self, state: np.ndarray, mid: float) -> tuple[float, float, bool]:
        """Epsilon-greedy forecast; returns ``(action, adjustment, explored)``."""
        c = self.config
        if self.rng.uniform() <= self.epsilon:
            alpha = self.rng.uniform(c.a_min, c.a_max)
            return mid + alpha, alpha, True
        f = float(self.net.forward(state))
        if c.policy == "literal":
            return f, f - mid, False
        return mid + f, f, False

    def _learn(self, pending: _Pending, true_mid: float) -> float:
        c = self.config
        e = pending.eps
        reward = compute_reward(pending.action, true_mid, e)
        f = float(self.net.forward(pending.state))
        if c.policy == "literal":
            target = policy_target(reward, pending.action, f, e)
        else:
            target = signed_policy_target(f, pending.action, pending.adjustment, true_mid, e)
        for _ in range(c.epochs_per_event):
            self.net.train_step(pending.state, target)
        self.last_reward = reward
        self.last_target = target
        return reward

    def step(self, event: LobEvent, features: np.ndarray | None = None) -> AgentStep:
        if self.last_seq is not None and event.seq <= self.last_seq:
            raise ValueError(f"out-of-order event: seq {event.seq} after {self.last_seq}")
        self.last_seq = event.seq
        raw = self.featurizer(event) if features is None else np.asarray(features, dtype=float)
        mid = mid_price(event)

        realized = None
        reward = None
        if self.config.horizon == "next" and self.pending is not None:
            reward = self._learn(self.pending, mid)
            realized = mid
            self.pending = None

        self.t += 1
        self.scaler.update(raw)
        state = self.state_of(raw)
        eps = self.epsilon
        action, adjustment, explored = self.select_action(state, mid)
        pending = _Pending(event.seq, state, action, adjustment, eps)
        if self.config.horizon == "same":
            reward = self._learn(pending, mid)
            realized = mid
        else:
            self.pending = pending
        return AgentStep(event.seq, action, realized, eps, explored, reward)

    # -- checkpointing ------------------------------------------------------------

    def to_checkpoint(self) -> dict:
        """Everything needed to resume bit-for-bit (JSON-serializable)."""
        p = self.pending
        return {
            "config": asdict(self.config),
            "n_features": self.n_features,
            "weights": None if self.weights is None else self.weights.tolist(),
            "t": self.t,
            "last_seq": self.last_seq,
            "rng": self.rng.bit_generator.state,
            "scaler": self.scaler.state(),
            "pending": None if p is None else {
                "seq": p.seq, "state": p.state.tolist(), "action": p.action,
                "adjustment": p.adjustment, "eps": p.eps},
            "net": self.net.to_csv(),
        }

    @classmethod
    def from_checkpoint(cls, ckpt: dict, featurizer: Callable[[LobEvent], np.ndarray] = simple_features) -> "AlpeAgent":
        agent = cls(AlpeConfig(**ckpt["config"]), ckpt["n_features"], ckpt["weights"], featurizer)
        agent.t = ckpt["t"]
        agent.last_seq = ckpt["last_seq"]
        agent.rng.bit_generator.state = ckpt["rng"]
        agent.scaler.load_state(ckpt["scaler"])
        p = ckpt["pending"]
        if p is not None:
            agent.pending = _Pending(p["seq"], np.array(p["state"], dtype=float), p["action"],
                                     p["adjustment"], p["eps"])
        agent.net.load_csv(ckpt["net"])
        return agent

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh)

    @classmethod
    def load(cls, path, featurizer: Callable[[LobEvent], np.ndarray] = simple_features) -> "AlpeAgent":
        with open(path, encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh), featurizer)


def run_online(agent: AlpeAgent, stream: Iterable[LobEvent]) -> list[AgentStep]:
    return [agent.step(e) for e in stream]
