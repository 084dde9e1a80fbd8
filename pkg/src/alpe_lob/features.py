"""Level-1 feature sets (raw best level and the kernelized extended block)
plus min-max scaling."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .lob_ingest import LobEvent

SIMPLE_NAMES = ("u1_ask_px", "u1_ask_vol", "u1_bid_px", "u1_bid_vol")
EXTENDED_NAMES = tuple(f"u{i}" for i in range(2, 14))

# ordered; position doubles as tie-break rank in reports
FEATURE_SETS = ("Simple", "SimpleMDI", "SimpleGD", "Exte", "ExteMDI", "ExteGD")
IMPORTANCE_MODES = ("none", "mdi", "gd")


class FeatureOverflow(ArithmeticError):
    """A feature evaluated to a non-finite number."""


@dataclass(frozen=True)
class KernelParams:
    c0: float = 1.0
    degree: int = 3
    gamma: float = 1.0

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("kernel degree must be >= 1")
        if not self.gamma > 0:
            raise ValueError("kernel gamma must be > 0")


def feature_set_id(base: str, importance: str) -> str:
    """``("Exte", "gd") -> "ExteGD"``."""
    if base not in ("Simple", "Exte"):
        raise ValueError(f"unknown base feature set {base!r}")
    if importance not in IMPORTANCE_MODES:
        raise ValueError(f"unknown importance mode {importance!r}")
    return base + ("" if importance == "none" else importance.upper())


def split_feature_set(set_id: str) -> tuple[str, str]:
    """``"ExteGD" -> ("Exte", "gd")``."""
    if set_id not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {set_id!r}; expected one of {FEATURE_SETS}")
    for base in ("Simple", "Exte"):
        if set_id.startswith(base):
            rest = set_id[len(base):]
            return base, rest.lower() or "none"
    raise AssertionError(set_id)


def simple_features(event: LobEvent) -> np.ndarray:
    return np.array([event.ask_price, event.ask_volume, event.bid_price, event.bid_volume], dtype=float)


def extended_features(event: LobEvent, kernel: KernelParams = KernelParams()) -> np.ndarray:
    """Basic, synthesized and kernel features u2..u13 from raw prices and volumes.

    u5 and u9 are the same product; both are kept so the vector layout is
    stable. Raises FeatureOverflow if anything is non-finite (u10 can
    overflow for very large prices).
    """
    a, b = event.ask_price, event.bid_price
    va, vb = event.ask_volume, event.bid_volume
    ab = a * b
    spread = a - b
    try:
        poly = (ab + kernel.c0) ** kernel.degree
    except OverflowError:
        poly = math.inf
    values = np.array([
        (a + b) / 2.0,
        spread,
        math.sin(ab),
        ab,
        va * vb,
        a * a + b * b,
        va * va + vb * vb,
        ab,
        poly,
        math.tanh(kernel.gamma * ab + kernel.c0),
        math.exp(-kernel.gamma * abs(spread)),
        math.exp(-kernel.gamma * spread * spread),
    ], dtype=float)
    if not np.all(np.isfinite(values)):
        bad = [EXTENDED_NAMES[i] for i in np.flatnonzero(~np.isfinite(values))]
        raise FeatureOverflow(f"non-finite features {bad} at seq {event.seq}")
    return values


def feature_names(base: str, include_u1: bool = False) -> tuple[str, ...]:
    if base == "Simple":
        return SIMPLE_NAMES
    if base == "Exte":
        return (SIMPLE_NAMES if include_u1 else ()) + EXTENDED_NAMES
    raise ValueError(f"unknown base feature set {base!r}")


def event_features(event: LobEvent, base: str, kernel: KernelParams = KernelParams(),
                   include_u1: bool = False) -> np.ndarray:
    if base == "Simple":
        return simple_features(event)
    if base == "Exte":
        ext = extended_features(event, kernel)
        return np.concatenate([simple_features(event), ext]) if include_u1 else ext
    raise ValueError(f"unknown base feature set {base!r}")


def feature_matrix(events: Sequence[LobEvent], base: str, kernel: KernelParams = KernelParams(),
                   include_u1: bool = False) -> np.ndarray:
    width = len(feature_names(base, include_u1))
    if not events:
        return np.empty((0, width))
    return np.vstack([event_features(e, base, kernel, include_u1) for e in events])


def format_feature_csv(X: np.ndarray, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in np.atleast_2d(X):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


# -- min-max scaling ----------------------------------------------------------

@dataclass(frozen=True)
class ScalingStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if self.min.shape != self.max.shape:
            raise ValueError("min and max must have the same shape")
        if np.any(self.min > self.max):
            raise ValueError("min must not exceed max")


def fit_minmax(window: np.ndarray) -> ScalingStats:
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ValueError("fit_minmax needs a nonempty 2-D window")
    return ScalingStats(window.min(axis=0), window.max(axis=0))


def apply_minmax(stats: ScalingStats, v: np.ndarray) -> np.ndarray:
    """Map into [0, 1] with clamping; constant columns map to 0."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != stats.min.shape[0]:
        raise ValueError(f"dimension mismatch: {v.shape[-1]} vs {stats.min.shape[0]}")
    span = stats.max - stats.min
    flat = span == 0
    scaled = (v - stats.min) / np.where(flat, 1.0, span)
    scaled = np.clip(scaled, 0.0, 1.0)
    return np.where(flat, 0.0, scaled)


class WindowMinMaxScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper over :func:`fit_minmax` / :func:`apply_minmax`."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.stats_ = fit_minmax(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_minmax(self.stats_, check_array(X))


class ExpandingMinMax:
    """Running min/max over every vector seen so far (single writer)."""

    def __init__(self, n_features: int):
        self.min = np.full(n_features, np.inf)
        self.max = np.full(n_features, -np.inf)
        self.count = 0

    def update(self, v: np.ndarray) -> None:
        np.minimum(self.min, v, out=self.min)
        np.maximum(self.max, v, out=self.max)
        self.count += 1

    def transform(self, v: np.ndarray) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no observations yet")
        return apply_minmax(ScalingStats(self.min.copy(), self.max.copy()), v)

    def state(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(), "count": self.count}

    def load_state(self, state: dict) -> None:
        self.min = np.array(state["min"], dtype=float)
        self.max = np.array(state["max"], dtype=float)
        self.count = int(state["count"])
