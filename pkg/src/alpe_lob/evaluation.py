"""Rolling-window evaluation: error metrics, the per-cell online protocol,
repeated-run aggregation, and Friedman / Conover significance tests."""
from __future__ import annotations

import csv
import io
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .baselines import WINDOW, ConfigError, make_forecaster
from .features import (FEATURE_SETS, KernelParams, apply_minmax, feature_matrix, fit_minmax,
                       split_feature_set)
from .importance import compute_importance
from .lob_ingest import LobEvent, mids

RESULT_COLUMNS = ("stock", "model", "feature_set", "run", "rmse", "rrmse")
SUMMARY_COLUMNS = ("stock", "model", "feature_set", "rmse_mean", "rmse_std", "rrmse_mean", "rrmse_std")
SIGNIFICANCE_COLUMNS = ("model_a", "model_b", "p_adjusted")
FRIEDMAN_COLUMNS = ("statistic", "p_value", "n_blocks", "n_models")
REDUCTION_COLUMNS = ("stock", "model", "feature_set", "rmse_mean", "rrmse_mean", "error_reduction_pct")
PROFILE_COLUMNS = ("stock", "volume", "best_set")
VOLUME_COLUMNS = ("stock", "volume")


def sci(x: float) -> str:
    """Four significant digits in scientific notation, e.g. ``6.020E-01``."""
    return f"{x:.3E}"


@dataclass(frozen=True)
class ForecastRecord:
    """A forecast scored against the mid of event ``seq``."""

    seq: int
    model: str
    feature_set: str
    prediction: float
    realized: float

    def __post_init__(self):
        if not self.realized > 0:
            raise ValueError(f"realized mid must be > 0, got {self.realized}")


# -- metrics -------------------------------------------------------------------

def _errors(records) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(records, tuple) and len(records) == 2:
        pred, real = (np.asarray(a, dtype=float) for a in records)
    else:
        records = list(records)
        pred = np.array([r.prediction for r in records], dtype=float)
        real = np.array([r.realized for r in records], dtype=float)
    if pred.size == 0:
        raise ValueError("no records to score")
    if pred.shape != real.shape:
        raise ValueError("prediction and realized arrays differ in length")
    return pred - real, real


def rmse(records) -> float:
    """Root mean squared error of records, or of a ``(predictions, realized)`` pair."""
    err, _ = _errors(records)
    return float(np.sqrt(np.mean(err * err)))


def running_rmse(records) -> np.ndarray:
    """RMSE over records 1..t for every t, via a running sum of squares."""
    err, _ = _errors(records)
    return np.sqrt(np.cumsum(err * err) / np.arange(1, err.size + 1))


def rrmse(records) -> float:
    """Mean over events of the running RMSE divided by that event's realized mid."""
    err, real = _errors(records)
    run = np.sqrt(np.cumsum(err * err) / np.arange(1, err.size + 1))
    return float(np.mean(run / real))


def error_reduction_pct(rmse_value: float, rrmse_value: float) -> float:
    if rmse_value == 0:
        raise ValueError("error reduction is undefined for rmse == 0")
    return (rmse_value - rrmse_value) / rmse_value * 100.0


# -- significance -----------------------------------------------------------------

@dataclass
class SignificanceReport:
    models: tuple[str, ...]
    statistic: float
    p_value: float
    p_adjusted: np.ndarray  # symmetric, diagonal NaN
    n_blocks: int

    def pairs(self) -> list[tuple[str, str, float]]:
        k = len(self.models)
        return [(self.models[i], self.models[j], float(self.p_adjusted[i, j]))
                for i, j in combinations(range(k), 2)]


def _check_scores(scores) -> np.ndarray:
    S = np.asarray(scores, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2 or S.shape[1] < 2:
        raise ValueError("need a blocks x models matrix with at least 2 blocks and 2 models")
    if not np.all(np.isfinite(S)):
        raise ValueError("scores must be finite")
    return S


def _block_ranks(S: np.ndarray) -> np.ndarray:
    return stats.rankdata(S, axis=1)


def friedman_test(scores) -> tuple[float, float]:
    """Friedman chi-square over a blocks x models matrix (ties get average ranks)."""
    S = _check_scores(scores)
    n, k = S.shape
    R = _block_ranks(S)
    rank_sums = R.sum(axis=0)
    ties = 0.0
    for row in S:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    denom = 1.0 - ties / (n * (k ** 3 - k))
    if denom <= 0:
        # every block fully tied: no rank differences at all
        return 0.0, 1.0
    q = (12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums ** 2)) - 3.0 * n * (k + 1)) / denom
    q = max(q, 0.0)
    return q, float(stats.chi2.sf(q, k - 1))


def conover_posthoc(scores, models: Sequence[str] | None = None) -> SignificanceReport:
    """Pairwise Conover tests on Friedman ranks, Bonferroni adjusted and clamped to 1."""
    S = _check_scores(scores)
    n, k = S.shape
    models = tuple(models) if models is not None else tuple(str(i) for i in range(k))
    if len(models) != k:
        raise ValueError("one model name per column required")
    statistic, p_value = friedman_test(S)
    R = _block_ranks(S)
    rank_sums = R.sum(axis=0)
    a1 = float(np.sum(R ** 2))
    s2 = (a1 - n * k * (k + 1) ** 2 / 4.0) / (k - 1)
    P = np.full((k, k), np.nan)
    m = k * (k - 1) // 2
    if s2 <= 0:
        for i, j in combinations(range(k), 2):
            P[i, j] = P[j, i] = 1.0
        return SignificanceReport(models, statistic, p_value, P, n)
    t2 = float(np.sum((rank_sums - n * (k + 1) / 2.0) ** 2)) / s2
    dof = n * k - k - n + 1
    a = s2 * 2.0 * n * (k - 1) / dof
    b = 1.0 - t2 / (n * (k - 1))
    for i, j in combinations(range(k), 2):
        diff = abs(rank_sums[i] - rank_sums[j])
        if b <= 0:
            # perfect concordance: every nonzero rank-sum gap is infinitely significant
            p = 0.0 if diff > 0 else 1.0
        else:
            t = diff / math.sqrt(a * b)
            p = float(2.0 * stats.t.sf(t, dof))
        P[i, j] = P[j, i] = min(1.0, p * m)
    return SignificanceReport(models, statistic, p_value, P, n)


# -- seeds ----------------------------------------------------------------------------

def stock_hash(stock: str) -> int:
    return zlib.crc32(stock.encode("utf-8"))


def derive_seed(master_seed: int, run: int, stock: str = "") -> int:
    """64-bit run seed: SeedSequence entropy ``[master_seed, run, crc32(stock)]``."""
    if master_seed < 0 or run < 0:
        raise ValueError("seeds and run indices must be nonnegative")
    ss = np.random.SeedSequence([master_seed, run, stock_hash(stock)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def importance_seed(master_seed: int, stock: str = "") -> int:
    """Seed for the once-per-stock importance fit (independent of the run index)."""
    ss = np.random.SeedSequence([master_seed, stock_hash(stock)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- protocol ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    """Shared settings for every cell of an experiment."""

    calibration: int = 500
    window: int = WINDOW
    kernel: KernelParams = field(default_factory=KernelParams)
    importance_params: Mapping[str, Mapping] = field(default_factory=dict)
    model_params: Mapping[str, Mapping] = field(default_factory=dict)

    def __post_init__(self):
        if self.calibration < 0:
            raise ValueError("calibration must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class RunResult:
    stock: str
    model: str
    feature_set: str
    run: int
    rmse: float
    rrmse: float
    n_events: int
    records: list[ForecastRecord] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class StockSummary:
    stock: str
    model: str
    feature_set: str
    rmse_mean: float
    rmse_std: float
    rrmse_mean: float
    rrmse_std: float
    n_runs: int | None = None
    n_events: int | None = None

    def __post_init__(self):
        if self.rmse_std < 0 or self.rrmse_std < 0:
            raise ValueError("std must be >= 0")
        if self.n_runs is not None and self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


def prefix_importance(events: Sequence[LobEvent], feature_set: str, calibration: int, seed: int,
                      kernel: KernelParams = KernelParams(), **params) -> np.ndarray | None:
    """Importance weights from the first ``calibration`` events, or None for raw sets.

    Features are min-max scaled with prefix statistics and paired with the
    following event's mid, so nothing at or after ``calibration`` is read.
    """
    base, method = split_feature_set(feature_set)
    if method == "none":
        return None
    if calibration < 3:
        raise ValueError(f"importance needs a calibration prefix of at least 3 events, got {calibration}")
    if len(events) < calibration:
        raise ValueError(f"stream has {len(events)} events, shorter than the calibration prefix {calibration}")
    prefix = events[:calibration]
    X = feature_matrix(prefix, base, kernel)
    Xs = apply_minmax(fit_minmax(X), X)
    y = mids(prefix)[1:]
    return compute_importance(method, Xs[:-1], y, seed, **params).scores


def run_protocol(events: Sequence[LobEvent], model: str, feature_set: str, seed: int,
                 weights: np.ndarray | None = None, config: ProtocolConfig = ProtocolConfig(),
                 features: np.ndarray | None = None) -> list[ForecastRecord]:
    """Walk the stream after the calibration prefix; score each forecast on the next event.

    The forecaster observes event i and forecasts event i+1. Forecasts are
    only scored once ``window`` events have been observed, for every model
    alike, so all models are evaluated on the same events.
    """
    start = config.calibration
    if len(events) - start < config.window + 2:
        raise ValueError(f"stream too short: {len(events)} events leaves fewer than "
                         f"window+2={config.window + 2} after a calibration prefix of {start}")
    base, _ = split_feature_set(feature_set)
    if features is None:
        features = feature_matrix(events[start:], base, config.kernel)
    else:
        features = features[start:]
    params = dict(config.model_params.get(model, {}))
    if model in ("mlp", "rbfnn", "naive"):
        params.setdefault("window", config.window)
    fc = make_forecaster(model, features.shape[1], weights, seed, **params)

    records: list[ForecastRecord] = []
    pending: float | None = None
    for i, event in enumerate(events[start:]):
        mid = (event.ask_price + event.bid_price) / 2.0
        if pending is not None:
            records.append(ForecastRecord(event.seq, model, feature_set, pending, mid))
            pending = None
        fc.observe(event, features[i])
        if i + 1 >= config.window and fc.ready:
            pending = fc.predict_next()
    return records


def run_cell(events: Sequence[LobEvent], stock: str, model: str, feature_set: str, run: int,
             master_seed: int, config: ProtocolConfig = ProtocolConfig(),
             weights: np.ndarray | None = None, keep_records: bool = False) -> RunResult:
    seed = derive_seed(master_seed, run, stock)
    recs = run_protocol(events, model, feature_set, seed, weights, config)
    return RunResult(stock, model, feature_set, run, rmse(recs), rrmse(recs), len(recs),
                     recs if keep_records else [])


def summarize(results: Sequence[RunResult]) -> StockSummary:
    if not results:
        raise ValueError("no runs to summarize")
    keys = {(r.stock, r.model, r.feature_set) for r in results}
    if len(keys) != 1:
        raise ValueError(f"runs from several cells mixed: {sorted(keys)}")
    stock, model, fs = keys.pop()
    a = np.array([r.rmse for r in results])
    b = np.array([r.rrmse for r in results])
    ddof = 1 if len(results) > 1 else 0
    return StockSummary(stock, model, fs, float(a.mean()), float(a.std(ddof=ddof)),
                        float(b.mean()), float(b.std(ddof=ddof)), len(results),
                        int(results[0].n_events))


def run_experiment(events: Sequence[LobEvent], model: str, feature_set: str, n_runs: int = 10,
                   master_seed: int = 0, stock: str = "synthetic",
                   config: ProtocolConfig = ProtocolConfig(), window: int | None = None
                   ) -> tuple[StockSummary, list[RunResult]]:
    """Repeat one (stock, model, feature set) cell ``n_runs`` times with derived seeds."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if window is not None and window != config.window:
        config = ProtocolConfig(config.calibration, window, config.kernel,
                                config.importance_params, config.model_params)
    _, method = split_feature_set(feature_set)
    weights = prefix_importance(events, feature_set, config.calibration,
                                importance_seed(master_seed, stock), config.kernel,
                                **config.importance_params.get(method, {}))
    runs = [run_cell(events, stock, model, feature_set, r, master_seed, config, weights)
            for r in range(n_runs)]
    return summarize(runs), runs


# -- grid -------------------------------------------------------------------------------

@dataclass(frozen=True)
class CellId:
    stock: str
    model: str
    feature_set: str
    run: int

    def __str__(self):
        return f"{self.stock}/{self.model}/{self.feature_set}/run{self.run}"


class CellFailure(RuntimeError):
    def __init__(self, cell: CellId, cause: BaseException):
        super().__init__(f"cell {cell} failed: {type(cause).__name__}: {cause}")
        self.cell = cell
        self.cause = cause

    def __reduce__(self):
        return (CellFailure, (self.cell, self.cause))


def _grid_task(args) -> RunResult:
    events, cell, master_seed, config, weights = args
    try:
        return run_cell(events, cell.stock, cell.model, cell.feature_set, cell.run, master_seed,
                        config, weights)
    except Exception as exc:  # reported with the cell id by the collector
        raise CellFailure(cell, exc) from exc


def run_grid(streams: Mapping[str, Sequence[LobEvent]], models: Sequence[str],
             feature_sets: Sequence[str], n_runs: int = 10, master_seed: int = 0,
             config: ProtocolConfig = ProtocolConfig(), jobs: int = 1) -> list[RunResult]:
    """All (stock, feature set, model, run) cells; results in a fixed order
    regardless of ``jobs``."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    for fs in feature_sets:
        if fs not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {fs!r}")
    tasks = []
    for stock in streams:
        events = streams[stock]
        for fs in feature_sets:
            _, method = split_feature_set(fs)
            weights = prefix_importance(events, fs, config.calibration,
                                        importance_seed(master_seed, stock), config.kernel,
                                        **config.importance_params.get(method, {}))
            for model in models:
                for run in range(n_runs):
                    tasks.append((events, CellId(stock, model, fs, run), master_seed, config, weights))
    if jobs <= 1:
        return [_grid_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_grid_task, tasks, chunksize=1))


def summarize_grid(results: Iterable[RunResult]) -> list[StockSummary]:
    groups: dict[tuple[str, str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.stock, r.model, r.feature_set), []).append(r)
    return [summarize(v) for v in groups.values()]


# -- reports -------------------------------------------------------------------------------

def significance_from_summaries(summaries: Sequence[StockSummary], score: str = "rmse_mean"
                                ) -> SignificanceReport | None:
    """Blocks are (stock, feature set) pairs, treatments are models; only
    complete blocks are used. Returns None when fewer than 2 models or
    blocks are available."""
    models = list(dict.fromkeys(s.model for s in summaries))
    if len(models) < 2:
        return None
    table: dict[tuple[str, str], dict[str, float]] = {}
    for s in summaries:
        table.setdefault((s.stock, s.feature_set), {})[s.model] = getattr(s, score)
    rows = [[cells[m] for m in models] for cells in table.values() if len(cells) == len(models)]
    if len(rows) < 2:
        return None
    return conover_posthoc(np.array(rows), models)


def error_reduction_rows(summaries: Sequence[StockSummary]) -> list[tuple]:
    out = []
    for s in summaries:
        pct = error_reduction_pct(s.rmse_mean, s.rrmse_mean) if s.rmse_mean > 0 else float("nan")
        out.append((s.stock, s.model, s.feature_set, s.rmse_mean, s.rrmse_mean, pct))
    return out


def volume_profile(summaries: Sequence[StockSummary], volumes: Mapping[str, float],
                   model: str = "alpe") -> list[tuple[str, float, str]]:
    """Per stock: its volume and the feature set with the lowest rrmse for ``model``.

    Ties go to the earliest set in ``FEATURE_SETS`` order.
    """
    best: dict[str, tuple[float, int, str]] = {}
    for s in summaries:
        if s.model != model:
            continue
        key = (s.rrmse_mean, FEATURE_SETS.index(s.feature_set), s.feature_set)
        if s.stock not in best or key < best[s.stock]:
            best[s.stock] = key
    return [(stock, float(volumes.get(stock, float("nan"))), best[stock][2]) for stock in best]


def mean_volume(events: Sequence[LobEvent]) -> float:
    """Average best-level volume (ask + bid) per event."""
    if not events:
        return float("nan")
    return float(np.mean([e.ask_volume + e.bid_volume for e in events]))


# -- CSV I/O ------------------------------------------------------------------------------------

def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_rows(text: str, header: Sequence[str]) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != tuple(header):
        raise ValueError(f"bad header {reader.fieldnames!r}; expected {','.join(header)}")
    rows = list(reader)
    for i, row in enumerate(rows):
        if None in row or any(v is None for v in row.values()):
            raise ValueError(f"row {i}: wrong number of fields")
    return rows


def _float(text: str, what: str, row: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"row {row}: malformed {what} value {text!r}") from None


def format_results(results: Iterable[RunResult]) -> str:
    return _csv_text(RESULT_COLUMNS, ((r.stock, r.model, r.feature_set, r.run, sci(r.rmse), sci(r.rrmse))
                                      for r in results))


def parse_results(text: str) -> list[RunResult]:
    out = []
    for i, row in enumerate(_read_rows(text, RESULT_COLUMNS)):
        out.append(RunResult(row["stock"], row["model"], row["feature_set"], int(row["run"]),
                             _float(row["rmse"], "rmse", i), _float(row["rrmse"], "rrmse", i), 0))
    return out


def format_summaries(summaries: Iterable[StockSummary]) -> str:
    return _csv_text(SUMMARY_COLUMNS, ((s.stock, s.model, s.feature_set, sci(s.rmse_mean), sci(s.rmse_std),
                                        sci(s.rrmse_mean), sci(s.rrmse_std)) for s in summaries))


def parse_summaries(text: str) -> list[StockSummary]:
    out = []
    for i, row in enumerate(_read_rows(text, SUMMARY_COLUMNS)):
        if row["feature_set"] not in FEATURE_SETS:
            raise ValueError(f"row {i}: unknown feature set {row['feature_set']!r}")
        vals = [_float(row[c], c, i) for c in SUMMARY_COLUMNS[3:]]
        if not all(math.isfinite(v) for v in vals) or vals[1] < 0 or vals[3] < 0:
            raise ValueError(f"row {i}: summary values must be finite with nonnegative std")
        out.append(StockSummary(row["stock"], row["model"], row["feature_set"], *vals))
    return out


def format_significance(report: SignificanceReport) -> str:
    return _csv_text(SIGNIFICANCE_COLUMNS, ((a, b, sci(p)) for a, b, p in report.pairs()))


def parse_significance(text: str) -> list[tuple[str, str, float]]:
    return [(r["model_a"], r["model_b"], _float(r["p_adjusted"], "p_adjusted", i))
            for i, r in enumerate(_read_rows(text, SIGNIFICANCE_COLUMNS))]


def format_friedman(report: SignificanceReport) -> str:
    return _csv_text(FRIEDMAN_COLUMNS, [(sci(report.statistic), sci(report.p_value), report.n_blocks,
                                         len(report.models))])


def format_error_reduction(rows: Iterable[tuple]) -> str:
    return _csv_text(REDUCTION_COLUMNS, ((st, m, fs, sci(a), sci(b), f"{pct:.4f}")
                                         for st, m, fs, a, b, pct in rows))


def parse_error_reduction(text: str) -> list[tuple]:
    return [(r["stock"], r["model"], r["feature_set"], _float(r["rmse_mean"], "rmse_mean", i),
             _float(r["rrmse_mean"], "rrmse_mean", i),
             _float(r["error_reduction_pct"], "error_reduction_pct", i))
            for i, r in enumerate(_read_rows(text, REDUCTION_COLUMNS))]


def format_volume_profile(rows: Iterable[tuple[str, float, str]]) -> str:
    return _csv_text(PROFILE_COLUMNS, ((st, sci(v), fs) for st, v, fs in rows))


def parse_volume_profile(text: str) -> list[tuple[str, float, str]]:
    return [(r["stock"], _float(r["volume"], "volume", i), r["best_set"])
            for i, r in enumerate(_read_rows(text, PROFILE_COLUMNS))]


def format_volumes(volumes: Mapping[str, float]) -> str:
    return _csv_text(VOLUME_COLUMNS, ((st, sci(v)) for st, v in volumes.items()))


def parse_volumes(text: str) -> dict[str, float]:
    return {r["stock"]: _float(r["volume"], "volume", i)
            for i, r in enumerate(_read_rows(text, VOLUME_COLUMNS))}
