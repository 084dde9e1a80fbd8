"""Flat ``section.key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be known; a typo
is a hard error rather than a silently ignored setting. List values are
comma separated.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .agent import AlpeConfig
from .baselines import MODEL_IDS, WINDOW, ConfigError
from .evaluation import ProtocolConfig
from .features import IMPORTANCE_MODES, KernelParams, feature_set_id
from .lob_ingest import POLICIES, SyntheticStreamConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _max_features(text: str):
    t = text.strip()
    if t == "third":
        return t
    return None if t == "all" else int(t)


def _alpe_field(name: str) -> Callable[[str], Any]:
    ftype = {f.name: f.type for f in dataclasses.fields(AlpeConfig)}[name]
    return {"float": float, "int": int, "bool": _bool, "str": str}[ftype]


_ALPE_KEYS = {f"alpe.{f.name}": _alpe_field(f.name) for f in dataclasses.fields(AlpeConfig)
              if f.name != "seed"}

SCHEMA: dict[str, Callable[[str], Any]] = {
    "data.input": _list,
    "data.stock": str,
    "data.policy": str,
    "synth.n_events": int,
    "synth.n_stocks": int,
    "synth.mid0": float,
    "synth.reversion_rate": float,
    "synth.volatility": float,
    "synth.spread_mean": float,
    "synth.tick_size": float,
    "synth.volume_min": int,
    "synth.volume_max": int,
    "synth.seed": int,
    "experiment.feature_sets": _list,
    "experiment.importance": _list,
    "experiment.models": _list,
    "experiment.window": int,
    "experiment.n_runs": int,
    "experiment.master_seed": int,
    "experiment.calibration": int,
    "experiment.jobs": int,
    "output.dir": str,
    "kernel.c0": float,
    "kernel.degree": int,
    "kernel.gamma": float,
    "mdi.n_estimators": int,
    "mdi.max_depth": int,
    "mdi.max_features": _max_features,
    "mdi.min_samples_split": int,
    "mdi.delta": float,
    "gd.eta": float,
    "gd.n_iter": int,
    "gd.delta": float,
    "mlp.hidden_layers": int,
    "mlp.hidden_width": int,
    "mlp.n_steps": int,
    "mlp.lr": float,
    "rbfnn.k_centers": int,
    "rbfnn.ridge": float,
    **_ALPE_KEYS,
}


@dataclass
class RunConfig:
    inputs: tuple[str, ...] = ()
    stock: str | None = None
    policy: str = "reject"
    synth: SyntheticStreamConfig = field(default_factory=SyntheticStreamConfig)
    n_stocks: int = 1
    bases: tuple[str, ...] = ("Simple", "Exte")
    importance: tuple[str, ...] = IMPORTANCE_MODES
    models: tuple[str, ...] = MODEL_IDS
    window: int = WINDOW
    n_runs: int = 10
    master_seed: int = 0
    calibration: int = 500
    jobs: int = 1
    out_dir: str = "results"
    kernel: KernelParams = field(default_factory=KernelParams)
    mdi: dict = field(default_factory=dict)
    gd: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)
    rbfnn: dict = field(default_factory=dict)
    alpe: dict = field(default_factory=dict)

    @property
    def feature_sets(self) -> tuple[str, ...]:
        """Grid order: base-major, then importance mode."""
        return tuple(feature_set_id(b, m) for b in self.bases for m in self.importance)

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(self.calibration, self.window, self.kernel,
                              {"mdi": dict(self.mdi), "gd": dict(self.gd)},
                              {"mlp": dict(self.mlp), "rbfnn": dict(self.rbfnn), "alpe": dict(self.alpe)})

    def validate(self, check_paths: bool = True) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"data.policy must be one of {POLICIES}, got {self.policy!r}")
        for b in self.bases:
            if b not in ("Simple", "Exte"):
                raise ConfigError(f"experiment.feature_sets: unknown base {b!r} (use Simple and/or Exte)")
        for m in self.importance:
            if m not in IMPORTANCE_MODES:
                raise ConfigError(f"experiment.importance: unknown mode {m!r}; expected {IMPORTANCE_MODES}")
        for m in self.models:
            if m not in MODEL_IDS:
                raise ConfigError(f"experiment.models: unknown model id {m!r}; registered: {MODEL_IDS}")
        for name, seq in (("feature_sets", self.bases), ("importance", self.importance), ("models", self.models)):
            if not seq:
                raise ConfigError(f"experiment.{name} must not be empty")
            if len(set(seq)) != len(seq):
                raise ConfigError(f"experiment.{name} has duplicates")
        if self.n_runs < 1:
            raise ConfigError("experiment.n_runs must be >= 1")
        if self.window < 1:
            raise ConfigError("experiment.window must be >= 1")
        if self.calibration < 0:
            raise ConfigError("experiment.calibration must be >= 0")
        if self.master_seed < 0:
            raise ConfigError("experiment.master_seed must be >= 0")
        if self.jobs < 1:
            raise ConfigError("experiment.jobs must be >= 1")
        if self.n_stocks < 1:
            raise ConfigError("synth.n_stocks must be >= 1")
        if self.stock is not None and len(self.inputs) > 1:
            raise ConfigError("data.stock names a single input; drop it when listing several files")
        try:
            self.synth.validate()
        except ValueError as exc:
            raise ConfigError(f"synth: {exc}") from None
        try:
            AlpeConfig(**self.alpe)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"alpe: {exc}") from None
        if check_paths:
            for p in self.inputs:
                if not Path(p).is_file():
                    raise ConfigError(f"data.input: no such file {p!r}")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return _build(values, base_dir)


def _build(v: dict[str, Any], base_dir: Path | None) -> RunConfig:
    cfg = RunConfig()
    inputs = v.get("data.input", ())
    if base_dir is not None:
        inputs = tuple(str(Path(p) if Path(p).is_absolute() else base_dir / p) for p in inputs)
    cfg.inputs = inputs
    cfg.stock = v.get("data.stock")
    cfg.policy = v.get("data.policy", cfg.policy)

    d = SyntheticStreamConfig()
    vol = (v.get("synth.volume_min", d.volume_range[0]), v.get("synth.volume_max", d.volume_range[1]))
    cfg.synth = SyntheticStreamConfig(
        n_events=v.get("synth.n_events", d.n_events), mid0=v.get("synth.mid0", d.mid0),
        reversion_rate=v.get("synth.reversion_rate", d.reversion_rate),
        volatility=v.get("synth.volatility", d.volatility),
        spread_mean=v.get("synth.spread_mean", d.spread_mean), tick_size=v.get("synth.tick_size", d.tick_size),
        volume_range=vol, seed=v.get("synth.seed", d.seed))
    cfg.n_stocks = v.get("synth.n_stocks", cfg.n_stocks)

    cfg.bases = v.get("experiment.feature_sets", cfg.bases)
    cfg.importance = v.get("experiment.importance", cfg.importance)
    cfg.models = v.get("experiment.models", cfg.models)
    cfg.window = v.get("experiment.window", cfg.window)
    cfg.n_runs = v.get("experiment.n_runs", cfg.n_runs)
    cfg.master_seed = v.get("experiment.master_seed", cfg.master_seed)
    cfg.calibration = v.get("experiment.calibration", cfg.calibration)
    cfg.jobs = v.get("experiment.jobs", cfg.jobs)
    cfg.out_dir = v.get("output.dir", cfg.out_dir)
    try:
        k = KernelParams()
        cfg.kernel = KernelParams(v.get("kernel.c0", k.c0), v.get("kernel.degree", k.degree),
                                  v.get("kernel.gamma", k.gamma))
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from None
    for section in ("mdi", "gd", "mlp", "rbfnn", "alpe"):
        setattr(cfg, section, {key.split(".", 1)[1]: val for key, val in v.items()
                               if key.startswith(section + ".")})
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(encoding="utf-8"), p.parent)
