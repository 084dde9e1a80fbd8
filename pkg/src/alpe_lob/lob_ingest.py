"""Level-1 limit order book events: validation, CSV I/O and a synthetic generator."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CSV_COLUMNS = ("seq", "ts", "ask_px", "ask_vol", "bid_px", "bid_vol")
POLICIES = ("reject", "skip", "warn")


class LobDataError(ValueError):
    """Raised for rows that violate the event schema or invariants."""


class CrossedBook(LobDataError):
    def __init__(self, row: int, bid: float, ask: float):
        super().__init__(f"crossed book at row {row}: bid {bid} > ask {ask}")
        self.row = row


@dataclass(frozen=True, slots=True)
class LobEvent:
    """Best bid/ask snapshot. ``timestamp`` is carried for indexing only."""

    seq: int
    ask_price: float
    ask_volume: float
    bid_price: float
    bid_volume: float
    timestamp: str | None = None

    def validate(self, allow_crossed: bool = False) -> None:
        if self.seq < 0:
            raise LobDataError(f"seq must be nonnegative, got {self.seq}")
        for name in ("ask_price", "ask_volume", "bid_price", "bid_volume"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise LobDataError(f"{name} must be finite and > 0, got {v!r}")
        if not allow_crossed and self.bid_price > self.ask_price:
            raise CrossedBook(self.seq, self.bid_price, self.ask_price)

    @property
    def mid(self) -> float:
        return mid_price(self)


def mid_price(event: LobEvent) -> float:
    """Average of the best ask and best bid."""
    return (event.ask_price + event.bid_price) / 2.0


def mids(events: Sequence[LobEvent]) -> np.ndarray:
    return np.array([mid_price(e) for e in events], dtype=float)


def _parse_float(text: str, field: str, row: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise LobDataError(f"row {row}: malformed {field} value {text!r}") from None


def parse_lob_csv(source: IO[bytes] | IO[str] | bytes | str, policy: str = "reject") -> list[LobEvent]:
    """Read events from CSV with header ``seq,ts,ask_px,ask_vol,bid_px,bid_vol``.

    ``policy`` controls what happens to rows that fail validation: ``reject``
    raises, ``skip`` drops them silently, ``warn`` drops them with a log
    warning. Malformed numbers and non-monotone ``seq`` always raise. An
    empty ``seq`` column is filled with the row position.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if isinstance(source, bytes):
        text = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    else:
        raw = source.read()
        text = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw)

    reader = csv.reader(text)
    header = next(reader, None)
    if header is None:
        return []
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise LobDataError(f"bad header {header!r}; expected {','.join(CSV_COLUMNS)}")

    events: list[LobEvent] = []
    last_seq = -1
    for row_no, row in enumerate(reader):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise LobDataError(f"row {row_no}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        seq_txt, ts, ask_px, ask_vol, bid_px, bid_vol = (c.strip() for c in row)
        if seq_txt:
            try:
                seq = int(seq_txt)
            except ValueError:
                raise LobDataError(f"row {row_no}: malformed seq value {seq_txt!r}") from None
        else:
            seq = row_no
        if seq <= last_seq:
            raise LobDataError(f"row {row_no}: seq {seq} not greater than previous {last_seq}")
        event = LobEvent(
            seq=seq,
            ask_price=_parse_float(ask_px, "ask_px", row_no),
            ask_volume=_parse_float(ask_vol, "ask_vol", row_no),
            bid_price=_parse_float(bid_px, "bid_px", row_no),
            bid_volume=_parse_float(bid_vol, "bid_vol", row_no),
            timestamp=ts or None,
        )
        try:
            event.validate()
        except LobDataError as exc:
            if policy == "reject":
                if isinstance(exc, CrossedBook):
                    raise CrossedBook(row_no, event.bid_price, event.ask_price) from None
                raise LobDataError(f"row {row_no}: {exc}") from None
            if policy == "warn":
                log.warning("dropping row %d: %s", row_no, exc)
            continue
        last_seq = seq
        events.append(event)
    return events


def read_lob_csv(path, policy: str = "reject") -> list[LobEvent]:
    with open(path, "rb") as fh:
        return parse_lob_csv(fh, policy)


def format_lob_csv(events: Iterable[LobEvent]) -> str:
    """Serialize events; floats use ``repr`` so a parse round trip is exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in events:
        w.writerow([e.seq, e.timestamp or "", repr(e.ask_price), _num(e.ask_volume),
                    repr(e.bid_price), _num(e.bid_volume)])
    return buf.getvalue()


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_lob_csv(path, events: Iterable[LobEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_lob_csv(events))


@dataclass(frozen=True)
class SyntheticStreamConfig:
    """Parameters of the mean-reverting synthetic Level-1 stream.

    Defaults are illustrative; they are not calibrated to any market.
    """

    n_events: int = 10_000
    mid0: float = 100.0
    reversion_rate: float = 0.05
    volatility: float = 0.05
    spread_mean: float = 0.02
    tick_size: float = 0.01
    volume_range: tuple[int, int] = (100, 1000)
    seed: int = 0

    def validate(self) -> None:
        if self.n_events < 1:
            raise ValueError("n_events must be positive")
        if not self.mid0 > 0:
            raise ValueError("mid0 must be > 0")
        if not 0.0 <= self.reversion_rate < 1.0:
            raise ValueError("reversion_rate must lie in [0, 1)")
        if self.volatility < 0:
            raise ValueError("volatility must be >= 0")
        if not self.tick_size > 0:
            raise ValueError("tick_size must be > 0")
        if not self.spread_mean > 0:
            raise ValueError("spread_mean must be > 0")
        if self.spread_mean < self.tick_size:
            raise ValueError(f"spread_mean {self.spread_mean} is below tick_size {self.tick_size}")
        lo, hi = self.volume_range
        if not 0 < lo <= hi:
            raise ValueError(f"volume_range must satisfy 0 < min <= max, got {self.volume_range}")
        if not self.mid0 - self.spread_mean / 2 > 0:
            raise ValueError("mid0 too small for the requested spread")


def round_to_tick(x: float, tick: float) -> float:
    return round(x / tick) * tick


def generate_synthetic_stream(config: SyntheticStreamConfig) -> list[LobEvent]:
    """Mean-reverting Level-1 stream with a constant spread.

    The mid follows ``m[t+1] = round_tick(m[t] + r * (mid0 - m[t]) + vol * z[t])``
    starting from ``round_tick(mid0)``. Per event the generator first draws the
    ask and bid volumes, then the normal for the next mid. The mid is
    floored one tick above half the spread to keep prices positive.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    tick = config.tick_size
    half = config.spread_mean / 2.0
    floor = half + tick
    lo, hi = config.volume_range
    mid = round_to_tick(config.mid0, tick)
    events = []
    for t in range(config.n_events):
        ask_v, bid_v = rng.integers(lo, hi + 1, size=2)
        events.append(LobEvent(seq=t, ask_price=mid + half, ask_volume=float(ask_v),
                               bid_price=mid - half, bid_volume=float(bid_v)))
        z = rng.standard_normal()
        mid = round_to_tick(mid + config.reversion_rate * (config.mid0 - mid) + config.volatility * z, tick)
        mid = max(mid, floor)
    return events


def scale_prices(events: Sequence[LobEvent], factor: float) -> list[LobEvent]:
    """Multiply every price by ``factor`` (volumes untouched)."""
    return [LobEvent(e.seq, e.ask_price * factor, e.ask_volume, e.bid_price * factor, e.bid_volume, e.timestamp)
            for e in events]
