"""Auction-log storage: ingestion, synthesis, and summary statistics.

Logs are collections of winning-impression records partitioned into
delivery periods (one episode per period). Two on-disk formats are
supported: a native CSV schema and an adapter for the public iPinYou
tab-separated winning logs.

Currency is integer milli-FEN (10^-3 Chinese FEN) throughout; pCTR and
derived averages are floats.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NATIVE_CSV_HEADER = ("period_id", "seq", "pctr", "market_price", "click")

# Winning-log ceiling of the iPinYou logging DSP's fixed bid. Enforced only
# on the ipinyou-tsv ingestion path; native logs may carry any price.
IPINYOU_MAX_PRICE = 300


class LogError(Exception):
    """Base class for log ingestion and synthesis failures."""


class ParseError(LogError):
    """A row failed to parse or violated a field invariant."""

    def __init__(self, path: str | Path, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class EmptyInputError(LogError):
    """The input contained no impressions."""


class InvalidSpecError(LogError):
    """A synthesis spec declared non-positive counts or bad parameters."""


@dataclass(frozen=True, slots=True)
class Impression:
    """One logged auction opportunity.

    ``pctr`` may be NaN on the ipinyou-tsv path when the source log carries
    no estimate; such impressions must be scored by a CTR model before any
    replay or statistics that consume pctr.
    """

    seq: int
    pctr: float
    market_price: int
    click: int
    period_id: str

    @property
    def has_pctr(self) -> bool:
        return not math.isnan(self.pctr)


@dataclass(frozen=True)
class Episode:
    """One delivery period: an ordered impression sequence plus its budget.

    Immutable after construction; safe to share across concurrent readers.
    ``budget`` defaults to the episode's actual cost (sum of market prices),
    the spend of a bidder that wins everything.
    """

    period_id: str
    impressions: tuple[Impression, ...]
    budget: int

    def __post_init__(self) -> None:
        if not self.impressions:
            raise ValueError(f"episode {self.period_id}: no impressions")
        if self.budget <= 0:
            raise ValueError(f"episode {self.period_id}: budget must be positive")

    def __len__(self) -> int:
        return len(self.impressions)

    @property
    def actual_cost(self) -> int:
        return int(self.arrays[1].sum())

    def with_budget(self, budget: int) -> "Episode":
        return Episode(self.period_id, self.impressions, budget)

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pctr, market_price, click) as numpy arrays in replay order."""
        pctr = np.fromiter((i.pctr for i in self.impressions), dtype=np.float64)
        market = np.fromiter(
            (i.market_price for i in self.impressions), dtype=np.int64
        )
        click = np.fromiter((i.click for i in self.impressions), dtype=np.int64)
        return pctr, market, click


def make_episode(period_id: str, impressions: Sequence[Impression]) -> Episode:
    """Build an episode whose budget is its actual cost (floor 1)."""
    cost = sum(i.market_price for i in impressions)
    return Episode(period_id, tuple(impressions), max(int(cost), 1))


@dataclass(frozen=True, slots=True)
class DatasetStats:
    """Aggregate statistics over a set of episodes.

    ``cpm`` is the per-impression average price; ``cpc`` is None when the
    set holds no clicks. ``avg_pctr`` is NaN while any impression still
    lacks a pctr estimate.
    """

    imps: int
    clicks: int
    cost: int
    ctr: float
    cpm: float
    cpc: float | None
    avg_pctr: float


@dataclass(frozen=True, slots=True)
class IpinyouColumns:
    """0-based column positions in an iPinYou winning-impression TSV.

    Defaults follow the processed iPinYou log layout (click, weekday, hour,
    bidid, timestamp, ..., payprice at column 23). ``pctr`` is None when the
    log carries no estimate column.
    """

    click: int = 0
    timestamp: int = 4
    payprice: int = 23
    pctr: int | None = None


@dataclass(frozen=True, slots=True)
class SynthSpec:
    """Synthetic log recipe: sizes, pctr law, price link, click rule.

    pctr ~ Beta(pctr_alpha, pctr_beta). Market price follows a monotone
    linear link in pctr, scaled so its mean sits near ``price_scale``, with
    multiplicative log-normal noise of sigma ``price_noise``. Clicks are
    Bernoulli(pctr). Everything is deterministic given (spec, seed).
    """

    imps: int
    periods: int = 1
    pctr_alpha: float = 2.0
    pctr_beta: float = 1800.0
    price_scale: float = 70.0
    price_noise: float = 0.25
    max_price: int = 300

    def validate(self) -> None:
        if self.imps <= 0:
            raise InvalidSpecError(f"imps must be positive, got {self.imps}")
        if self.periods <= 0:
            raise InvalidSpecError(f"periods must be positive, got {self.periods}")
        if self.imps < self.periods:
            raise InvalidSpecError(
                f"need at least one impression per period "
                f"({self.imps} imps, {self.periods} periods)"
            )
        if self.pctr_alpha <= 0 or self.pctr_beta <= 0:
            raise InvalidSpecError("pctr Beta parameters must be positive")
        if self.price_scale <= 0:
            raise InvalidSpecError("price_scale must be positive")
        if self.price_noise < 0:
            raise InvalidSpecError("price_noise must be non-negative")
        if self.max_price < 1:
            raise InvalidSpecError("max_price must be at least 1")


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero-ward (0.5 -> 1)."""
    return int(math.floor(x + 0.5))


def round_half_up_array(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def ingest_log(
    path: str | Path,
    format: str = "native-csv",
    ipinyou_columns: IpinyouColumns | None = None,
) -> list[Episode]:
    """Load a log file into episodes grouped by delivery period.

    Rows with out-of-range fields are rejected with a ParseError carrying
    the offending line number; nothing is clamped. An empty file raises
    EmptyInputError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "native-csv":
        return _ingest_native_csv(path)
    if format == "ipinyou-tsv":
        return _ingest_ipinyou_tsv(path, ipinyou_columns or IpinyouColumns())
    raise ValueError(f"unknown log format: {format!r}")


def _parse_pctr(raw: str, path: Path, line: int) -> float:
    try:
        pctr = float(raw)
    except ValueError:
        raise ParseError(path, line, f"pctr not a number: {raw!r}") from None
    if math.isnan(pctr):
        raise ParseError(path, line, "pctr is NaN")
    if not 0.0 <= pctr <= 1.0:
        raise ParseError(path, line, f"pctr out of [0,1]: {pctr}")
    return pctr


def _parse_int_field(raw: str, name: str, path: Path, line: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ParseError(path, line, f"{name} not an integer: {raw!r}") from None


def _ingest_native_csv(path: Path) -> list[Episode]:
    # (period_id, seq, pctr, market, click, source line)
    rows: list[tuple[str, int, float, int, int, int]] = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != NATIVE_CSV_HEADER:
            raise ParseError(
                path, 1, f"expected header {','.join(NATIVE_CSV_HEADER)}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, line, f"expected 5 fields, got {len(row)}")
            period_id = row[0].strip()
            if not period_id:
                raise ParseError(path, line, "empty period_id")
            seq = _parse_int_field(row[1], "seq", path, line)
            pctr = _parse_pctr(row[2], path, line)
            market = _parse_int_field(row[3], "market_price", path, line)
            if market < 0:
                raise ParseError(path, line, f"negative market_price: {market}")
            click = _parse_int_field(row[4], "click", path, line)
            if click not in (0, 1):
                raise ParseError(path, line, f"click must be 0 or 1: {click}")
            rows.append((period_id, seq, pctr, market, click, line))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    return _group_rows(path, rows)


def _group_rows(
    path: Path, rows: list[tuple[str, int, float, int, int, int]]
) -> list[Episode]:
    by_period: dict[str, list[tuple[str, int, float, int, int, int]]] = {}
    for row in rows:
        by_period.setdefault(row[0], []).append(row)
    episodes = []
    for period_id in sorted(by_period):
        period_rows = sorted(by_period[period_id], key=lambda r: r[1])
        imps = []
        prev_seq: int | None = None
        for pid, seq, pctr, market, click, line in period_rows:
            if prev_seq is not None and seq <= prev_seq:
                raise ParseError(
                    path, line, f"seq {seq} not strictly increasing in {pid}"
                )
            prev_seq = seq
            imps.append(Impression(seq, pctr, market, click, pid))
        episodes.append(make_episode(period_id, imps))
    return episodes


def _ingest_ipinyou_tsv(path: Path, cols: IpinyouColumns) -> list[Episode]:
    needed = max(
        cols.click, cols.timestamp, cols.payprice, cols.pctr or 0
    )
    # (period_id, timestamp, input order, pctr, market, click)
    rows: list[tuple[str, str, int, float, int, int]] = []
    with path.open("r", encoding="utf-8") as handle:
        for line, raw in enumerate(handle, start=1):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            fields = raw.split("\t")
            if line == 1 and not fields[cols.click].strip().isdigit():
                continue  # header row
            if len(fields) <= needed:
                raise ParseError(
                    path, line,
                    f"expected at least {needed + 1} columns, got {len(fields)}",
                )
            click = _parse_int_field(fields[cols.click], "click", path, line)
            if click not in (0, 1):
                raise ParseError(path, line, f"click must be 0 or 1: {click}")
            timestamp = fields[cols.timestamp].strip()
            if len(timestamp) < 8 or not timestamp[:8].isdigit():
                raise ParseError(
                    path, line, f"timestamp lacks yyyymmdd prefix: {timestamp!r}"
                )
            market = _parse_int_field(fields[cols.payprice], "payprice", path, line)
            if not 0 <= market <= IPINYOU_MAX_PRICE:
                raise ParseError(
                    path, line,
                    f"payprice out of [0,{IPINYOU_MAX_PRICE}]: {market}",
                )
            if cols.pctr is None:
                pctr = math.nan
            else:
                pctr = _parse_pctr(fields[cols.pctr], path, line)
            rows.append((timestamp[:8], timestamp, line, pctr, market, click))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")

    by_period: dict[str, list[tuple[str, str, int, float, int, int]]] = {}
    for row in rows:
        by_period.setdefault(row[0], []).append(row)
    episodes = []
    for period_id in sorted(by_period):
        # Arrival order: timestamp, then input order for ties.
        period_rows = sorted(by_period[period_id], key=lambda r: (r[1], r[2]))
        imps = [
            Impression(seq, pctr, market, click, period_id)
            for seq, (_, _, _, pctr, market, click) in enumerate(period_rows)
        ]
        episodes.append(make_episode(period_id, imps))
    return episodes


def synth_log(spec: SynthSpec, seed: int) -> list[Episode]:
    """Generate synthetic episodes; bit-identical given (spec, seed)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.imps
    pctr = rng.beta(spec.pctr_alpha, spec.pctr_beta, size=n)
    # Beta draws are in (0,1) open interval; keep the invariant explicit.
    pctr = np.clip(pctr, 0.0, 1.0)
    mean_pctr = spec.pctr_alpha / (spec.pctr_alpha + spec.pctr_beta)
    sigma = spec.price_noise
    noise = np.exp(sigma * rng.standard_normal(n) - 0.5 * sigma * sigma)
    raw_price = spec.price_scale * (pctr / mean_pctr) * noise
    market = np.clip(round_half_up_array(raw_price), 0, spec.max_price)
    click = (rng.random(n) < pctr).astype(np.int64)

    per_period = n // spec.periods
    remainder = n % spec.periods
    episodes = []
    start = 0
    for p in range(spec.periods):
        count = per_period + (1 if p < remainder else 0)
        stop = start + count
        period_id = f"p{p:03d}"
        imps = [
            Impression(s, float(pctr[i]), int(market[i]), int(click[i]), period_id)
            for s, i in enumerate(range(start, stop))
        ]
        episodes.append(make_episode(period_id, imps))
        start = stop
    return episodes


def stats(episodes: Iterable[Episode]) -> DatasetStats:
    """Summarize episodes: counts, cost, ctr, cpm, cpc, average pctr."""
    imps = 0
    clicks = 0
    cost = 0
    pctr_sum = 0.0
    any_unset = False
    for ep in episodes:
        for imp in ep.impressions:
            imps += 1
            clicks += imp.click
            cost += imp.market_price
            if imp.has_pctr:
                pctr_sum += imp.pctr
            else:
                any_unset = True
    if imps == 0:
        raise EmptyInputError("no impressions to summarize")
    return DatasetStats(
        imps=imps,
        clicks=clicks,
        cost=cost,
        ctr=clicks / imps,
        cpm=cost / imps,
        cpc=(cost / clicks) if clicks else None,
        avg_pctr=math.nan if any_unset else pctr_sum / imps,
    )


def write_native_csv(episodes: Iterable[Episode], path: str | Path) -> None:
    """Serialize episodes to the native CSV schema (atomic write).

    pctr is written with full round-trip precision so re-ingestion
    reproduces bit-identical impressions.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(NATIVE_CSV_HEADER)
            for ep in episodes:
                for imp in ep.impressions:
                    writer.writerow(
                        (
                            imp.period_id,
                            imp.seq,
                            repr(imp.pctr),
                            imp.market_price,
                            imp.click,
                        )
                    )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
