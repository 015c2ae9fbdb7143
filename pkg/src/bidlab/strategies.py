"""Static bidding strategies and their training-set calibration.

Every bidder maps an impression's pCTR (and, for the scheduled-lambda
form, its pacing-slot index) to an integer bid in milli-FEN. Calibration
replays the training episodes under the same slot-budget pacing as final
evaluation and picks the candidate that wins the most clicks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from bidlab import env
from bidlab.ioutil import atomic_write_text
from bidlab.logstore import Episode, round_half_up, round_half_up_array

BASE_BID_MIN = 1
BASE_BID_MAX = 300

# Per-slot rate changes allowed by the scheduled-lambda bidder.
LAMBDA_REGULATOR_RATES = (-0.08, -0.03, -0.01, 0.0, 0.01, 0.03, 0.08)

DEFAULT_ORTB_C_GRID = tuple(range(5, 105, 5))
DEFAULT_ORTB_LAMBDA_GRID = tuple(np.logspace(-7.0, -3.0, 17))


@dataclass(frozen=True, slots=True)
class LinParams:
    """Linear bidder: bid = pctr * base_bid / avg_pctr, rounded half-up."""

    base_bid: int
    avg_pctr: float

    def __post_init__(self) -> None:
        if not BASE_BID_MIN <= self.base_bid <= BASE_BID_MAX:
            raise ValueError(
                f"base_bid must be in [{BASE_BID_MIN},{BASE_BID_MAX}], "
                f"got {self.base_bid}"
            )
        if not self.avg_pctr > 0:
            raise ValueError(f"avg_pctr must be positive, got {self.avg_pctr}")


@dataclass(frozen=True, slots=True)
class OrtbParams:
    """Concave bidder: bid = sqrt((c/lambda)*pctr + c^2) - c."""

    c: float
    lam: float

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True, slots=True)
class LambdaSchedule:
    """Per-slot scale factor lambda(t) = lambda(t-1) * (1 + rate(t)).

    ``regulators[i]`` applies when entering slot i+1; slot 0 uses lambda0.
    Rates must come from LAMBDA_REGULATOR_RATES.
    """

    lambda0: float
    regulators: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")
        for rate in self.regulators:
            if rate not in LAMBDA_REGULATOR_RATES:
                raise ValueError(
                    f"regulator rate {rate} not in {LAMBDA_REGULATOR_RATES}"
                )

    @property
    def num_slots(self) -> int:
        return len(self.regulators) + 1

    def lambda_at(self, slot_index: int) -> float:
        if not 0 <= slot_index < self.num_slots:
            raise IndexError(
                f"slot_index {slot_index} outside schedule of "
                f"{self.num_slots} slots"
            )
        lam = self.lambda0
        for rate in self.regulators[:slot_index]:
            lam *= 1.0 + rate
        return lam


def lin_bid(pctr: float, params: LinParams) -> int:
    """Linear bid for one impression."""
    return round_half_up(pctr * params.base_bid / params.avg_pctr)


def ortb_bid(pctr: float, params: OrtbParams) -> int:
    """Concave bid for one impression; non-negative, monotone in pctr."""
    value = math.sqrt((params.c / params.lam) * pctr + params.c**2) - params.c
    return max(0, round_half_up(value))


def scheduled_lambda_bid(
    pctr: float, slot_index: int, schedule: LambdaSchedule
) -> int:
    """Bid pctr / lambda(slot_index), rounded half-up."""
    return round_half_up(pctr / schedule.lambda_at(slot_index))


class LinBidder:
    """Vectorized linear bidder for replay."""

    name = "lin"

    def __init__(self, params: LinParams) -> None:
        self.params = params

    def bids(self, pctr: np.ndarray, slot_index: np.ndarray) -> np.ndarray:
        scale = self.params.base_bid / self.params.avg_pctr
        return round_half_up_array(pctr * scale)


class OrtbBidder:
    """Vectorized concave bidder for replay."""

    name = "ortb"

    def __init__(self, params: OrtbParams) -> None:
        self.params = params

    def bids(self, pctr: np.ndarray, slot_index: np.ndarray) -> np.ndarray:
        p = self.params
        raw = np.sqrt((p.c / p.lam) * pctr + p.c**2) - p.c
        return np.maximum(round_half_up_array(raw), 0)


class FixedPriceBidder:
    """Bids one constant price for every impression."""

    name = "fixed"

    def __init__(self, price: int) -> None:
        if price < 0:
            raise ValueError(f"price must be non-negative, got {price}")
        self.price = price

    def bids(self, pctr: np.ndarray, slot_index: np.ndarray) -> np.ndarray:
        return np.full(pctr.shape, self.price, dtype=np.int64)


class ScheduledLambdaBidder:
    """Scheduled-lambda bidder; the schedule must cover every replay slot."""

    name = "scheduled-lambda"

    def __init__(self, schedule: LambdaSchedule) -> None:
        self.schedule = schedule

    def bids(self, pctr: np.ndarray, slot_index: np.ndarray) -> np.ndarray:
        max_slot = int(slot_index.max()) if len(slot_index) else 0
        lams = np.array(
            [self.schedule.lambda_at(s) for s in range(max_slot + 1)]
        )
        return round_half_up_array(pctr / lams[slot_index])


def _total_clicks(
    episodes: Sequence[Episode],
    bids_per_episode: Sequence[np.ndarray],
    budget_per_period: Mapping[str, int],
    bounds: env.BidBounds,
) -> int:
    clicks = 0
    for ep, bids in zip(episodes, bids_per_episode):
        clamped = np.clip(bids, bounds.price_min, bounds.price_max)
        report = env.replay_bids(ep, clamped, budget_per_period[ep.period_id])
        clicks += report.clicks_won
    return clicks


def training_avg_pctr(episodes: Sequence[Episode]) -> float:
    total = 0.0
    count = 0
    for ep in episodes:
        pctr = ep.arrays[0]
        total += float(pctr.sum())
        count += len(pctr)
    if count == 0:
        raise ValueError("no impressions in training episodes")
    return total / count


def calibrate_lin(
    train: Sequence[Episode],
    budget_per_period: Mapping[str, int],
    bounds: env.BidBounds | None = None,
) -> LinParams:
    """Grid-search the base bid (1..300) maximizing replayed clicks.

    Ties break toward the smaller base bid. Candidates are evaluated under
    the same slot-budget pacing and bid bounds as final evaluation.
    """
    if not train:
        raise ValueError("training episodes are empty")
    bounds = bounds or env.BidBounds()
    avg_pctr = training_avg_pctr(train)
    pctrs = [ep.arrays[0] for ep in train]

    best_base = BASE_BID_MIN
    best_clicks = -1
    for base in range(BASE_BID_MIN, BASE_BID_MAX + 1):
        scale = base / avg_pctr
        bids = [round_half_up_array(p * scale) for p in pctrs]
        clicks = _total_clicks(train, bids, budget_per_period, bounds)
        if clicks > best_clicks:
            best_clicks = clicks
            best_base = base
    return LinParams(base_bid=best_base, avg_pctr=avg_pctr)


def calibrate_ortb(
    train: Sequence[Episode],
    budget_per_period: Mapping[str, int],
    bounds: env.BidBounds | None = None,
    c_grid: Sequence[float] = DEFAULT_ORTB_C_GRID,
    lambda_grid: Sequence[float] = DEFAULT_ORTB_LAMBDA_GRID,
) -> OrtbParams:
    """Grid-search (c, lambda) maximizing replayed clicks.

    Ties break toward the smaller lambda, then the smaller c.
    """
    if not train:
        raise ValueError("training episodes are empty")
    bounds = bounds or env.BidBounds()
    pctrs = [ep.arrays[0] for ep in train]

    best: OrtbParams | None = None
    best_clicks = -1
    for lam in sorted(lambda_grid):
        for c in sorted(c_grid):
            bids = [
                np.maximum(round_half_up_array(np.sqrt((c / lam) * p + c * c) - c), 0)
                for p in pctrs
            ]
            clicks = _total_clicks(train, bids, budget_per_period, bounds)
            if clicks > best_clicks:
                best_clicks = clicks
                best = OrtbParams(c=float(c), lam=float(lam))
    assert best is not None
    return best


def save_params(
    params: LinParams | OrtbParams,
    path: str | Path,
    metadata: dict | None = None,
) -> None:
    """Write calibration results as a small JSON document."""
    if isinstance(params, LinParams):
        doc: dict = {
            "strategy": "lin",
            "base_bid": params.base_bid,
            "avg_pctr": params.avg_pctr,
        }
    else:
        doc = {"strategy": "ortb", "c": params.c, "lambda": params.lam}
    if metadata:
        doc["metadata"] = metadata
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_params(path: str | Path) -> LinParams | OrtbParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("strategy")
    if kind == "lin":
        return LinParams(base_bid=doc["base_bid"], avg_pctr=doc["avg_pctr"])
    if kind == "ortb":
        return OrtbParams(c=doc["c"], lam=doc["lambda"])
    raise ValueError(f"unknown strategy in params file: {kind!r}")


def load_schedule(path: str | Path) -> LambdaSchedule:
    """Read an externally supplied lambda schedule from JSON."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return LambdaSchedule(
        lambda0=doc["lambda0"], regulators=tuple(doc.get("regulators", ()))
    )


def save_schedule(schedule: LambdaSchedule, path: str | Path) -> None:
    doc = {"lambda0": schedule.lambda0, "regulators": list(schedule.regulators)}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
