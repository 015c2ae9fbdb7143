"""Episodic replay of one delivery period under second-price settlement.

Pacing model: impressions are grouped into slots of 1000 arrivals. A slot
opening allocates ``min(bootstrap, daily_avail)`` where the bootstrap is
the even share ``daily_budget // ceil(n/1000)`` until the first purchase
and ``round_half_up(cpm_running * 1000)`` afterwards (cpm_running being
the average market price of impressions purchased so far this episode).
A win requires both ``bid >= market_price`` and ``slot_avail >=
market_price``; the charge is exactly the market price, debited from the
slot and the day. Unspent slot allocation never leaves ``daily_avail``,
so it is automatically available to later slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from bidlab.logstore import Episode, Impression, round_half_up
from bidlab.reports import EpisodeReport

SLOT_SIZE = 1000


@dataclass(frozen=True, slots=True)
class BidBounds:
    """Advertiser-preset floor and ceiling applied to every posted bid."""

    price_min: int = 0
    price_max: int = 300

    def __post_init__(self) -> None:
        if not 0 <= self.price_min < self.price_max:
            raise ValueError(
                f"need 0 <= price_min < price_max, got "
                f"[{self.price_min}, {self.price_max}]"
            )

    def clamp(self, value: int) -> int:
        return min(max(value, self.price_min), self.price_max)

    def clamp_array(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.price_min, self.price_max)


@dataclass(slots=True)
class PacingState:
    """Mutable per-episode pacing bookkeeping behind the observed state."""

    daily_budget: int
    n_slots: int
    t: int = 0
    pctr_sum: float = 0.0
    slot_budget: int = 0
    slot_avail: int = 0
    slot_imps_left: int = 0
    daily_avail: int = 0
    wins: int = 0
    cost: int = 0

    @property
    def cpm_running(self) -> float:
        return self.cost / self.wins if self.wins else 0.0


@dataclass(frozen=True, slots=True)
class BidState:
    """The three-feature observation the agent conditions on."""

    avg_pctr_t: float
    avbudget_ratio: float
    avimps_ratio: float


@dataclass(frozen=True, slots=True)
class AuctionOutcome:
    won: bool
    charge: int
    click: int
    # Loss attribution: "underbid" when the bid fell short of the market
    # price, "early_stop" when the price was right but the slot could not
    # afford the charge.
    loss_reason: str | None = None


@dataclass(frozen=True, slots=True)
class Transition:
    state: BidState
    action: float
    reward: float
    next_state: BidState
    terminal: bool


class Actor(Protocol):
    """Anything that can pick a bid-adjustment factor from state features."""

    def act(
        self, features: np.ndarray, rng: np.random.Generator | None, mode: str
    ) -> float: ...


class StaticBidder(Protocol):
    """Anything that maps (pctr, slot index) arrays to integer bid arrays."""

    name: str

    def bids(self, pctr: np.ndarray, slot_index: np.ndarray) -> np.ndarray: ...


class ReplayHooks(Protocol):
    def on_transition(self, transition: Transition) -> None: ...


def new_pacing(budget: int, episode_len: int) -> PacingState:
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")
    if episode_len <= 0:
        raise ValueError("episode must contain impressions")
    n_slots = -(-episode_len // SLOT_SIZE)
    return PacingState(daily_budget=budget, n_slots=n_slots, daily_avail=budget)


def _slot_bootstrap(pacing: PacingState) -> int:
    if pacing.wins == 0:
        return pacing.daily_budget // pacing.n_slots
    # Exact integer half-up rounding of cost*1000/wins.
    return (2000 * pacing.cost + pacing.wins) // (2 * pacing.wins)


def open_slot(pacing: PacingState) -> None:
    pacing.slot_budget = min(_slot_bootstrap(pacing), pacing.daily_avail)
    pacing.slot_avail = pacing.slot_budget
    pacing.slot_imps_left = SLOT_SIZE


def begin_impression(pacing: PacingState, pctr: float) -> None:
    if pacing.slot_imps_left == 0:
        open_slot(pacing)
    pacing.t += 1
    pacing.pctr_sum += pctr


def end_impression(pacing: PacingState) -> None:
    pacing.slot_imps_left -= 1


def observe(pacing: PacingState, default_avg_pctr: float = math.nan) -> BidState:
    """Project pacing bookkeeping onto the three observed features.

    Before any impression has arrived the running pCTR average is not
    defined; ``default_avg_pctr`` (typically the training-set mean) stands
    in for it.
    """
    avg = pacing.pctr_sum / pacing.t if pacing.t else default_avg_pctr
    ratio = pacing.slot_avail / pacing.slot_budget if pacing.slot_budget else 0.0
    return BidState(
        avg_pctr_t=avg,
        avbudget_ratio=ratio,
        avimps_ratio=pacing.slot_imps_left / SLOT_SIZE,
    )


def features_from_state(state: BidState, avg_pctr_train: float) -> np.ndarray:
    """Network input: the running pCTR average rescaled to O(1)."""
    return np.array(
        [
            state.avg_pctr_t / avg_pctr_train,
            state.avbudget_ratio,
            state.avimps_ratio,
        ],
        dtype=np.float64,
    )


def compose_bid(b_lin: int, action: float, bounds: BidBounds) -> int:
    """Base price plus a bounded adjustment: stays inside the bid bounds.

    A base price outside the bounds is clamped before the adjustment range
    is computed.
    """
    base = bounds.clamp(b_lin)
    span = min(bounds.price_max - base, base - bounds.price_min)
    return bounds.clamp(round_half_up(base + action * span))


def settle(bid: int, imp: Impression, pacing: PacingState) -> AuctionOutcome:
    """Second-price settlement with slot-level affordability.

    Wins charge exactly the market price against the slot and the day.
    """
    market = imp.market_price
    if bid >= market:
        if pacing.slot_avail >= market:
            pacing.slot_avail -= market
            pacing.daily_avail -= market
            pacing.cost += market
            pacing.wins += 1
            return AuctionOutcome(won=True, charge=market, click=imp.click)
        return AuctionOutcome(
            won=False, charge=0, click=0, loss_reason="early_stop"
        )
    return AuctionOutcome(won=False, charge=0, click=0, loss_reason="underbid")


def reward(
    b: int,
    b_lin: int,
    action: float,
    imp: Impression,
    pacing: PacingState,
    normalize_avbudget: bool = False,
) -> float:
    """Immediate reward comparing our bid against the linear base bid.

    The budget-insufficient case (remaining slot funds below our bid) takes
    precedence over the four win/lose cells. ``normalize_avbudget`` divides
    the both-win case's slot funds by the slot allocation, taming its
    magnitude; the case precedence and signs are unchanged.
    """
    pctr = imp.pctr
    if pacing.slot_avail < b:
        return -pctr
    market = imp.market_price
    lin_wins = b_lin >= market
    ours_wins = b >= market
    if ours_wins:
        if not lin_wins:
            return pctr
        if normalize_avbudget:
            avb = pacing.slot_avail / pacing.slot_budget if pacing.slot_budget else 0.0
        else:
            avb = float(pacing.slot_avail)
        return pctr * avb / (abs(b - b_lin) + 1)
    if not lin_wins:
        return pctr * (action - 1.0)
    return pctr * action


def slot_indices(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64) // SLOT_SIZE


def replay_bids(episode: Episode, bids: np.ndarray, budget: int) -> EpisodeReport:
    """Replay an episode against a fixed per-impression bid vector.

    This is the tight static path; its accounting is contractually
    identical to the stateful pacing used by replay_learning (the
    zero-action degeneracy test pins them together).
    """
    pctr_arr, market_arr, click_arr = episode.arrays
    n = len(market_arr)
    if len(bids) != n:
        raise ValueError(f"expected {n} bids, got {len(bids)}")
    bid_list = [int(b) for b in bids]
    market_list = market_arr.tolist()
    click_list = click_arr.tolist()
    pctr_list = pctr_arr.tolist()

    n_slots = -(-n // SLOT_SIZE)
    even_share = budget // n_slots
    daily_avail = budget
    wins = 0
    cost = 0
    clicks = 0
    pctr_won = 0.0
    lost_early = 0
    lost_under = 0

    start = 0
    while start < n:
        if wins == 0:
            boot = even_share
        else:
            boot = (2000 * cost + wins) // (2 * wins)
        slot_avail = boot if boot < daily_avail else daily_avail
        stop = min(start + SLOT_SIZE, n)
        for i in range(start, stop):
            market = market_list[i]
            if bid_list[i] >= market:
                if slot_avail >= market:
                    slot_avail -= market
                    daily_avail -= market
                    cost += market
                    wins += 1
                    clicks += click_list[i]
                    pctr_won += pctr_list[i]
                elif click_list[i]:
                    lost_early += 1
            elif click_list[i]:
                lost_under += 1
        start = stop

    return EpisodeReport(
        clicks_won=clicks,
        pctr_sum_won=pctr_won,
        imps_won=wins,
        cost=cost,
        budget=budget,
        lost_clicks_early_stop=lost_early,
        lost_clicks_underbid=lost_under,
    )


def replay_static(
    episode: Episode,
    bidder: StaticBidder,
    budget: int,
    bounds: BidBounds | None = None,
) -> EpisodeReport:
    """Replay one episode for a static bidder under the bid bounds."""
    bounds = bounds or BidBounds()
    pctr_arr = episode.arrays[0]
    raw = bidder.bids(pctr_arr, slot_indices(len(pctr_arr)))
    return replay_bids(episode, bounds.clamp_array(raw), budget)


def replay_learning(
    episode: Episode,
    actor: Actor | None,
    budget: int,
    lin_bidder: StaticBidder,
    *,
    avg_pctr_train: float,
    bounds: BidBounds | None = None,
    action_mode: str = "sample",
    rng: np.random.Generator | None = None,
    hooks: ReplayHooks | None = None,
    normalize_case2: bool = False,
    diagnostics: dict | None = None,
) -> tuple[EpisodeReport, list[Transition]]:
    """Replay one episode with per-impression bid adjustment.

    Each impression is observed, the actor proposes an adjustment factor
    (``action_mode``: "sample" draws through the policy noise, "mean" takes
    the squashed mean, "zero" forces 0 and needs no actor), the bid is
    composed against the linear base price, settled, and rewarded; the
    transition's next state is what the following decision will observe
    (post-settlement for the terminal impression).
    """
    bounds = bounds or BidBounds()
    if action_mode not in ("sample", "mean", "zero"):
        raise ValueError(f"unknown action_mode: {action_mode!r}")
    if action_mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    if action_mode != "zero" and actor is None:
        raise ValueError(f"action_mode {action_mode!r} needs an actor")

    pctr_arr, market_arr, click_arr = episode.arrays
    n = len(market_arr)
    lin_raw = lin_bidder.bids(pctr_arr, slot_indices(n))
    if diagnostics is not None:
        out_of_bounds = int(
            ((lin_raw < bounds.price_min) | (lin_raw > bounds.price_max)).sum()
        )
        diagnostics["lin_clamped"] = (
            diagnostics.get("lin_clamped", 0) + out_of_bounds
        )
    lin_bids = bounds.clamp_array(lin_raw).tolist()

    pacing = new_pacing(budget, n)
    clicks = 0
    pctr_won = 0.0
    lost_early = 0
    lost_under = 0
    transitions: list[Transition] = []

    begin_impression(pacing, float(pctr_arr[0]))
    state = observe(pacing, avg_pctr_train)
    for i in range(n):
        imp = episode.impressions[i]
        if action_mode == "zero":
            action = 0.0
        else:
            assert actor is not None
            action = actor.act(
                features_from_state(state, avg_pctr_train), rng, action_mode
            )
        b_lin = lin_bids[i]
        bid = compose_bid(b_lin, action, bounds)
        step_reward = reward(
            bid, b_lin, action, imp, pacing, normalize_avbudget=normalize_case2
        )
        outcome = settle(bid, imp, pacing)
        if outcome.won:
            clicks += outcome.click
            pctr_won += imp.pctr
        elif imp.click:
            if outcome.loss_reason == "early_stop":
                lost_early += 1
            else:
                lost_under += 1
        end_impression(pacing)

        terminal = i == n - 1
        if not terminal:
            begin_impression(pacing, float(pctr_arr[i + 1]))
        next_state = observe(pacing, avg_pctr_train)
        transition = Transition(state, action, step_reward, next_state, terminal)
        transitions.append(transition)
        if hooks is not None:
            hooks.on_transition(transition)
        state = next_state

    report = EpisodeReport(
        clicks_won=clicks,
        pctr_sum_won=pctr_won,
        imps_won=pacing.wins,
        cost=pacing.cost,
        budget=budget,
        lost_clicks_early_stop=lost_early,
        lost_clicks_underbid=lost_under,
    )
    return report, transitions
