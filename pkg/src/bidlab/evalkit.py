"""Experiment orchestration: budget sweeps, loss attribution, CTR scoring.

Budgets are exact integer fractions of each episode's actual cost (the sum
of its logged market prices). Independent (strategy, fraction, period)
cells are pure replays, reduced deterministically by sorted keys.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from bidlab import env
from bidlab.logstore import Episode
from bidlab.reports import EpisodeReport, SweepCell, emit_report
from bidlab.sac.agent import (
    PolicyBundle,
    ReplayBuffer,
    SacConfig,
    TrainingLog,
    new_bundle,
    train_rounds,
)
from bidlab.sac.policy import PolicyActor
from bidlab.strategies import LinBidder, LinParams

__all__ = [
    "EpisodeReport",
    "SweepCell",
    "attribute_lost_clicks",
    "auc",
    "budget_sweep",
    "emit_report",
    "evaluate_policy",
    "fraction_budget",
    "fraction_label",
    "train_ctr",
    "train_policy",
]

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (
    Fraction(1, 2),
    Fraction(1, 4),
    Fraction(1, 8),
    Fraction(1, 16),
)


def fraction_budget(episode: Episode, fraction: Fraction) -> int:
    """Exact integer budget: floor(fraction * actual episode cost)."""
    return (episode.actual_cost * fraction.numerator) // fraction.denominator


def fraction_label(fraction: Fraction) -> str:
    return f"{fraction.numerator}/{fraction.denominator}"


def budget_sweep(
    episodes: Sequence[Episode],
    strategies: Mapping[str, env.StaticBidder],
    fractions: Sequence[Fraction] = DEFAULT_FRACTIONS,
    bounds: env.BidBounds | None = None,
) -> list[SweepCell]:
    """Replay every static strategy at every budget fraction and period."""
    bounds = bounds or env.BidBounds()
    cells = []
    for name in sorted(strategies):
        bidder = strategies[name]
        for fraction in fractions:
            for ep in episodes:
                report = env.replay_static(
                    ep, bidder, fraction_budget(ep, fraction), bounds
                )
                cells.append(
                    SweepCell(name, fraction_label(fraction), ep.period_id, report)
                )
    return cells


def attribute_lost_clicks(
    episode: Episode, bids: np.ndarray, budget: int
) -> tuple[int, int]:
    """Partition this bid trace's lost clicks into (early_stop, underbid).

    A clicked impression lost with a sufficient price but unaffordable
    charge counts as early stop; one lost below the market price counts as
    underbid. The partition uses the same settlement pass as replay, so it
    is exhaustive and disjoint by construction.
    """
    report = env.replay_bids(episode, np.asarray(bids, dtype=np.int64), budget)
    return report.lost_clicks_early_stop, report.lost_clicks_underbid


def evaluate_policy(
    episodes: Sequence[Episode],
    bundle: PolicyBundle,
    lin_params: LinParams,
    fraction: Fraction,
    bounds: env.BidBounds | None = None,
    strategy_name: str = "sac",
) -> list[SweepCell]:
    """Greedy evaluation (action = squashed mean) of a frozen actor."""
    actor = PolicyActor(bundle.actor)
    lin_bidder = LinBidder(lin_params)
    cells = []
    for ep in episodes:
        report, _ = env.replay_learning(
            ep,
            actor,
            fraction_budget(ep, fraction),
            lin_bidder,
            avg_pctr_train=lin_params.avg_pctr,
            bounds=bounds,
            action_mode="mean",
        )
        cells.append(
            SweepCell(strategy_name, fraction_label(fraction), ep.period_id, report)
        )
    return cells


@dataclass
class TrainResult:
    bundle: PolicyBundle
    buffer: ReplayBuffer
    logs: list[TrainingLog] = field(default_factory=list)
    episode_reports: list[tuple[str, EpisodeReport]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


class _TrainHook:
    """Buffers transitions and trains after every k-th new one."""

    def __init__(
        self,
        result: TrainResult,
        avg_pctr_train: float,
        train_every: int,
        rng: np.random.Generator,
    ) -> None:
        self.result = result
        self.avg_pctr_train = avg_pctr_train
        self.train_every = train_every
        self.rng = rng

    def on_transition(self, transition: env.Transition) -> None:
        buffer = self.result.buffer
        buffer.push(
            env.features_from_state(transition.state, self.avg_pctr_train),
            transition.action,
            transition.reward,
            env.features_from_state(transition.next_state, self.avg_pctr_train),
            transition.terminal,
        )
        if buffer.total_pushed % self.train_every == 0:
            log = train_rounds(
                self.result.bundle, buffer, self.rng
            )
            self.result.logs.append(log)


def train_policy(
    train_episodes: Sequence[Episode],
    lin_params: LinParams,
    budget_per_period: Mapping[str, int],
    sac_config: SacConfig,
    seed: int,
    epochs: int = 5,
    bounds: env.BidBounds | None = None,
    normalize_case2: bool = False,
) -> TrainResult:
    """Train the adjustment policy over the training periods.

    Sweeps the episodes in order for the given number of epochs, sampling
    actions, buffering transitions (the buffer persists across episodes and
    epochs), and running a training burst after every ``train_every``
    stored transitions. All randomness descends from ``seed``.
    """
    if not train_episodes:
        raise ValueError("no training episodes")
    if epochs <= 0:
        raise ValueError(f"epochs must be positive, got {epochs}")
    seq = np.random.SeedSequence(seed)
    init_ss, act_ss, train_ss = seq.spawn(3)
    rng_init = np.random.default_rng(init_ss)
    rng_act = np.random.default_rng(act_ss)
    rng_train = np.random.default_rng(train_ss)

    bundle = new_bundle(sac_config, rng_init)
    buffer = ReplayBuffer(sac_config.buffer_capacity, sac_config.state_dim)
    result = TrainResult(bundle=bundle, buffer=buffer)
    hook = _TrainHook(
        result, lin_params.avg_pctr, sac_config.train_every, rng_train
    )
    actor = PolicyActor(bundle.actor)
    lin_bidder = LinBidder(lin_params)

    for epoch in range(epochs):
        for ep in train_episodes:
            report, _ = env.replay_learning(
                ep,
                actor,
                budget_per_period[ep.period_id],
                lin_bidder,
                avg_pctr_train=lin_params.avg_pctr,
                bounds=bounds,
                action_mode="sample",
                rng=rng_act,
                hooks=hook,
                normalize_case2=normalize_case2,
                diagnostics=result.diagnostics,
            )
            result.episode_reports.append(
                (f"epoch{epoch}:{ep.period_id}", report)
            )
            logger.debug(
                "epoch %d period %s: clicks=%d cost=%d",
                epoch,
                ep.period_id,
                report.clicks_won,
                report.cost,
            )
    return result


@dataclass(frozen=True, slots=True)
class CtrModel:
    """Logistic scorer over standardized feature vectors."""

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.feature_mean)
        x = x / self.feature_scale
        z = x @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve by the rank statistic, ties averaged.

    Constant scores come out at exactly 0.5.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(scores)
    if n != len(labels):
        raise ValueError("scores and labels disagree in length")
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def train_ctr(
    features: np.ndarray,
    labels: np.ndarray,
    lr: float = 0.5,
    epochs: int = 300,
    l2: float = 1e-4,
    holdout: float = 0.2,
    seed: int = 0,
) -> tuple[CtrModel, float]:
    """Fit a gradient-descent logistic scorer; report held-out AUC.

    The holdout split is stratified per class and deterministic given the
    seed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (n, d) aligned with labels")
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) == 0:
            raise ValueError(f"class {cls} absent from labels")
        idx = rng.permutation(idx)
        cut = max(1, int(round(len(idx) * holdout)))
        if cut >= len(idx):
            raise ValueError(f"class {cls} too small for a holdout split")
        test_idx.append(idx[:cut])
        train_idx.append(idx[cut:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)

    mean = x[tr].mean(axis=0)
    scale = x[tr].std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    xt = (x[tr] - mean) / scale
    yt = y[tr]
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(xt)
    for _ in range(epochs):
        z = xt @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - yt
        grad_w = xt.T @ err / n + l2 * w
        grad_b = float(err.mean())
        w -= lr * grad_w
        b -= lr * grad_b

    model = CtrModel(weights=w, bias=b, feature_mean=mean, feature_scale=scale)
    return model, auc(model.predict(x[te]), y[te].astype(np.int64))
