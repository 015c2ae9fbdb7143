"""Shared test oracles: fresh replay bookkeeping and finite differences."""

import math
from dataclasses import dataclass, field

import numpy as np


def fd_gradients(loss_fn, params, eps=1e-5):
    """Central finite differences of a scalar loss over parameter arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            up = loss_fn()
            flat_p[i] = orig - eps
            down = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, atol=1e-8):
    """Worst per-parameter relative disagreement, ignoring near-zero pairs."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        diff = np.abs(a - n)
        denom = np.maximum(np.abs(a), np.abs(n))
        mask = diff > atol
        if mask.any():
            worst = max(worst, float((diff[mask] / denom[mask]).max()))
    return worst


def min_hidden_margin(net, x):
    """Smallest |rectifier preactivation|; finite differences step across
    the kink when this is of the probe's order."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    margin = np.inf
    last = len(net.weights) - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if layer < last:
            margin = min(margin, float(np.abs(z).min()))
            h = z * (z > 0)
        else:
            h = z
    return margin


def critic_fd_guard(bundle, batch, margin=1e-3):
    """True when perturbing either eval critic cannot cross a kink."""
    q_in = np.concatenate([batch["states"], batch["actions"]], axis=1)
    return (
        min_hidden_margin(bundle.q1, q_in) > margin
        and min_hidden_margin(bundle.q2, q_in) > margin
    )


def actor_fd_guard(bundle, states, noise, margin=1e-3):
    """True when perturbing the actor cannot cross a rectifier kink, the
    twin-critic min switch, or the log-scale clamp boundary."""
    from bidlab.sac.nets import mlp_forward
    from bidlab.sac.policy import sample_actions_cached

    if min_hidden_margin(bundle.actor.net, states) <= margin:
        return False
    cache = sample_actions_cached(bundle.actor, states, noise)
    out = np.atleast_2d(mlp_forward(bundle.actor.net, states))
    raw_log_std = out[:, 1:2]
    clamp_gap = np.minimum(
        np.abs(raw_log_std - bundle.actor.log_std_min),
        np.abs(raw_log_std - bundle.actor.log_std_max),
    )
    if float(clamp_gap.min()) <= margin:
        return False
    q_in = np.concatenate([states, cache.action], axis=1)
    if (
        min_hidden_margin(bundle.q1, q_in) <= margin
        or min_hidden_margin(bundle.q2, q_in) <= margin
    ):
        return False
    q1 = np.atleast_2d(mlp_forward(bundle.q1, q_in))
    q2 = np.atleast_2d(mlp_forward(bundle.q2, q_in))
    return float(np.abs(q1 - q2).min()) > margin


@dataclass
class OracleReplay:
    clicks: int = 0
    wins: int = 0
    cost: int = 0
    pctr_won: float = 0.0
    lost_early: int = 0
    lost_under: int = 0
    slot_budgets: list = field(default_factory=list)
    slot_charges: list = field(default_factory=list)


def oracle_replay(episode, bids, budget):
    """Slow, explicit re-implementation of budgeted second-price replay.

    Slots cover 1000 arrivals. A slot opens with min(bootstrap, remaining
    day) where bootstrap is the even share budget//ceil(n/1000) before any
    purchase and round-half-up(cpm * 1000) after; a win needs
    bid >= market and slot funds >= market, charging exactly market.
    """
    r = OracleReplay()
    n = len(episode.impressions)
    n_slots = math.ceil(n / 1000)
    daily = budget
    for start in range(0, n, 1000):
        if r.wins == 0:
            boot = budget // n_slots
        else:
            boot = int(math.floor(r.cost * 1000 / r.wins + 0.5))
        slot_budget = min(boot, daily)
        slot = slot_budget
        charged = 0
        for i in range(start, min(start + 1000, n)):
            imp = episode.impressions[i]
            bid = int(bids[i])
            market = imp.market_price
            if bid >= market and slot >= market:
                slot -= market
                daily -= market
                charged += market
                r.cost += market
                r.wins += 1
                r.clicks += imp.click
                r.pctr_won += imp.pctr
            elif imp.click:
                if bid >= market:
                    r.lost_early += 1
                else:
                    r.lost_under += 1
        r.slot_budgets.append(slot_budget)
        r.slot_charges.append(charged)
    return r
