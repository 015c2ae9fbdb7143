"""Tanh-squashed Gaussian policy over a single adjustment factor.

The trunk network maps state features to (mean, log-scale); the log-scale
is clamped to a configured interval, the pre-squash sample is
``mean + scale * noise``, and the action is its tanh. Sampling is
reparameterized: deterministic given the supplied noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bidlab.sac.nets import Mlp, mlp_forward_cached, mlp_init

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# tanh saturates to exactly +-1.0 in float64 for |u| > ~19; actions must
# stay strictly inside the open interval.
_ONE_INTERIOR = float(np.nextafter(1.0, 0.0))


@dataclass
class GaussianPolicy:
    net: Mlp  # output width 2: (mean, raw log-scale)
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    squash_eps: float = 1e-6


def policy_init(
    state_dim: int,
    hidden: tuple[int, ...],
    rng: np.random.Generator,
    log_std_min: float = -20.0,
    log_std_max: float = 2.0,
    squash_eps: float = 1e-6,
) -> GaussianPolicy:
    net = mlp_init([state_dim, *hidden, 2], rng)
    return GaussianPolicy(net, log_std_min, log_std_max, squash_eps)


@dataclass
class SampleCache:
    """Everything the actor-loss backward pass needs, per batch row."""

    mean: np.ndarray
    log_std: np.ndarray
    clamp_mask: np.ndarray  # 1.0 where the raw log-scale was inside the clamp
    sigma: np.ndarray
    noise: np.ndarray
    u: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    net_cache: tuple


def sample_actions_cached(
    policy: GaussianPolicy, states: np.ndarray, noise: np.ndarray
) -> SampleCache:
    """Batched reparameterized sampling with the backward-pass cache.

    states: (N, state_dim); noise: (N, 1) standard-normal draws.
    """
    out, net_cache = mlp_forward_cached(policy.net, states)
    mean = out[:, 0:1]
    raw_log_std = out[:, 1:2]
    log_std = np.clip(raw_log_std, policy.log_std_min, policy.log_std_max)
    clamp_mask = (
        (raw_log_std > policy.log_std_min) & (raw_log_std < policy.log_std_max)
    ).astype(np.float64)
    sigma = np.exp(log_std)
    u = mean + sigma * noise
    action = np.clip(np.tanh(u), -_ONE_INTERIOR, _ONE_INTERIOR)
    log_prob = (
        -0.5 * noise * noise
        - log_std
        - LOG_SQRT_2PI
        - np.log(1.0 - action * action + policy.squash_eps)
    )
    return SampleCache(
        mean=mean,
        log_std=log_std,
        clamp_mask=clamp_mask,
        sigma=sigma,
        noise=noise,
        u=u,
        action=action,
        log_prob=log_prob,
        net_cache=net_cache,
    )


def sample_action(
    policy: GaussianPolicy, features: np.ndarray, noise: float
) -> tuple[float, float]:
    """Sample one action in (-1, 1) and its squash-corrected log-density."""
    cache = sample_actions_cached(
        policy, np.asarray(features, dtype=np.float64)[None, :],
        np.array([[float(noise)]]),
    )
    return float(cache.action[0, 0]), float(cache.log_prob[0, 0])


def policy_mean_action(policy: GaussianPolicy, features: np.ndarray) -> float:
    """Greedy action: tanh of the Gaussian mean."""
    cache = sample_actions_cached(
        policy, np.asarray(features, dtype=np.float64)[None, :],
        np.zeros((1, 1)),
    )
    return float(cache.action[0, 0])


class PolicyActor:
    """Adapter exposing the replay-loop actor protocol."""

    def __init__(self, policy: GaussianPolicy) -> None:
        self.policy = policy

    def act(
        self, features: np.ndarray, rng: np.random.Generator | None, mode: str
    ) -> float:
        if mode == "mean":
            return policy_mean_action(self.policy, features)
        if mode == "sample":
            if rng is None:
                raise ValueError("sample mode needs an rng")
            action, _ = sample_action(
                self.policy, features, float(rng.standard_normal())
            )
            return action
        raise ValueError(f"unknown action mode: {mode!r}")
