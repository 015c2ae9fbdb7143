"""Twin-critic maximum-entropy training: losses, updates, buffer, checkpoints.

Each training round samples a mini-batch, steps the two eval critics on
the TD error against the entropy-regularized target, steps the actor on
the smaller eval-critic value, adjusts the temperature toward the entropy
floor, and periodically soft-updates the target critics. All updates are
driven by one random generator, so a seed fixes the whole trajectory.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from bidlab.sac.nets import (
    AdamState,
    Mlp,
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward_cached,
    mlp_init,
    net_params,
    soft_update,
)
from bidlab.sac.policy import GaussianPolicy, sample_actions_cached

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True, slots=True)
class SacConfig:
    """Hyperparameters; the defaults are the lab's reference setting."""

    state_dim: int = 3
    action_dim: int = 1
    hidden: tuple[int, ...] = (128, 128)
    gamma: float = 1.0
    tau: float = 0.0005
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    train_every: int = 30_000
    rounds_per_training: int = 128
    target_update_every: int = 4
    lr_q: float = 3e-4
    lr_actor: float = 3e-4
    lr_alpha: float = 3e-4
    init_log_alpha: float = 0.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    squash_eps: float = 1e-6
    entropy_target: float | None = None

    @property
    def entropy_floor(self) -> float:
        if self.entropy_target is not None:
            return self.entropy_target
        return -float(self.action_dim)


@dataclass
class PolicyBundle:
    """Actor, twin eval/target critics, temperature, and optimizer state."""

    config: SacConfig
    actor: GaussianPolicy
    q1: Mlp
    q2: Mlp
    tq1: Mlp
    tq2: Mlp
    log_alpha: np.ndarray  # shape (1,)
    opt_actor: AdamState
    opt_q1: AdamState
    opt_q2: AdamState
    opt_alpha: AdamState

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))


def new_bundle(config: SacConfig, rng: np.random.Generator) -> PolicyBundle:
    """Fresh networks; target critics start as copies of the eval critics."""
    actor_net = mlp_init([config.state_dim, *config.hidden, 2], rng)
    actor = GaussianPolicy(
        actor_net, config.log_std_min, config.log_std_max, config.squash_eps
    )
    q_sizes = [config.state_dim + config.action_dim, *config.hidden, 1]
    q1 = mlp_init(q_sizes, rng)
    q2 = mlp_init(q_sizes, rng)
    log_alpha = np.array([config.init_log_alpha])
    return PolicyBundle(
        config=config,
        actor=actor,
        q1=q1,
        q2=q2,
        tq1=q1.copy(),
        tq2=q2.copy(),
        log_alpha=log_alpha,
        opt_actor=adam_init(net_params(actor_net)),
        opt_q1=adam_init(net_params(q1)),
        opt_q2=adam_init(net_params(q2)),
        opt_alpha=adam_init([log_alpha]),
    )


class ReplayBuffer:
    """Fixed-capacity ring of transitions, overwritten oldest-first."""

    def __init__(self, capacity: int, state_dim: int) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, 1))
        self.rewards = np.zeros((capacity, 1))
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros((capacity, 1))
        self.size = 0
        self.cursor = 0
        self.total_pushed = 0

    def push(
        self,
        state: np.ndarray,
        action: float,
        reward: float,
        next_state: np.ndarray,
        terminal: bool,
    ) -> None:
        i = self.cursor
        self.states[i] = state
        self.actions[i, 0] = action
        self.rewards[i, 0] = reward
        self.next_states[i] = next_state
        self.terminals[i, 0] = 1.0 if terminal else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_pushed += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "terminals": self.terminals[idx],
        }


@dataclass
class CriticLossResult:
    loss_q1: float
    loss_q2: float
    grads_q1: list[np.ndarray]
    grads_q2: list[np.ndarray]
    target_q: np.ndarray


def critic_loss(
    bundle: PolicyBundle, batch: dict, gamma: float, next_noise: np.ndarray
) -> CriticLossResult:
    """TD loss of both eval critics against the entropy-adjusted target.

    target = r + gamma * (min target-critic value of a fresh next action
    minus alpha times its log-density), cut at terminal transitions. The
    target is a constant for differentiation.
    """
    s2 = batch["next_states"]
    sample = sample_actions_cached(bundle.actor, s2, next_noise)
    q_in2 = np.concatenate([s2, sample.action], axis=1)
    t1, _ = mlp_forward_cached(bundle.tq1, q_in2)
    t2, _ = mlp_forward_cached(bundle.tq2, q_in2)
    tmin = np.minimum(t1, t2)
    alive = 1.0 - batch["terminals"]
    target = batch["rewards"] + gamma * alive * (
        tmin - bundle.alpha * sample.log_prob
    )

    q_in = np.concatenate([batch["states"], batch["actions"]], axis=1)
    n = q_in.shape[0]
    losses = []
    grads = []
    for net in (bundle.q1, bundle.q2):
        q, cache = mlp_forward_cached(net, q_in)
        diff = q - target
        losses.append(float(0.5 * np.mean(diff * diff)))
        g, _ = mlp_backward(net, cache, diff / n)
        grads.append(g)
    return CriticLossResult(losses[0], losses[1], grads[0], grads[1], target)


@dataclass
class ActorLossResult:
    loss: float
    grads: list[np.ndarray]
    log_prob: np.ndarray


def actor_loss(
    bundle: PolicyBundle, states: np.ndarray, noise: np.ndarray
) -> ActorLossResult:
    """Entropy-regularized policy loss on the smaller eval-critic value.

    loss = mean(alpha * log pi(a|s) - min_i Q_i(s, a)) with a
    reparameterized; gradients flow through the action into the actor only.
    """
    n = states.shape[0]
    alpha = bundle.alpha
    sample = sample_actions_cached(bundle.actor, states, noise)
    q_in = np.concatenate([states, sample.action], axis=1)
    q1v, cache1 = mlp_forward_cached(bundle.q1, q_in)
    q2v, cache2 = mlp_forward_cached(bundle.q2, q_in)
    qmin = np.minimum(q1v, q2v)
    loss = float(np.mean(alpha * sample.log_prob - qmin))

    # d loss / d qmin is -1/n, routed to whichever critic won the min.
    sel1 = (q1v <= q2v).astype(np.float64)
    dq = -1.0 / n
    _, din1 = mlp_backward(bundle.q1, cache1, dq * sel1)
    _, din2 = mlp_backward(bundle.q2, cache2, dq * (1.0 - sel1))
    state_dim = states.shape[1]
    dl_da = (din1 + din2)[:, state_dim:]

    t = sample.action
    one_minus_t2 = 1.0 - t * t
    w = one_minus_t2 + bundle.actor.squash_eps
    dlogp_du = 2.0 * t * one_minus_t2 / w
    dl_dlogp = alpha / n
    dl_du = dl_dlogp * dlogp_du + dl_da * one_minus_t2
    dl_dmean = dl_du
    # Through sigma = exp(log_std): du/dlog_std = sigma * noise; log_prob
    # also carries a direct -1 per unit log_std.
    dl_dlog_std = dl_du * sample.sigma * sample.noise - dl_dlogp
    dl_dlog_std = dl_dlog_std * sample.clamp_mask
    dtrunk = np.concatenate([dl_dmean, dl_dlog_std], axis=1)
    grads, _ = mlp_backward(bundle.actor.net, sample.net_cache, dtrunk)
    return ActorLossResult(loss, grads, sample.log_prob)


def temperature_loss(
    bundle: PolicyBundle, log_prob: np.ndarray
) -> tuple[float, np.ndarray]:
    """Temperature objective mean(-alpha*(log pi + entropy floor)).

    Differentiated with respect to log(alpha), keeping alpha positive by
    construction.
    """
    alpha = bundle.alpha
    pressure = float(np.mean(log_prob)) + bundle.config.entropy_floor
    loss = -alpha * pressure
    grad = np.array([-alpha * pressure])
    return loss, grad


@dataclass
class RoundLog:
    round: int
    loss_q1: float
    loss_q2: float
    loss_actor: float
    loss_alpha: float
    alpha: float


@dataclass
class TrainingLog:
    rounds: list[RoundLog] = field(default_factory=list)
    skipped: bool = False


def train_rounds(
    bundle: PolicyBundle,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    rounds: int | None = None,
) -> TrainingLog:
    """Run L update rounds (critics, actor, temperature, periodic
    target soft-updates), sampling uniformly from the buffer."""
    cfg = bundle.config
    n_rounds = cfg.rounds_per_training if rounds is None else rounds
    log = TrainingLog()
    if buffer.size < cfg.batch_size:
        logger.info(
            "skipping training: buffer %d < batch %d", buffer.size, cfg.batch_size
        )
        log.skipped = True
        return log

    actor_params = net_params(bundle.actor.net)
    q1_params = net_params(bundle.q1)
    q2_params = net_params(bundle.q2)
    for l in range(1, n_rounds + 1):
        batch = buffer.sample(cfg.batch_size, rng)
        next_noise = rng.standard_normal((cfg.batch_size, 1))
        critic = critic_loss(bundle, batch, cfg.gamma, next_noise)
        adam_step(bundle.opt_q1, q1_params, critic.grads_q1, cfg.lr_q)
        adam_step(bundle.opt_q2, q2_params, critic.grads_q2, cfg.lr_q)

        actor_noise = rng.standard_normal((cfg.batch_size, 1))
        actor = actor_loss(bundle, batch["states"], actor_noise)
        adam_step(bundle.opt_actor, actor_params, actor.grads, cfg.lr_actor)

        alpha_l, alpha_grad = temperature_loss(bundle, actor.log_prob)
        adam_step(bundle.opt_alpha, [bundle.log_alpha], [alpha_grad], cfg.lr_alpha)

        if l % cfg.target_update_every == 0:
            soft_update(bundle.q1, bundle.tq1, cfg.tau)
            soft_update(bundle.q2, bundle.tq2, cfg.tau)

        log.rounds.append(
            RoundLog(
                round=l,
                loss_q1=critic.loss_q1,
                loss_q2=critic.loss_q2,
                loss_actor=actor.loss,
                loss_alpha=alpha_l,
                alpha=bundle.alpha,
            )
        )
    return log


def _net_to_doc(net: Mlp) -> dict:
    return {
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_doc(doc: dict) -> Mlp:
    return Mlp(
        [np.array(w, dtype=np.float64) for w in doc["weights"]],
        [np.array(b, dtype=np.float64) for b in doc["biases"]],
    )


def _adam_to_doc(state: AdamState) -> dict:
    return {
        "m": [m.tolist() for m in state.m],
        "v": [v.tolist() for v in state.v],
        "step": state.step,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }


def _adam_from_doc(doc: dict) -> AdamState:
    return AdamState(
        m=[np.array(m, dtype=np.float64) for m in doc["m"]],
        v=[np.array(v, dtype=np.float64) for v in doc["v"]],
        step=doc["step"],
        beta1=doc["beta1"],
        beta2=doc["beta2"],
        eps=doc["eps"],
    )


def save_checkpoint(
    bundle: PolicyBundle,
    path: str | Path,
    buffer: ReplayBuffer | None = None,
    metadata: dict | None = None,
) -> None:
    """Serialize the bundle (and buffer cursor metadata, not contents).

    The document is deterministic: identical bundles produce byte-identical
    files.
    """
    cfg = asdict(bundle.config)
    cfg["hidden"] = list(bundle.config.hidden)
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "actor": _net_to_doc(bundle.actor.net),
        "q1": _net_to_doc(bundle.q1),
        "q2": _net_to_doc(bundle.q2),
        "tq1": _net_to_doc(bundle.tq1),
        "tq2": _net_to_doc(bundle.tq2),
        "log_alpha": float(bundle.log_alpha[0]),
        "optim": {
            "actor": _adam_to_doc(bundle.opt_actor),
            "q1": _adam_to_doc(bundle.opt_q1),
            "q2": _adam_to_doc(bundle.opt_q2),
            "alpha": _adam_to_doc(bundle.opt_alpha),
        },
        "buffer": (
            {
                "cursor": buffer.cursor,
                "size": buffer.size,
                "total_pushed": buffer.total_pushed,
                "capacity": buffer.capacity,
            }
            if buffer is not None
            else None
        ),
        "metadata": metadata or {},
    }
    path = Path(path)
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[PolicyBundle, dict]:
    """Rebuild a bundle from a checkpoint; returns (bundle, metadata)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {version!r}")
    cfg_doc = dict(doc["config"])
    cfg_doc["hidden"] = tuple(cfg_doc["hidden"])
    config = SacConfig(**cfg_doc)
    actor = GaussianPolicy(
        _net_from_doc(doc["actor"]),
        config.log_std_min,
        config.log_std_max,
        config.squash_eps,
    )
    log_alpha = np.array([doc["log_alpha"]])
    bundle = PolicyBundle(
        config=config,
        actor=actor,
        q1=_net_from_doc(doc["q1"]),
        q2=_net_from_doc(doc["q2"]),
        tq1=_net_from_doc(doc["tq1"]),
        tq2=_net_from_doc(doc["tq2"]),
        log_alpha=log_alpha,
        opt_actor=_adam_from_doc(doc["optim"]["actor"]),
        opt_q1=_adam_from_doc(doc["optim"]["q1"]),
        opt_q2=_adam_from_doc(doc["optim"]["q2"]),
        opt_alpha=_adam_from_doc(doc["optim"]["alpha"]),
    )
    # The alpha optimizer must keep mutating the live log_alpha array.
    if bundle.opt_alpha.m and bundle.opt_alpha.m[0].shape != log_alpha.shape:
        raise ValueError("corrupt checkpoint: alpha optimizer shape mismatch")
    return bundle, doc.get("metadata", {})
