"""From-scratch maximum-entropy actor-critic on numpy.

Feed-forward networks with analytic backprop, an adaptive-moment
optimizer, a tanh-squashed Gaussian policy, twin eval/target critics with
soft updates, a ring replay buffer, and auto-tuned temperature.
"""

from bidlab.sac.nets import (
    AdamState,
    Mlp,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_init,
    net_params,
    soft_update,
)
from bidlab.sac.policy import GaussianPolicy, policy_init, sample_action
from bidlab.sac.agent import (
    PolicyBundle,
    ReplayBuffer,
    SacConfig,
    actor_loss,
    critic_loss,
    load_checkpoint,
    new_bundle,
    save_checkpoint,
    temperature_loss,
    train_rounds,
)

__all__ = [
    "AdamState",
    "GaussianPolicy",
    "Mlp",
    "PolicyBundle",
    "ReplayBuffer",
    "SacConfig",
    "actor_loss",
    "adam_step",
    "critic_loss",
    "load_checkpoint",
    "mlp_backward",
    "mlp_forward",
    "mlp_forward_cached",
    "mlp_init",
    "net_params",
    "new_bundle",
    "policy_init",
    "sample_action",
    "save_checkpoint",
    "soft_update",
    "temperature_loss",
    "train_rounds",
]
