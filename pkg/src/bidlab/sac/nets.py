"""Feed-forward networks with analytic backprop and an Adam optimizer.

Layers are fully connected with rectifier activations on hidden layers and
a linear output head. All math is float64; given identical inputs the
forward and backward passes are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MlpCache = list  # [activations per layer..., relu masks per hidden layer...]


@dataclass
class Mlp:
    """Weights (fan_in, fan_out) and biases (fan_out,) per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def mlp_init(sizes: list[int], rng: np.random.Generator) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def net_params(net: Mlp) -> list[np.ndarray]:
    """Flat parameter list [W0, b0, W1, b1, ...] shared (not copied)."""
    out: list[np.ndarray] = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a (batch, in) matrix."""
    out, _ = mlp_forward_cached(net, x)
    return out


def mlp_forward_cached(
    net: Mlp, x: np.ndarray
) -> tuple[np.ndarray, tuple[list[np.ndarray], list[np.ndarray], bool]]:
    """Forward pass keeping the per-layer activations for backprop."""
    h, squeezed = _as_batch(x)
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(
            f"input width {h.shape[1]} does not match network input "
            f"{net.weights[0].shape[0]}"
        )
    activations = [h]
    masks: list[np.ndarray] = []
    last = len(net.weights) - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if layer < last:
            mask = z > 0.0
            h = z * mask
            masks.append(mask)
            activations.append(h)
        else:
            h = z
    out = h[0] if squeezed else h
    return out, (activations, masks, squeezed)


def mlp_backward(
    net: Mlp,
    cache: tuple[list[np.ndarray], list[np.ndarray], bool],
    dout: np.ndarray,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop upstream output gradients to (parameter grads, input grad).

    Parameter gradients come back in net_params order.
    """
    activations, masks, squeezed = cache
    delta, _ = _as_batch(dout)
    grads_w: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        delta = delta @ net.weights[layer].T
        if layer > 0:
            delta = delta * masks[layer - 1]
    grads: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    dinput = delta[0] if squeezed else delta
    return grads, dinput


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    lr: float,
) -> None:
    """One adaptive-moment update with bias correction, in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def soft_update(eval_net: Mlp, target_net: Mlp, tau: float) -> None:
    """target <- tau * eval + (1 - tau) * target, elementwise in place."""
    for te, ev in zip(net_params(target_net), net_params(eval_net)):
        te *= 1.0 - tau
        te += tau * ev
