"""Adam with bias correction, Polyak target tracking, cosine LR schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import MlpParams

__all__ = ["AdamState", "adam_step", "polyak_update", "cosine_lr_multiplier"]


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros_like(params.flat), v=np.zeros_like(params.flat))


def adam_step(
    state: AdamState,
    params: MlpParams,
    grad: np.ndarray,
    lr_multiplier: float = 1.0,
) -> tuple[MlpParams, AdamState]:
    """One Adam update, in place on ``params.flat`` and ``state``.

    ``lr_multiplier`` scales the step size externally (cosine schedule for
    the actor); moments are unaffected by it.
    """
    if grad.shape != params.flat.shape:
        raise ValueError(f"grad shape {grad.shape} != params shape {params.flat.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grad)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params.flat -= (state.lr * lr_multiplier) * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- (1 - tau) * target + tau * online, elementwise in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if target.flat.shape != online.flat.shape:
        raise ValueError("target and online parameter shapes differ")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat
    return target


def cosine_lr_multiplier(step: int, total_steps: int) -> float:
    """0.5 * (1 + cos(pi * step / total)), decaying from 1 to 0."""
    if total_steps <= 0:
        return 1.0
    frac = min(max(step / total_steps, 0.0), 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * frac))
