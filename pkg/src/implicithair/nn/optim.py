"""Adam with bias correction and a step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_every: int = 20
    decay_factor: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index."""
        if self.decay_every <= 0:
            return self.lr
        return self.lr * self.decay_factor ** (epoch // self.decay_every)


class Adam:
    """Holds first/second moments keyed by parameter name."""

    def __init__(self, named_params, cfg: AdamConfig | None = None):
        self.cfg = cfg or AdamConfig()
        self.params = dict(named_params)
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0
        self.epoch = 0

    def step(self, lr=None):
        cfg = self.cfg
        lr = cfg.lr_at(self.epoch) if lr is None else lr
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def adam_step(params, grads, state, cfg: AdamConfig, epoch=0):
    """Functional single Adam update on plain arrays.

    ``state`` is a dict with keys ``t``, ``m`` and ``v`` (lists aligned with
    ``params``); it is updated in place. Returns the new parameter arrays.
    """
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    t = state["t"]
    lr = cfg.lr_at(epoch)
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = cfg.beta1 * state["m"][i] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state["v"][i] + (1 - cfg.beta2) * g * g
        state["m"][i], state["v"][i] = m, v
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
    return out
