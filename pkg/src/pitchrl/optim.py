"""First-order optimizers behind one update interface.

Adam and SGD are interchangeable through a config string so that optimizer
artifacts in the trained policies can be compared with a single flag flip.
Both are deterministic and their state round-trips through checkpoints
bit-exactly.
"""

from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


def _check_finite(grads: Params) -> None:
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {k!r}")


class Adam:
    """Adam with bias correction; moments are allocated on first use."""

    name = "adam"

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Params = {}
        self.v: Params = {}

    def step(self, params: Params, grads: Params) -> Params:
        _check_finite(grads)
        if not self.m:
            self.m = {k: np.zeros_like(p) for k, p in params.items()}
            self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out: Params = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            out[k] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out

    def state_dict(self) -> dict:
        return {
            "name": self.name, "lr": self.lr, "beta1": self.beta1,
            "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = state["lr"]
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.eps = state["eps"]
        self.t = state["t"]
        self.m = {k: np.asarray(v).copy() for k, v in state["m"].items()}
        self.v = {k: np.asarray(v).copy() for k, v in state["v"].items()}


class SGD:
    """Plain gradient descent with optional classical momentum."""

    name = "sgd"

    def __init__(self, lr: float = 1e-3, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity: Params = {}

    def step(self, params: Params, grads: Params) -> Params:
        _check_finite(grads)
        out: Params = {}
        if self.momentum == 0.0:
            for k, p in params.items():
                out[k] = p - self.lr * grads[k]
            return out
        if not self.velocity:
            self.velocity = {k: np.zeros_like(p) for k, p in params.items()}
        for k, p in params.items():
            self.velocity[k] = self.momentum * self.velocity[k] + grads[k]
            out[k] = p - self.lr * self.velocity[k]
        return out

    def state_dict(self) -> dict:
        return {
            "name": self.name, "lr": self.lr, "momentum": self.momentum,
            "velocity": {k: v.copy() for k, v in self.velocity.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = state["lr"]
        self.momentum = state["momentum"]
        self.velocity = {k: np.asarray(v).copy()
                         for k, v in state["velocity"].items()}


def make_optimizer(name: str, lr: float | None = None, **kwargs):
    """Build an optimizer from its config string ('adam' or 'sgd')."""
    key = name.strip().lower()
    if key == "adam":
        return Adam(lr=lr if lr is not None else 3e-4, **kwargs)
    if key == "sgd":
        return SGD(lr=lr if lr is not None else 1e-3, **kwargs)
    raise ValueError(f"unknown optimizer {name!r} (expected 'adam' or 'sgd')")
