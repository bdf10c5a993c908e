"""MLP policy with a tanh-squashed Gaussian action head and a value head.

Gradients are computed by hand with reverse-mode accumulation over plain
numpy arrays; there is no autodiff framework underneath. The squash keeps
emitted actions strictly inside (-1, 1) and its exact log-det correction
keeps importance ratios consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physics import DivergenceError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_LOG_2PI = math.log(2.0 * math.pi)
_ACTION_EDGE = 1.0 - 1e-9  # keeps atanh finite on emitted actions

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class LossSpec:
    """Weights of the clipped-surrogate objective terms."""

    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0


@dataclass(frozen=True)
class TrainBatch:
    """Minibatch view used by the loss: all arrays share the leading axis."""

    obs: np.ndarray           # (n, obs_dim)
    pre_squash: np.ndarray    # (n,) Gaussian draws before tanh
    old_log_prob: np.ndarray  # (n,) log-probs at collection time
    advantage: np.ndarray     # (n,) normalized advantages
    value_target: np.ndarray  # (n,) returns

    def __post_init__(self):
        n = len(self.pre_squash)
        if n == 0:
            raise ValueError("batch is empty")
        if not (self.obs.shape[0] == len(self.old_log_prob)
                == len(self.advantage) == len(self.value_target) == n):
            raise ValueError("batch arrays disagree on length")


def log_squash_correction(z: np.ndarray | float):
    """log(1 - tanh(z)^2) evaluated stably for any z."""
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


class GaussianPolicy:
    """Tanh trunk, tanh-squashed scalar Gaussian action, scalar value head."""

    def __init__(self, obs_dim: int, hidden: tuple[int, ...] = (64, 64),
                 rng: np.random.Generator | None = None,
                 log_std_init: float = -0.5):
        if rng is None:
            rng = np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.hidden = tuple(hidden)
        self.params: Params = {}
        sizes = (obs_dim,) + self.hidden
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:]), start=1):
            self.params[f"W{i}"] = rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)
            self.params[f"b{i}"] = np.zeros(n_out)
        last = sizes[-1]
        # small mean head keeps initial actions near zero
        self.params["w_mu"] = rng.standard_normal(last) * (0.01 / math.sqrt(last))
        self.params["b_mu"] = np.zeros(1)
        self.params["w_v"] = rng.standard_normal(last) / math.sqrt(last)
        self.params["b_v"] = np.zeros(1)
        self.params["log_std"] = np.array([
            min(max(log_std_init, LOG_STD_MIN), LOG_STD_MAX)])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def clamp_log_std(self) -> None:
        np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX,
                out=self.params["log_std"])

    # -- forward passes ---------------------------------------------------

    def _trunk(self, X: np.ndarray) -> list[np.ndarray]:
        if X.shape[-1] != self.obs_dim:
            raise ValueError(
                f"observation dim {X.shape[-1]} != expected {self.obs_dim}")
        acts = [X]
        for i in range(1, len(self.hidden) + 1):
            acts.append(np.tanh(acts[-1] @ self.params[f"W{i}"]
                                + self.params[f"b{i}"]))
        return acts

    def _heads(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu = h @ self.params["w_mu"] + self.params["b_mu"][0]
        v = h @ self.params["w_v"] + self.params["b_v"][0]
        return mu, v

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic (squashed action mean, value) for one obs or a batch."""
        X = np.asarray(obs, dtype=float)
        mu, v = self._heads(self._trunk(X)[-1])
        return np.tanh(mu), v

    def act(self, obs: np.ndarray,
            rng: np.random.Generator) -> tuple[float, float, float, float]:
        """One stochastic step: (action, pre_squash, log_prob, value)."""
        h = self._trunk(np.asarray(obs, dtype=float))[-1]
        mu, v = self._heads(h)
        ls = self.params["log_std"][0]
        sigma = math.exp(ls)
        z = float(mu) + sigma * rng.standard_normal()
        a = math.tanh(z)
        a = min(max(a, -_ACTION_EDGE), _ACTION_EDGE)
        lp = (-0.5 * ((z - float(mu)) / sigma) ** 2 - ls - 0.5 * _LOG_2PI
              - float(log_squash_correction(z)))
        return a, z, lp, float(v)

    def sample(self, obs: np.ndarray,
               rng: np.random.Generator) -> tuple[float, float]:
        """Reparameterized draw tanh(mu + sigma*eps) with its log-prob."""
        a, _, lp, _ = self.act(obs, rng)
        return a, lp

    def log_prob(self, obs: np.ndarray, action: float) -> float:
        """Log-density of a squashed action; requires |action| < 1."""
        if not abs(action) < 1.0:
            raise ValueError(f"squashed action must lie in (-1, 1): {action}")
        mu, _ = self._heads(self._trunk(np.asarray(obs, dtype=float))[-1])
        ls = self.params["log_std"][0]
        sigma = math.exp(ls)
        z = math.atanh(action)
        gauss = -0.5 * ((z - float(mu)) / sigma) ** 2 - ls - 0.5 * _LOG_2PI
        return gauss - math.log(1.0 - action * action)

    def entropy(self) -> float:
        """Pre-squash Gaussian entropy (the bonus term PPO regularizes)."""
        return 0.5 * (1.0 + _LOG_2PI) + float(self.params["log_std"][0])

    # -- loss and exact gradients -----------------------------------------

    def loss(self, batch: TrainBatch, spec: LossSpec) -> float:
        loss, _, _ = self._loss_parts(batch, spec, want_grads=False)
        return loss

    def backward(self, batch: TrainBatch,
                 spec: LossSpec) -> tuple[float, Params, dict[str, float]]:
        """Exact gradient of the scalar PPO loss over the batch.

        Returns (loss, gradients keyed like params, diagnostic stats).
        Raises DivergenceError when the loss stops being finite.
        """
        loss, grads, stats = self._loss_parts(batch, spec, want_grads=True)
        return loss, grads, stats

    def _loss_parts(self, batch: TrainBatch, spec: LossSpec, want_grads: bool):
        X = np.asarray(batch.obs, dtype=float)
        z = np.asarray(batch.pre_squash, dtype=float)
        n = len(z)

        acts = self._trunk(X)
        h = acts[-1]
        mu, v = self._heads(h)
        ls = self.params["log_std"][0]
        sigma = math.exp(ls)

        resid = (z - mu) / sigma
        lp_new = (-0.5 * resid ** 2 - ls - 0.5 * _LOG_2PI
                  - log_squash_correction(z))
        log_ratio = lp_new - batch.old_log_prob
        with np.errstate(over="ignore"):  # divergence is caught on the loss
            rho = np.exp(log_ratio)

        adv = batch.advantage
        unclipped = rho * adv
        clipped = np.clip(rho, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
        surrogate = np.minimum(unclipped, clipped)
        policy_loss = -float(surrogate.mean())

        v_err = v - batch.value_target
        value_loss = float(np.mean(v_err ** 2))

        ent = 0.5 * (1.0 + _LOG_2PI) + ls
        loss = (policy_loss + spec.value_coef * value_loss
                - spec.entropy_coef * ent)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite PPO loss: {loss}")

        stats = {
            "loss": loss,
            "policy_loss": policy_loss,
            "value_loss": value_loss,
            "entropy": float(ent),
            "approx_kl": float(-log_ratio.mean()),
            "clip_frac": float(np.mean(np.abs(rho - 1.0) > spec.clip_eps)),
        }
        if not want_grads:
            return loss, None, stats

        # gradient flows through rho only where the unclipped branch wins
        use = (unclipped <= clipped).astype(float)
        d_rho = -(adv * use) / n                      # dL/drho
        d_lp = d_rho * rho                            # dL/dlp_new
        g_mu = d_lp * resid / sigma                   # dlp/dmu = (z-mu)/sigma^2
        g_ls_policy = float(np.sum(d_lp * (resid ** 2 - 1.0)))
        g_v = (2.0 * spec.value_coef / n) * v_err

        grads: Params = {
            "w_mu": h.T @ g_mu,
            "b_mu": np.array([g_mu.sum()]),
            "w_v": h.T @ g_v,
            "b_v": np.array([g_v.sum()]),
            "log_std": np.array([g_ls_policy - spec.entropy_coef]),
        }
        d_h = np.outer(g_mu, self.params["w_mu"]) + np.outer(g_v, self.params["w_v"])
        for i in range(len(self.hidden), 0, -1):
            d_pre = d_h * (1.0 - acts[i] ** 2)
            grads[f"W{i}"] = acts[i - 1].T @ d_pre
            grads[f"b{i}"] = d_pre.sum(axis=0)
            if i > 1:
                d_h = d_pre @ self.params[f"W{i}"].T
        return loss, grads, stats

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> Params:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_arrays(self, arrays: Params) -> None:
        for k in self.params:
            if k not in arrays:
                raise KeyError(f"missing parameter tensor {k!r}")
            if arrays[k].shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k!r}: "
                                 f"{arrays[k].shape} != {self.params[k].shape}")
            self.params[k] = arrays[k].astype(float).copy()
