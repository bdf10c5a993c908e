"""Episodic MDP wrapper around the pitch plant.

Actions are dimensionless in [-1, 1] and scale to a bounded voltage fed
antisymmetrically to the two motors. The scalar reward trades tracking
deviation against electrical power through the weight alpha:

    R = -(1 - alpha) * |delta| - alpha * p

with both objectives normalized into [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .physics import (
    MotorParams,
    PitchParams,
    PlantState,
    SimConfig,
    electrical_power,
    step,
    steady_state_speed,
)

# deterministic multi-step reference used for every evaluation episode
EVAL_SCHEDULE: tuple[tuple[float, float], ...] = (
    (0.0, 0.0),
    (2.0, math.radians(20.0)),
    (12.0, math.radians(-20.0)),
    (22.0, 0.0),
)

PITCH_RATE_SCALE = 5.0  # rad/s mapped to 1.0 in the observation


def reward(delta_t: float, p_t: float, alpha: float) -> float:
    """Scalarized two-objective reward; <= 0 for nonnegative inputs."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return -(1.0 - alpha) * abs(delta_t) - alpha * p_t


def reference_at(t: float, schedule: Sequence[tuple[float, float]]) -> float:
    """Piecewise-constant lookup: last entry whose time is <= t."""
    if len(schedule) == 0:
        raise ValueError("reference schedule is empty")
    times = [entry[0] for entry in schedule]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"reference schedule times must increase: {times}")
    r = schedule[0][1]
    for t_k, r_k in schedule:
        if t_k <= t:
            r = r_k
        else:
            break
    return r


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 0.0
    u_max: float = 24.0
    delta_max: float = math.pi / 2      # mechanical beam range
    p_max: float | None = None          # None -> 2 * u_max^2 / R (dual stall)
    episode_steps: int = 3000
    dt: float = 0.01
    substeps: int = 10
    ref_schedule: tuple[tuple[float, float], ...] = EVAL_SCHEDULE
    seed: int = 0
    # training draws a fresh constant target per episode instead of the schedule
    train_targets: bool = False
    target_range_deg: float = 30.0
    # shorter training episodes give each update a mix of targets;
    # None keeps episode_steps (always used when train_targets is off)
    train_episode_steps: int | None = 400

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.u_max <= 0 or self.delta_max <= 0:
            raise ValueError("u_max and delta_max must be positive")
        if self.p_max is not None and self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be >= 1")
        if self.train_episode_steps is not None and self.train_episode_steps < 1:
            raise ValueError("train_episode_steps must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def effective_episode_steps(self) -> int:
        if self.train_targets and self.train_episode_steps is not None:
            return self.train_episode_steps
        return self.episode_steps


@dataclass(frozen=True)
class Observation:
    """Normalized policy inputs, each clipped to [-1, 1]."""

    e: float           # (phi - r) / delta_max
    phi_dot_n: float   # phi_dot / PITCH_RATE_SCALE
    omega_n: float     # omega1 / steady_state_speed(u_max)
    r_n: float         # r / delta_max

    def as_array(self) -> np.ndarray:
        return np.array((self.e, self.phi_dot_n, self.omega_n, self.r_n))


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    delta_t: float
    p_t: float
    done: bool
    raw_deviation_deg: float
    raw_power_w: float


@dataclass
class EnvSnapshot:
    """Everything needed to restore an env mid-episode, bit-exactly."""

    plant: PlantState
    step_index: int
    t: float
    schedule: tuple[tuple[float, float], ...]
    rng_state: dict
    needs_reset: bool


def _clip1(x: float) -> float:
    return -1.0 if x < -1.0 else (1.0 if x > 1.0 else x)


class PitchEnv:
    """Single-threaded pitch-tracking environment over the twin-rotor plant."""

    def __init__(self, cfg: EnvConfig, motor: MotorParams | None = None,
                 pitch: PitchParams | None = None):
        self.cfg = cfg
        self.motor = motor if motor is not None else MotorParams()
        self.pitch = pitch if pitch is not None else PitchParams()
        self.sim = SimConfig(dt=cfg.dt, substeps=cfg.substeps)
        self.p_max = cfg.p_max if cfg.p_max is not None \
            else 2.0 * cfg.u_max ** 2 / self.motor.R
        self.omega_scale = steady_state_speed(cfg.u_max, self.motor)
        self._rng = np.random.default_rng(cfg.seed)
        self._schedule = cfg.ref_schedule
        self._state = PlantState()
        self._k = 0
        self._t = 0.0
        self._needs_reset = True

    @property
    def obs_dim(self) -> int:
        return 4

    def reset(self, seed: int | None = None) -> Observation:
        """Start a new episode from rest. A seed reseeds the env generator."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if self.cfg.train_targets:
            half = math.radians(self.cfg.target_range_deg)
            target = float(self._rng.uniform(-half, half))
            self._schedule = ((0.0, target),)
        else:
            self._schedule = self.cfg.ref_schedule
        self._state = PlantState()
        self._k = 0
        self._t = 0.0
        self._needs_reset = False
        return self._observe()

    def _observe(self) -> Observation:
        r = reference_at(self._t, self._schedule)
        s = self._state
        return Observation(
            e=_clip1((s.phi - r) / self.cfg.delta_max),
            phi_dot_n=_clip1(s.phi_dot / PITCH_RATE_SCALE),
            omega_n=_clip1(s.omega1 / self.omega_scale),
            r_n=_clip1(r / self.cfg.delta_max),
        )

    def current_obs(self) -> Observation:
        if self._needs_reset:
            raise RuntimeError("environment not reset")
        return self._observe()

    @property
    def needs_reset(self) -> bool:
        return self._needs_reset

    def step(self, action: float) -> StepResult:
        """Apply one control period of voltage action * u_max."""
        if self._needs_reset:
            raise RuntimeError("episode finished or not started; call reset()")
        if not math.isfinite(action):
            raise ValueError(f"action must be finite, got {action}")
        a = _clip1(float(action))
        u = a * self.cfg.u_max
        # power is metered at the speeds the voltage is applied to
        raw_power = electrical_power(u, self._state, self.motor)
        self._state = step(self._state, u, self.sim, self.motor, self.pitch)
        self._k += 1
        self._t = self._k * self.cfg.dt
        r = reference_at(self._t, self._schedule)
        raw_dev = abs(self._state.phi - r)
        delta_t = min(raw_dev / self.cfg.delta_max, 1.0)
        p_t = min(raw_power / self.p_max, 1.0)
        done = self._k >= self.cfg.effective_episode_steps
        self._needs_reset = done
        return StepResult(
            obs=self._observe(),
            reward=reward(delta_t, p_t, self.cfg.alpha),
            delta_t=delta_t,
            p_t=p_t,
            done=done,
            raw_deviation_deg=math.degrees(raw_dev),
            raw_power_w=raw_power,
        )

    @property
    def time(self) -> float:
        return self._t

    @property
    def plant_state(self) -> PlantState:
        return self._state

    def reference(self) -> float:
        return reference_at(self._t, self._schedule)

    def snapshot(self) -> EnvSnapshot:
        return EnvSnapshot(
            plant=self._state,
            step_index=self._k,
            t=self._t,
            schedule=self._schedule,
            rng_state=self._rng.bit_generator.state,
            needs_reset=self._needs_reset,
        )

    def restore(self, snap: EnvSnapshot) -> None:
        self._state = snap.plant
        self._k = snap.step_index
        self._t = snap.t
        self._schedule = tuple(tuple(e) for e in snap.schedule)
        self._rng.bit_generator.state = snap.rng_state
        self._needs_reset = snap.needs_reset


@dataclass
class TraceRow:
    t: float
    phi_deg: float
    r_deg: float
    u_V: float
    power_W: float
    reward: float


TRACE_HEADER = ("t", "phi_deg", "r_deg", "u_V", "power_W", "reward")


def write_trace_csv(rows: Iterable[TraceRow], path: Path | str) -> Path:
    """Episode trace as CSV with the documented column order."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_HEADER)
        for row in rows:
            w.writerow([repr(row.t), repr(row.phi_deg), repr(row.r_deg),
                        repr(row.u_V), repr(row.power_W), repr(row.reward)])
    return path


def run_scripted(env: PitchEnv, voltage_profile: Sequence[tuple[float, float]],
                 n_steps: int | None = None) -> list[TraceRow]:
    """Open-loop rollout driving the env with a piecewise-constant voltage."""
    n = n_steps if n_steps is not None else env.cfg.episode_steps
    env.reset()
    rows = []
    for k in range(n):
        t = k * env.cfg.dt
        u = reference_at(t, voltage_profile)
        res = env.step(u / env.cfg.u_max)
        rows.append(TraceRow(
            t=env.time, phi_deg=math.degrees(env.plant_state.phi),
            r_deg=math.degrees(env.reference()), u_V=u,
            power_W=res.raw_power_w, reward=res.reward,
        ))
        if res.done and k + 1 < n:
            env.reset()
    return rows
