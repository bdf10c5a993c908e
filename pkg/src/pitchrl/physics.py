"""Continuous-time model of a twin-rotor pitch rig.

Two DC motors drive opposed thrusters on a beam that pivots about a single
axis. The motors are fed antisymmetrically (+u and -u), thrust is
proportional to rotor speed, and armature inductance is neglected so motor
current is algebraic. Integration is fixed-step classical RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class DivergenceError(RuntimeError):
    """Raised when a state or loss stops being finite."""


@dataclass(frozen=True)
class MotorParams:
    """DC motor constants (inductance neglected, current is algebraic)."""

    R: float = 8.4        # armature resistance [ohm]
    k_m: float = 0.042    # motor constant [V s/rad] = torque constant [N m/A]
    J_m: float = 4e-6     # rotor + shaft inertia [kg m^2]
    D_m: float = 3e-4     # viscous friction incl. propeller load [N m s/rad]

    def __post_init__(self) -> None:
        # D_m = 0 is the frictionless limit and must stay legal.
        if not (self.R > 0 and self.k_m > 0 and self.J_m > 0 and self.D_m >= 0):
            raise ValueError(f"invalid motor parameters: {self}")


@dataclass(frozen=True)
class PitchParams:
    """Pitch-axis beam constants."""

    J_p: float = 0.0219   # beam pitch inertia [kg m^2]
    D_p: float = 0.0105   # pitch viscous damping [N m s/rad]
    K_sp: float = 0.0375  # restoring stiffness [N m/rad]
    K_f: float = 1e-3     # thrust per rotor speed [N s/rad]
    l: float = 0.158      # thrust moment arm [m]

    def __post_init__(self) -> None:
        if not (self.J_p > 0 and self.l > 0 and self.K_f > 0
                and self.D_p >= 0 and self.K_sp >= 0):
            raise ValueError(f"invalid pitch parameters: {self}")


@dataclass(frozen=True)
class PlantState:
    """Pitch angle/rate plus the two rotor speeds. phi is never wrapped."""

    phi: float = 0.0       # pitch angle [rad]
    phi_dot: float = 0.0   # pitch rate [rad/s]
    omega1: float = 0.0    # rotor 1 speed [rad/s], driven by +u
    omega2: float = 0.0    # rotor 2 speed [rad/s], driven by -u

    def is_finite(self) -> bool:
        return (math.isfinite(self.phi) and math.isfinite(self.phi_dot)
                and math.isfinite(self.omega1) and math.isfinite(self.omega2))


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step integrator settings: dt is one control period."""

    dt: float = 0.01
    substeps: int = 10

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.substeps >= 1):
            raise ValueError(f"invalid sim config: {self}")


def motor_current(u: float, omega: float, p: MotorParams) -> float:
    """Armature current for supply voltage u at rotor speed omega [A]."""
    return (u - p.k_m * omega) / p.R


def motor_accel(u: float, omega: float, p: MotorParams) -> float:
    """Rotor angular acceleration: electrical torque minus friction [rad/s^2]."""
    i = (u - p.k_m * omega) / p.R
    return (p.k_m * i - p.D_m * omega) / p.J_m


def steady_state_speed(u: float, p: MotorParams) -> float:
    """Rotor speed where motor torque balances friction, for constant u.

    Closed form k_m*u / (k_m^2 + D_m*R); used as an oracle for the
    integrator in tests.
    """
    return p.k_m * u / (p.k_m * p.k_m + p.D_m * p.R)


def plant_derivative(s: PlantState, u: float, mp: MotorParams,
                     pp: PitchParams) -> tuple[float, float, float, float]:
    """Time derivative (dphi, dphi_dot, domega1, domega2) under input u.

    Motor 1 receives +u, motor 2 receives -u. Net thrust torque about the
    pivot is l*K_f*(omega1 - omega2).
    """
    pitch_accel = (pp.l * pp.K_f * (s.omega1 - s.omega2)
                   - pp.D_p * s.phi_dot - pp.K_sp * s.phi) / pp.J_p
    return (s.phi_dot, pitch_accel,
            motor_accel(u, s.omega1, mp),
            motor_accel(-u, s.omega2, mp))


def _deriv(phi: float, phi_dot: float, w1: float, w2: float, u: float,
           mp: MotorParams, pp: PitchParams) -> tuple[float, float, float, float]:
    # Tuple-based twin of plant_derivative for the integrator hot loop.
    i1 = (u - mp.k_m * w1) / mp.R
    i2 = (-u - mp.k_m * w2) / mp.R
    return (
        phi_dot,
        (pp.l * pp.K_f * (w1 - w2) - pp.D_p * phi_dot - pp.K_sp * phi) / pp.J_p,
        (mp.k_m * i1 - mp.D_m * w1) / mp.J_m,
        (mp.k_m * i2 - mp.D_m * w2) / mp.J_m,
    )


def step(s: PlantState, u: float, cfg: SimConfig, mp: MotorParams,
         pp: PitchParams) -> PlantState:
    """Advance the plant by cfg.dt using RK4 with cfg.substeps equal substeps.

    Deterministic: identical inputs give bit-identical outputs. Raises
    DivergenceError if the incoming or resulting state is non-finite.
    """
    if not s.is_finite():
        raise DivergenceError(f"non-finite plant state: {s}")
    h = cfg.dt / cfg.substeps
    x0, x1, x2, x3 = s.phi, s.phi_dot, s.omega1, s.omega2
    for _ in range(cfg.substeps):
        a0, a1, a2, a3 = _deriv(x0, x1, x2, x3, u, mp, pp)
        b0, b1, b2, b3 = _deriv(x0 + 0.5 * h * a0, x1 + 0.5 * h * a1,
                                x2 + 0.5 * h * a2, x3 + 0.5 * h * a3, u, mp, pp)
        c0, c1, c2, c3 = _deriv(x0 + 0.5 * h * b0, x1 + 0.5 * h * b1,
                                x2 + 0.5 * h * b2, x3 + 0.5 * h * b3, u, mp, pp)
        d0, d1, d2, d3 = _deriv(x0 + h * c0, x1 + h * c1,
                                x2 + h * c2, x3 + h * c3, u, mp, pp)
        k = h / 6.0
        x0 += k * (a0 + 2.0 * b0 + 2.0 * c0 + d0)
        x1 += k * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        x2 += k * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        x3 += k * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
    out = PlantState(x0, x1, x2, x3)
    if not out.is_finite():
        raise DivergenceError(f"integration diverged (u={u}, dt={cfg.dt})")
    return out


def electrical_power(u: float, s: PlantState, mp: MotorParams) -> float:
    """Total electrical power drawn by both motors [W].

    Sum of absolute per-motor powers |u_k * i_k| so regenerative spikes are
    penalized like consumption and the result is always >= 0.
    """
    i1 = motor_current(u, s.omega1, mp)
    i2 = motor_current(-u, s.omega2, mp)
    return abs(u * i1) + abs(-u * i2)


def pitch_fixed_point(u: float, mp: MotorParams, pp: PitchParams) -> float:
    """Pitch angle where thrust torque balances the spring, for constant u.

    Requires K_sp > 0; the constant-input trajectory converges here.
    """
    if pp.K_sp <= 0:
        raise ValueError("fixed point undefined for K_sp <= 0")
    w1 = steady_state_speed(u, mp)
    w2 = steady_state_speed(-u, mp)
    return pp.l * pp.K_f * (w1 - w2) / pp.K_sp
