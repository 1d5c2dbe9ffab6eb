"""Periodic leg-extension trajectory generators and action composition.

Each leg owns an independent generator with internal phase phi in [0, 2pi).
The extension output is a two-mode sine: a stance arc below the stance
boundary and a lift arc above it, rescaled so the curve is continuous at
the boundary and at the wrap point. Generators never drive swing angles;
swing comes entirely from the planner.

The 12-dim planner action is layered on top: per-leg (swing, extension
residual) pairs followed by four phase scales. Phase scales are
dimensionless multipliers of a configured base rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import (ACTION_DIM, NUM_LEGS, TWO_PI, wrap_phase)


@dataclass(frozen=True)
class TGParams:
    """Parameters of one leg's generator."""

    center_extension: float = 0.0
    stance_amplitude: float = 0.3
    lift_amplitude: float = 0.6
    stance_phase: float = float(np.pi)   # stance/lift boundary in (0, 2pi)

    def __post_init__(self):
        if not (0.0 < self.stance_phase < TWO_PI):
            raise ValueError(f"stance_phase must lie in (0, 2pi), got {self.stance_phase}")
        if self.stance_amplitude < 0.0 or self.lift_amplitude < 0.0:
            raise ValueError("amplitudes must be non-negative")


@dataclass(frozen=True)
class ActionLimits:
    """Actuator and action-space bounds used for clamping."""

    swing: float = 0.6               # |swing| bound, rad
    extension_residual: float = 0.3  # |extension residual| bound
    extension_min: float = -1.0      # absolute extension clamp after composition
    extension_max: float = 1.0
    omega_min: float = 0.0           # phase-scale bounds (dimensionless)
    omega_max: float = 3.0

    def action_lower(self) -> np.ndarray:
        lo = np.empty(ACTION_DIM)
        lo[0:8:2] = -self.swing
        lo[1:8:2] = -self.extension_residual
        lo[8:12] = self.omega_min
        return lo

    def action_upper(self) -> np.ndarray:
        hi = np.empty(ACTION_DIM)
        hi[0:8:2] = self.swing
        hi[1:8:2] = self.extension_residual
        hi[8:12] = self.omega_max
        return hi


@dataclass(frozen=True)
class TGSetup:
    """Generator parameters for all four legs plus shared rate/limit config."""

    params: tuple[TGParams, TGParams, TGParams, TGParams] = tuple(TGParams() for _ in range(4))
    base_rate: float = TWO_PI        # rad/s of phase advance at scale 1.0
    limits: ActionLimits = field(default_factory=ActionLimits)
    enabled: bool = True             # False: no extension term, phases frozen
    nominal_omega: float = 1.0       # phase scale of the open-loop gait

    @classmethod
    def uniform(cls, params: TGParams, **kw) -> "TGSetup":
        return cls(params=(params,) * 4, **kw)


@dataclass
class LegCommands:
    """Per-leg commands in leg space, already clamped to actuator limits."""

    swing: np.ndarray      # (4,)
    extension: np.ndarray  # (4,)

    def as_pairs(self) -> np.ndarray:
        out = np.empty(2 * NUM_LEGS)
        out[0::2] = self.swing
        out[1::2] = self.extension
        return out


def tg_extension(params: TGParams, phi) -> float | np.ndarray:
    """Extension output at phase phi (wrapped if out of range).

    Stance branch (phi < stance_phase) maps phi linearly onto [0, pi) with
    the stance amplitude; the lift branch maps [stance_phase, 2pi) onto
    [pi, 2pi) with the lift amplitude. sin is zero at 0, pi and 2pi, so the
    output equals center_extension at both mode switches.
    """
    phi = wrap_phase(np.asarray(phi, dtype=np.float64))
    stance = phi < params.stance_phase
    scaled = np.where(
        stance,
        phi / params.stance_phase * np.pi,
        (1.0 + (phi - params.stance_phase) / (TWO_PI - params.stance_phase)) * np.pi,
    )
    amp = np.where(stance, params.stance_amplitude, params.lift_amplitude)
    out = params.center_extension + amp * np.sin(scaled)
    return float(out) if out.ndim == 0 else out


def in_stance(params: TGParams, phi) -> bool | np.ndarray:
    phi = wrap_phase(np.asarray(phi, dtype=np.float64))
    res = phi < params.stance_phase
    return bool(res) if res.ndim == 0 else res


def propagate_phases(phases: np.ndarray, omegas: np.ndarray, dt: float,
                     setup: TGSetup) -> tuple[np.ndarray, bool]:
    """Advance each phase by omega * base_rate * dt and wrap to [0, 2pi).

    Out-of-bound phase scales are clamped, never an error; returns the new
    phases and whether any clamping happened (callers may log it).
    """
    limits = setup.limits
    clamped = np.clip(omegas, limits.omega_min, limits.omega_max)
    did_clamp = bool(np.any(clamped != omegas))
    if not setup.enabled:
        return np.asarray(phases, dtype=np.float64).copy(), did_clamp
    return wrap_phase(np.asarray(phases) + clamped * setup.base_rate * dt), did_clamp


def compose_action(phases: np.ndarray, setup: TGSetup, action: np.ndarray,
                   dt: float) -> tuple[LegCommands, np.ndarray]:
    """Layer a planner action on the generator outputs.

    Per leg: extension = tg_extension(phi) + extension residual, swing is
    the planner's swing value directly (generators do not drive swing).
    Phases advance with the action's phase scales. Commands are clamped to
    the configured limits.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
    limits = setup.limits

    swing = np.clip(action[0:8:2], -limits.swing, limits.swing)
    residual = np.clip(action[1:8:2], -limits.extension_residual, limits.extension_residual)
    if setup.enabled:
        base = np.array([tg_extension(p, phi) for p, phi in zip(setup.params, phases)])
    else:
        base = np.zeros(NUM_LEGS)
    extension = np.clip(base + residual, limits.extension_min, limits.extension_max)

    new_phases, _ = propagate_phases(phases, action[8:12], dt, setup)
    return LegCommands(swing=swing, extension=extension), new_phases


def default_action(setup: TGSetup, nominal_omega: float | None = None) -> np.ndarray:
    """Zero residuals with a constant nominal phase scale (open-loop gait)."""
    omega = setup.nominal_omega if nominal_omega is None else nominal_omega
    a = np.zeros(ACTION_DIM)
    a[8:12] = np.clip(omega, setup.limits.omega_min, setup.limits.omega_max)
    return a
