"""Task rewards and the desired-speed profile.

The walking reward penalizes speed-tracking error, heading drift and base
tilt:  r = -|v - v_target| - 0.001*|yaw| - 0.01*(roll^2 + pitch^2).
The turning variant swaps the heading term for yaw-rate tracking, with the
yaw rate approximated by finite difference from the previous state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import PITCH, ROLL, VEL_X, YAW

DEFAULT_WEIGHTS = (1.0, 0.001, 0.01)   # speed, heading, tilt


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear target speed: ramp from zero, then hold."""

    ramp_duration: float = 3.0
    top_speed: float = 0.66
    episode_length: float = 7.5

    def target(self, t: float) -> float:
        t = min(max(float(t), 0.0), self.episode_length)
        if self.ramp_duration <= 0.0:
            return self.top_speed
        if t >= self.ramp_duration:
            return self.top_speed
        return self.top_speed * (t / self.ramp_duration)

    def targets(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.target(t) for t in np.asarray(times, dtype=np.float64)])


def speed_target(profile: SpeedProfile, t: float) -> float:
    return profile.target(t)


@dataclass(frozen=True)
class RewardSpec:
    """Task definition: forward, backward or turn, plus its targets."""

    kind: str = "forward"                        # forward | backward | turn
    profile: SpeedProfile = field(default_factory=SpeedProfile)
    turn_rate: float = 0.0                       # rad/s, used by kind="turn"
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS

    def __post_init__(self):
        if self.kind not in ("forward", "backward", "turn"):
            raise ValueError(f"unknown task kind {self.kind!r}")

    def speed_at(self, t: float) -> float:
        v = self.profile.target(t)
        return -v if self.kind == "backward" else v

    def speed_targets(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.speed_at(t) for t in np.asarray(times, dtype=np.float64)])


def reward(state: np.ndarray, prev_state: np.ndarray, spec: RewardSpec,
           t: float, dt: float) -> float:
    """Per-step reward for the state reached at time t.

    `prev_state` is the state one control step earlier; it only enters the
    turning task, through the finite-difference yaw rate.
    """
    w_speed, w_heading, w_tilt = spec.weights
    v_err = abs(state[VEL_X] - spec.speed_at(t))
    tilt = state[ROLL] ** 2 + state[PITCH] ** 2
    if spec.kind == "turn":
        yaw_rate = (state[YAW] - prev_state[YAW]) / dt
        heading = abs(yaw_rate - spec.turn_rate)
    else:
        heading = abs(state[YAW])
    return -w_speed * v_err - w_heading * heading - w_tilt * tilt
