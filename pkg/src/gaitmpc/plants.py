"""Deterministic surrogate plants.

SurrogateQuadruped stands in for the real robot. It is a closed-form
update rule, not a rigid-body simulation, chosen so that every end-to-end
quantity has a computable oracle:

* motors track commanded swing/extension with a first-order lag;
* a leg is in contact when its TG phase is below the stance boundary and
  its extension exceeds a threshold;
* contact legs sweeping backward (negative swing rate) produce forward
  traction:  vx' = vx + dt * (k_traction * sum_i f_i - k_drag * vx - g*sin(slope)),
  with f_i = contact_i * (-swing_rate_i).  With two legs in stance sweeping
  a range of 2A over a stance of duration T, the steady forward speed is
  exactly  vx_ss = 4 * A * k_traction / (T * k_drag);
* left/right traction imbalance plus the stance swing-angle differential
  (skid-steer) drive yaw rate and lateral velocity, so mirrored commands
  on a mirrored state yield a mirrored next state;
* roll/pitch relax toward extension differentials (overdamped
  spring-damper); |roll| or |pitch| beyond the fall threshold is terminal.

The analytic plants (linear system, damped oscillator, pendulum-cart) are
exact references for model-learning and planner tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .state import (
    BACK_LEGS, FRONT_LEGS, LEFT_LEGS, MOTOR_START, NUM_LEGS, PHASE_START, PITCH,
    RIGHT_LEGS, ROLL, STATE_DIM, VEL_X, VEL_Y, VEL_Z, YAW, check_state,
)
from .tg import LegCommands


@dataclass(frozen=True)
class PlantParams:
    dt: float = 0.006
    motor_alpha: float = 0.45        # per-step first-order command tracking
    k_traction: float = 0.45         # (m/s^2) per (rad/s) of stance sweep
    k_drag: float = 2.5              # 1/s, forward velocity decay
    k_yaw: float = 0.05              # yaw rate per unit left/right traction imbalance
    k_steer: float = 0.6             # yaw rate per unit stance swing differential
    k_lateral: float = 0.10
    k_drag_lateral: float = 3.0
    k_height: float = 0.5
    k_drag_height: float = 5.0
    k_tilt: float = 0.7              # rad of tilt target per unit extension differential
    tilt_alpha: float = 0.095        # per-step relaxation toward tilt target
    stance_boundary: float = float(np.pi)   # phase below which a leg can bear load
    contact_extension: float = 0.05  # minimum extension for ground contact
    fall_angle: float = 0.8
    slope: float = 0.0               # rad, optional incline
    gravity: float = 9.81
    observation_noise: float = 0.0   # std of optional Gaussian on observations


class SurrogateQuadruped:
    """Closed-form planar quadruped surrogate; see module docstring."""

    def __init__(self, params: PlantParams | None = None):
        self.params = params or PlantParams()

    def initial_state(self, phases: np.ndarray | None = None) -> np.ndarray:
        s = np.zeros(STATE_DIM)
        if phases is not None:
            s[PHASE_START:PHASE_START + NUM_LEGS] = np.asarray(phases, dtype=np.float64)
        return s

    def step(self, state: np.ndarray, commands: LegCommands,
             rng: np.random.Generator | None = None) -> np.ndarray:
        p = self.params
        state = check_state(state)
        s = state.copy()

        motors = state[MOTOR_START:MOTOR_START + 2 * NUM_LEGS]
        swing, ext = motors[0::2], motors[1::2]
        new_swing = swing + p.motor_alpha * (commands.swing - swing)
        new_ext = ext + p.motor_alpha * (commands.extension - ext)
        swing_rate = (new_swing - swing) / p.dt
        ext_rate = (new_ext - ext) / p.dt

        phases = state[PHASE_START:PHASE_START + NUM_LEGS]
        contact = (phases < p.stance_boundary) & (new_ext >= p.contact_extension)
        traction = np.where(contact, -swing_rate, 0.0)

        left = traction[list(LEFT_LEGS)].sum()
        right = traction[list(RIGHT_LEGS)].sum()
        # stance legs steer like a skid: left-forward/right-back swing turns
        side = np.array([1.0, 1.0, -1.0, -1.0])
        steer = float(np.sum(np.where(contact, new_swing * side, 0.0)))

        s[VEL_X] = state[VEL_X] + p.dt * (
            p.k_traction * traction.sum()
            - p.k_drag * state[VEL_X]
            - p.gravity * np.sin(p.slope))
        s[VEL_Y] = state[VEL_Y] + p.dt * (
            p.k_lateral * (left - right) - p.k_drag_lateral * state[VEL_Y])
        s[VEL_Z] = state[VEL_Z] + p.dt * (
            p.k_height * ext_rate.mean() - p.k_drag_height * state[VEL_Z])

        s[YAW] = state[YAW] + p.dt * (p.k_yaw * (left - right) + p.k_steer * steer)

        front = new_ext[list(FRONT_LEGS)].mean()
        back = new_ext[list(BACK_LEGS)].mean()
        left_e = new_ext[list(LEFT_LEGS)].mean()
        right_e = new_ext[list(RIGHT_LEGS)].mean()
        pitch_target = p.k_tilt * (front - back) + p.slope
        roll_target = p.k_tilt * (left_e - right_e)
        s[PITCH] = state[PITCH] + p.tilt_alpha * (pitch_target - state[PITCH])
        s[ROLL] = state[ROLL] + p.tilt_alpha * (roll_target - state[ROLL])

        s[MOTOR_START:MOTOR_START + 2 * NUM_LEGS:2] = new_swing
        s[MOTOR_START + 1:MOTOR_START + 2 * NUM_LEGS:2] = new_ext
        # TG phases are owned by the execution loop and pass through unchanged
        return s

    def observe(self, state: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        p = self.params
        if p.observation_noise <= 0.0 or rng is None:
            return state.copy()
        noisy = state + rng.normal(0.0, p.observation_noise, size=state.shape)
        noisy[PHASE_START:] = state[PHASE_START:]   # TG phases are known exactly
        return noisy

    def fallen(self, state: np.ndarray) -> bool:
        return bool(abs(state[ROLL]) > self.params.fall_angle
                    or abs(state[PITCH]) > self.params.fall_angle)

    def with_params(self, **kw) -> "SurrogateQuadruped":
        return SurrogateQuadruped(replace(self.params, **kw))


def mirror_state(state: np.ndarray) -> np.ndarray:
    """Reflect a state left<->right (swap leg pairs, negate vy/yaw/roll)."""
    out = state.copy()
    out[VEL_Y] = -state[VEL_Y]
    out[YAW] = -state[YAW]
    out[ROLL] = -state[ROLL]
    for a, b in zip(LEFT_LEGS, RIGHT_LEGS):
        out[MOTOR_START + 2 * a:MOTOR_START + 2 * a + 2] = \
            state[MOTOR_START + 2 * b:MOTOR_START + 2 * b + 2]
        out[MOTOR_START + 2 * b:MOTOR_START + 2 * b + 2] = \
            state[MOTOR_START + 2 * a:MOTOR_START + 2 * a + 2]
        out[PHASE_START + a] = state[PHASE_START + b]
        out[PHASE_START + b] = state[PHASE_START + a]
    return out


def mirror_commands(cmd: LegCommands) -> LegCommands:
    order = [2, 3, 0, 1]   # FL,BL,FR,BR -> FR,BR,FL,BL
    return LegCommands(swing=cmd.swing[order].copy(), extension=cmd.extension[order].copy())


class LinearPlant:
    """Exact linear system s' = A s + B a."""

    def __init__(self, A: np.ndarray, B: np.ndarray):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        if self.A.shape[0] != self.A.shape[1] or self.A.shape[0] != self.B.shape[0]:
            raise ValueError("incompatible A/B shapes")

    @classmethod
    def random_stable(cls, state_dim: int, action_dim: int,
                      rng: np.random.Generator, spectral_radius: float = 0.9) -> "LinearPlant":
        A = rng.normal(0.0, 1.0, (state_dim, state_dim))
        A *= spectral_radius / max(abs(np.linalg.eigvals(A)))
        B = rng.normal(0.0, 0.3, (state_dim, action_dim))
        return cls(A, B)

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.A @ state + self.B @ action

    def trajectory(self, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = np.empty((len(actions), len(state)))
        s = np.asarray(state, dtype=np.float64)
        for i, a in enumerate(actions):
            s = self.step(s, a)
            out[i] = s
        return out


class DampedOscillator:
    """Linear damped oscillator, discretized exactly via the matrix exponential.

    Continuous dynamics: x'' = -k x - c x'; energy 0.5*(v^2 + k x^2) is
    non-increasing along trajectories for c >= 0.
    """

    def __init__(self, k: float = 4.0, c: float = 0.5, dt: float = 0.05):
        from scipy.linalg import expm
        self.k, self.c, self.dt = k, c, dt
        self.Phi = expm(np.array([[0.0, 1.0], [-k, -c]]) * dt)

    def step(self, state: np.ndarray, action: np.ndarray | None = None) -> np.ndarray:
        return self.Phi @ state

    def energy(self, state: np.ndarray) -> float:
        x, v = state
        return 0.5 * (v * v + self.k * x * x)


class PendulumCart:
    """Cart-pole with a hanging pendulum; force on the cart is the action.

    State (x, x_dot, theta, theta_dot); theta = pi is upright. Semi-implicit
    Euler keeps the integration deterministic and stable at dt = 0.02.
    """

    def __init__(self, m_cart: float = 1.0, m_pole: float = 0.3, length: float = 0.6,
                 dt: float = 0.02, force_limit: float = 12.0):
        self.m_cart, self.m_pole, self.length = m_cart, m_pole, length
        self.dt, self.force_limit = dt, force_limit
        self.g = 9.81

    def step(self, state: np.ndarray, action: np.ndarray | float) -> np.ndarray:
        x, xd, th, thd = state
        f = float(np.clip(np.asarray(action).reshape(-1)[0], -self.force_limit, self.force_limit))
        mc, mp, L, g = self.m_cart, self.m_pole, self.length, self.g
        sin, cos = np.sin(th), np.cos(th)
        denom = mc + mp * sin * sin
        xdd = (f + mp * sin * (L * thd * thd + g * cos)) / denom
        thdd = (-f * cos - mp * L * thd * thd * sin * cos - (mc + mp) * g * sin) / (L * denom)
        xd2 = xd + self.dt * xdd
        thd2 = thd + self.dt * thdd
        return np.array([x + self.dt * xd2, xd2, th + self.dt * thd2, thd2])


class PlantBackedModel:
    """Exposes a plant through the dynamics-model interface (a perfect model).

    predict_delta reproduces exactly what the execution loop does: compose
    the action with the trajectory generators, step the plant, and carry
    the propagated TG phases in the state.
    """

    def __init__(self, plant, tg_setup, dt: float):
        self.plant = plant
        self.tg = tg_setup
        self.dt = dt

    def predict_delta(self, history: np.ndarray, action: np.ndarray) -> np.ndarray:
        from .tg import compose_action
        state = np.asarray(history)[-1]
        cmd, new_phases = compose_action(state[PHASE_START:], self.tg, action, self.dt)
        nxt = self.plant.step(state, cmd)
        nxt[PHASE_START:] = new_phases
        return nxt - state


def analytic_plants(rng: np.random.Generator | None = None) -> dict:
    """Benchmark plants with exact dynamics, as oracle targets for tests."""
    rng = rng or np.random.default_rng(0)
    return {
        "linear": LinearPlant.random_stable(STATE_DIM, 12, rng),
        "oscillator": DampedOscillator(),
        "pendulum_cart": PendulumCart(),
    }
