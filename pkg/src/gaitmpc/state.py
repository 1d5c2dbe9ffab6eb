"""State and action layout shared by the plant, the model and the planner.

The robot state is a flat 18-vector:

    [0:3]   base linear velocity (vx, vy, vz) in m/s
    [3:6]   base attitude (roll, pitch, yaw) in rad; yaw is unwrapped
    [6:14]  motor positions in leg space, per-leg (swing, extension) pairs
            ordered FL, BL, FR, BR
    [14:18] trajectory-generator phases, wrapped to [0, 2pi)

Actions are flat 12-vectors: per-leg (swing, extension-residual) pairs in
the same leg order, followed by the four phase scales.
"""

from __future__ import annotations

import numpy as np

STATE_DIM = 18
ACTION_DIM = 12
NUM_LEGS = 4
HISTORY_LEN = 4

VEL_X, VEL_Y, VEL_Z = 0, 1, 2
ROLL, PITCH, YAW = 3, 4, 5
MOTOR_START = 6          # 8 entries: (swing, extension) per leg
PHASE_START = 14         # 4 entries

# leg order: front-left, back-left, front-right, back-right
LEG_NAMES = ("FL", "BL", "FR", "BR")
LEFT_LEGS = (0, 1)
RIGHT_LEGS = (2, 3)
FRONT_LEGS = (0, 2)
BACK_LEGS = (1, 3)

TWO_PI = 2.0 * np.pi


def motor_swing_idx(leg: int) -> int:
    return MOTOR_START + 2 * leg


def motor_extension_idx(leg: int) -> int:
    return MOTOR_START + 2 * leg + 1


def action_swing_idx(leg: int) -> int:
    return 2 * leg


def action_extension_idx(leg: int) -> int:
    return 2 * leg + 1


def action_omega_idx(leg: int) -> int:
    return 8 + leg


def wrap_phase(phi):
    """Wrap phases (scalar or array) to [0, 2pi)."""
    return np.mod(phi, TWO_PI)


def new_state() -> np.ndarray:
    return np.zeros(STATE_DIM)


def check_state(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (STATE_DIM,):
        raise ValueError(f"state must have shape ({STATE_DIM},), got {state.shape}")
    if not np.all(np.isfinite(state)):
        raise ValueError("state contains non-finite entries")
    return state


def initial_history(state: np.ndarray) -> np.ndarray:
    """History at episode start: the initial state repeated HISTORY_LEN times.

    Rows are ordered oldest first, most recent last.
    """
    state = check_state(state)
    return np.tile(state, (HISTORY_LEN, 1))


def advance_history(history: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Shift the window one step, appending `state` as the newest frame."""
    out = np.empty_like(history)
    out[:-1] = history[1:]
    out[-1] = state
    return out


def mirror_action(action: np.ndarray) -> np.ndarray:
    """Swap left and right legs of an action (used by symmetry tests)."""
    out = np.empty_like(action)
    for left, right in zip(LEFT_LEGS, RIGHT_LEGS):
        for src, dst in ((left, right), (right, left)):
            out[2 * dst:2 * dst + 2] = action[2 * src:2 * src + 2]
            out[8 + dst] = action[8 + src]
    return out
