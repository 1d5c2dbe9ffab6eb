"""Model-based MPC toolkit for legged locomotion on a surrogate plant.

Learn a neural dynamics model with a recursive multi-step loss, plan with
a latency-compensated CEM planner over trajectory-generator-shaped
actions, and validate everything against deterministic surrogate plants.
"""

__version__ = "0.1.0"

from .cem import CEMConfig, Plan, PlannerTask, cem_plan  # noqa: F401
from .config import ExperimentConfig  # noqa: F401
from .model import DynamicsModel, TrainingConfig, load_model, save_model, train  # noqa: F401
from .plants import SurrogateQuadruped  # noqa: F401
from .replay import ReplayBuffer, TrajectoryLog  # noqa: F401
from .rewards import RewardSpec, SpeedProfile  # noqa: F401
from .runtime import ClockModel, run_episode  # noqa: F401
from .tg import TGParams, TGSetup  # noqa: F401
