"""Cross-entropy-method planning over action sequences.

Populations are sampled around a per-step mean/std with time-correlated
Gaussian noise (first-order filter with coefficient gamma), so individual
samples stay smooth in time while each step still follows the desired
marginal N(mu_t, diag(sigma_t^2)). Each iteration scores the population,
refits mean and std to the elite fraction, floors the std, and carries the
best sequence into the next population (elitism), which makes per-iteration
improvement monotone for deterministic objectives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import DynamicsModel
from .rewards import RewardSpec
from .state import ACTION_DIM, HISTORY_LEN, STATE_DIM
from .tg import TGSetup


@dataclass(frozen=True)
class CEMConfig:
    horizon: int = 75                 # H, control steps
    iterations: int = 5
    population: int = 400
    elite_frac: float = 0.1
    gamma: float = 0.5                # noise smoothing in [0, 1]
    init_sigma_frac: float = 0.25     # initial sigma as fraction of action range
    sigma_floor_frac: float = 0.05    # sigma floor as fraction of action range

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.horizon < 1 or self.iterations < 1 or self.population < 1:
            raise ValueError("horizon, iterations and population must be >= 1")
        if self.elite_count < 1:
            raise ValueError("elite fraction yields zero elites")

    @property
    def elite_count(self) -> int:
        return max(1, int(round(self.population * self.elite_frac)))


@dataclass
class ActionDistribution:
    mu: np.ndarray      # (H, A)
    sigma: np.ndarray   # (H, A), elementwise >= the configured floor

    def copy(self) -> "ActionDistribution":
        return ActionDistribution(self.mu.copy(), self.sigma.copy())


@dataclass
class Plan:
    """A horizon-length action sequence and where/when it applies."""

    actions: np.ndarray        # (H, A)
    planned_from: np.ndarray   # state the plan was computed for
    t0: int                    # control-step index the first action targets

    def action_at(self, t: int) -> np.ndarray:
        """Action for control step t; pads by repeating the last action."""
        if t < self.t0:
            raise ValueError(f"plan starts at step {self.t0}, asked for {t}")
        return self.actions[min(t - self.t0, len(self.actions) - 1)]

    def remaining(self, t: int, steps: int) -> np.ndarray:
        return np.stack([self.action_at(t + j) for j in range(steps)])


def correlated_noise(H: int, gamma: float, rng: np.random.Generator,
                     dim: int = ACTION_DIM, count: int | None = None) -> np.ndarray:
    """Time-correlated standard-normal noise.

    n_1 = u_1, n_t = gamma * n_{t-1} + sqrt(1 - gamma^2) * u_t with u_t iid
    standard normal, so every marginal n_t is standard normal and the lag-1
    autocorrelation equals gamma. Returns (H, dim), or (count, H, dim).
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    shape = (H, dim) if count is None else (count, H, dim)
    u = rng.standard_normal(shape)
    out = np.empty_like(u)
    axis_t = 0 if count is None else 1
    mix = np.sqrt(1.0 - gamma * gamma)
    if count is None:
        out[0] = u[0]
        for t in range(1, H):
            out[t] = gamma * out[t - 1] + mix * u[t]
    else:
        out[:, 0] = u[:, 0]
        for t in range(1, H):
            out[:, t] = gamma * out[:, t - 1] + mix * u[:, t]
    return out


def sample_population(dist: ActionDistribution, config: CEMConfig,
                      rng: np.random.Generator, lower: np.ndarray,
                      upper: np.ndarray) -> np.ndarray:
    """Draw the population and clamp to the action bounds."""
    H, A = dist.mu.shape
    noise = correlated_noise(H, config.gamma, rng, dim=A, count=config.population)
    samples = dist.mu[None, :, :] + dist.sigma[None, :, :] * noise
    np.clip(samples, lower, upper, out=samples)
    return samples


def initial_distribution(config: CEMConfig, lower: np.ndarray, upper: np.ndarray,
                         mu0: np.ndarray | None = None) -> ActionDistribution:
    H = config.horizon
    A = len(lower)
    span = upper - lower
    mu = np.tile(0.5 * (lower + upper), (H, 1)) if mu0 is None else np.tile(mu0, (H, 1))
    sigma = np.tile(config.init_sigma_frac * span, (H, 1))
    return ActionDistribution(mu=mu, sigma=sigma)


def shift_distribution(dist: ActionDistribution, shift: int, config: CEMConfig,
                       lower: np.ndarray, upper: np.ndarray) -> ActionDistribution:
    """Warm start for the next replan: time-shift the mean, reset the std."""
    H = dist.mu.shape[0]
    shift = int(np.clip(shift, 0, H))
    mu = np.empty_like(dist.mu)
    mu[:H - shift] = dist.mu[shift:]
    mu[H - shift:] = dist.mu[-1]
    sigma = np.tile(config.init_sigma_frac * (upper - lower), (H, 1))
    return ActionDistribution(mu=mu, sigma=sigma)


def cem_optimize(eval_fn, config: CEMConfig, rng: np.random.Generator,
                 init: ActionDistribution, lower: np.ndarray, upper: np.ndarray):
    """Generic CEM over (H, A) action sequences.

    eval_fn(population (P, H, A)) -> (returns (P,), bad_count). Returns
    (best mu sequence, final distribution, per-iteration diagnostics).
    """
    dist = init.copy()
    floor = config.sigma_floor_frac * (upper - lower)
    np.maximum(dist.sigma, floor, out=dist.sigma)
    best_seq: np.ndarray | None = None
    best_ret = -np.inf
    diag: list[dict] = []

    for it in range(config.iterations):
        population = sample_population(dist, config, rng, lower, upper)
        if best_seq is not None:
            population[0] = best_seq  # elitism: keep the incumbent
        returns, bad = eval_fn(population)
        order = np.argsort(-returns, kind="stable")
        elites = population[order[:config.elite_count]]
        elite_returns = returns[order[:config.elite_count]]

        if not np.isfinite(elite_returns[0]):
            diag.append({"iteration": it, "degenerate": True, "bad": bad,
                         "best_return": float("-inf"), "elite_mean_return": float("-inf"),
                         "mean_sigma": float(dist.sigma.mean())})
            continue

        if elite_returns[0] > best_ret:
            best_ret = float(elite_returns[0])
            best_seq = elites[0].copy()

        dist.mu = elites.mean(axis=0)
        dist.sigma = np.maximum(elites.std(axis=0), floor)
        finite = np.isfinite(elite_returns)
        diag.append({
            "iteration": it, "degenerate": False, "bad": bad,
            "best_return": float(elite_returns[0]),
            "elite_mean_return": float(elite_returns[finite].mean()),
            "mean_sigma": float(dist.sigma.mean()),
        })

    return dist.mu.copy(), dist, diag


@dataclass
class PlannerTask:
    """Everything a model rollout needs to score an action sequence."""

    model: DynamicsModel
    tg: TGSetup
    reward: RewardSpec
    dt: float

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.tg.limits.action_lower(), self.tg.limits.action_upper()

    def evaluate_population(self, history: np.ndarray, phases: np.ndarray,
                            t0: int, population: np.ndarray):
        """Score sequences starting at control step t0 from the given state.

        DynamicsModel snapshots go through the batched kernel backend; any
        other object with a predict_delta(history, action) method (e.g. a
        plant-backed perfect model) is rolled out sample by sample with the
        same semantics.
        """
        H = population.shape[1]
        times = (t0 + 1 + np.arange(H)) * self.dt
        v_targets = self.reward.speed_targets(times)
        kind = kernels.REWARD_TURN if self.reward.kind == "turn" else kernels.REWARD_TRACK
        w_speed, w_heading, w_tilt = self.reward.weights
        lim = self.tg.limits
        if isinstance(self.model, DynamicsModel):
            return kernels.rollout_returns(
                *self.model.kernel_args(),
                np.ascontiguousarray(history, dtype=np.float64),
                np.ascontiguousarray(phases, dtype=np.float64),
                np.ascontiguousarray(population, dtype=np.float64),
                lim.omega_min, lim.omega_max, self.tg.base_rate, self.tg.enabled,
                self.dt, v_targets, kind, self.reward.turn_rate,
                w_speed, w_heading, w_tilt)
        return self._evaluate_generic(history, phases, population, v_targets,
                                      kind, w_speed, w_heading, w_tilt)

    def _evaluate_generic(self, history, phases, population, v_targets, kind,
                          w_speed, w_heading, w_tilt):
        from .state import PHASE_START, PITCH, ROLL, TWO_PI, VEL_X, YAW
        lim = self.tg.limits
        P, H, _ = population.shape
        returns = np.zeros(P)
        bad = 0
        for p in range(P):
            hist = np.asarray(history, dtype=np.float64).copy()
            phi = np.asarray(phases, dtype=np.float64).copy()
            state = hist[-1].copy()
            for t in range(H):
                a = population[p, t]
                nxt = state + self.model.predict_delta(hist, a)
                if self.tg.enabled:
                    om = np.clip(a[8:12], lim.omega_min, lim.omega_max)
                    phi = np.mod(phi + om * self.tg.base_rate * self.dt, TWO_PI)
                nxt[PHASE_START:] = phi
                if not np.all(np.isfinite(nxt)):
                    returns[p] = -np.inf
                    bad += 1
                    break
                v_err = abs(nxt[VEL_X] - v_targets[t])
                if kind == kernels.REWARD_TURN:
                    heading = abs((nxt[YAW] - state[YAW]) / self.dt - self.reward.turn_rate)
                else:
                    heading = abs(nxt[YAW])
                tilt = nxt[ROLL] ** 2 + nxt[PITCH] ** 2
                returns[p] -= w_speed * v_err + w_heading * heading + w_tilt * tilt
                hist[:-1] = hist[1:]
                hist[-1] = nxt
                hist[-1, PHASE_START:] = np.mod(hist[-1, PHASE_START:], TWO_PI)
                state = nxt
        return returns, bad


def evaluate_sequence(task: PlannerTask, history: np.ndarray, phases: np.ndarray,
                      t0: int, actions: np.ndarray) -> float:
    """Return of a single action sequence under the task's model."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or len(actions) < 1:
        raise ValueError("actions must be a non-empty (H, A) sequence")
    returns, _ = task.evaluate_population(history, phases, t0, actions[None, :, :])
    return float(returns[0])


def cem_plan(task: PlannerTask, history: np.ndarray, phases: np.ndarray, t0: int,
             config: CEMConfig, rng: np.random.Generator,
             warm_start: ActionDistribution | None = None):
    """Plan an action sequence for control step t0 from the given state.

    Returns (Plan, final ActionDistribution, diagnostics). If every sample
    of every round scored -inf, the warm-start mean is returned as the plan
    and the diagnostics carry degenerate flags.
    """
    lower, upper = task.bounds()
    init = warm_start if warm_start is not None else initial_distribution(config, lower, upper)
    if init.mu.shape != (config.horizon, len(lower)):
        raise ValueError(f"warm start shape {init.mu.shape} does not match config")

    def eval_fn(pop):
        return task.evaluate_population(history, phases, t0, pop)

    mu, dist, diag = cem_optimize(eval_fn, config, rng, init, lower, upper)
    plan = Plan(actions=mu, planned_from=np.asarray(history)[-1].copy(), t0=int(t0))
    return plan, dist, diag
