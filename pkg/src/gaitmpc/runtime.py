"""Asynchronous MPC execution: a control loop at the control rate and a
planning loop at the replan rate, decoupled by a latency model.

With latency compensation enabled, each planning job starts from the
model-predicted state at its completion time (current state rolled forward
over the actions that will execute while planning runs), so the first
planned action is executed on exactly the state it was planned for. With
compensation disabled, jobs plan from the stale current state and their
actions land T steps late, reproducing the misalignment the compensation
removes.

Two time modes: simulated time (default; the latency is an injected,
deterministic number of control steps, everything runs on one thread) and
wall-clock time (two real threads, latency measured from planner runtime).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .cem import (ActionDistribution, CEMConfig, Plan, PlannerTask, cem_plan,
                  shift_distribution)
from .model import DynamicsModel
from .replay import TrajectoryLog
from .rewards import RewardSpec, reward
from .state import HISTORY_LEN, PHASE_START, STATE_DIM, TWO_PI, advance_history, initial_history
from .tg import compose_action, default_action

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClockModel:
    """Control-step timing: 6 ms steps, replans every 12 steps by default."""

    dt: float = 0.006
    replan_interval: int = 12    # control steps between planning jobs
    latency: int = 12            # T: planning latency in control steps

    def __post_init__(self):
        if self.replan_interval < 1:
            raise ValueError("replan interval must be >= 1 control step")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if self.latency > self.replan_interval:
            raise ValueError(
                "simulated-time mode requires latency <= replan interval "
                f"(got T={self.latency}, interval={self.replan_interval})")


@dataclass
class PlanRecord:
    seq: int
    plan: Plan
    computed_at: int       # control step the job started
    activated_at: int      # control step the plan took effect
    predicted_state: np.ndarray   # state the planner was given


@dataclass
class EpisodeResult:
    log: TrajectoryLog
    plan_seq: np.ndarray           # (L,) active plan per step, 0 = default action
    replan_flags: np.ndarray       # (L,) True where a planning job started
    plans: list[PlanRecord] = field(default_factory=list)
    planner_diag: list = field(default_factory=list)
    fell: bool = False

    @property
    def episode_return(self) -> float:
        return self.log.episode_return


class PlanSlot:
    """Single-writer/single-reader handoff of the newest plan."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plan: Plan | None = None
        self._seq = 0

    def publish(self, plan: Plan, seq: int):
        with self._lock:
            if seq > self._seq:
                self._plan, self._seq = plan, seq

    def latest(self) -> tuple[Plan | None, int]:
        with self._lock:
            return self._plan, self._seq


def predict_future_state(model, history: np.ndarray, phases: np.ndarray,
                         in_flight: np.ndarray, latency: int, tg_setup,
                         dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Roll the model over the next `latency` steps of in-flight actions.

    Returns the predicted observation history and TG phases at t+latency.
    latency=0 returns the inputs unchanged. If fewer in-flight actions than
    latency steps are supplied, the last one is repeated (with a warning).
    """
    if latency == 0:
        return np.asarray(history, dtype=np.float64).copy(), \
            np.asarray(phases, dtype=np.float64).copy()
    in_flight = np.atleast_2d(np.asarray(in_flight, dtype=np.float64))
    if len(in_flight) < latency:
        log.warning("in-flight plan covers %d of %d latency steps; padding with last action",
                    len(in_flight), latency)
        pad = np.tile(in_flight[-1], (latency - len(in_flight), 1))
        in_flight = np.vstack([in_flight, pad])

    hist = np.asarray(history, dtype=np.float64).copy()
    phi = np.asarray(phases, dtype=np.float64).copy()
    state = hist[-1].copy()
    lim = tg_setup.limits
    for t in range(latency):
        a = in_flight[t]
        nxt = state + model.predict_delta(hist, a)
        if tg_setup.enabled:
            om = np.clip(a[8:12], lim.omega_min, lim.omega_max)
            phi = np.mod(phi + om * tg_setup.base_rate * dt, TWO_PI)
        nxt[PHASE_START:] = phi
        hist = advance_history(hist, nxt)
        hist[-1, PHASE_START:] = np.mod(hist[-1, PHASE_START:], TWO_PI)
        state = nxt
    return hist, phi


def run_episode(plant, task: PlannerTask, cem_config: CEMConfig, clock: ClockModel,
                episode_steps: int, rng_planner: np.random.Generator,
                rng_obs: np.random.Generator | None = None,
                async_mode: bool = True, initial_phases: np.ndarray | None = None,
                seed: int = 0, config_hash: str = "") -> EpisodeResult:
    """Run one simulated-time MPC episode on the plant.

    The execution loop emits an action every control step (the open-loop TG
    action until the first plan lands). A planning job starts every
    replan_interval steps and completes `latency` steps later; its plan
    takes effect exactly at its planned-for timestamp.
    """
    T = clock.latency
    R = clock.replan_interval
    tg_setup = task.tg
    base_action = default_action(tg_setup)

    true_state = plant.initial_state(initial_phases)
    obs = plant.observe(true_state, rng_obs)
    history = initial_history(obs)
    tg_phases = obs[PHASE_START:].copy()

    active: Plan | None = None
    active_seq = 0
    pending: tuple[int, Plan, int, PlanRecord] | None = None
    prev_dist: ActionDistribution | None = None
    seq_counter = 0

    states = np.empty((episode_steps, STATE_DIM))
    actions = np.empty((episode_steps, task.tg.limits.action_lower().shape[0]))
    rewards = np.empty(episode_steps)
    plan_seq = np.zeros(episode_steps, dtype=np.int64)
    replan_flags = np.zeros(episode_steps, dtype=bool)
    plans: list[PlanRecord] = []
    diags: list = []
    fell = False
    steps_done = 0

    for k in range(episode_steps):
        if pending is not None and k == pending[0]:
            _, plan, seq, record = pending
            active, active_seq = plan, seq
            record.activated_at = k
            pending = None

        if k % R == 0:
            replan_flags[k] = True
            seq_counter += 1
            lower, upper = task.bounds()
            warm = (shift_distribution(prev_dist, R, cem_config, lower, upper)
                    if prev_dist is not None else None)
            if async_mode and T > 0:
                if active is not None:
                    in_flight = active.remaining(k, T)
                else:
                    in_flight = np.tile(base_action, (T, 1))
                hist_T, phases_T = predict_future_state(
                    task.model, history, tg_phases, in_flight, T, tg_setup, clock.dt)
                plan, dist, diag = cem_plan(task, hist_T, phases_T, k + T,
                                            cem_config, rng_planner, warm)
                record = PlanRecord(seq=seq_counter, plan=plan, computed_at=k,
                                    activated_at=-1, predicted_state=hist_T[-1].copy())
                pending = (k + T, plan, seq_counter, record)
            else:
                plan, dist, diag = cem_plan(task, history, tg_phases, k,
                                            cem_config, rng_planner, warm)
                record = PlanRecord(seq=seq_counter, plan=plan, computed_at=k,
                                    activated_at=-1, predicted_state=history[-1].copy())
                if T == 0:
                    active, active_seq = plan, seq_counter
                    record.activated_at = k
                else:
                    # stale execution: the plan lands T steps late, shifted
                    late = Plan(actions=plan.actions, planned_from=plan.planned_from,
                                t0=k + T)
                    pending = (k + T, late, seq_counter, record)
            prev_dist = dist
            diags.append({"step": k, "seq": seq_counter, "iterations": diag})
            plans.append(record)

        action = active.action_at(k) if active is not None else base_action
        cmd, new_phases = compose_action(tg_phases, tg_setup, action, clock.dt)
        next_true = plant.step(true_state, cmd)
        next_true[PHASE_START:] = new_phases
        next_obs = plant.observe(next_true, rng_obs)

        t_next = (k + 1) * clock.dt
        r = reward(next_obs, obs, task.reward, t_next, clock.dt)

        states[k] = obs
        actions[k] = action
        rewards[k] = r
        plan_seq[k] = active_seq
        steps_done = k + 1

        history = advance_history(history, next_obs)
        true_state, obs, tg_phases = next_true, next_obs, new_phases

        if plant.fallen(next_true):
            fell = True
            break

    traj = TrajectoryLog(
        states=states[:steps_done], actions=actions[:steps_done],
        rewards=rewards[:steps_done], final_state=obs,
        seed=seed, config_hash=config_hash,
        termination="fall" if fell else "completed")
    return EpisodeResult(log=traj, plan_seq=plan_seq[:steps_done],
                         replan_flags=replan_flags[:steps_done],
                         plans=plans, planner_diag=diags, fell=fell)


def run_policy_episode(plant, tg_setup, policy, reward_spec: RewardSpec,
                       clock: ClockModel, episode_steps: int,
                       rng_obs: np.random.Generator | None = None,
                       initial_phases: np.ndarray | None = None,
                       seed: int = 0, config_hash: str = "") -> EpisodeResult:
    """Execution loop without a planner; policy(k, obs) -> action."""
    true_state = plant.initial_state(initial_phases)
    obs = plant.observe(true_state, rng_obs)
    tg_phases = obs[PHASE_START:].copy()

    states = np.empty((episode_steps, STATE_DIM))
    acts = np.empty((episode_steps, 12))
    rewards = np.empty(episode_steps)
    fell = False
    steps_done = 0

    for k in range(episode_steps):
        action = np.asarray(policy(k, obs), dtype=np.float64)
        cmd, new_phases = compose_action(tg_phases, tg_setup, action, clock.dt)
        next_true = plant.step(true_state, cmd)
        next_true[PHASE_START:] = new_phases
        next_obs = plant.observe(next_true, rng_obs)
        r = reward(next_obs, obs, reward_spec, (k + 1) * clock.dt, clock.dt)

        states[k], acts[k], rewards[k] = obs, action, r
        steps_done = k + 1
        true_state, obs, tg_phases = next_true, next_obs, new_phases
        if plant.fallen(next_true):
            fell = True
            break

    traj = TrajectoryLog(
        states=states[:steps_done], actions=acts[:steps_done],
        rewards=rewards[:steps_done], final_state=obs, seed=seed,
        config_hash=config_hash, termination="fall" if fell else "completed")
    return EpisodeResult(log=traj, plan_seq=np.zeros(steps_done, dtype=np.int64),
                         replan_flags=np.zeros(steps_done, dtype=bool), fell=fell)


def replay_plans_episode(plant, task: PlannerTask, clock: ClockModel,
                         episode_steps: int, plans: list[PlanRecord],
                         initial_phases: np.ndarray | None = None) -> EpisodeResult:
    """Re-execute recorded plans at their activation timestamps, no planner.

    This is the zero-latency execution of a fixed plan schedule: each plan
    becomes active exactly at its recorded activation step.
    """
    schedule = {rec.activated_at: rec for rec in plans if rec.activated_at >= 0}
    tg_setup = task.tg
    base_action = default_action(tg_setup)

    true_state = plant.initial_state(initial_phases)
    obs = plant.observe(true_state, None)
    tg_phases = obs[PHASE_START:].copy()

    states = np.empty((episode_steps, STATE_DIM))
    acts = np.empty((episode_steps, 12))
    rewards = np.empty(episode_steps)
    plan_seq = np.zeros(episode_steps, dtype=np.int64)
    active: Plan | None = None
    active_seq = 0
    fell = False
    steps_done = 0

    for k in range(episode_steps):
        if k in schedule:
            active, active_seq = schedule[k].plan, schedule[k].seq
        action = active.action_at(k) if active is not None else base_action
        cmd, new_phases = compose_action(tg_phases, tg_setup, action, clock.dt)
        next_true = plant.step(true_state, cmd)
        next_true[PHASE_START:] = new_phases
        r = reward(next_true, obs, task.reward, (k + 1) * clock.dt, clock.dt)
        states[k], acts[k], rewards[k], plan_seq[k] = obs, action, r, active_seq
        steps_done = k + 1
        true_state, obs, tg_phases = next_true, next_true.copy(), new_phases
        if plant.fallen(next_true):
            fell = True
            break

    traj = TrajectoryLog(states=states[:steps_done], actions=acts[:steps_done],
                         rewards=rewards[:steps_done], final_state=obs,
                         termination="fall" if fell else "completed")
    return EpisodeResult(log=traj, plan_seq=plan_seq[:steps_done],
                         replan_flags=np.zeros(steps_done, dtype=bool), fell=fell)


def run_episode_wallclock(plant, task: PlannerTask, cem_config: CEMConfig,
                          clock: ClockModel, episode_steps: int,
                          rng_planner: np.random.Generator,
                          time_scale: float = 1.0,
                          initial_phases: np.ndarray | None = None) -> EpisodeResult:
    """Wall-clock mode: planner thread + paced execution thread.

    The latency is measured from the planner's real runtime, rounded up to
    control steps; late plans (arriving past their planned-for step) are
    discarded and the stale plan keeps executing. time_scale stretches the
    control step for machines where planning is slower than 6 ms; 0 runs
    the execution loop unpaced (tests).
    """
    tg_setup = task.tg
    base_action = default_action(tg_setup)
    slot = PlanSlot()
    stop = threading.Event()
    state_lock = threading.Lock()

    shared = {
        "k": 0,
        "history": None,
        "phases": None,
        "active": None,
    }

    true_state = plant.initial_state(initial_phases)
    obs = plant.observe(true_state, None)
    history = initial_history(obs)
    tg_phases = obs[PHASE_START:].copy()
    with state_lock:
        shared["k"], shared["history"], shared["phases"] = 0, history.copy(), tg_phases.copy()

    plans: list[PlanRecord] = []
    discarded = [0]

    def planner_loop():
        seq = 0
        est_latency = clock.replan_interval
        lower, upper = task.bounds()
        prev_dist: ActionDistribution | None = None
        while not stop.is_set():
            with state_lock:
                k_now = shared["k"]
                hist = shared["history"].copy()
                phases = shared["phases"].copy()
                active = shared["active"]
            T = min(est_latency, clock.replan_interval)
            if active is not None:
                in_flight = active.remaining(max(k_now, active.t0), T)
            else:
                in_flight = np.tile(base_action, (T, 1))
            t_start = time.monotonic()
            hist_T, phases_T = predict_future_state(
                task.model, hist, phases, in_flight, T, tg_setup, clock.dt)
            warm = (shift_distribution(prev_dist, clock.replan_interval, cem_config,
                                       lower, upper) if prev_dist is not None else None)
            plan, dist, _ = cem_plan(task, hist_T, phases_T, k_now + T,
                                     cem_config, rng_planner, warm)
            prev_dist = dist
            elapsed = time.monotonic() - t_start
            step_time = clock.dt * time_scale
            est_latency = max(1, int(np.ceil(elapsed / step_time))) if step_time > 0 \
                else clock.replan_interval
            seq += 1
            with state_lock:
                k_now2 = shared["k"]
            if k_now2 > plan.t0:
                discarded[0] += 1   # late plan: executing it would misalign
            else:
                slot.publish(plan, seq)
                plans.append(PlanRecord(seq=seq, plan=plan, computed_at=k_now,
                                        activated_at=plan.t0,
                                        predicted_state=hist_T[-1].copy()))

    worker = threading.Thread(target=planner_loop, daemon=True)
    worker.start()

    states = np.empty((episode_steps, STATE_DIM))
    acts = np.empty((episode_steps, 12))
    rewards = np.empty(episode_steps)
    plan_seq = np.zeros(episode_steps, dtype=np.int64)
    active: Plan | None = None
    active_seq = 0
    fell = False
    steps_done = 0
    t0_wall = time.monotonic()

    try:
        for k in range(episode_steps):
            if time_scale > 0:
                deadline = t0_wall + (k + 1) * clock.dt * time_scale
                now = time.monotonic()
                if deadline > now:
                    time.sleep(deadline - now)
            plan, seq = slot.latest()
            if plan is not None and seq > active_seq and k >= plan.t0:
                active, active_seq = plan, seq
            action = active.action_at(max(k, active.t0)) if active is not None else base_action
            cmd, new_phases = compose_action(tg_phases, tg_setup, action, clock.dt)
            next_true = plant.step(true_state, cmd)
            next_true[PHASE_START:] = new_phases
            r = reward(next_true, obs, task.reward, (k + 1) * clock.dt, clock.dt)
            states[k], acts[k], rewards[k], plan_seq[k] = obs, action, r, active_seq
            steps_done = k + 1
            history = advance_history(history, next_true)
            true_state, obs, tg_phases = next_true, next_true.copy(), new_phases
            with state_lock:
                shared["k"] = k + 1
                shared["history"] = history.copy()
                shared["phases"] = tg_phases.copy()
                shared["active"] = active
            if plant.fallen(next_true):
                fell = True
                break
    finally:
        stop.set()
        worker.join(timeout=5.0)

    traj = TrajectoryLog(states=states[:steps_done], actions=acts[:steps_done],
                         rewards=rewards[:steps_done], final_state=obs,
                         termination="fall" if fell else "completed")
    return EpisodeResult(log=traj, plan_seq=plan_seq[:steps_done],
                         replan_flags=np.zeros(steps_done, dtype=bool),
                         plans=plans, fell=fell)
