import numpy as np
import pytest

from gaitmpc.cem import CEMConfig, PlannerTask, cem_plan
from gaitmpc.config import ExperimentConfig
from gaitmpc.model import DynamicsModel, INPUT_DIM, init_model
from gaitmpc.plants import PlantBackedModel
from gaitmpc.runtime import (ClockModel, PlanSlot, predict_future_state,
                             replay_plans_episode, run_episode,
                             run_episode_wallclock, run_policy_episode)
from gaitmpc.seeds import substream
from gaitmpc.state import PHASE_START, STATE_DIM, initial_history
from gaitmpc.tg import default_action


def constant_delta_model(d):
    m = DynamicsModel(W1=np.zeros((256, INPUT_DIM)), b1=np.zeros(256),
                      W2=np.zeros((STATE_DIM, 256)), b2=np.asarray(d, dtype=np.float64),
                      in_mean=np.zeros(INPUT_DIM), in_std=np.ones(INPUT_DIM),
                      out_mean=np.zeros(STATE_DIM), out_std=np.ones(STATE_DIM))
    return m


def small_setup(latency=12, population=16, horizon=16, iterations=2, seed=0):
    cfg = ExperimentConfig().replaced(
        initial_phases=[0.0, np.pi, np.pi, 0.0],
        cem={"horizon": horizon, "iterations": iterations, "population": population,
             "elite_frac": 0.25},
        clock={"replan_interval": 12, "latency": latency},
    )
    plant = cfg.make_plant()
    tg = cfg.make_tg()
    task = PlannerTask(model=PlantBackedModel(plant, tg, cfg.dt), tg=tg,
                       reward=cfg.reward, dt=cfg.dt)
    return cfg, plant, task


def test_clock_model_validation():
    with pytest.raises(ValueError):
        ClockModel(replan_interval=0)
    with pytest.raises(ValueError):
        ClockModel(replan_interval=12, latency=13)
    with pytest.raises(ValueError):
        ClockModel(latency=-1)


def test_predict_future_state_zero_latency_is_identity():
    cfg, plant, task = small_setup()
    state = plant.initial_state()
    hist = initial_history(state)
    out_hist, out_phases = predict_future_state(
        task.model, hist, state[PHASE_START:], np.zeros((0, 12)), 0, task.tg, cfg.dt)
    np.testing.assert_array_equal(out_hist, hist)


def test_predict_future_state_constant_delta_closed_form():
    d = np.zeros(STATE_DIM)
    d[0] = 0.01
    model = constant_delta_model(d)
    cfg, plant, task = small_setup()
    state = plant.initial_state()
    hist = initial_history(state)
    actions = np.tile(default_action(task.tg), (3, 1))
    out_hist, _ = predict_future_state(model, hist, state[PHASE_START:],
                                       actions, 3, task.tg, cfg.dt)
    assert out_hist[-1, 0] == pytest.approx(3 * 0.01, abs=1e-12)


def test_predict_future_state_perfect_model_matches_plant():
    cfg, plant, task = small_setup()
    rng = np.random.default_rng(0)
    state = plant.initial_state(np.array(cfg.initial_phases))
    hist = initial_history(state)
    T = 12
    actions = rng.uniform(-0.3, 0.3, (T, 12))
    actions[:, 8:] = rng.uniform(0.5, 2.0, (T, 4))

    pred_hist, pred_phases = predict_future_state(
        task.model, hist, state[PHASE_START:], actions, T, task.tg, cfg.dt)

    from gaitmpc.tg import compose_action
    s = state.copy()
    phases = s[PHASE_START:].copy()
    for t in range(T):
        cmd, phases = compose_action(phases, task.tg, actions[t], cfg.dt)
        s = plant.step(s, cmd)
        s[PHASE_START:] = phases
    np.testing.assert_allclose(pred_hist[-1], s, atol=1e-12)
    np.testing.assert_allclose(pred_phases, phases, atol=1e-12)


def test_predict_future_state_pads_short_plans(caplog):
    cfg, plant, task = small_setup()
    state = plant.initial_state()
    hist = initial_history(state)
    actions = np.tile(default_action(task.tg), (2, 1))
    with caplog.at_level("WARNING"):
        predict_future_state(task.model, hist, state[PHASE_START:], actions, 5,
                             task.tg, cfg.dt)
    assert any("padding" in r.message for r in caplog.records)


def test_zero_latency_async_equals_sync_bit_exact():
    cfg, plant, task = small_setup(latency=0)
    steps = 60
    a = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                    substream(7, "cem"), async_mode=True,
                    initial_phases=np.array(cfg.initial_phases))
    b = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                    substream(7, "cem"), async_mode=False,
                    initial_phases=np.array(cfg.initial_phases))
    np.testing.assert_array_equal(a.log.states, b.log.states)
    np.testing.assert_array_equal(a.log.actions, b.log.actions)
    np.testing.assert_array_equal(a.log.rewards, b.log.rewards)


def test_async_plans_align_with_reality_under_perfect_model():
    """Latency compensation: each plan's planning state equals the true state
    at the step where its first action executes."""
    cfg, plant, task = small_setup(latency=12)
    steps = 96
    res = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                      substream(1, "cem"), async_mode=True,
                      initial_phases=np.array(cfg.initial_phases))
    activated = [rec for rec in res.plans if 0 <= rec.activated_at < steps]
    assert len(activated) >= 7
    for rec in activated:
        assert rec.activated_at == rec.plan.t0
        np.testing.assert_allclose(rec.predicted_state, res.log.states[rec.activated_at],
                                   atol=1e-9)


def test_async_off_plans_are_stale():
    cfg, plant, task = small_setup(latency=12)
    steps = 96
    res = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                      substream(1, "cem"), async_mode=False,
                      initial_phases=np.array(cfg.initial_phases))
    mismatches = 0
    for rec in res.plans:
        if 0 <= rec.activated_at < steps and rec.activated_at > 0:
            if not np.allclose(rec.predicted_state, res.log.states[rec.activated_at],
                               atol=1e-9):
                mismatches += 1
    assert mismatches > 0   # stale plans execute on different states


def test_replaying_recorded_plans_reproduces_the_episode():
    cfg, plant, task = small_setup(latency=12)
    steps = 96
    res = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                      substream(2, "cem"), async_mode=True,
                      initial_phases=np.array(cfg.initial_phases))
    replay = replay_plans_episode(plant, task, cfg.clock, steps, res.plans,
                                  initial_phases=np.array(cfg.initial_phases))
    np.testing.assert_allclose(replay.log.states, res.log.states, atol=1e-9)
    np.testing.assert_allclose(replay.log.actions, res.log.actions, atol=1e-12)


def test_every_step_emits_an_action_before_first_plan():
    cfg, plant, task = small_setup(latency=12)
    steps = 36
    res = run_episode(plant, task, cfg.cem, cfg.clock, steps,
                      substream(3, "cem"), async_mode=True,
                      initial_phases=np.array(cfg.initial_phases))
    assert res.log.length == steps
    base = default_action(task.tg)
    for k in range(cfg.clock.latency):
        np.testing.assert_array_equal(res.log.actions[k], base)
    assert np.all(res.plan_seq[:cfg.clock.latency] == 0)
    assert np.all(res.plan_seq[cfg.clock.latency:] > 0)


def test_single_plan_when_replan_interval_covers_episode():
    steps = 48
    cfg, plant, task = small_setup(latency=0)
    clock = ClockModel(dt=cfg.dt, replan_interval=steps, latency=0)
    res = run_episode(plant, task, cfg.cem, clock, steps, substream(4, "cem"),
                      async_mode=True, initial_phases=np.array(cfg.initial_phases))
    assert len(res.plans) == 1

    plan, _, _ = cem_plan(task, initial_history(plant.initial_state(
        np.array(cfg.initial_phases))), np.array(cfg.initial_phases), 0,
        cfg.cem, substream(4, "cem"))
    res2 = run_policy_episode(plant, task.tg, lambda k, obs: plan.action_at(k),
                              cfg.reward, clock, steps,
                              initial_phases=np.array(cfg.initial_phases))
    np.testing.assert_allclose(res2.log.states, res.log.states, atol=1e-12)


def test_fall_truncates_episode():
    cfg, plant, task = small_setup()
    tippy = plant.with_params(k_tilt=5.0, tilt_alpha=0.5)

    def policy(k, obs):
        a = np.zeros(12)
        a[1::2][:4] = [0.3, -0.3, 0.3, -0.3][:4]   # big extension splits
        a[1] = 0.3
        a[3] = -0.3
        a[5] = 0.3
        a[7] = -0.3
        return a

    res = run_policy_episode(tippy, task.tg, policy, cfg.reward, cfg.clock, 500,
                             initial_phases=np.zeros(4))
    assert res.fell
    assert res.log.length < 500
    assert res.log.termination == "fall"


def test_plan_slot_keeps_newest():
    slot = PlanSlot()
    from gaitmpc.cem import Plan
    p1 = Plan(actions=np.zeros((2, 12)), planned_from=np.zeros(18), t0=0)
    p2 = Plan(actions=np.ones((2, 12)), planned_from=np.zeros(18), t0=12)
    slot.publish(p1, 1)
    slot.publish(p2, 2)
    slot.publish(p1, 1)   # stale publish ignored
    plan, seq = slot.latest()
    assert seq == 2 and plan.t0 == 12


def test_wallclock_mode_smoke():
    cfg, plant, task = small_setup(latency=12, population=8, horizon=8, iterations=1)
    res = run_episode_wallclock(plant, task, cfg.cem, cfg.clock, 40,
                                substream(5, "cem"), time_scale=0.0,
                                initial_phases=np.array(cfg.initial_phases))
    assert res.log.length == 40
    assert np.all(np.isfinite(res.log.states))
    assert np.all(np.isfinite(res.log.rewards))
