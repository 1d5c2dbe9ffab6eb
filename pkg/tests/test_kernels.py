"""Cross-checks between the compiled kernel backend and the numpy fallback,
and between the batched kernels and the plain per-sample semantics."""

import numpy as np
import pytest

from gaitmpc import _core_np, kernels
from gaitmpc.cem import PlannerTask
from gaitmpc.config import ExperimentConfig
from gaitmpc.model import INPUT_DIM, init_model, predict_delta
from gaitmpc.state import HISTORY_LEN, PHASE_START, STATE_DIM, initial_history

try:
    from gaitmpc import _core
    HAVE_EXT = True
except ImportError:
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled backend not built")


def make_model(seed=1):
    rng = np.random.default_rng(seed)
    m = init_model(np.random.default_rng(seed + 1))
    m.in_mean = rng.normal(0, 0.1, INPUT_DIM)
    m.in_std = 0.5 + rng.random(INPUT_DIM)
    m.out_mean = rng.normal(0, 0.002, STATE_DIM)
    m.out_std = 0.05 + 0.1 * rng.random(STATE_DIM)
    return m


def rollout_args(seed=2, P=24, H=20, kind=0, tg_enabled=True):
    rng = np.random.default_rng(seed)
    hist = rng.normal(0, 0.3, (HISTORY_LEN, STATE_DIM))
    hist[:, PHASE_START:] = rng.uniform(0, 6.28, (HISTORY_LEN, 4))
    phases = hist[-1, PHASE_START:].copy()
    actions = rng.uniform(-0.5, 0.5, (P, H, 12))
    actions[:, :, 8:] = rng.uniform(0, 3, (P, H, 4))
    v_targets = np.linspace(0, 0.66, H)
    return (hist, phases, actions, 0.0, 3.0, 6.28, tg_enabled, 0.006,
            v_targets, kind, 0.25, 1.0, 0.001, 0.01)


@needs_ext
@pytest.mark.parametrize("kind,tg_enabled", [(0, True), (1, True), (0, False)])
def test_rollout_backends_agree(kind, tg_enabled):
    m = make_model()
    args = rollout_args(kind=kind, tg_enabled=tg_enabled)
    r_ext, bad_ext = _core.rollout_returns(*m.kernel_args(), *args)
    r_np, bad_np = _core_np.rollout_returns(*m.kernel_args(), *args)
    np.testing.assert_allclose(r_ext, r_np, rtol=1e-10, atol=1e-12)
    assert bad_ext == bad_np


@needs_ext
def test_rollout_backends_agree_on_nan_handling():
    m = make_model()
    m.W2 = m.W2 * 1e200
    m.out_std = np.full(STATE_DIM, 1e250)
    args = rollout_args()
    r_ext, bad_ext = _core.rollout_returns(*m.kernel_args(), *args)
    r_np, bad_np = _core_np.rollout_returns(*m.kernel_args(), *args)
    assert bad_ext == bad_np > 0
    np.testing.assert_array_equal(np.isinf(r_ext), np.isinf(r_np))


@needs_ext
@pytest.mark.parametrize("full_grad", [True, False])
def test_multistep_backends_agree(full_grad):
    m = make_model(3)
    rng = np.random.default_rng(4)
    B, n = 16, 7
    hist0 = rng.normal(0, 0.3, (B, HISTORY_LEN, STATE_DIM))
    actions = rng.normal(0, 0.3, (B, n, 12))
    deltas = rng.normal(0, 0.02, (B, n, STATE_DIM))
    l1, g1 = _core.multistep_loss_grad(*m.kernel_args(), hist0, actions, deltas,
                                       full_grad, True)
    l2, g2 = _core_np.multistep_loss_grad(*m.kernel_args(), hist0, actions, deltas,
                                          full_grad=full_grad, want_grad=True)
    assert l1 == pytest.approx(l2, rel=1e-12)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-13)


def test_forward_batch_matches_predict_delta():
    m = make_model(5)
    rng = np.random.default_rng(6)
    hist = rng.normal(0, 0.3, (HISTORY_LEN, STATE_DIM))
    hist[:, PHASE_START:] = rng.uniform(0, 6.28, (HISTORY_LEN, 4))
    a = rng.normal(0, 0.3, 12)
    from gaitmpc.model import build_input
    X = build_input(hist, a)[None, :]
    np.testing.assert_allclose(kernels.forward_batch(*m.kernel_args(), X)[0],
                               predict_delta(m, hist, a), atol=1e-15)


def test_batched_rollout_matches_per_sample_python_semantics():
    """The kernel's batched evaluation equals the documented per-sample loop."""
    cfg = ExperimentConfig()
    m = make_model(7)
    task = PlannerTask(model=m, tg=cfg.make_tg(), reward=cfg.reward, dt=cfg.dt)
    rng = np.random.default_rng(8)
    state = np.zeros(STATE_DIM)
    state[PHASE_START:] = [0.1, 1.2, 2.3, 3.4]
    hist = initial_history(state)
    pop = rng.uniform(-0.4, 0.4, (5, 10, 12))
    pop[:, :, 8:] = rng.uniform(0, 2.5, (5, 10, 4))

    fast, bad_fast = task.evaluate_population(hist, state[PHASE_START:], 3, pop)
    H = pop.shape[1]
    times = (3 + 1 + np.arange(H)) * task.dt
    v_targets = task.reward.speed_targets(times)
    slow, bad_slow = task._evaluate_generic(hist, state[PHASE_START:], pop, v_targets,
                                            kernels.REWARD_TRACK, 1.0, 0.001, 0.01)
    np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)
    assert bad_fast == bad_slow


def test_backend_reports_name():
    assert kernels.backend() in ("cython", "python")
