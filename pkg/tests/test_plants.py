import numpy as np
import pytest

from gaitmpc.plants import (DampedOscillator, LinearPlant, PendulumCart,
                            PlantParams, SurrogateQuadruped, analytic_plants,
                            mirror_commands, mirror_state)
from gaitmpc.state import (MOTOR_START, PHASE_START, PITCH, ROLL, STATE_DIM,
                           VEL_X, VEL_Y, YAW)
from gaitmpc.tg import LegCommands


def zero_cmd():
    return LegCommands(swing=np.zeros(4), extension=np.zeros(4))


def test_zero_commands_converge_to_rest():
    plant = SurrogateQuadruped()
    s = plant.initial_state()
    s[VEL_X], s[VEL_Y] = 0.4, 0.1
    s[MOTOR_START] = 0.3
    s[PITCH] = 0.2
    for _ in range(3000):
        s = plant.step(s, zero_cmd())
    assert np.max(np.abs(s[:PHASE_START])) < 1e-8


def test_step_is_deterministic():
    plant = SurrogateQuadruped()
    rng = np.random.default_rng(0)
    s = plant.initial_state()
    s[MOTOR_START:MOTOR_START + 8] = rng.uniform(-0.3, 0.3, 8)
    cmd = LegCommands(swing=rng.uniform(-0.5, 0.5, 4), extension=rng.uniform(-0.5, 0.5, 4))
    a = plant.step(s, cmd)
    b = plant.step(s, cmd)
    np.testing.assert_array_equal(a, b)


def test_mirror_symmetric_commands_keep_zero_yaw():
    plant = SurrogateQuadruped()
    s = plant.initial_state(phases=np.array([0.3, 1.0, 0.3, 1.0]))  # left == right
    cmd = LegCommands(swing=np.array([0.2, -0.1, 0.2, -0.1]),
                      extension=np.array([0.3, 0.2, 0.3, 0.2]))
    for _ in range(200):
        s = plant.step(s, cmd)
    assert s[YAW] == 0.0
    assert s[VEL_Y] == 0.0


def test_mirror_equivariance():
    plant = SurrogateQuadruped()
    rng = np.random.default_rng(5)
    s = plant.initial_state(phases=rng.uniform(0, 6.28, 4))
    s[:6] = rng.normal(0, 0.2, 6)
    s[MOTOR_START:MOTOR_START + 8] = rng.uniform(-0.4, 0.4, 8)
    cmd = LegCommands(swing=rng.uniform(-0.5, 0.5, 4), extension=rng.uniform(-0.5, 0.5, 4))
    lhs = plant.step(mirror_state(s), mirror_commands(cmd))
    rhs = mirror_state(plant.step(s, cmd))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_alternating_pair_gait_reaches_closed_form_speed():
    """Two diagonal leg pairs alternate stance; stance legs sweep backward.

    With both stance legs sweeping 2A over a stance of T seconds, the
    update rule has the fixed point vx = k_traction * (2 * 2A / T) / k_drag.
    Slow sweeps keep the motor lag negligible.
    """
    plant = SurrogateQuadruped()
    p = plant.params
    dt = p.dt
    A = 0.5
    half_period_steps = 400       # T = 2.4 s per stance phase, slow
    T = half_period_steps * dt

    s = plant.initial_state()
    # pair A (FL, BR) starts in stance (phase 0), pair B in lift (phase pi)
    pair_phase = {0: 0.0, 3: 0.0, 1: np.pi, 2: np.pi}
    vx_hist = []
    for k in range(12 * half_period_steps):
        half = (k // half_period_steps) % 2
        frac = (k % half_period_steps) / half_period_steps
        swing = np.empty(4)
        ext = np.empty(4)
        phases = np.empty(4)
        for leg in range(4):
            in_stance_now = (pair_phase[leg] == 0.0) == (half == 0)
            phases[leg] = 0.5 if in_stance_now else np.pi + 0.5
            if in_stance_now:
                swing[leg] = A - 2 * A * frac     # sweep backward
                ext[leg] = 0.4                     # firmly in contact
            else:
                swing[leg] = -A + 2 * A * frac    # reset forward in the air
                ext[leg] = -0.4                    # lifted, no contact
        s[PHASE_START:] = phases
        s = plant.step(s, LegCommands(swing=swing, extension=ext))
        vx_hist.append(s[VEL_X])

    expected = p.k_traction * (2 * 2 * A / T) / p.k_drag
    steady = np.mean(vx_hist[-2 * half_period_steps:])
    assert steady == pytest.approx(expected, rel=0.05)
    assert steady > 0.0


def test_fall_detection_on_sustained_tilt():
    plant = SurrogateQuadruped()
    s = plant.initial_state()
    cmd = LegCommands(swing=np.zeros(4), extension=np.array([1.0, -1.0, 1.0, -1.0]))
    fell = False
    for _ in range(500):
        s = plant.step(s, cmd)
        if plant.fallen(s):
            fell = True
            break
    assert fell
    assert abs(s[PITCH]) > plant.params.fall_angle


def test_slope_biases_pitch_and_forward_dynamics():
    flat = SurrogateQuadruped()
    hill = flat.with_params(slope=0.1)
    s = flat.initial_state()
    s_flat, s_hill = s.copy(), s.copy()
    for _ in range(400):
        s_flat = flat.step(s_flat, zero_cmd())
        s_hill = hill.step(s_hill, zero_cmd())
    assert s_hill[PITCH] > s_flat[PITCH] + 0.05
    assert s_hill[VEL_X] < s_flat[VEL_X] - 0.01    # gravity pulls backward


def test_observation_noise_off_is_identity():
    plant = SurrogateQuadruped()
    s = plant.initial_state()
    s[VEL_X] = 0.2
    np.testing.assert_array_equal(plant.observe(s, np.random.default_rng(0)), s)


def test_observation_noise_preserves_phases():
    plant = SurrogateQuadruped(PlantParams(observation_noise=0.01))
    s = plant.initial_state(phases=np.array([1.0, 2.0, 3.0, 4.0]))
    obs = plant.observe(s, np.random.default_rng(0))
    assert not np.array_equal(obs[:PHASE_START], s[:PHASE_START])
    np.testing.assert_array_equal(obs[PHASE_START:], s[PHASE_START:])


def test_linear_plant_identity_dynamics():
    plant = LinearPlant(np.eye(STATE_DIM), np.zeros((STATE_DIM, 12)))
    s = np.arange(STATE_DIM, dtype=float)
    np.testing.assert_array_equal(plant.step(s, np.ones(12)), s)


def test_linear_plant_random_stable_spectral_radius():
    plant = LinearPlant.random_stable(6, 3, np.random.default_rng(0), spectral_radius=0.9)
    assert max(abs(np.linalg.eigvals(plant.A))) == pytest.approx(0.9, abs=1e-9)


def test_oscillator_energy_decays_monotonically():
    osc = DampedOscillator(k=4.0, c=0.5, dt=0.05)
    s = np.array([1.0, 0.0])
    energies = [osc.energy(s)]
    for _ in range(400):
        s = osc.step(s)
        energies.append(osc.energy(s))
    diffs = np.diff(energies)
    assert np.all(diffs <= 1e-12)
    assert energies[-1] < 0.01 * energies[0]


def test_pendulum_cart_force_clamp_and_determinism():
    cart = PendulumCart()
    s = np.array([0.0, 0.0, 0.1, 0.0])
    a = cart.step(s, 1e9)
    b = cart.step(s, cart.force_limit)
    np.testing.assert_array_equal(a, b)


def test_analytic_plants_factory():
    plants = analytic_plants(np.random.default_rng(1))
    assert set(plants) == {"linear", "oscillator", "pendulum_cart"}
