import csv
from pathlib import Path

import numpy as np
import pytest

from gaitmpc.rewards import RewardSpec, SpeedProfile, reward, speed_target
from gaitmpc.state import PITCH, ROLL, VEL_X, YAW, new_state

GOLDEN = Path(__file__).parent / "data" / "reward_golden.csv"


def test_speed_target_endpoints():
    p = SpeedProfile()
    assert speed_target(p, 0.0) == 0.0
    assert speed_target(p, 3.0) == pytest.approx(0.66)
    assert speed_target(p, 1.5) == pytest.approx(0.33)
    assert speed_target(p, 7.5) == pytest.approx(0.66)


def test_speed_target_clamps_outside_episode():
    p = SpeedProfile()
    assert speed_target(p, -1.0) == 0.0
    assert speed_target(p, 100.0) == pytest.approx(0.66)


def test_speed_target_continuous_piecewise_linear():
    p = SpeedProfile()
    ts = np.linspace(0.0, 7.5, 4001)
    vals = p.targets(ts)
    diffs = np.abs(np.diff(vals))
    assert diffs.max() < 0.66 / 3.0 * (ts[1] - ts[0]) * 1.01   # bounded slope
    # exactly linear on the ramp, exactly flat after
    assert vals[0] == 0.0
    ramp = ts <= 3.0
    np.testing.assert_allclose(vals[ramp], 0.66 * ts[ramp] / 3.0, atol=1e-12)
    np.testing.assert_allclose(vals[~ramp], 0.66, atol=1e-12)


def _state(vx=0.0, yaw=0.0, roll=0.0, pitch=0.0):
    s = new_state()
    s[VEL_X], s[YAW], s[ROLL], s[PITCH] = vx, yaw, roll, pitch
    return s


def test_reward_golden_table():
    with open(GOLDEN) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 20
    for row in rows:
        spec = RewardSpec(kind=row["kind"], turn_rate=float(row["turn_rate"]))
        s = _state(float(row["vx"]), float(row["yaw"]),
                   float(row["roll"]), float(row["pitch"]))
        prev = _state(yaw=float(row["prev_yaw"]))
        got = reward(s, prev, spec, float(row["t"]), float(row["dt"]))
        assert got == pytest.approx(float(row["expected"]), abs=1e-12), row


def test_spec_hand_case():
    # v=0.5 vs 0.66, yaw 0.1, level base: -0.16 - 0.0001 = -0.1601
    spec = RewardSpec()
    got = reward(_state(vx=0.5, yaw=0.1), _state(), spec, t=5.0, dt=0.006)
    assert got == pytest.approx(-0.1601, abs=1e-12)


def test_perfect_tracking_is_zero():
    spec = RewardSpec()
    assert reward(_state(vx=0.66), _state(), spec, t=4.0, dt=0.006) == 0.0


def test_backward_negates_target():
    spec = RewardSpec(kind="backward")
    assert spec.speed_at(4.0) == pytest.approx(-0.66)
    assert reward(_state(vx=-0.66), _state(), spec, t=4.0, dt=0.006) == 0.0


def test_turn_uses_finite_difference_yaw_rate():
    spec = RewardSpec(kind="turn", turn_rate=0.0)
    s = _state(vx=0.66, yaw=0.0006)
    assert reward(s, _state(), spec, t=4.0, dt=0.006) == pytest.approx(-0.0001, abs=1e-12)


def test_custom_weights_respected():
    spec = RewardSpec(weights=(2.0, 0.0, 0.0))
    got = reward(_state(vx=0.56, yaw=3.0, roll=1.0), _state(), spec, t=4.0, dt=0.006)
    assert got == pytest.approx(-0.2, abs=1e-12)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        RewardSpec(kind="sideways")
