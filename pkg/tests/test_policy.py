import math

import numpy as np
import pytest

from vocbf import dubins, policy
from vocbf.data import TransitionSet
from vocbf.policy import BcTrainConfig, GoToGoal, goto_goal, train_bc


def test_goto_goal_zero_heading_error():
    # at (0,0) heading straight at the goal bearing
    bearing = math.atan2(0.7, 0.7)
    assert goto_goal([0.0, 0.0, bearing], 2.0, (0.7, 0.7)) == pytest.approx(0.0)


def test_goto_goal_saturates():
    # heading error +pi/2 with k=2 clamps at the box
    bearing = math.atan2(0.7, 0.7)
    assert goto_goal([0.0, 0.0, bearing - math.pi / 2], 2.0, (0.7, 0.7)) == 1.0


def test_goto_goal_linear_region():
    bearing = math.atan2(0.7, 0.7)
    u = goto_goal([0.0, 0.0, bearing + 0.2], 2.0, (0.7, 0.7))
    assert u == pytest.approx(-0.4)


def test_goto_goal_heading_error_contracts():
    # holds when the turn authority outpaces the bearing rotation, i.e. far
    # enough from the goal: |bearing rate| <= v/dist < clamp(k|err|)
    cfg = dubins.AgvConfig()
    pi = GoToGoal(k=2.0, goal=(0.7, 0.7))
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(500):
        s = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
        bearing = math.atan2(0.7 - s[1], 0.7 - s[0])
        err = dubins.wrap_angle(bearing - s[2])
        if abs(err) >= math.pi - cfg.dt * cfg.u_bound or np.hypot(*(s[:2] - 0.7)) < 0.7:
            continue
        s2 = dubins.step(s, pi(s), cfg)
        bearing2 = math.atan2(0.7 - s2[1], 0.7 - s2[0])
        err2 = dubins.wrap_angle(bearing2 - s2[2])
        assert abs(err2) <= abs(err) + 1e-9
        checked += 1
    assert checked > 100


def test_goto_goal_rejects_bad_gain():
    with pytest.raises(ValueError):
        GoToGoal(k=0.0)


def constant_action_set(u_val, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi], (n, 3))
    return TransitionSet(np.zeros(n, dtype=np.int64), np.arange(n), X,
                         np.full((n, 1), u_val), X, np.ones(n), np.ones(n),
                         {"env": "toy3", "dt": 0.01, "seed": seed})


BC_CFG = BcTrainConfig(lr=3e-3, batch_size=128, epochs=150, hidden=(64, 64), seed=0)


def test_bc_regresses_constant_action():
    ds = constant_action_set(0.3)
    actor = train_bc(ds, BC_CFG)
    outs = actor.batch(ds.X)
    assert np.max(np.abs(outs - 0.3)) < 0.01


def test_bc_on_uniform_random_actions_predicts_near_zero():
    cfg = dubins.AgvConfig()
    ds = dubins.generate_dataset(4000, cfg, seed=1)
    actor = train_bc(ds, BC_CFG)
    outs = actor.batch(ds.X)
    assert np.percentile(np.abs(outs), 95) < 0.15


def test_bc_outputs_always_inside_control_box():
    actor = train_bc(constant_action_set(0.9), BC_CFG)
    rng = np.random.default_rng(2)
    X = rng.uniform([-5, -5, -math.pi], [5, 5, math.pi], (1_000_000, 3))
    outs = actor.batch(X)
    assert np.all(np.abs(outs) <= 1.0)


def test_policies_empirically_lipschitz():
    actor = train_bc(constant_action_set(0.2, n=500), BC_CFG)
    pi = GoToGoal(k=2.0, goal=(0.7, 0.7))
    rng = np.random.default_rng(3)
    for pol, const in ((actor, 500.0), (pi, 50.0)):
        for _ in range(300):
            a = rng.uniform([-1, -1, -2], [1, 1, 2])
            b = a + rng.normal(0, 0.01, 3)
            if pol is pi:
                # steer away from the goal-bearing discontinuity at the goal point
                if min(np.hypot(*(a[:2] - 0.7)), np.hypot(*(b[:2] - 0.7))) < 0.3:
                    continue
            assert abs(pol(a) - pol(b)) <= const * np.linalg.norm(a - b) + 1e-9
