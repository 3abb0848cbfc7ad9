import math

import numpy as np
import pytest

from vocbf import dubins
from vocbf.dubins import AgvConfig


@pytest.fixture
def cfg():
    return AgvConfig()


def test_step_straight(cfg):
    s = dubins.step([0.0, 0.0, 0.0], 0.0, cfg)
    assert np.allclose(s, [0.006, 0.0, 0.0])


def test_step_turn(cfg):
    s = dubins.step([0.0, 0.0, 0.0], 1.0, cfg)
    assert np.allclose(s, [0.006, 0.0, 0.01])


def test_step_heading_wraps_at_pi(cfg):
    s = dubins.step([0.0, 0.0, math.pi], 1.0, cfg)
    assert s[2] == pytest.approx(-math.pi + 0.01)


def test_step_positions_follow_euler_beyond_the_sampling_box(cfg):
    s = dubins.step([1.0, 0.0, 0.0], 0.0, cfg)
    assert s[0] == pytest.approx(1.006)


def test_step_control_clamped_with_counter(cfg):
    dubins.reset_control_clamp_count()
    a = dubins.step([0.0, 0.0, 0.0], 5.0, cfg)
    b = dubins.step([0.0, 0.0, 0.0], 1.0, cfg)
    assert np.array_equal(a, b)
    assert dubins.control_clamp_count() == 1


def test_step_rejects_nonfinite(cfg):
    with pytest.raises(ValueError):
        dubins.step([np.nan, 0.0, 0.0], 0.0, cfg)
    with pytest.raises(ValueError):
        dubins.step([0.0, 0.0, 0.0], np.inf, cfg)


def test_step_heading_stays_wrapped(cfg):
    rng = np.random.default_rng(0)
    s = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
    for _ in range(2000):
        s = dubins.step(s, rng.uniform(-1, 1), cfg)
        assert -math.pi <= s[2] <= math.pi
        assert np.all(np.isfinite(s))


def test_step_consistent_with_analytic_fg(cfg):
    rng = np.random.default_rng(1)
    for _ in range(200):
        # away from the heading seam, step is exactly the Euler map dt*(f + g u)
        s = rng.uniform([-1.0, -1.0, -3.0], [1.0, 1.0, 3.0])
        u = rng.uniform(-1, 1)
        f, g = dubins.analytic_fg(s, cfg)
        expected = s + cfg.dt * (f + g[:, 0] * u)
        assert np.allclose(dubins.step(s, u, cfg), expected, atol=1e-15)


def test_safety_value_cases(cfg):
    assert dubins.safety_value([0.0, 0.0, 0.3], cfg) == pytest.approx(-0.2)
    assert dubins.safety_value([0.2, 0.0, 0.0], cfg) == pytest.approx(0.0)
    assert dubins.safety_value([1.0, 1.0, 0.0], cfg) == pytest.approx(math.sqrt(2) - 0.2)


def test_safety_value_is_1_lipschitz(cfg):
    rng = np.random.default_rng(2)
    for _ in range(500):
        a = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
        b = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
        gap = abs(dubins.safety_value(a, cfg) - dubins.safety_value(b, cfg))
        assert gap <= np.linalg.norm(a[:2] - b[:2]) + 1e-12


def test_reward_cases(cfg):
    assert dubins.reward([0.7, 0.7, 0.0], cfg) == pytest.approx(1.0)
    assert dubins.reward([0.7 - 0.9, 0.7, 0.0], cfg) == pytest.approx(0.1)


def test_reward_strictly_positive(cfg):
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
        assert dubins.reward(s, cfg) > 0.0


def test_analytic_fg(cfg):
    f, g = dubins.analytic_fg([0.3, -0.4, 0.0], cfg)
    assert np.allclose(f, [0.6, 0.0, 0.0])
    f, _ = dubins.analytic_fg([0.0, 0.0, math.pi / 2], cfg)
    assert np.allclose(f, [0.0, 0.6, 0.0], atol=1e-12)
    rng = np.random.default_rng(4)
    for _ in range(20):
        _, g = dubins.analytic_fg(rng.uniform(-1, 1, 3), cfg)
        assert np.array_equal(g, [[0.0], [0.0], [1.0]])


def test_generate_dataset_shape_and_episodes(cfg):
    ds = dubins.generate_dataset(2500, cfg, seed=0)
    assert len(ds) == 2500
    eps, counts = np.unique(ds.episode_ids, return_counts=True)
    assert len(eps) == 5
    assert counts.tolist() == [500] * 5


def test_generate_dataset_truncates_last_episode(cfg):
    ds = dubins.generate_dataset(1234, cfg, seed=0)
    assert len(ds) == 1234
    _, counts = np.unique(ds.episode_ids, return_counts=True)
    assert counts.tolist() == [500, 500, 234]


def test_generate_dataset_controls(cfg):
    ds = dubins.generate_dataset(30000, cfg, seed=1)
    assert np.all(np.abs(ds.U) <= cfg.u_bound)
    # mean of Uniform[-1,1]: sigma/sqrt(N) = (1/sqrt(3))/sqrt(N)
    assert abs(ds.U.mean()) <= 3.0 / math.sqrt(3 * len(ds))


def test_generate_dataset_keeps_unsafe_states(cfg):
    ds = dubins.generate_dataset(75000, cfg, seed=2)
    assert (ds.ell_x < 0).sum() > 0  # collisions do not end data collection


def test_generate_dataset_deterministic(cfg):
    a = dubins.generate_dataset(1000, cfg, seed=3)
    b = dubins.generate_dataset(1000, cfg, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)


def test_generate_dataset_ell_caches_match(cfg):
    ds = dubins.generate_dataset(1000, cfg, seed=4)
    recomputed = np.array([dubins.safety_value(x, cfg) for x in ds.X])
    assert np.max(np.abs(ds.ell_x - recomputed)) <= 1e-12
