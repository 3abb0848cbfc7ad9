import math

import numpy as np
import pytest

from vocbf import evaluation, nn
from vocbf.barrier import BarrierFn
from vocbf.dubins import AgvConfig, AnalyticDynamics, safety_value
from vocbf.evaluation import (ControlPipeline, ExperimentTable, ablate_noise,
                              draw_initial_state, eval_suite, rollout,
                              safe_set_volume, table_main)
from vocbf.policy import GoToGoal


@pytest.fixture
def cfg():
    return AgvConfig(horizon=150)


def hand_barrier(seed=0):
    """Smooth random scalar net over encoded states; quality irrelevant here."""
    net = nn.mlp_init(nn.MlpSpec((4, 16, 1), seed=seed))
    net.flat[:] = np.random.default_rng(seed).normal(0, 0.4, net.n_params)
    return BarrierFn(net, encode_heading=True)


def goto_pipeline(cfg, filtered=False):
    pi = GoToGoal(k=2.0, goal=cfg.goal)
    if not filtered:
        return ControlPipeline(pi)
    return ControlPipeline(pi, hand_barrier(), AnalyticDynamics(cfg))


def test_rollout_immediate_violation(cfg):
    res = rollout(goto_pipeline(cfg), np.array([0.05, 0.0, 0.0]), cfg)
    assert not res.safe
    assert res.first_violation_step == 0
    assert res.total_reward == 0.0
    assert res.steps_taken == 0


def test_rollout_deterministic(cfg):
    x0 = np.array([-0.8, -0.8, 0.3])
    a = rollout(goto_pipeline(cfg, filtered=True), x0, cfg)
    b = rollout(goto_pipeline(cfg, filtered=True), x0, cfg)
    assert a == b


def test_rollout_kernel_matches_python_loop(cfg):
    rng = np.random.default_rng(0)
    for filtered in (False, True):
        pipeline = goto_pipeline(cfg, filtered)
        fn = pipeline.as_callable(cfg)
        for _ in range(12):
            x0 = draw_initial_state(np.random.default_rng(rng.integers(1 << 30)),
                                    cfg, exclude_unsafe=True)
            res_k = rollout(pipeline, x0, cfg)
            res_p = rollout(fn, x0, cfg)
            assert res_k.safe == res_p.safe
            assert res_k.first_violation_step == res_p.first_violation_step
            assert res_k.total_reward == pytest.approx(res_p.total_reward, rel=1e-9)


def test_rollout_reward_stops_at_violation(cfg):
    # drive straight along +x1 from left of the obstacle: hits it mid-episode
    x0 = np.array([-0.5, 0.0, 0.0])
    res = rollout(lambda x: 0.0, x0, cfg)
    assert not res.safe
    # violation when x1 reaches -0.2: 50 steps of 0.006
    assert res.first_violation_step == 50
    expected = sum(evaluation.state_reward([-0.5 + 0.006 * t, 0.0, 0.0], cfg)
                   for t in range(50))
    assert res.total_reward == pytest.approx(expected, rel=1e-12)


def test_rollout_noise_changes_trajectory_only_when_nonzero(cfg):
    x0 = np.array([-0.9, 0.4, 1.0])
    noise = np.random.default_rng(1).standard_normal(cfg.horizon)
    base = rollout(goto_pipeline(cfg), x0, cfg)
    with_zero_sigma = rollout(goto_pipeline(cfg), x0, cfg, noise_sigma=0.0, noise=noise)
    assert base == with_zero_sigma
    with_noise = rollout(goto_pipeline(cfg), x0, cfg, noise_sigma=0.2, noise=noise)
    assert with_noise.total_reward != base.total_reward


def test_initial_states_paired_across_policies(cfg):
    seeds = (11, 13)
    states_a = [draw_initial_state(evaluation._episode_rng(s, ep, 0), cfg, True)
                for s in seeds for ep in range(5)]
    states_b = [draw_initial_state(evaluation._episode_rng(s, ep, 0), cfg, True)
                for s in seeds for ep in range(5)]
    assert np.allclose(states_a, states_b)
    for x0 in states_a:
        assert safety_value(x0, cfg) >= 0.0


def test_eval_suite_counts_and_ranges(cfg):
    row = eval_suite(goto_pipeline(cfg), cfg, "goto", n_episodes=30, seeds=(11, 13))
    assert 0.0 <= row.safe_pct <= 100.0
    assert row.safe_std >= 0.0
    assert len(row.safe_pct_by_seed) == 2
    for pct in row.safe_pct_by_seed:
        n_safe = round(pct / 100.0 * 30)
        assert 0 <= n_safe <= 30
        assert pct == pytest.approx(100.0 * n_safe / 30)


def test_eval_suite_thread_count_invariance(cfg):
    a = eval_suite(goto_pipeline(cfg, True), cfg, n_episodes=24, seeds=(11,), threads=1)
    b = eval_suite(goto_pipeline(cfg, True), cfg, n_episodes=24, seeds=(11,), threads=3)
    assert a.safe_pct_by_seed == b.safe_pct_by_seed
    assert a.reward_by_seed == b.reward_by_seed


def test_safe_set_volume_includes_obstacle_interior(cfg):
    n = 4000
    in_obstacle = sum(
        safety_value(draw_initial_state(evaluation._episode_rng(11, i, 2), cfg, False),
                     cfg) < 0 for i in range(n))
    # area ratio pi R^2 / 4 ~= 3.14%
    assert in_obstacle / n == pytest.approx(math.pi * 0.04 / 4.0, abs=0.01)
    ssv = safe_set_volume(goto_pipeline(cfg), cfg, n_samples=n, seed=11)
    assert ssv <= 100.0 * (1.0 - in_obstacle / n) + 1e-9


def test_ablate_noise_zero_row_equals_baseline(cfg):
    pipeline = goto_pipeline(cfg, filtered=True)
    baseline = eval_suite(pipeline, cfg, n_episodes=20, seeds=(11, 13))
    _, rows = ablate_noise(pipeline, cfg, sigmas=(0.0, 0.1), n_episodes=20,
                           seeds=(11, 13))
    assert rows[0.0].safe_pct_by_seed == baseline.safe_pct_by_seed
    assert rows[0.0].reward_by_seed == baseline.reward_by_seed
    assert len(rows) == 2


def test_table_main_is_paired_and_writes_csv(tmp_path, cfg):
    table, rows = table_main(goto_pipeline(cfg, True), goto_pipeline(cfg),
                             cfg, n_episodes=15, seeds=(11, 13))
    assert [r["label"] for r in table.rows] == ["pi_ref+qp_filter", "pi_ref_unfiltered"]
    table.header_comments = ["k = v", "hash = abc"]
    out = tmp_path / "t.csv"
    table.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "# k = v" and lines[1] == "# hash = abc"
    assert lines[2] == "label,safe_pct,safe_std,reward,reward_std"
    assert len(lines) == 5


def test_long_format_rows(cfg):
    row = eval_suite(goto_pipeline(cfg), cfg, "x", n_episodes=10, seeds=(11, 13))
    table = evaluation.long_format_rows({"x": row})
    assert len(table.rows) == 4  # 2 seeds x 2 metrics
    assert {r["metric"] for r in table.rows} == {"safe_pct", "reward"}


def test_filtered_pipeline_requires_dynamics(cfg):
    with pytest.raises(ValueError):
        ControlPipeline(GoToGoal(), hand_barrier(), None)
