"""Closed-loop evaluation: rollouts, safe-episode/reward tables, safe-set
volume, and the tau / control-noise / dynamics-source studies.

Every episode's initial state and noise draws derive only from (master seed,
episode index), so configurations evaluated under the same seeds see identical
initial states (paired design) and results never depend on the thread count.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import barrier as barrier_mod
from . import kernels
from .barrier import BarrierFn, BarrierTrainConfig
from .data import TransitionSet
from .dubins import AgvConfig, AnalyticDynamics, reward as state_reward, safety_value, step
from .dynamics import DynamicsSurrogate
from .policy import BehaviorCloned, GoToGoal
from .qp import SafePolicy

EVAL_SEEDS = (11, 13, 17, 19, 23)

_STREAM_X0 = 0
_STREAM_NOISE = 1
_STREAM_SSV = 2


@dataclass(frozen=True)
class RolloutResult:
    safe: bool
    total_reward: float
    first_violation_step: int | None
    steps_taken: int
    infeasible_steps: int = 0
    active_steps: int = 0


@dataclass
class ControlPipeline:
    """A reference controller, optionally wrapped by the QP safety filter."""

    pi_ref: object
    barrier: BarrierFn | None = None
    dyn_provider: object | None = None
    alpha: float = 1.0

    def __post_init__(self):
        if self.barrier is not None and self.dyn_provider is None:
            raise ValueError("a filtered pipeline needs a dynamics provider")

    @property
    def filtered(self) -> bool:
        return self.barrier is not None

    def as_callable(self, cfg: AgvConfig):
        """Plain x -> u closure (python reference path for the jitted rollout)."""
        if not self.filtered:
            pi = self.pi_ref
            return lambda x: float(np.clip(pi(x), -cfg.u_bound, cfg.u_bound))
        sp = SafePolicy(self.barrier, self.dyn_provider, self.pi_ref,
                        self.alpha, cfg.u_bound)
        return lambda x: sp(x)[0]

    def kernel_args(self, cfg: AgvConfig):
        if isinstance(self.pi_ref, GoToGoal):
            pi = (kernels.PI_GOTO_GOAL, self.pi_ref.k,
                  self.pi_ref.goal[0], self.pi_ref.goal[1],
                  kernels.DUMMY_FLAT, kernels.DUMMY_WIDTHS, kernels.DUMMY_OFFS)
        elif isinstance(self.pi_ref, BehaviorCloned):
            net = self.pi_ref.net
            pi = (kernels.PI_BEHAVIOR_CLONED, 0.0, 0.0, 0.0,
                  net.flat, net.widths_array(), net.offsets_array())
        else:
            raise TypeError(f"kernel rollout supports GoToGoal/BehaviorCloned, "
                            f"got {type(self.pi_ref).__name__}")
        if self.filtered:
            th_flat, th_widths, th_offs, th_enc = self.barrier.kernel_args()
            if isinstance(self.dyn_provider, DynamicsSurrogate):
                dyn = (kernels.DYN_LEARNED,) + self.dyn_provider.kernel_args()
            elif isinstance(self.dyn_provider, AnalyticDynamics):
                dyn = (kernels.DYN_ANALYTIC, kernels.DUMMY_FLAT,
                       kernels.DUMMY_WIDTHS, kernels.DUMMY_OFFS)
            else:
                raise TypeError(f"unsupported dynamics provider "
                                f"{type(self.dyn_provider).__name__}")
            flt = (1, th_flat, th_widths, th_offs, th_enc, self.alpha) + dyn
        else:
            flt = (0, kernels.DUMMY_FLAT, kernels.DUMMY_WIDTHS, kernels.DUMMY_OFFS, 0, 1.0,
                   kernels.DYN_ANALYTIC, kernels.DUMMY_FLAT, kernels.DUMMY_WIDTHS,
                   kernels.DUMMY_OFFS)
        return pi + flt


def _episode_rng(master_seed: int, episode: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(master_seed), int(episode), stream])))


def draw_initial_state(rng: np.random.Generator, cfg: AgvConfig,
                       exclude_unsafe: bool) -> np.ndarray:
    """Uniform over the state space; optionally rejection-sample to safe starts."""
    while True:
        x0 = rng.uniform([-1.0, -1.0, -math.pi], [1.0, 1.0, math.pi])
        if not exclude_unsafe or safety_value(x0, cfg) >= 0.0:
            return x0


def _episode_noise(master_seed: int, episode: int, horizon: int,
                   noise_sigma: float) -> np.ndarray:
    if noise_sigma <= 0.0:
        return np.zeros(horizon)
    return _episode_rng(master_seed, episode, _STREAM_NOISE).standard_normal(horizon)


def rollout(policy, x0, cfg: AgvConfig, noise_sigma: float = 0.0,
            noise: np.ndarray = None, horizon: int = None) -> RolloutResult:
    """One closed-loop episode. `policy` is a ControlPipeline (jitted kernel) or
    any x -> u callable (python loop, same semantics).

    The episode stops at the first visited state with a negative safety margin;
    reward accrues for every earlier visited state. Controls are
    clamp(policy(x) + sigma * noise[t]) on the control box.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    horizon = cfg.horizon if horizon is None else horizon
    if noise is None:
        noise = np.zeros(horizon)
    if noise_sigma > 0.0 and len(noise) < horizon:
        raise ValueError("noise array shorter than the horizon")

    if isinstance(policy, ControlPipeline):
        ox, oy = cfg.obstacle_center
        gx, gy = cfg.goal
        first_violation, total_reward, steps, infeasible, active = kernels.agv_rollout(
            x0, horizon, noise, noise_sigma,
            cfg.v, cfg.dt, cfg.u_bound, ox, oy, cfg.obstacle_radius,
            gx, gy, cfg.reward_scale, cfg.reward_eps,
            *policy.kernel_args(cfg))
        return RolloutResult(first_violation < 0, total_reward,
                             None if first_violation < 0 else int(first_violation),
                             int(steps), int(infeasible), int(active))

    x = x0.copy()
    total_reward = 0.0
    for t in range(horizon + 1):
        if safety_value(x, cfg) < 0.0:
            return RolloutResult(False, total_reward, t, t)
        if t == horizon:
            break
        total_reward += state_reward(x, cfg)
        u = float(np.clip(policy(x) + noise_sigma * noise[t], -cfg.u_bound, cfg.u_bound))
        x = step(x, u, cfg)
    return RolloutResult(True, total_reward, None, horizon)


@dataclass
class EvalRow:
    label: str
    seeds: tuple
    n_episodes: int
    safe_pct_by_seed: list
    reward_by_seed: list
    infeasible_step_frac: float = 0.0

    @property
    def safe_pct(self) -> float:
        return float(np.mean(self.safe_pct_by_seed))

    @property
    def safe_std(self) -> float:
        return float(np.std(self.safe_pct_by_seed, ddof=1)) if len(self.seeds) > 1 else 0.0

    @property
    def reward(self) -> float:
        return float(np.mean(self.reward_by_seed))

    @property
    def reward_std(self) -> float:
        return float(np.std(self.reward_by_seed, ddof=1)) if len(self.seeds) > 1 else 0.0


def _run_episodes(pipeline: ControlPipeline, cfg: AgvConfig, master_seed: int,
                  n_episodes: int, noise_sigma: float, exclude_unsafe: bool,
                  threads: int):
    def one(ep: int) -> RolloutResult:
        x0 = draw_initial_state(_episode_rng(master_seed, ep, _STREAM_X0), cfg,
                                exclude_unsafe)
        noise = _episode_noise(master_seed, ep, cfg.horizon, noise_sigma)
        return rollout(pipeline, x0, cfg, noise_sigma, noise)

    if threads <= 1:
        return [one(ep) for ep in range(n_episodes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_episodes)))


def eval_suite(pipeline: ControlPipeline, cfg: AgvConfig, label: str = "",
               n_episodes: int = 500, seeds=EVAL_SEEDS, noise_sigma: float = 0.0,
               threads: int = 1) -> EvalRow:
    """Safe-episode percentage and mean episode reward, mean +/- std over seeds.
    Initial states exclude in-obstacle starts (no controller can save those);
    the safe-set volume keeps them by design."""
    safe_pct, rewards = [], []
    infeasible = 0
    total_steps = 0
    for seed in seeds:
        results = _run_episodes(pipeline, cfg, seed, n_episodes, noise_sigma,
                                exclude_unsafe=True, threads=threads)
        safe_pct.append(100.0 * sum(r.safe for r in results) / n_episodes)
        rewards.append(float(np.mean([r.total_reward for r in results])))
        infeasible += sum(r.infeasible_steps for r in results)
        total_steps += sum(r.steps_taken for r in results)
    frac = infeasible / total_steps if total_steps else 0.0
    return EvalRow(label, tuple(seeds), n_episodes, safe_pct, rewards, frac)


def safe_set_volume(pipeline: ControlPipeline, cfg: AgvConfig,
                    n_samples: int = 10_000, seed: int = EVAL_SEEDS[0],
                    threads: int = 1) -> float:
    """Percentage of uniform initial states (obstacle interior included, always
    unsafe) whose closed-loop episode stays safe for the whole horizon."""
    def one(i: int) -> bool:
        x0 = draw_initial_state(_episode_rng(seed, i, _STREAM_SSV), cfg,
                                exclude_unsafe=False)
        return rollout(pipeline, x0, cfg).safe

    if threads <= 1:
        flags = [one(i) for i in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flags = list(pool.map(one, range(n_samples)))
    return 100.0 * sum(flags) / n_samples


@dataclass
class ExperimentTable:
    columns: list
    rows: list = field(default_factory=list)
    header_comments: list = field(default_factory=list)

    def add_row(self, **values):
        self.rows.append({c: values.get(c, "") for c in self.columns})

    def to_csv(self, path):
        lines = [f"# {c}" for c in self.header_comments]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_csv_cell(row[c]) for c in self.columns))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_METRIC_COLUMNS = ["safe_pct", "safe_std", "reward", "reward_std"]


def _metric_values(row: EvalRow) -> dict:
    return {"safe_pct": row.safe_pct, "safe_std": row.safe_std,
            "reward": row.reward, "reward_std": row.reward_std}


def table_main(pipeline: ControlPipeline, unfiltered: ControlPipeline, cfg: AgvConfig,
               n_episodes: int = 500, seeds=EVAL_SEEDS, threads: int = 1):
    """Filtered vs unfiltered reference controller on paired initial states."""
    table = ExperimentTable(["label"] + _METRIC_COLUMNS)
    rows = {}
    for label, pl in (("pi_ref+qp_filter", pipeline), ("pi_ref_unfiltered", unfiltered)):
        row = eval_suite(pl, cfg, label, n_episodes, seeds, threads=threads)
        table.add_row(label=label, **_metric_values(row))
        rows[label] = row
    return table, rows


def ablate_tau(data: TransitionSet, cfg_barrier: BarrierTrainConfig, td_net,
               dyn_provider, pi_ref, cfg: AgvConfig, taus=(0.5, 0.7, 0.8, 0.9, 0.99),
               alpha: float = 1.0, n_episodes: int = 500, seeds=EVAL_SEEDS,
               threads: int = 1):
    """Retrain the CBF net per tau against the fixed TD barrier, then evaluate."""
    table = ExperimentTable(["tau"] + _METRIC_COLUMNS)
    rows = {}
    for tau in taus:
        cfg_tau = dataclasses.replace(cfg_barrier, tau=tau)
        pair = barrier_mod.train_vocbf(data, cfg_tau, td_net=td_net.copy(), freeze_td=True)
        pipeline = ControlPipeline(pi_ref, BarrierFn(pair.cbf_net, cfg_tau.encode_heading),
                                   dyn_provider, alpha)
        row = eval_suite(pipeline, cfg, f"tau={tau}", n_episodes, seeds, threads=threads)
        table.add_row(tau=tau, **_metric_values(row))
        rows[tau] = row
    return table, rows


def ablate_noise(pipeline: ControlPipeline, cfg: AgvConfig,
                 sigmas=(0.0, 0.05, 0.10, 0.20), n_episodes: int = 500,
                 seeds=EVAL_SEEDS, threads: int = 1):
    """Safety under zero-mean Gaussian control noise; sigma is the fraction of
    the control bound (0.10 is the 10% level)."""
    table = ExperimentTable(["sigma"] + _METRIC_COLUMNS)
    rows = {}
    for sigma in sigmas:
        row = eval_suite(pipeline, cfg, f"sigma={sigma}", n_episodes, seeds,
                         noise_sigma=sigma * cfg.u_bound, threads=threads)
        table.add_row(sigma=sigma, **_metric_values(row))
        rows[sigma] = row
    return table, rows


def compare_dynamics_modes(cbf: BarrierFn, cbf_model_based: BarrierFn,
                           learned_dyn: DynamicsSurrogate, pi_ref, cfg: AgvConfig,
                           alpha: float = 1.0, n_episodes: int = 500,
                           seeds=EVAL_SEEDS, threads: int = 1):
    """QP with learned vs known dynamics, and the barrier trained through the
    learned dynamics, on identical initial-state sets."""
    analytic = AnalyticDynamics(cfg)
    configs = [
        ("qp_learned_dynamics", ControlPipeline(pi_ref, cbf, learned_dyn, alpha)),
        ("qp_known_dynamics", ControlPipeline(pi_ref, cbf, analytic, alpha)),
        ("cbvf_from_learned_dynamics",
         ControlPipeline(pi_ref, cbf_model_based, learned_dyn, alpha)),
    ]
    table = ExperimentTable(["label"] + _METRIC_COLUMNS)
    rows = {}
    for label, pl in configs:
        row = eval_suite(pl, cfg, label, n_episodes, seeds, threads=threads)
        table.add_row(label=label, **_metric_values(row))
        rows[label] = row
    return table, rows


def long_format_rows(rows_by_label: dict) -> ExperimentTable:
    """Per-seed long-format data for external plotting tools."""
    table = ExperimentTable(["label", "seed", "metric", "value"])
    for label, row in rows_by_label.items():
        for seed, safe, rew in zip(row.seeds, row.safe_pct_by_seed, row.reward_by_seed):
            table.add_row(label=label, seed=seed, metric="safe_pct", value=safe)
            table.add_row(label=label, seed=seed, metric="reward", value=rew)
    return table
