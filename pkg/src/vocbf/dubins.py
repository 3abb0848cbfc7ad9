"""Dubins-car collision-avoidance environment: fixed forward speed, scalar
turn-rate control, a circular obstacle at the origin, and a goal-seeking
reward. States are plain float64 arrays (x1, x2, phi); initial states are
sampled from [-1,1]^2 x [-pi,pi] and positions evolve by exact Euler steps
(no boundary walls), so every logged transition is exactly control-affine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import wrap_angle  # re-exported convenience

ENV_NAME = "dubins_agv"


@dataclass(frozen=True)
class AgvConfig:
    v: float = 0.6
    dt: float = 0.01
    u_bound: float = 1.0
    obstacle_center: tuple = (0.0, 0.0)
    obstacle_radius: float = 0.2
    goal: tuple = (0.7, 0.7)
    reward_scale: float = 0.1
    reward_eps: float = 0.1
    horizon: int = 500

    def __post_init__(self):
        if self.v <= 0 or self.dt <= 0 or self.obstacle_radius <= 0 or self.reward_eps <= 0:
            raise ValueError("v, dt, obstacle_radius and reward_eps must be positive")
        if self.u_bound <= 0 or self.horizon < 1:
            raise ValueError("u_bound must be positive and horizon >= 1")
        gx, gy = self.goal
        ox, oy = self.obstacle_center
        if math.hypot(gx - ox, gy - oy) <= self.obstacle_radius:
            raise ValueError("goal lies inside the obstacle")


# controls clamped to the box during step(); count kept for diagnostics
_control_clamp_count = 0


def control_clamp_count() -> int:
    return _control_clamp_count


def reset_control_clamp_count() -> None:
    global _control_clamp_count
    _control_clamp_count = 0


def step(s, u: float, cfg: AgvConfig) -> np.ndarray:
    """Forward-Euler step; heading wraps to [-pi,pi)."""
    global _control_clamp_count
    s = np.asarray(s, dtype=np.float64)
    if not (np.all(np.isfinite(s)) and math.isfinite(u)):
        raise ValueError("non-finite state or control")
    if abs(u) > cfg.u_bound:
        _control_clamp_count += 1
        u = math.copysign(cfg.u_bound, u)
    x1, x2, phi = kernels.agv_step_core(s[0], s[1], s[2], u, cfg.v, cfg.dt)
    return np.array([x1, x2, phi])


def safety_value(s, cfg: AgvConfig) -> float:
    """Signed safety margin: distance to the obstacle center minus its radius."""
    s = np.asarray(s, dtype=np.float64)
    ox, oy = cfg.obstacle_center
    return kernels.safety_ell(s[0], s[1], ox, oy, cfg.obstacle_radius)


def safety_value_batch(X: np.ndarray, cfg: AgvConfig) -> np.ndarray:
    ox, oy = cfg.obstacle_center
    return np.sqrt((X[:, 0] - ox) ** 2 + (X[:, 1] - oy) ** 2) - cfg.obstacle_radius


def reward(s, cfg: AgvConfig) -> float:
    """Strictly positive goal-proximity reward scale/(dist + eps)."""
    s = np.asarray(s, dtype=np.float64)
    gx, gy = cfg.goal
    return kernels.goal_reward(s[0], s[1], gx, gy, cfg.reward_scale, cfg.reward_eps)


def analytic_fg(s, cfg: AgvConfig):
    """True control-affine pair: f = (v cos phi, v sin phi, 0), g = (0,0,1)^T."""
    s = np.asarray(s, dtype=np.float64)
    f, g = kernels.analytic_fg_core(s[2], cfg.v)
    return f, g.reshape(3, 1)


class AnalyticDynamics:
    """Ground-truth (f, g) provider with the same interface as the learned surrogate."""

    def __init__(self, cfg: AgvConfig):
        self.cfg = cfg
        self.state_dim = 3
        self.control_dim = 1

    def eval_fg(self, x):
        return analytic_fg(x, self.cfg)

    def predict_next(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        f, g = analytic_fg(x, self.cfg)
        return x + (f + g @ np.atleast_1d(u)) * self.cfg.dt

    def predict_next_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        f = self.cfg.v * np.column_stack([np.cos(X[:, 2]), np.sin(X[:, 2]),
                                          np.zeros(len(X))])
        gu = np.column_stack([np.zeros((len(X), 2)), U[:, 0]])
        return X + (f + gu) * self.cfg.dt


def generate_dataset(n_transitions: int, cfg: AgvConfig, seed: int):
    """Offline dataset: episodes of `cfg.horizon` random-control steps from uniform
    initial states; episodes run through collisions so unsafe states are covered.

    Episode seeds are spawned from the master seed, so generation order (or a
    parallel episode schedule) cannot change the data.
    """
    from .data import TransitionSet  # local import to avoid a module cycle

    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    ox, oy = cfg.obstacle_center
    n_episodes = (n_transitions + cfg.horizon - 1) // cfg.horizon
    children = np.random.SeedSequence(seed).spawn(n_episodes)

    X = np.empty((n_transitions, 3))
    U = np.empty((n_transitions, 1))
    X_next = np.empty((n_transitions, 3))
    ell_x = np.empty(n_transitions)
    ell_x_next = np.empty(n_transitions)
    episode_ids = np.empty(n_transitions, dtype=np.int64)
    step_ids = np.empty(n_transitions, dtype=np.int64)

    pos = 0
    for ep, child in enumerate(children):
        T = min(cfg.horizon, n_transitions - pos)
        rng = np.random.Generator(np.random.PCG64(child))
        x0 = rng.uniform([-1.0, -1.0, -math.pi], [1.0, 1.0, math.pi])
        us = rng.uniform(-cfg.u_bound, cfg.u_bound, size=cfg.horizon)[:T]
        sl = slice(pos, pos + T)
        kernels.generate_episode_core(x0, us, cfg.v, cfg.dt, ox, oy, cfg.obstacle_radius,
                                      X[sl], U[sl], X_next[sl], ell_x[sl], ell_x_next[sl])
        episode_ids[sl] = ep
        step_ids[sl] = np.arange(T)
        pos += T

    metadata = {
        "env": ENV_NAME,
        "dt": cfg.dt,
        "seed": seed,
        "obstacle_x": ox,
        "obstacle_y": oy,
        "obstacle_radius": cfg.obstacle_radius,
    }
    return TransitionSet(episode_ids, step_ids, X, U, X_next, ell_x, ell_x_next, metadata)
