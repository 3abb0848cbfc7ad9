"""Nominal controllers used under the safety filter: an analytic go-to-goal
steering law and a behavior-cloned actor regressed to the dataset's actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .barrier import TrainingError, feature_encode_batch
from .data import TransitionSet, sample_minibatch
from .kernels import goto_goal_core

_SALT_BC = 105


@dataclass(frozen=True)
class BcTrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    hidden: tuple = (128, 128)
    seed: int = 0


@dataclass
class GoToGoal:
    """u = clamp(k * wrap(goal bearing - heading)) onto the control box."""

    k: float = 2.0
    goal: tuple = (0.7, 0.7)
    u_bound: float = 1.0

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("gain k must be positive")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return goto_goal(x, self.k, self.goal, self.u_bound)


def goto_goal(s, k: float, goal, u_bound: float = 1.0) -> float:
    s = np.asarray(s, dtype=np.float64)
    return goto_goal_core(s[0], s[1], s[2], k, goal[0], goal[1], u_bound)


@dataclass
class BehaviorCloned:
    """MLP actor over encoded states, squashed to the control box by u_bound*tanh."""

    net: nn.MlpModel
    u_bound: float = 1.0

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        raw = nn.mlp_forward(self.net, feature_encode_batch(x[None, :]))[0, 0]
        return self.u_bound * math.tanh(raw)

    def batch(self, X: np.ndarray) -> np.ndarray:
        raw = nn.mlp_forward(self.net, feature_encode_batch(X))[:, 0]
        return self.u_bound * np.tanh(raw)


def train_bc(data: TransitionSet, cfg: BcTrainConfig, u_bound: float = 1.0,
             loss_log: list = None) -> BehaviorCloned:
    """Regress squashed actor outputs to the logged actions by MSE."""
    if data.control_dim != 1:
        raise ValueError("the BC actor is scalar-control")
    spec = nn.MlpSpec((4,) + tuple(cfg.hidden) + (1,), seed=cfg.seed)
    model = nn.mlp_init(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _SALT_BC])))
    steps = max(1, math.ceil(len(data) / cfg.batch_size))
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            mb = sample_minibatch(data, cfg.batch_size, rng)
            acts = nn.forward_acts(model, feature_encode_batch(mb.X))
            th = np.tanh(acts[-1][:, 0])
            r = u_bound * th - mb.U[:, 0]
            loss = float(np.mean(r * r))
            # d loss / d raw output, through the tanh squash
            d_raw = (2.0 * r / len(mb)) * u_bound * (1.0 - th * th)
            grad = nn.backward(model, acts, d_raw[:, None])
            nn.adam_step(model, grad, cfg.lr)
            total += loss
        if not math.isfinite(total):
            raise TrainingError(f"non-finite BC loss at epoch {epoch}")
        if loss_log is not None:
            loss_log.append(total / steps)
    return BehaviorCloned(model, u_bound)
