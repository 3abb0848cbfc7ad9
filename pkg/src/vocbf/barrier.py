"""Barrier learning from logged transitions.

Two nets are trained from the same data: a TD barrier fit by the discounted
min-backup (1-gamma)*ell(x) + gamma*min(ell(x), B(x')) using only each
transition's logged action, and the CBF net regressed by expectile loss toward
the per-transition bootstrapped targets, so tau > 0.5 pushes it to the upper
envelope of outcomes the dataset's actions support. Neither update ever
evaluates a barrier target at an action outside the dataset; a model-based
variant that does (via the learned dynamics and sampled actions) is kept as a
deliberately weaker baseline and is the only code path touching the
out-of-distribution query counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import TransitionSet, sample_minibatch

_SALT_TD = 101
_SALT_PAIR = 102
_SALT_MB = 103


class TrainingError(RuntimeError):
    """Non-finite loss or gradient aborted a training run."""


# Counts barrier-target evaluations at actions not taken from the dataset.
# Only the model-based baseline increments it; the main training paths must
# leave it untouched (asserted in tests).
_ood_action_barrier_queries = 0


def ood_action_barrier_queries() -> int:
    return _ood_action_barrier_queries


def reset_ood_action_barrier_queries() -> None:
    global _ood_action_barrier_queries
    _ood_action_barrier_queries = 0


@dataclass(frozen=True)
class BarrierTrainConfig:
    gamma: float = 0.99
    tau: float = 0.99
    lr: float = 3e-5
    batch_size: int = 256
    epochs: int = 100
    target_polyak_rho: float = 0.005
    use_target_net: bool = True
    hidden: tuple = (256, 256)
    encode_heading: bool = True
    eq8_literal: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


def feature_encode(x) -> np.ndarray:
    """(x1, x2, phi) -> (x1, x2, sin phi, cos phi); injective on [-pi, pi) headings."""
    x = np.asarray(x, dtype=np.float64)
    return np.array([x[0], x[1], math.sin(x[2]), math.cos(x[2])])


def feature_encode_batch(X: np.ndarray) -> np.ndarray:
    return np.column_stack([X[:, 0], X[:, 1], np.sin(X[:, 2]), np.cos(X[:, 2])])


@dataclass
class BarrierFn:
    """A scalar barrier net plus its input convention, as used by the QP filter."""

    net: nn.MlpModel
    encode_heading: bool = True

    def _features(self, X: np.ndarray) -> np.ndarray:
        return feature_encode_batch(X) if self.encode_heading else X

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(nn.mlp_forward(self.net, self._features(x[None, :]))[0, 0])

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        return nn.mlp_forward(self.net, self._features(X))[:, 0]

    def value_and_state_grad(self, x):
        """Barrier value and gradient w.r.t. the raw state, chain-ruled through
        the heading encoding when active."""
        x = np.asarray(x, dtype=np.float64)
        if not self.encode_heading:
            return float(nn.mlp_forward(self.net, x)[0]), nn.input_grad(self.net, x)
        feat = feature_encode(x)
        gf = nn.input_grad(self.net, feat)
        s, c = math.sin(x[2]), math.cos(x[2])
        g = np.array([gf[0], gf[1], gf[2] * c - gf[3] * s])
        return float(nn.mlp_forward(self.net, feat)[0]), g

    def kernel_args(self):
        return (self.net.flat, self.net.widths_array(), self.net.offsets_array(),
                1 if self.encode_heading else 0)


@dataclass
class BarrierModelPair:
    """TD barrier + expectile-regressed CBF, with the per-epoch loss curve."""

    td_net: nn.MlpModel
    cbf_net: nn.MlpModel
    training_log: list = field(default_factory=list)  # (epoch, loss_td, loss_cbf)


def bd_target(ell_x, b_next, gamma: float):
    """Discounted min-backup (1-gamma)*ell + gamma*min(ell, b_next)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    ell_x = np.asarray(ell_x, dtype=np.float64)
    out = (1.0 - gamma) * ell_x + gamma * np.minimum(ell_x, b_next)
    return float(out) if out.ndim == 0 else out


def _barrier_spec(data: TransitionSet, cfg: BarrierTrainConfig) -> nn.MlpSpec:
    if cfg.encode_heading and data.state_dim != 3:
        raise ValueError("heading encoding expects 3-dim states")
    in_dim = 4 if cfg.encode_heading else data.state_dim
    return nn.MlpSpec((in_dim,) + tuple(cfg.hidden) + (1,), seed=cfg.seed)


def _encoder(cfg: BarrierTrainConfig):
    return feature_encode_batch if cfg.encode_heading else (lambda X: X)


def _steps_per_epoch(data: TransitionSet, cfg: BarrierTrainConfig) -> int:
    return max(1, math.ceil(len(data) / cfg.batch_size))


def _check_finite(loss: float, what: str, epoch: int):
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite {what} loss at epoch {epoch}: {loss}")


def train_td_barrier(data: TransitionSet, cfg: BarrierTrainConfig,
                     loss_log: list = None) -> nn.MlpModel:
    """Fit the TD barrier by squared error to the discounted min-backup.

    The bootstrap term uses a Polyak-averaged copy of the net (or the net
    itself when disabled); only the logged successor of each transition is
    used, never a maximization over actions.
    """
    enc = _encoder(cfg)
    model = nn.mlp_init(_barrier_spec(data, cfg))
    target_net = model.copy() if cfg.use_target_net else model
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _SALT_TD])))
    steps = _steps_per_epoch(data, cfg)
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            mb = sample_minibatch(data, cfg.batch_size, rng)
            b_next = nn.mlp_forward(target_net, enc(mb.X_next))[:, 0]
            target = bd_target(mb.ell_x, b_next, cfg.gamma)
            loss, grad = nn.value_and_param_grad(model, enc(mb.X), target, "squared")
            nn.adam_step(model, grad, cfg.lr)
            if cfg.use_target_net:
                nn.polyak_update(target_net, model, cfg.target_polyak_rho)
            total += loss
        _check_finite(total, "TD barrier", epoch)
        if loss_log is not None:
            loss_log.append(total / steps)
    return model


def train_vocbf(data: TransitionSet, cfg: BarrierTrainConfig,
                td_net: nn.MlpModel = None, freeze_td: bool = False) -> BarrierModelPair:
    """Joint loop: per minibatch, a TD-barrier update followed by an expectile
    update of the CBF net toward the bootstrapped per-transition target
    (1-gamma)*ell(x) + gamma*min(ell(x), B_td(x')), evaluated with the TD net
    detached. With `eq8_literal` the CBF regresses against B_td(x) directly
    (the degenerate state-only reading, kept for comparison).

    Pass `td_net` (e.g. from train_td_barrier) with `freeze_td=True` to retrain
    only the CBF net, as the tau ablation does.
    """
    enc = _encoder(cfg)
    spec = _barrier_spec(data, cfg)
    if td_net is None:
        td_net = nn.mlp_init(spec)
    elif td_net.spec.layer_widths != spec.layer_widths:
        raise ValueError("td_net architecture does not match the config")
    cbf_net = nn.mlp_init(spec)
    target_net = td_net.copy() if cfg.use_target_net else td_net
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _SALT_PAIR])))
    steps = _steps_per_epoch(data, cfg)
    log = []
    for epoch in range(cfg.epochs):
        tot_td, tot_cbf = 0.0, 0.0
        for _ in range(steps):
            mb = sample_minibatch(data, cfg.batch_size, rng)
            Xf = enc(mb.X)
            Xnf = enc(mb.X_next)
            if not freeze_td:
                b_next = nn.mlp_forward(target_net, Xnf)[:, 0]
                loss_td, grad = nn.value_and_param_grad(
                    td_net, Xf, bd_target(mb.ell_x, b_next, cfg.gamma), "squared")
                nn.adam_step(td_net, grad, cfg.lr)
                if cfg.use_target_net:
                    nn.polyak_update(target_net, td_net, cfg.target_polyak_rho)
            else:
                loss_td = float("nan")
            if cfg.eq8_literal:
                cbf_target = nn.mlp_forward(td_net, Xf)[:, 0]
            else:
                cbf_target = bd_target(mb.ell_x, nn.mlp_forward(td_net, Xnf)[:, 0], cfg.gamma)
            loss_cbf, grad = nn.value_and_param_grad(
                cbf_net, Xf, cbf_target, "expectile", cfg.tau)
            nn.adam_step(cbf_net, grad, cfg.lr)
            tot_td += loss_td
            tot_cbf += loss_cbf
        if not freeze_td:
            _check_finite(tot_td, "TD barrier", epoch)
        _check_finite(tot_cbf, "CBF", epoch)
        log.append((epoch, tot_td / steps, tot_cbf / steps))
    return BarrierModelPair(td_net, cbf_net, log)


def mb_backup_targets(barrier_net: nn.MlpModel, dyn, X: np.ndarray, ell_x: np.ndarray,
                      actions: np.ndarray, gamma: float, encode_heading: bool = True) -> np.ndarray:
    """Model-based backup (1-gamma)*ell + gamma*min(ell, max_k B(x_hat'_k)) with
    successors predicted by `dyn` for each candidate action. Counts every
    barrier query at a non-logged action."""
    global _ood_action_barrier_queries
    n, k = actions.shape[0], actions.shape[1]
    enc = feature_encode_batch if encode_heading else (lambda A: A)
    b_max = np.full(n, -np.inf)
    for j in range(k):
        x_hat = dyn.predict_next_batch(X, actions[:, j, :])
        b_max = np.maximum(b_max, nn.mlp_forward(barrier_net, enc(x_hat))[:, 0])
    _ood_action_barrier_queries += n * k
    return (1.0 - gamma) * ell_x + gamma * np.minimum(ell_x, b_max)


def train_cbvf_model_based(data: TransitionSet, dyn, cfg: BarrierTrainConfig,
                           n_action_samples: int = 16,
                           control_bounds: tuple = (-1.0, 1.0),
                           loss_log: list = None) -> nn.MlpModel:
    """Baseline barrier trained through the learned dynamics: the backup target
    maximizes over uniformly sampled actions from the control box (squared-error
    regression, no expectile). Exists to show this underperforms the offline
    action-supported training."""
    enc = _encoder(cfg)
    model = nn.mlp_init(_barrier_spec(data, cfg))
    target_net = model.copy() if cfg.use_target_net else model
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _SALT_MB])))
    steps = _steps_per_epoch(data, cfg)
    m = data.control_dim
    lo, hi = control_bounds
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            mb = sample_minibatch(data, cfg.batch_size, rng)
            actions = rng.uniform(lo, hi, size=(len(mb), n_action_samples, m))
            target = mb_backup_targets(target_net, dyn, mb.X, mb.ell_x, actions,
                                       cfg.gamma, cfg.encode_heading)
            loss, grad = nn.value_and_param_grad(model, enc(mb.X), target, "squared")
            nn.adam_step(model, grad, cfg.lr)
            if cfg.use_target_net:
                nn.polyak_update(target_net, model, cfg.target_polyak_rho)
            total += loss
        _check_finite(total, "model-based CBVF", epoch)
        if loss_log is not None:
            loss_log.append(total / steps)
    return model


def write_training_curve(path, log) -> None:
    """CSV of per-epoch losses: epoch,loss_psi,loss_theta."""
    lines = ["epoch,loss_psi,loss_theta"]
    for epoch, loss_td, loss_cbf in log:
        lines.append(f"{epoch},{loss_td!r},{loss_cbf!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def tabular_backup(ell: np.ndarray, next_idx: np.ndarray, B: np.ndarray,
                   gamma: float) -> np.ndarray:
    """One sweep of the discounted min-backup on a finite deterministic system."""
    return (1.0 - gamma) * ell + gamma * np.minimum(ell, B[next_idx])


def tabular_value_iteration(ell: np.ndarray, next_idx: np.ndarray, gamma: float,
                            max_iter: int = 20000, tol: float = 1e-13):
    """Fixpoint of the backup by iteration; returns (B, per-sweep sup errors)."""
    B = ell.astype(np.float64).copy()
    errors = []
    for _ in range(max_iter):
        Bn = tabular_backup(ell, next_idx, B, gamma)
        err = float(np.max(np.abs(Bn - B)))
        errors.append(err)
        B = Bn
        if err <= tol:
            break
    return B, errors
