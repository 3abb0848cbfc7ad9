"""Control-affine dynamics surrogate x' = x + (f(x) + g(x) u) dt.

One MLP maps the encoded state to the stacked head outputs [f | vec(g)]; the
control enters only through the structural affine combination, so affinity in
u is exact by construction. Used at inference time to supply the Lie
derivatives of the QP filter; never used while learning the barrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .barrier import TrainingError, feature_encode, feature_encode_batch
from .data import TransitionSet, sample_minibatch, split
from .kernels import wrap_angle

_SALT_DYN = 104


@dataclass(frozen=True)
class DynamicsTrainConfig:
    lr: float = 3e-5
    batch_size: int = 128
    epochs: int = 400
    hidden: tuple = (64, 64, 64)
    seed: int = 0
    test_fraction: float = 0.1


@dataclass
class DynamicsSurrogate:
    """Trained (f, g) heads over a shared trunk, plus the dataset's step size."""

    net: nn.MlpModel
    dt: float
    state_dim: int = 3
    control_dim: int = 1
    angular_dims: tuple = (2,)

    def _heads(self, out: np.ndarray):
        n, m = self.state_dim, self.control_dim
        f = out[..., :n]
        g = out[..., n:].reshape(out.shape[:-1] + (n, m))
        return f, g

    def eval_fg(self, x):
        """Head outputs (f(x), g(x)) at one state; g has shape (n, m)."""
        x = np.asarray(x, dtype=np.float64)
        out = nn.mlp_forward(self.net, feature_encode(x))
        return self._heads(out)

    def eval_fg_batch(self, X: np.ndarray):
        out = nn.mlp_forward(self.net, feature_encode_batch(X))
        return self._heads(out)

    def predict_next(self, x, u) -> np.ndarray:
        """x + (f(x) + g(x) u) dt, exactly (no wrapping or clamping)."""
        x = np.asarray(x, dtype=np.float64)
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        f, g = self.eval_fg(x)
        return x + (f + g @ u) * self.dt

    def predict_next_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        f, g = self.eval_fg_batch(X)
        return X + (f + np.einsum("bnm,bm->bn", g, U)) * self.dt

    def kernel_args(self):
        return (self.net.flat, self.net.widths_array(), self.net.offsets_array())


def _delta_targets(X: np.ndarray, X_next: np.ndarray, angular_dims) -> np.ndarray:
    """Per-step state change; angular dims take the minimal wrapped difference
    (a raw difference across the +/-pi seam would carry a spurious ~2pi jump)."""
    delta = X_next - X
    for d in angular_dims:
        delta[:, d] = wrap_angle(delta[:, d])
    return delta


def train_dynamics(data: TransitionSet, cfg: DynamicsTrainConfig,
                   angular_dims: tuple = (2,), loss_log: list = None) -> DynamicsSurrogate:
    """Minimize the minibatch squared one-step prediction error with Adam.

    Trains on a by-episode train split (held-out fraction per config); report
    generalization with `heldout_rmse` on the companion test split.
    """
    train_set, _ = split(data, cfg.test_fraction, cfg.seed)
    return _fit(train_set, cfg, angular_dims, loss_log)


def _fit(train_set: TransitionSet, cfg: DynamicsTrainConfig, angular_dims,
         loss_log) -> DynamicsSurrogate:
    n, m = train_set.state_dim, train_set.control_dim
    spec = nn.MlpSpec((4,) + tuple(cfg.hidden) + (n + n * m,), seed=cfg.seed)
    model = nn.mlp_init(spec)
    # zero heads: the surrogate starts as the identity map and (f, g) grow from
    # the data signal alone, with no initialization noise to scrub pointwise
    model.weight(spec.n_layers - 1)[:] = 0.0
    dt = train_set.dt
    dyn = DynamicsSurrogate(model, dt, n, m, tuple(angular_dims))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _SALT_DYN])))
    steps = max(1, math.ceil(len(train_set) / cfg.batch_size))
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            mb = sample_minibatch(train_set, cfg.batch_size, rng)
            # regress the per-step rate delta/dt; same minimizer as the MSE on
            # x', but gradients stay well-scaled for Adam at small dt
            rate = _delta_targets(mb.X, mb.X_next, angular_dims) / dt
            acts = nn.forward_acts(model, feature_encode_batch(mb.X))
            f, g = dyn._heads(acts[-1])
            r = f + np.einsum("bnm,bm->bn", g, mb.U) - rate
            batch = len(mb)
            loss = float(np.mean(np.sum(r * r, axis=1)))
            d_pred = 2.0 * r / batch
            d_out = np.empty((batch, n + n * m))
            d_out[:, :n] = d_pred
            d_out[:, n:] = np.einsum("bn,bm->bnm", d_pred, mb.U).reshape(batch, n * m)
            grad = nn.backward(model, acts, d_out)
            nn.adam_step(model, grad, cfg.lr)
            total += loss
        if not math.isfinite(total):
            raise TrainingError(f"non-finite dynamics loss at epoch {epoch}")
        if loss_log is not None:
            loss_log.append(total / steps)
    return dyn


def heldout_rmse(dyn: DynamicsSurrogate, tset: TransitionSet) -> np.ndarray:
    """Per-dimension one-step RMSE on a transition set (wrapped angular residuals)."""
    pred = dyn.predict_next_batch(tset.X, tset.U)
    r = pred - tset.X - _delta_targets(tset.X, tset.X_next, dyn.angular_dims)
    return np.sqrt(np.mean(r * r, axis=0))


def heldout_split(data: TransitionSet, cfg: DynamicsTrainConfig) -> TransitionSet:
    """The held-out episodes matching train_dynamics' split."""
    _, test_set = split(data, cfg.test_fraction, cfg.seed)
    return test_set


def save_surrogate(dyn: DynamicsSurrogate, path) -> None:
    dyn.net.extras.update({
        "dt": repr(dyn.dt),
        "state_dim": str(dyn.state_dim),
        "control_dim": str(dyn.control_dim),
        "angular_dims": ",".join(str(d) for d in dyn.angular_dims) or "none",
    })
    nn.save_checkpoint(dyn.net, path, role="dynamics")


def load_surrogate(path) -> DynamicsSurrogate:
    net = nn.load_checkpoint(path)
    ang = net.extras.get("angular_dims", "none")
    return DynamicsSurrogate(
        net, float(net.extras["dt"]), int(net.extras["state_dim"]),
        int(net.extras["control_dim"]),
        tuple(int(d) for d in ang.split(",")) if ang != "none" else ())
