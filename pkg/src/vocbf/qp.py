"""The safety-filter QP: project a reference action onto one barrier halfspace
intersected with the control box, min ||u - u_ref||^2 s.t. a + b.u >= 0.

The production path is the exact dual bisection in `kernels.qp_solve_core`
(the dual of this one-constraint box QP is scalar and monotone). `qp_oracle`
solves the same problem by exhaustive enumeration of activity patterns and is
kept as the independent correctness reference for tests and `check qp`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .barrier import BarrierFn


class QpStatus(Enum):
    INACTIVE_OPTIMAL = kernels.QP_INACTIVE
    ACTIVE_OPTIMAL = kernels.QP_ACTIVE
    INFEASIBLE = kernels.QP_INFEASIBLE


@dataclass(frozen=True)
class QpProblem:
    """min ||u - u_ref||^2 s.t. a + b.u >= 0, lo <= u <= hi (elementwise)."""

    u_ref: np.ndarray
    a: float
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        for name in ("u_ref", "b", "lo", "hi"):
            object.__setattr__(self, name,
                               np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        m = self.u_ref.shape[0]
        if not (self.b.shape == self.lo.shape == self.hi.shape == (m,)):
            raise ValueError("u_ref, b, lo, hi must share one length")
        if np.any(self.lo >= self.hi):
            raise ValueError("box requires lo < hi per coordinate")
        if not (np.isfinite(self.a) and np.all(np.isfinite(self.u_ref))
                and np.all(np.isfinite(self.b))):
            raise ValueError("non-finite QP data")

    @property
    def m(self) -> int:
        return self.u_ref.shape[0]

    def objective(self, u) -> float:
        d = np.asarray(u) - self.u_ref
        return float(d @ d)

    def constraint_value(self, u) -> float:
        return float(self.a + self.b @ np.asarray(u))


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    status: QpStatus
    lam: float
    constraint_value: float


def qp_solve(p: QpProblem) -> QpSolution:
    """Exact global optimum (see module docstring); on infeasible problems the
    returned u maximizes b.u over the box (ties toward u_ref) as a best-effort
    action that pushes the barrier derivative up."""
    u, status, lam, cval = kernels.qp_solve_core(p.u_ref, p.a, p.b, p.lo, p.hi)
    return QpSolution(u, QpStatus(status), float(lam), float(cval))


_LO, _FREE, _HI = 0, 1, 2


def qp_oracle(p: QpProblem, tol: float = 1e-9) -> QpSolution:
    """Reference solution by enumerating all 3^m box-activity patterns, each
    with the halfspace inactive and active (reduced equality least squares in
    closed form), keeping the best feasible candidate. m <= 3 only."""
    if p.m > 3:
        raise ValueError("qp_oracle supports m <= 3")
    r, b, lo, hi = p.u_ref, p.b, p.lo, p.hi
    best_u, best_obj = None, np.inf

    def consider(u):
        nonlocal best_u, best_obj
        if np.all(u >= lo - tol) and np.all(u <= hi + tol) and p.constraint_value(u) >= -tol:
            u = np.clip(u, lo, hi)
            obj = p.objective(u)
            if obj < best_obj - 1e-15:
                best_u, best_obj = u, obj

    for pattern in itertools.product((_LO, _FREE, _HI), repeat=p.m):
        fixed = np.array([lo[i] if s == _LO else hi[i] if s == _HI else 0.0
                          for i, s in enumerate(pattern)])
        free = np.array([s == _FREE for s in pattern])
        # halfspace inactive: free coordinates sit at the reference
        u = np.where(free, r, fixed)
        consider(u)
        # halfspace active: minimize over free coords s.t. b_F . u_F = c
        c = -p.a - float(b[~free] @ fixed[~free])
        bf = b[free]
        nb2 = float(bf @ bf)
        if nb2 > 0.0:
            u = fixed.copy()
            u[free] = r[free] + bf * (c - float(bf @ r[free])) / nb2
            consider(u)
        elif abs(c) <= tol:
            consider(np.where(free, r, fixed))

    if best_u is None:
        # no pattern admits a feasible point: sup of the constraint over the box
        # is negative; report the same best-effort action as the solver
        u = np.where(b > 0.0, hi, np.where(b < 0.0, lo, np.clip(r, lo, hi)))
        return QpSolution(u, QpStatus.INFEASIBLE, 0.0, p.constraint_value(u))
    status = (QpStatus.INACTIVE_OPTIMAL
              if np.allclose(best_u, np.clip(r, lo, hi), rtol=0.0, atol=1e-12)
              else QpStatus.ACTIVE_OPTIMAL)
    return QpSolution(best_u, status, 0.0, p.constraint_value(best_u))


def lie_derivatives(barrier: BarrierFn, dyn_provider, x):
    """(LfB, LgB, B(x)) at a state: the barrier's raw-state gradient contracted
    with the provider's drift and control terms. `dyn_provider` is either the
    learned surrogate or the analytic map - the training-vs-inference switch."""
    x = np.asarray(x, dtype=np.float64)
    bval, bgrad = barrier.value_and_state_grad(x)
    f, g = dyn_provider.eval_fg(x)
    return float(bgrad @ f), bgrad @ g, bval


@dataclass
class SafePolicy:
    """QP filter over a reference controller: u = argmin ||u - pi_ref(x)||^2
    subject to LfB + LgB.u + alpha*B >= 0 on the control box. Total function;
    infeasible states fall back to the QP's best-effort action and are counted.
    """

    barrier: BarrierFn
    dyn_provider: object
    pi_ref: object
    alpha: float = 1.0
    u_bound: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        self.infeasible_count = 0

    def __call__(self, x):
        sol = self.solve(x)
        if sol.status is QpStatus.INFEASIBLE:
            self.infeasible_count += 1
        return sol.u[0], sol.status

    def solve(self, x) -> QpSolution:
        lfb, lgb, bval = lie_derivatives(self.barrier, self.dyn_provider, x)
        u_ref = np.atleast_1d(np.asarray(self.pi_ref(x), dtype=np.float64))
        p = QpProblem(u_ref, lfb + self.alpha * bval, np.atleast_1d(lgb).ravel(),
                      np.full(u_ref.shape, -self.u_bound), np.full(u_ref.shape, self.u_bound))
        return qp_solve(p)


def safe_policy(barrier: BarrierFn, dyn_provider, pi_ref, alpha: float = 1.0,
                u_bound: float = 1.0) -> SafePolicy:
    return SafePolicy(barrier, dyn_provider, pi_ref, alpha, u_bound)
