"""Standalone property suites behind `vocbf check {grad,qp,lemma}`.

Each suite returns (passed, detail) and is reused verbatim by the acceptance
tests, so the CLI and the test gate cannot drift apart.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .barrier import bd_target
from .qp import QpProblem, QpStatus, qp_oracle, qp_solve


def _random_model(rng: np.random.Generator) -> nn.MlpModel:
    widths = (int(rng.integers(2, 6)), int(rng.integers(3, 8)),
              int(rng.integers(3, 8)), 1)
    model = nn.mlp_init(nn.MlpSpec(widths, seed=int(rng.integers(0, 2 ** 31))))
    model.flat[:] = rng.normal(0.0, 0.7, model.n_params)
    return model


def _kink_free(model: nn.MlpModel, X: np.ndarray, margin: float = 1e-3) -> bool:
    """Reject configurations with a hidden preactivation within `margin` of the
    ReLU kink, where central differences are not trustworthy."""
    acts = nn.forward_acts(model, X)
    a = X
    for l in range(model.spec.n_layers - 1):
        z = a @ model.weight(l).T + model.bias(l)
        if np.min(np.abs(z)) < margin:
            return False
        a = acts[l + 1]
    return True


def run_grad_check(n_trials: int = 50, seed: int = 0, h: float = 1e-5,
                   tol: float = 1e-4):
    """Parameter and input gradients vs central finite differences, for squared,
    expectile, and caller-composed (bootstrapped) targets."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    worst_what = ""
    for trial in range(n_trials):
        while True:
            model = _random_model(rng)
            X = rng.normal(0.0, 1.0, (int(rng.integers(1, 8)), model.spec.input_dim))
            if _kink_free(model, X):
                break
        specs = [("squared", rng.normal(0.0, 1.0, X.shape[0]), None),
                 ("expectile", rng.normal(0.0, 1.0, X.shape[0]),
                  float(rng.uniform(0.05, 0.95)))]
        # composite: bootstrapped targets computed by the caller from a second net
        helper = _random_model(rng)
        if helper.spec.input_dim == model.spec.input_dim:
            boot = bd_target(rng.normal(0.0, 1.0, X.shape[0]),
                             nn.mlp_forward(helper, X)[:, 0], 0.99)
            specs.append(("squared", boot, None))
        for loss, targets, tau in specs:
            rep = nn.check_param_gradients(model, X, targets, loss, tau, h, tol)
            if rep.max_relative_error > worst:
                worst = rep.max_relative_error
                worst_what = f"trial {trial} {loss} params {rep.worst_parameter_index}"
            if not rep.passed:
                return False, f"param-gradient mismatch {rep.max_relative_error:.3e} at {worst_what}"
        rep = nn.check_input_gradients(model, X, h, tol)
        if rep.max_relative_error > worst:
            worst = rep.max_relative_error
            worst_what = f"trial {trial} input {rep.worst_parameter_index}"
        if not rep.passed:
            return False, f"input-gradient mismatch {rep.max_relative_error:.3e} at {worst_what}"
    return True, f"max relative error {worst:.3e} ({worst_what})"


def random_qp_problem(rng: np.random.Generator, m: int) -> QpProblem:
    """Random instance including degenerate shapes: zero b coordinates, all-zero
    b, u_ref outside the box, and a exactly 0."""
    lo = rng.uniform(-2.0, -0.5, m)
    hi = rng.uniform(0.5, 2.0, m)
    u_ref = rng.normal(0.0, 1.5, m)
    b = rng.normal(0.0, 1.0, m)
    b[rng.random(m) < 0.2] = 0.0
    if rng.random() < 0.05:
        b[:] = 0.0
    a = float(rng.normal(0.0, 1.0))
    if rng.random() < 0.05:
        a = 0.0
    return QpProblem(u_ref, a, b, lo, hi)


def run_qp_check(n_instances: int = 1000, seed: int = 0,
                 u_tol: float = 1e-6, obj_tol: float = 1e-10):
    """qp_solve vs the exhaustive oracle on random instances for m in {1,2,3}."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst_u, worst_obj = 0.0, 0.0
    for m in (1, 2, 3):
        for i in range(n_instances):
            p = random_qp_problem(rng, m)
            sol = qp_solve(p)
            ora = qp_oracle(p)
            s_inf = sol.status is QpStatus.INFEASIBLE
            o_inf = ora.status is QpStatus.INFEASIBLE
            if s_inf != o_inf:
                return False, f"m={m} instance {i}: feasibility verdicts differ ({sol.status} vs {ora.status})"
            if s_inf:
                if not np.array_equal(sol.u, ora.u):
                    return False, f"m={m} instance {i}: best-effort actions differ"
                continue
            du = float(np.linalg.norm(sol.u - ora.u))
            dobj = abs(p.objective(sol.u) - p.objective(ora.u))
            worst_u = max(worst_u, du)
            worst_obj = max(worst_obj, dobj)
            if du > u_tol or dobj > obj_tol:
                return False, (f"m={m} instance {i}: gap u={du:.3e} obj={dobj:.3e} "
                               f"(a={p.a}, b={p.b})")
    return True, f"max gaps: u {worst_u:.3e}, objective {worst_obj:.3e}"


def run_lemma_check(n_samples: int = 100_000, seed: int = 0):
    """min(a/dt, b) = 0 iff min(a, b) = 0 for dt in (0, 1]: exercised both with
    one of (a, b) forced to zero and with neither zero."""
    rng = np.random.Generator(np.random.PCG64(seed))
    for i in range(n_samples):
        dt = float(rng.uniform(1e-6, 1.0))
        a = float(rng.uniform(-3.0, 3.0))
        b = float(rng.uniform(-3.0, 3.0))
        # keep nonzero draws clearly nonzero so the check is exact in floats
        if abs(a) < 1e-6:
            a = 1e-6 if a >= 0 else -1e-6
        if abs(b) < 1e-6:
            b = 1e-6 if b >= 0 else -1e-6
        which = i % 4
        if which == 0:
            a = 0.0
        elif which == 1:
            b = 0.0
        scaled_zero = min(a / dt, b) == 0.0
        plain_zero = min(a, b) == 0.0
        if scaled_zero != plain_zero:
            return False, f"sample {i}: a={a}, b={b}, dt={dt}"
    return True, f"{n_samples} samples, equivalence held on every draw"
