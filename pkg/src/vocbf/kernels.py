"""Hot numeric kernels: per-state MLP evaluation, the box-constrained QP,
Dubins stepping, dataset generation, and the closed-loop rollout.

Every function here is numba-compatible numpy and decorated with
:func:`vocbf.accel.njit`; with ``VOCBF_DISABLE_NUMBA=1`` the same source runs
as the pure-numpy fallback. MLP parameters arrive as the flat vector plus the
widths/offsets arrays from :class:`vocbf.nn.MlpModel`.
"""

import math

import numpy as np

from .accel import njit

# QP status codes (mirrored by vocbf.qp.QpStatus)
QP_INACTIVE = 0
QP_ACTIVE = 1
QP_INFEASIBLE = 2

# reference-policy codes for the rollout kernel
PI_GOTO_GOAL = 0
PI_BEHAVIOR_CLONED = 1

# dynamics-provider codes
DYN_ANALYTIC = 0
DYN_LEARNED = 1


@njit
def wrap_angle(phi):
    """Wrap to [-pi, pi)."""
    return (phi + math.pi) % (2.0 * math.pi) - math.pi


@njit
def agv_step_core(x1, x2, phi, u, v, dt):
    """One exact Euler step of the Dubins car; heading wraps to [-pi, pi)."""
    x1n = x1 + dt * v * math.cos(phi)
    x2n = x2 + dt * v * math.sin(phi)
    phin = wrap_angle(phi + dt * u)
    return x1n, x2n, phin


@njit
def safety_ell(x1, x2, ox, oy, radius):
    """Signed margin to the obstacle: distance to center minus radius."""
    return math.sqrt((x1 - ox) ** 2 + (x2 - oy) ** 2) - radius


@njit
def goal_reward(x1, x2, gx, gy, scale, eps):
    return scale / (math.sqrt((x1 - gx) ** 2 + (x2 - gy) ** 2) + eps)


@njit
def mlp_forward_flat(flat, widths, offs, x):
    """Single-input MLP forward (ReLU hidden, identity output)."""
    n_layers = widths.shape[0] - 1
    a = x
    for l in range(n_layers):
        nin = widths[l]
        nout = widths[l + 1]
        W = flat[offs[2 * l]:offs[2 * l] + nout * nin].reshape(nout, nin)
        b = flat[offs[2 * l + 1]:offs[2 * l + 1] + nout]
        z = np.dot(W, a) + b
        if l < n_layers - 1:
            z = np.maximum(z, 0.0)
        a = z
    return a


@njit
def mlp_scalar_and_input_grad(flat, widths, offs, x):
    """Scalar-output MLP value and its exact input gradient."""
    n_layers = widths.shape[0] - 1
    acts = [x]
    a = x
    for l in range(n_layers):
        nin = widths[l]
        nout = widths[l + 1]
        W = flat[offs[2 * l]:offs[2 * l] + nout * nin].reshape(nout, nin)
        b = flat[offs[2 * l + 1]:offs[2 * l + 1] + nout]
        z = np.dot(W, a) + b
        if l < n_layers - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
        a = z
    value = acts[n_layers][0]

    l = n_layers - 1
    nin = widths[l]
    nout = widths[l + 1]
    W = flat[offs[2 * l]:offs[2 * l] + nout * nin].reshape(nout, nin)
    g = W[0].copy()
    for l in range(n_layers - 2, -1, -1):
        nin = widths[l]
        nout = widths[l + 1]
        W = flat[offs[2 * l]:offs[2 * l] + nout * nin].reshape(nout, nin)
        masked = np.where(acts[l + 1] > 0.0, g, 0.0)
        g = np.dot(masked, W)
    return value, g


@njit
def barrier_value_and_state_grad(flat, widths, offs, encode_heading, x1, x2, phi):
    """Barrier value and gradient w.r.t. the raw state (x1, x2, phi).

    With encode_heading the net sees (x1, x2, sin phi, cos phi) and the heading
    component is chain-ruled back: dB/dphi = dB/dsin * cos - dB/dcos * sin.
    """
    if encode_heading == 1:
        feat = np.empty(4)
        feat[0] = x1
        feat[1] = x2
        s = math.sin(phi)
        c = math.cos(phi)
        feat[2] = s
        feat[3] = c
        value, gf = mlp_scalar_and_input_grad(flat, widths, offs, feat)
        g = np.empty(3)
        g[0] = gf[0]
        g[1] = gf[1]
        g[2] = gf[2] * c - gf[3] * s
        return value, g
    raw = np.empty(3)
    raw[0] = x1
    raw[1] = x2
    raw[2] = phi
    value, g = mlp_scalar_and_input_grad(flat, widths, offs, raw)
    return value, g.copy()


@njit
def learned_fg(flat, widths, offs, x1, x2, phi):
    """Drift and control columns of the learned surrogate at one state (m=1)."""
    feat = np.empty(4)
    feat[0] = x1
    feat[1] = x2
    feat[2] = math.sin(phi)
    feat[3] = math.cos(phi)
    out = mlp_forward_flat(flat, widths, offs, feat)
    return out[:3].copy(), out[3:6].copy()


@njit
def analytic_fg_core(phi, v):
    f = np.empty(3)
    f[0] = v * math.cos(phi)
    f[1] = v * math.sin(phi)
    f[2] = 0.0
    g = np.zeros(3)
    g[2] = 1.0
    return f, g


@njit
def goto_goal_core(x1, x2, phi, k, gx, gy, u_bound):
    """Proportional steering toward the goal bearing, clamped to the control box."""
    err = wrap_angle(math.atan2(gy - x2, gx - x1) - phi)
    return min(max(k * err, -u_bound), u_bound)


@njit
def bc_actor_core(flat, widths, offs, x1, x2, phi, u_bound):
    feat = np.empty(4)
    feat[0] = x1
    feat[1] = x2
    feat[2] = math.sin(phi)
    feat[3] = math.cos(phi)
    out = mlp_forward_flat(flat, widths, offs, feat)
    return u_bound * math.tanh(out[0])


@njit
def _qp_constraint_at(u_ref, a, b, lo, hi, lam):
    """Constraint value a + b.u(lam) with u(lam) = box-clip(u_ref + (lam/2) b)."""
    val = a
    for i in range(u_ref.shape[0]):
        ui = min(max(u_ref[i] + 0.5 * lam * b[i], lo[i]), hi[i])
        val += b[i] * ui
    return val


@njit
def qp_solve_core(u_ref, a, b, lo, hi):
    """Exact minimizer of ||u - u_ref||^2 s.t. a + b.u >= 0, u in the box.

    Returns (u, status, lam, constraint_value). The dual map
    lam -> a + b.clip(u_ref + (lam/2) b) is continuous, piecewise-linear and
    nondecreasing; the root is bracketed geometrically, bisected, then polished
    in closed form on the identified linear piece.
    """
    m = u_ref.shape[0]
    u = np.empty(m)
    for i in range(m):
        u[i] = min(max(u_ref[i], lo[i]), hi[i])
    h0 = a
    for i in range(m):
        h0 += b[i] * u[i]
    if h0 >= 0.0:
        return u, QP_INACTIVE, 0.0, h0

    # largest achievable constraint value over the box
    sup = a
    for i in range(m):
        sup += b[i] * hi[i] if b[i] > 0.0 else b[i] * lo[i]
    if sup < 0.0:
        # best effort: maximize b.u, ties broken toward u_ref on b_i = 0 coords
        for i in range(m):
            if b[i] > 0.0:
                u[i] = hi[i]
            elif b[i] < 0.0:
                u[i] = lo[i]
            else:
                u[i] = min(max(u_ref[i], lo[i]), hi[i])
        cval = a
        for i in range(m):
            cval += b[i] * u[i]
        return u, QP_INFEASIBLE, 0.0, cval

    # bracket the root: h(0) < 0 <= sup, grow lam until h(lam) >= 0
    lam_hi = 1.0
    for _ in range(200):
        if _qp_constraint_at(u_ref, a, b, lo, hi, lam_hi) >= 0.0:
            break
        lam_hi *= 2.0
    lam_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lam_lo + lam_hi)
        if _qp_constraint_at(u_ref, a, b, lo, hi, mid) < 0.0:
            lam_lo = mid
        else:
            lam_hi = mid
        if lam_hi - lam_lo <= 1e-16 * (1.0 + lam_hi):
            break
    lam = lam_hi

    # closed-form root of the linear piece identified at lam
    num = a
    den = 0.0
    for i in range(m):
        ui = u_ref[i] + 0.5 * lam * b[i]
        if ui <= lo[i]:
            num += b[i] * lo[i]
        elif ui >= hi[i]:
            num += b[i] * hi[i]
        else:
            num += b[i] * u_ref[i]
            den += 0.5 * b[i] * b[i]
    if den > 0.0:
        lam_star = -num / den
        if lam_star >= 0.0:
            v_star = _qp_constraint_at(u_ref, a, b, lo, hi, lam_star)
            if abs(v_star) <= abs(_qp_constraint_at(u_ref, a, b, lo, hi, lam)):
                lam = lam_star

    cval = a
    for i in range(m):
        u[i] = min(max(u_ref[i] + 0.5 * lam * b[i], lo[i]), hi[i])
        cval += b[i] * u[i]
    return u, QP_ACTIVE, lam, cval


@njit
def generate_episode_core(x0, us, v, dt, ox, oy, radius, X, U, X_next, ell_x, ell_x_next):
    """Roll one data-collection episode (no termination on collision) into arrays."""
    x1 = x0[0]
    x2 = x0[1]
    phi = x0[2]
    for t in range(us.shape[0]):
        X[t, 0] = x1
        X[t, 1] = x2
        X[t, 2] = phi
        U[t, 0] = us[t]
        ell_x[t] = safety_ell(x1, x2, ox, oy, radius)
        x1, x2, phi = agv_step_core(x1, x2, phi, us[t], v, dt)
        X_next[t, 0] = x1
        X_next[t, 1] = x2
        X_next[t, 2] = phi
        ell_x_next[t] = safety_ell(x1, x2, ox, oy, radius)


@njit
def agv_rollout(x0, horizon, noise, noise_sigma,
                v, dt, u_bound, ox, oy, radius, gx, gy, reward_scale, reward_eps,
                pi_kind, k_gain, pgx, pgy, bc_flat, bc_widths, bc_offs,
                use_filter, th_flat, th_widths, th_offs, th_encode, alpha,
                dyn_mode, dyn_flat, dyn_widths, dyn_offs):
    """Closed-loop AGV episode.

    Visited states are checked against the safety margin on arrival; the episode
    stops at the first violation. Reward accrues for every pre-violation visited
    state except the final arrival state. Control = clamp(policy + sigma*noise).

    Returns (first_violation_step, total_reward, steps_taken,
    infeasible_steps, active_steps); first_violation_step is -1 when safe.
    """
    x1 = x0[0]
    x2 = x0[1]
    phi = x0[2]
    total_reward = 0.0
    first_violation = -1
    infeasible = 0
    active = 0
    steps = 0
    lo = np.empty(1)
    hi = np.empty(1)
    lo[0] = -u_bound
    hi[0] = u_bound
    u_ref_arr = np.empty(1)
    b_arr = np.empty(1)
    for t in range(horizon + 1):
        if safety_ell(x1, x2, ox, oy, radius) < 0.0:
            first_violation = t
            break
        if t == horizon:
            break
        total_reward += goal_reward(x1, x2, gx, gy, reward_scale, reward_eps)

        if pi_kind == PI_BEHAVIOR_CLONED:
            u_ref = bc_actor_core(bc_flat, bc_widths, bc_offs, x1, x2, phi, u_bound)
        else:
            u_ref = goto_goal_core(x1, x2, phi, k_gain, pgx, pgy, u_bound)

        if use_filter == 1:
            bval, bgrad = barrier_value_and_state_grad(
                th_flat, th_widths, th_offs, th_encode, x1, x2, phi)
            if dyn_mode == DYN_LEARNED:
                f, g = learned_fg(dyn_flat, dyn_widths, dyn_offs, x1, x2, phi)
            else:
                f, g = analytic_fg_core(phi, v)
            lfb = bgrad[0] * f[0] + bgrad[1] * f[1] + bgrad[2] * f[2]
            lgb = bgrad[0] * g[0] + bgrad[1] * g[1] + bgrad[2] * g[2]
            u_ref_arr[0] = u_ref
            b_arr[0] = lgb
            u_sol, status, _, _ = qp_solve_core(u_ref_arr, lfb + alpha * bval, b_arr, lo, hi)
            if status == QP_INFEASIBLE:
                infeasible += 1
            elif status == QP_ACTIVE:
                active += 1
            u_cmd = u_sol[0]
        else:
            u_cmd = min(max(u_ref, -u_bound), u_bound)

        if noise_sigma > 0.0:
            u_cmd = min(max(u_cmd + noise_sigma * noise[t], -u_bound), u_bound)
        x1, x2, phi = agv_step_core(x1, x2, phi, u_cmd, v, dt)
        steps += 1
    return first_violation, total_reward, steps, infeasible, active


# reusable dummies for unused kernel arguments
DUMMY_FLAT = np.zeros(1, dtype=np.float64)
DUMMY_WIDTHS = np.array([1, 1], dtype=np.int64)
DUMMY_OFFS = np.array([0, 0], dtype=np.int64)
