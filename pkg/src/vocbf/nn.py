"""Minimal dense-MLP engine: deterministic init, exact reverse-mode gradients,
Adam, expectile loss, input gradients, and a text checkpoint format.

All parameters live in one flat float64 vector (layer order W0, b0, W1, b1, ...,
row-major), which keeps Adam a single vectorized update and lets the jitted
kernels consume the same memory directly. Layers are affine with ReLU on hidden
layers and identity on the output layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = "VOCBF-MLP v1"


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: layer widths (input, hidden..., output), ReLU hidden, seeded init."""

    layer_widths: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError(f"need at least 2 layer widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]


def _param_offsets(widths):
    """Flat-vector offset of each tensor, order W0, b0, W1, b1, ..."""
    offsets = []
    pos = 0
    for l in range(len(widths) - 1):
        nin, nout = widths[l], widths[l + 1]
        offsets.append(pos)
        pos += nout * nin
        offsets.append(pos)
        pos += nout
    return offsets, pos


@dataclass
class MlpModel:
    """Parameters plus Adam state for one MLP."""

    spec: MlpSpec
    flat: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int = 0
    extras: dict = field(default_factory=dict)  # checkpoint metadata (role, dt, ...)

    def __post_init__(self):
        offsets, total = _param_offsets(self.spec.layer_widths)
        if self.flat.shape != (total,):
            raise ValueError(f"flat parameter vector has shape {self.flat.shape}, expected ({total},)")
        self._offsets = offsets
        self._n_params = total

    @property
    def n_params(self) -> int:
        return self._n_params

    def weight(self, l: int) -> np.ndarray:
        """View of layer l's weight matrix, shape (n_out, n_in)."""
        w = self.spec.layer_widths
        o = self._offsets[2 * l]
        return self.flat[o:o + w[l + 1] * w[l]].reshape(w[l + 1], w[l])

    def bias(self, l: int) -> np.ndarray:
        w = self.spec.layer_widths
        o = self._offsets[2 * l + 1]
        return self.flat[o:o + w[l + 1]]

    def widths_array(self) -> np.ndarray:
        return np.asarray(self.spec.layer_widths, dtype=np.int64)

    def offsets_array(self) -> np.ndarray:
        return np.asarray(self._offsets, dtype=np.int64)

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, self.flat.copy(), self.adam_m.copy(),
                        self.adam_v.copy(), self.adam_t, dict(self.extras))

    def param_index_path(self, flat_index: int) -> str:
        """Human-readable layer/row/col path of one flat parameter index."""
        w = self.spec.layer_widths
        for l in range(self.spec.n_layers):
            o_w, o_b = self._offsets[2 * l], self._offsets[2 * l + 1]
            if flat_index < o_b:
                r, c = divmod(flat_index - o_w, w[l])
                return f"layer{l}/W[{r},{c}]"
            if flat_index < o_b + w[l + 1]:
                return f"layer{l}/b[{flat_index - o_b}]"
        raise IndexError(flat_index)


def mlp_init(spec: MlpSpec) -> MlpModel:
    """Fresh model: weights uniform in +/-sqrt(6/(fan_in+fan_out)) from the spec seed,
    biases zero, Adam state zeroed. Same spec => bit-identical parameters."""
    widths = spec.layer_widths
    _, total = _param_offsets(widths)
    flat = np.zeros(total, dtype=np.float64)
    model = MlpModel(spec, flat, np.zeros(total), np.zeros(total))
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    for l in range(spec.n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        model.weight(l)[:] = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        # biases stay zero
    return model


def _as_batch(model: MlpModel, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input dim {model.spec.input_dim}")
    return x, single


def forward_acts(model: MlpModel, X: np.ndarray) -> list:
    """Forward pass keeping every layer's activation; acts[0] is the input,
    acts[-1] the output. Needed by the backward pass."""
    acts = [X]
    a = X
    L = model.spec.n_layers
    for l in range(L):
        z = a @ model.weight(l).T + model.bias(l)
        if l < L - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
        a = z
    return acts


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Evaluate the network; accepts a single vector or a (batch, dim) array."""
    X, single = _as_batch(model, x)
    out = forward_acts(model, X)[-1]
    return out[0] if single else out


def backward(model: MlpModel, acts: list, d_out: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of sum(d_out * output) w.r.t. all parameters (flat)."""
    grad = np.zeros(model.n_params)
    gm = MlpModel(model.spec, grad, np.empty(0), np.empty(0))  # reuse views
    delta = d_out
    for l in range(model.spec.n_layers - 1, -1, -1):
        gm.weight(l)[:] = delta.T @ acts[l]
        gm.bias(l)[:] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weight(l)) * (acts[l] > 0.0)
    return grad


def expectile_loss(y: float, tau: float):
    """Asymmetric squared error |tau - 1(y < 0)| * y^2; tau=0.5 is half the squared error."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y < 0.0, 1.0 - tau, tau)
    out = w * y * y
    return float(out) if out.ndim == 0 else out


def value_and_param_grad(model: MlpModel, X, targets, loss: str = "squared",
                         tau: float = None) -> tuple:
    """Batch-mean loss and its exact parameter gradient (flat vector).

    loss="squared":   mean (pred - target)^2
    loss="expectile": mean |tau - 1(y<0)| y^2 with y = target - pred

    Targets are caller-supplied (plain labels or bootstrapped composites alike).
    """
    X, _ = _as_batch(model, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if model.spec.output_dim != 1:
        raise ValueError("scalar losses require output dim 1")
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape[0] != X.shape[0]:
        raise ValueError(f"got {t.shape[0]} targets for batch of {X.shape[0]}")
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite target")
    acts = forward_acts(model, X)
    pred = acts[-1][:, 0]
    n = X.shape[0]
    if loss == "squared":
        r = pred - t
        value = float(np.mean(r * r))
        d_pred = 2.0 * r / n
    elif loss == "expectile":
        if tau is None or not 0.0 < tau < 1.0:
            raise ValueError(f"expectile loss needs tau in (0,1), got {tau}")
        y = t - pred
        w = np.where(y < 0.0, 1.0 - tau, tau)
        value = float(np.mean(w * y * y))
        d_pred = -2.0 * w * y / n
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, backward(model, acts, d_pred[:, None])


def input_grad(model: MlpModel, x) -> np.ndarray:
    """Exact gradient of the scalar output w.r.t. the input(s); output dim must be 1."""
    if model.spec.output_dim != 1:
        raise ValueError("input_grad requires output dim 1")
    X, single = _as_batch(model, x)
    acts = forward_acts(model, X)
    delta = np.ones((X.shape[0], 1))
    for l in range(model.spec.n_layers - 1, -1, -1):
        delta = delta @ model.weight(l)
        if l > 0:
            delta = delta * (acts[l] > 0.0)
    return delta[0] if single else delta


def adam_step(model: MlpModel, grad: np.ndarray, learning_rate: float) -> MlpModel:
    """In-place Adam update (beta1=0.9, beta2=0.999, eps=1e-8); rejects non-finite grads."""
    if learning_rate <= 0.0:
        raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.flat.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {model.flat.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient; update rejected")
    model.adam_t += 1
    t = model.adam_t
    model.adam_m *= ADAM_BETA1
    model.adam_m += (1.0 - ADAM_BETA1) * grad
    model.adam_v *= ADAM_BETA2
    model.adam_v += (1.0 - ADAM_BETA2) * grad * grad
    m_hat = model.adam_m / (1.0 - ADAM_BETA1 ** t)
    v_hat = model.adam_v / (1.0 - ADAM_BETA2 ** t)
    model.flat -= learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    if not np.all(np.isfinite(model.flat)):
        raise ValueError("non-finite parameters after Adam update")
    return model


def polyak_update(target: MlpModel, online: MlpModel, rho: float) -> MlpModel:
    """target <- (1-rho)*target + rho*online, elementwise; rho=1 copies, rho=0 is a no-op."""
    if target.spec.layer_widths != online.spec.layer_widths:
        raise ValueError("polyak_update requires identical specs")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0,1], got {rho}")
    target.flat *= 1.0 - rho
    target.flat += rho * online.flat
    return target


@dataclass
class GradReport:
    """Result of a finite-difference gradient check."""

    max_relative_error: float
    worst_parameter_index: str
    passed: bool


def _rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))


def check_param_gradients(model: MlpModel, X, targets, loss: str = "squared",
                          tau: float = None, h: float = 1e-5,
                          tol: float = 1e-4) -> GradReport:
    """Compare value_and_param_grad against central finite differences."""
    X = np.asarray(X, dtype=np.float64)
    _, analytic = value_and_param_grad(model, X, targets, loss, tau)
    fd = np.empty_like(analytic)
    for i in range(model.n_params):
        orig = model.flat[i]
        model.flat[i] = orig + h
        up, _ = value_and_param_grad(model, X, targets, loss, tau)
        model.flat[i] = orig - h
        dn, _ = value_and_param_grad(model, X, targets, loss, tau)
        model.flat[i] = orig
        fd[i] = (up - dn) / (2.0 * h)
    errs = _rel_err(analytic, fd)
    worst = int(np.argmax(errs))
    err = float(errs[worst])
    return GradReport(err, model.param_index_path(worst), err <= tol)


def check_input_gradients(model: MlpModel, X, h: float = 1e-5,
                          tol: float = 1e-4) -> GradReport:
    """Compare input_grad against central finite differences at each row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    analytic = input_grad(model, X)
    worst_err, worst_path = 0.0, "none"
    for r in range(X.shape[0]):
        x = X[r].copy()
        for j in range(x.shape[0]):
            orig = x[j]
            x[j] = orig + h
            up = float(mlp_forward(model, x)[0])
            x[j] = orig - h
            dn = float(mlp_forward(model, x)[0])
            x[j] = orig
            err = float(_rel_err(analytic[r, j], (up - dn) / (2.0 * h)))
            if err > worst_err:
                worst_err, worst_path = err, f"point{r}/x[{j}]"
    return GradReport(worst_err, worst_path, worst_err <= tol)


def _fmt_floats(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in a.ravel())


def save_checkpoint(model: MlpModel, path, role: str = None) -> None:
    """Write the versioned text checkpoint; doubles rendered shortest-round-trip."""
    spec = model.spec
    extras = dict(model.extras)
    if role is not None:
        extras["role"] = role
    extra_s = "".join(f" {k}={v}" for k, v in sorted(extras.items()))
    lines = [CHECKPOINT_MAGIC,
             f"spec widths={','.join(str(w) for w in spec.layer_widths)}"
             f" activation={spec.activation} seed={spec.seed}{extra_s}"]
    for prefix, vec in (("", model.flat), ("m", model.adam_m), ("v", model.adam_v)):
        if prefix == "m":
            lines.append(f"adam t={model.adam_t}")
        gm = MlpModel(spec, vec, np.empty(0), np.empty(0))
        for l in range(spec.n_layers):
            W, b = gm.weight(l), gm.bias(l)
            lines.append(f"{prefix}W{l} {W.shape[0]} {W.shape[1]} {_fmt_floats(W)}")
            lines.append(f"{prefix}b{l} {b.shape[0]} {_fmt_floats(b)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_tensor_line(line, lineno, name, shape):
    parts = line.split()
    want = [name] + [str(s) for s in shape]
    if parts[:1 + len(shape)] != want:
        raise CheckpointError(f"line {lineno}: expected tensor {' '.join(want)!r}, got {line[:60]!r}")
    n = int(np.prod(shape))
    vals = parts[1 + len(shape):]
    if len(vals) != n:
        raise CheckpointError(f"line {lineno}: tensor {name} has {len(vals)} values, expected {n}")
    try:
        return np.array([float(v) for v in vals], dtype=np.float64)
    except ValueError as e:
        raise CheckpointError(f"line {lineno}: bad float in tensor {name}: {e}") from None


def load_checkpoint(path) -> MlpModel:
    """Read a checkpoint written by save_checkpoint; round-trip is value-exact."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"line 1: bad magic, expected {CHECKPOINT_MAGIC!r}")
    if len(lines) < 2 or not lines[1].startswith("spec "):
        raise CheckpointError("line 2: missing spec line")
    fields = {}
    for tok in lines[1][5:].split():
        if "=" not in tok:
            raise CheckpointError(f"line 2: malformed spec token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    try:
        widths = tuple(int(w) for w in fields.pop("widths").split(","))
        activation = fields.pop("activation")
        seed = int(fields.pop("seed"))
    except KeyError as e:
        raise CheckpointError(f"line 2: spec line missing key {e}") from None
    spec = MlpSpec(widths, activation, seed)
    model = mlp_init(spec)
    model.extras = fields

    idx = 2
    adam_t = 0
    for prefix, vec in (("", model.flat), ("m", model.adam_m), ("v", model.adam_v)):
        if prefix == "m":
            if idx >= len(lines) or not lines[idx].startswith("adam t="):
                raise CheckpointError(f"line {idx + 1}: expected 'adam t=...'")
            adam_t = int(lines[idx].split("=", 1)[1])
            idx += 1
        gm = MlpModel(spec, vec, np.empty(0), np.empty(0))
        for l in range(spec.n_layers):
            for name, view in ((f"{prefix}W{l}", gm.weight(l)), (f"{prefix}b{l}", gm.bias(l))):
                if idx >= len(lines):
                    raise CheckpointError(f"line {idx + 1}: truncated file, expected tensor {name}")
                view.ravel()[:] = _parse_tensor_line(lines[idx], idx + 1, name, view.shape)
                idx += 1
    model.adam_t = adam_t
    return model
