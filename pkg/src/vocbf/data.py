"""Offline transition storage: column arrays, a versioned CSV wire format,
episode-level splitting, and uniform minibatch sampling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

DATASET_MAGIC = "# VOCBF-DATASET v1"


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Transition:
    """One logged step; `ell_*` are cached safety margins."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    episode_id: int
    step_id: int
    ell_x: float
    ell_x_next: float


@dataclass
class TransitionSet:
    """Ordered transitions held as column arrays for vectorized training."""

    episode_ids: np.ndarray
    step_ids: np.ndarray
    X: np.ndarray
    U: np.ndarray
    X_next: np.ndarray
    ell_x: np.ndarray
    ell_x_next: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.episode_ids)
        if n == 0:
            raise ValueError("TransitionSet may not be empty")
        if not (len(self.X) == len(self.U) == len(self.X_next) == len(self.ell_x)
                == len(self.ell_x_next) == len(self.step_ids) == n):
            raise ValueError("column arrays have inconsistent lengths")
        if self.X.shape[1] != self.X_next.shape[1]:
            raise ValueError("state dims of X and X_next differ")

    def __len__(self) -> int:
        return len(self.episode_ids)

    @property
    def state_dim(self) -> int:
        return self.X.shape[1]

    @property
    def control_dim(self) -> int:
        return self.U.shape[1]

    def transition(self, i: int) -> Transition:
        return Transition(self.X[i], self.U[i], self.X_next[i],
                          int(self.episode_ids[i]), int(self.step_ids[i]),
                          float(self.ell_x[i]), float(self.ell_x_next[i]))

    def subset(self, mask) -> "TransitionSet":
        return TransitionSet(self.episode_ids[mask], self.step_ids[mask],
                             self.X[mask], self.U[mask], self.X_next[mask],
                             self.ell_x[mask], self.ell_x_next[mask], dict(self.metadata))

    @property
    def dt(self) -> float:
        return float(self.metadata["dt"])


def _meta_value(s: str):
    try:
        return int(s)
    except ValueError:
        try:
            return float(s)
        except ValueError:
            return s


def save(tset: TransitionSet, path) -> None:
    """Write the CSV wire format; doubles rendered shortest-round-trip."""
    n, m = tset.state_dim, tset.control_dim
    meta = " ".join(f"{k}={v!r}" if isinstance(v, str) else f"{k}={v}"
                    for k, v in sorted(tset.metadata.items()))
    header = (["episode", "step"]
              + [f"x{i + 1}" for i in range(n)]
              + [f"u{i + 1}" for i in range(m)]
              + [f"xp{i + 1}" for i in range(n)])
    lines = [f"{DATASET_MAGIC} state_dim={n} control_dim={m} {meta}", ",".join(header)]
    for i in range(len(tset)):
        row = [str(int(tset.episode_ids[i])), str(int(tset.step_ids[i]))]
        row += [repr(float(v)) for v in tset.X[i]]
        row += [repr(float(v)) for v in tset.U[i]]
        row += [repr(float(v)) for v in tset.X_next[i]]
        lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load(path, safety_fn=None) -> TransitionSet:
    """Read a dataset file; safety caches are recomputed from the recorded
    obstacle geometry (dubins_agv) or from `safety_fn(X) -> ell` for other envs."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(DATASET_MAGIC):
        raise DatasetFormatError(f"line 1: expected magic {DATASET_MAGIC!r}")
    meta = {}
    for tok in lines[0][len(DATASET_MAGIC):].split():
        if "=" not in tok:
            raise DatasetFormatError(f"line 1: malformed metadata token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = _meta_value(v.strip("'\""))
    try:
        n = int(meta.pop("state_dim"))
        m = int(meta.pop("control_dim"))
    except KeyError as e:
        raise DatasetFormatError(f"line 1: missing {e}") from None
    if len(lines) < 3:
        raise DatasetFormatError("file has no data rows")
    expected_cols = 2 + 2 * n + m

    rows = len(lines) - 2
    episode_ids = np.empty(rows, dtype=np.int64)
    step_ids = np.empty(rows, dtype=np.int64)
    X = np.empty((rows, n))
    U = np.empty((rows, m))
    X_next = np.empty((rows, n))
    for r, line in enumerate(lines[2:]):
        parts = line.split(",")
        if len(parts) != expected_cols:
            raise DatasetFormatError(
                f"line {r + 3}: truncated record, {len(parts)} fields, expected {expected_cols}")
        try:
            episode_ids[r] = int(parts[0])
            step_ids[r] = int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except ValueError as e:
            raise DatasetFormatError(f"line {r + 3}: {e}") from None
        X[r] = vals[:n]
        U[r] = vals[n:n + m]
        X_next[r] = vals[n + m:]

    if safety_fn is None:
        if meta.get("env") == "dubins_agv":
            ox = float(meta.get("obstacle_x", 0.0))
            oy = float(meta.get("obstacle_y", 0.0))
            radius = float(meta.get("obstacle_radius", 0.2))
            safety_fn = lambda pts: np.sqrt((pts[:, 0] - ox) ** 2
                                            + (pts[:, 1] - oy) ** 2) - radius
        else:
            raise DatasetFormatError(
                f"env {meta.get('env')!r} needs an explicit safety_fn to rebuild caches")
    return TransitionSet(episode_ids, step_ids, X, U, X_next,
                         safety_fn(X), safety_fn(X_next), meta)


def content_hash(path) -> str:
    """Content hash of a dataset file, stamped into result-table headers."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def split(tset: TransitionSet, test_fraction: float, seed: int):
    """Split by episode (never by transition) into (train, test), seeded."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    episodes = np.unique(tset.episode_ids)
    if len(episodes) < 2:
        raise ValueError("need at least 2 episodes to split")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(episodes)
    n_test = min(len(episodes) - 1, max(1, int(round(test_fraction * len(episodes)))))
    test_eps = set(perm[:n_test].tolist())
    mask = np.array([e in test_eps for e in tset.episode_ids.tolist()])
    return tset.subset(~mask), tset.subset(mask)


@dataclass(frozen=True)
class Minibatch:
    indices: np.ndarray
    X: np.ndarray
    U: np.ndarray
    X_next: np.ndarray
    ell_x: np.ndarray
    ell_x_next: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def sample_minibatch(tset: TransitionSet, batch_size: int, rng: np.random.Generator) -> Minibatch:
    """Uniform sampling with replacement; deterministic per rng state."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = rng.integers(0, len(tset), size=batch_size)
    return Minibatch(idx, tset.X[idx], tset.U[idx], tset.X_next[idx],
                     tset.ell_x[idx], tset.ell_x_next[idx])
