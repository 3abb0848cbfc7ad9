"""Run configuration: flat `key = value` text with [sections], a typed registry
of known keys (unknown keys are rejected), CLI overrides, and a deterministic
resolved-config writer stamped next to every run's outputs.
"""

from __future__ import annotations

from .barrier import BarrierTrainConfig
from .dubins import AgvConfig
from .dynamics import DynamicsTrainConfig
from .policy import BcTrainConfig, GoToGoal


class ConfigError(ValueError):
    """Bad config file, unknown key, or unparsable value."""


DEFAULTS = {
    "env.v": 0.6,
    "env.dt": 0.01,
    "env.u_bound": 1.0,
    "env.obstacle_x": 0.0,
    "env.obstacle_y": 0.0,
    "env.obstacle_radius": 0.2,
    "env.goal_x": 0.7,
    "env.goal_y": 0.7,
    "env.reward_scale": 0.1,
    "env.reward_eps": 0.1,
    "env.horizon": 500,
    "dataset.n_transitions": 75000,
    "dataset.path": "",
    "barrier.gamma": 0.99,
    "barrier.tau": 0.99,
    "barrier.lr": 3e-5,
    "barrier.batch_size": 256,
    "barrier.epochs": 100,
    "barrier.target_polyak_rho": 0.005,
    "barrier.use_target_net": True,
    "barrier.hidden": (256, 256),
    "barrier.encode_heading": True,
    "barrier.eq8_literal": False,
    "dynamics.lr": 3e-5,
    "dynamics.batch_size": 128,
    "dynamics.epochs": 400,
    "dynamics.hidden": (64, 64, 64),
    "dynamics.test_fraction": 0.1,
    "bc.lr": 1e-3,
    "bc.batch_size": 256,
    "bc.epochs": 30,
    "bc.hidden": (128, 128),
    "cbvf_mb.lr": 3e-5,
    "cbvf_mb.batch_size": 256,
    "cbvf_mb.epochs": 30,
    "cbvf_mb.n_action_samples": 16,
    "eval.n_episodes": 500,
    "eval.seeds": (11, 13, 17, 19, 23),
    "eval.ssv_samples": 10000,
    "eval.taus": (0.5, 0.7, 0.8, 0.9, 0.99),
    "eval.noise_levels": (0.0, 0.05, 0.1, 0.2),
    "eval.alpha": 1.0,
    "eval.pi_ref": "goto_goal",
    "eval.goto_gain": 2.0,
    "eval.threads": 1,
    "run.master_seed": 42,
    "run.out_root": "runs",
}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0])
            return tuple(elem(v) for v in raw.split(",") if v.strip() != "")
        return raw
    except ValueError as e:
        raise ConfigError(f"key {key}: {e}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Resolved configuration; every key present with its final value."""

    def __init__(self, values: dict = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key: {k}")
            self.values[k] = v

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def set_override(self, assignment: str) -> None:
        """Apply one 'section.key=value' CLI override."""
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
        key, raw = assignment.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        self.values[key] = _parse_value(key, raw, DEFAULTS[key])

    def lines(self) -> list:
        """Deterministic section-grouped rendering of the resolved config."""
        out = []
        section = None
        for key in sorted(self.values):
            sec, name = key.split(".", 1)
            if sec != section:
                if section is not None:
                    out.append("")
                out.append(f"[{sec}]")
                section = sec
            out.append(f"{name} = {_format_value(self.values[key])}")
        return out

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write("\n".join(self.lines()) + "\n")

    # typed views over the registry

    def env(self) -> AgvConfig:
        return AgvConfig(
            v=self["env.v"], dt=self["env.dt"], u_bound=self["env.u_bound"],
            obstacle_center=(self["env.obstacle_x"], self["env.obstacle_y"]),
            obstacle_radius=self["env.obstacle_radius"],
            goal=(self["env.goal_x"], self["env.goal_y"]),
            reward_scale=self["env.reward_scale"], reward_eps=self["env.reward_eps"],
            horizon=self["env.horizon"])

    def barrier(self, tau: float = None) -> BarrierTrainConfig:
        return BarrierTrainConfig(
            gamma=self["barrier.gamma"],
            tau=self["barrier.tau"] if tau is None else tau,
            lr=self["barrier.lr"], batch_size=self["barrier.batch_size"],
            epochs=self["barrier.epochs"],
            target_polyak_rho=self["barrier.target_polyak_rho"],
            use_target_net=self["barrier.use_target_net"],
            hidden=self["barrier.hidden"], encode_heading=self["barrier.encode_heading"],
            eq8_literal=self["barrier.eq8_literal"], seed=self["run.master_seed"])

    def cbvf_mb(self) -> BarrierTrainConfig:
        return BarrierTrainConfig(
            gamma=self["barrier.gamma"], tau=self["barrier.tau"],
            lr=self["cbvf_mb.lr"], batch_size=self["cbvf_mb.batch_size"],
            epochs=self["cbvf_mb.epochs"],
            target_polyak_rho=self["barrier.target_polyak_rho"],
            use_target_net=self["barrier.use_target_net"],
            hidden=self["barrier.hidden"], encode_heading=self["barrier.encode_heading"],
            seed=self["run.master_seed"])

    def dynamics(self) -> DynamicsTrainConfig:
        return DynamicsTrainConfig(
            lr=self["dynamics.lr"], batch_size=self["dynamics.batch_size"],
            epochs=self["dynamics.epochs"], hidden=self["dynamics.hidden"],
            seed=self["run.master_seed"], test_fraction=self["dynamics.test_fraction"])

    def bc(self) -> BcTrainConfig:
        return BcTrainConfig(
            lr=self["bc.lr"], batch_size=self["bc.batch_size"], epochs=self["bc.epochs"],
            hidden=self["bc.hidden"], seed=self["run.master_seed"])

    def goto_goal_policy(self) -> GoToGoal:
        return GoToGoal(self["eval.goto_gain"],
                        (self["env.goal_x"], self["env.goal_y"]), self["env.u_bound"])


def parse_file(path) -> dict:
    """Parse a config file into {section.key: typed value}; rejects unknown keys."""
    with open(path) as f:
        text = f.read()
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        name, rawval = line.split("=", 1)
        name = name.strip()
        key = f"{section}.{name}" if section else name
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        values[key] = _parse_value(key, rawval, DEFAULTS[key])
    return values


def load(path=None, overrides=()) -> RunConfig:
    """File values over defaults, then CLI overrides over both."""
    cfg = RunConfig(parse_file(path) if path else {})
    for assignment in overrides:
        cfg.set_override(assignment)
    return cfg
