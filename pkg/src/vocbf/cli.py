"""Command-line entry point.

Commands: gen-data, train {barrier|dynamics|bc|cbvf-mb},
eval {table1|ssv|tau|noise|dyncompare}, check {grad|qp|lemma}.
Exit codes: 0 ok, 2 config, 3 training, 4 missing artifact, 5 I/O.

Every run writes its fully-resolved config next to its outputs, and result
CSVs carry the resolved config plus the dataset content hash as header
comments, so any output is reproducible from (config file, master seed).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import barrier as barrier_mod
from . import checks, config, data, dynamics, evaluation, nn, policy
from .barrier import BarrierFn, TrainingError
from .config import ConfigError, RunConfig
from .data import DatasetFormatError
from .dubins import generate_dataset
from .evaluation import ControlPipeline
from .nn import CheckpointError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_MISSING = 4
EXIT_IO = 5

ROLE_FILES = {
    "psi": "psi.ckpt",
    "theta": "theta.ckpt",
    "theta_mb": "theta_mb.ckpt",
    "dynamics": "dynamics.ckpt",
    "bc_actor": "bc_actor.ckpt",
}


class MissingArtifactError(FileNotFoundError):
    def __init__(self, role: str, path):
        super().__init__(f"missing checkpoint for role '{role}' (expected at {path})")
        self.role = role


def _out_root(cfg: RunConfig) -> Path:
    root = os.environ.get("VOCBF_OUT_ROOT") or cfg["run.out_root"]
    return Path(root)


def _dataset_path(cfg: RunConfig) -> Path:
    p = cfg["dataset.path"]
    return Path(p) if p else _out_root(cfg) / "dataset.csv"


def _artifacts_dir(cfg: RunConfig) -> Path:
    return _out_root(cfg) / "artifacts"


def _artifact_path(cfg: RunConfig, role: str) -> Path:
    path = _artifacts_dir(cfg) / ROLE_FILES[role]
    if not path.exists():
        raise MissingArtifactError(role, path)
    return path


def _run_dir(cfg: RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = _out_root(cfg) / f"{stamp}-seed{cfg['run.master_seed']}"
    run_dir = base
    n = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{n}")
        n += 1
    run_dir.mkdir(parents=True)
    cfg.write(run_dir / f"resolved-{command}.cfg")
    return run_dir


def _load_dataset(cfg: RunConfig) -> data.TransitionSet:
    path = _dataset_path(cfg)
    if not path.exists():
        raise MissingArtifactError("dataset", path)
    return data.load(path)


def _stamp_lines(cfg: RunConfig) -> list:
    lines = list(cfg.lines())
    ds = _dataset_path(cfg)
    lines.append(f"dataset_sha256 = {data.content_hash(ds) if ds.exists() else 'absent'}")
    return lines


def _save_barrier_ckpt(net: nn.MlpModel, path, role: str, encode_heading: bool) -> None:
    net.extras["encode"] = "1" if encode_heading else "0"
    nn.save_checkpoint(net, path, role=role)


def _load_barrier_fn(cfg: RunConfig, role: str) -> BarrierFn:
    net = nn.load_checkpoint(_artifact_path(cfg, role))
    return BarrierFn(net, net.extras.get("encode", "1") == "1")


def _pi_ref(cfg: RunConfig):
    kind = cfg["eval.pi_ref"]
    if kind == "goto_goal":
        return cfg.goto_goal_policy()
    if kind == "bc":
        net = nn.load_checkpoint(_artifact_path(cfg, "bc_actor"))
        return policy.BehaviorCloned(net, cfg["env.u_bound"])
    raise ConfigError(f"eval.pi_ref must be goto_goal or bc, got {kind!r}")


def cmd_gen_data(cfg: RunConfig) -> int:
    env = cfg.env()
    ds = generate_dataset(cfg["dataset.n_transitions"], env, cfg["run.master_seed"])
    path = _dataset_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.save(ds, path)
    cfg.write(path.parent / "resolved-gen-data.cfg")
    print(f"wrote {len(ds)} transitions to {path}")
    return EXIT_OK


def _publish(run_dir: Path, cfg: RunConfig, filename: str) -> None:
    """Copy a run-dir artifact to the stable artifacts directory eval reads."""
    art = _artifacts_dir(cfg)
    art.mkdir(parents=True, exist_ok=True)
    (art / filename).write_bytes((run_dir / filename).read_bytes())


def cmd_train(cfg: RunConfig, which: str) -> int:
    ds = _load_dataset(cfg)
    run_dir = _run_dir(cfg, f"train-{which}")
    if which == "barrier":
        pair = barrier_mod.train_vocbf(ds, cfg.barrier())
        _save_barrier_ckpt(pair.td_net, run_dir / "psi.ckpt", "psi",
                           cfg["barrier.encode_heading"])
        _save_barrier_ckpt(pair.cbf_net, run_dir / "theta.ckpt", "theta",
                           cfg["barrier.encode_heading"])
        barrier_mod.write_training_curve(run_dir / "curve_barrier.csv", pair.training_log)
        for f in ("psi.ckpt", "theta.ckpt", "curve_barrier.csv"):
            _publish(run_dir, cfg, f)
        print(f"final losses: psi={pair.training_log[-1][1]:.3e} "
              f"theta={pair.training_log[-1][2]:.3e}")
    elif which == "dynamics":
        log = []
        dcfg = cfg.dynamics()
        dyn = dynamics.train_dynamics(ds, dcfg, loss_log=log)
        rmse = dynamics.heldout_rmse(dyn, dynamics.heldout_split(ds, dcfg))
        dynamics.save_surrogate(dyn, run_dir / "dynamics.ckpt")
        with open(run_dir / "rmse_dynamics.csv", "w") as f:
            f.write("dim,rmse\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(rmse)) + "\n")
        _write_curve(run_dir / "curve_dynamics.csv", log)
        for f in ("dynamics.ckpt", "rmse_dynamics.csv", "curve_dynamics.csv"):
            _publish(run_dir, cfg, f)
        print("held-out RMSE per dim: " + " ".join(f"{v:.2e}" for v in rmse))
    elif which == "bc":
        log = []
        actor = policy.train_bc(ds, cfg.bc(), cfg["env.u_bound"], loss_log=log)
        nn.save_checkpoint(actor.net, run_dir / "bc_actor.ckpt", role="bc_actor")
        _write_curve(run_dir / "curve_bc.csv", log)
        for f in ("bc_actor.ckpt", "curve_bc.csv"):
            _publish(run_dir, cfg, f)
        print(f"final BC loss: {log[-1]:.3e}")
    elif which == "cbvf-mb":
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        log = []
        ub = cfg["env.u_bound"]
        net = barrier_mod.train_cbvf_model_based(
            ds, dyn, cfg.cbvf_mb(), cfg["cbvf_mb.n_action_samples"],
            control_bounds=(-ub, ub), loss_log=log)
        _save_barrier_ckpt(net, run_dir / "theta_mb.ckpt", "theta_mb",
                           cfg["barrier.encode_heading"])
        _write_curve(run_dir / "curve_cbvf_mb.csv", log)
        for f in ("theta_mb.ckpt", "curve_cbvf_mb.csv"):
            _publish(run_dir, cfg, f)
        print(f"final model-based CBVF loss: {log[-1]:.3e}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def _write_curve(path, losses) -> None:
    with open(path, "w") as f:
        f.write("epoch,loss\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(losses)) + "\n")


def _print_table(table: evaluation.ExperimentTable) -> None:
    for row in table.rows:
        cells = []
        for c in table.columns:
            v = row[c]
            cells.append(f"{c}={v:.2f}" if isinstance(v, float) else f"{c}={v}")
        print("  " + " ".join(cells))


def cmd_eval(cfg: RunConfig, mode: str, emit_plots_data: bool = False) -> int:
    env = cfg.env()
    alpha = cfg["eval.alpha"]
    seeds = cfg["eval.seeds"]
    n_episodes = cfg["eval.n_episodes"]
    threads = cfg["eval.threads"]
    tables_dir = _out_root(cfg) / "tables"
    tables_dir.mkdir(parents=True, exist_ok=True)
    stamp = _stamp_lines(cfg)

    pi = _pi_ref(cfg)
    rows_by_label = {}
    if mode == "table1":
        theta = _load_barrier_fn(cfg, "theta")
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        filtered = ControlPipeline(pi, theta, dyn, alpha)
        unfiltered = ControlPipeline(pi)
        table, rows_by_label = evaluation.table_main(
            filtered, unfiltered, env, n_episodes, seeds, threads)
    elif mode == "ssv":
        theta = _load_barrier_fn(cfg, "theta")
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        pipeline = ControlPipeline(pi, theta, dyn, alpha)
        pct = evaluation.safe_set_volume(pipeline, env, cfg["eval.ssv_samples"],
                                         seeds[0], threads)
        table = evaluation.ExperimentTable(["label", "ssv_pct", "n_samples"])
        table.add_row(label="qp_filter", ssv_pct=pct, n_samples=cfg["eval.ssv_samples"])
    elif mode == "tau":
        ds = _load_dataset(cfg)
        psi = nn.load_checkpoint(_artifact_path(cfg, "psi"))
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        table, rows = evaluation.ablate_tau(
            ds, cfg.barrier(), psi, dyn, pi, env, cfg["eval.taus"],
            alpha, n_episodes, seeds, threads)
        rows_by_label = {f"tau={k}": v for k, v in rows.items()}
    elif mode == "noise":
        theta = _load_barrier_fn(cfg, "theta")
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        pipeline = ControlPipeline(pi, theta, dyn, alpha)
        table, rows = evaluation.ablate_noise(
            pipeline, env, cfg["eval.noise_levels"], n_episodes, seeds, threads)
        rows_by_label = {f"sigma={k}": v for k, v in rows.items()}
    elif mode == "dyncompare":
        theta = _load_barrier_fn(cfg, "theta")
        theta_mb = _load_barrier_fn(cfg, "theta_mb")
        dyn = dynamics.load_surrogate(_artifact_path(cfg, "dynamics"))
        table, rows_by_label = evaluation.compare_dynamics_modes(
            theta, theta_mb, dyn, pi, env, alpha, n_episodes, seeds, threads)
    else:
        raise ConfigError(f"unknown eval mode {mode!r}")

    table.header_comments = stamp
    out = tables_dir / f"{mode}.csv"
    table.to_csv(out)
    print(f"wrote {out}")
    _print_table(table)
    if emit_plots_data and rows_by_label:
        long_table = evaluation.long_format_rows(rows_by_label)
        long_table.header_comments = stamp
        long_table.to_csv(tables_dir / f"{mode}_long.csv")
        print(f"wrote {tables_dir / f'{mode}_long.csv'}")
    cfg.write(tables_dir / f"resolved-eval-{mode}.cfg")
    return EXIT_OK


def cmd_check(suite: str) -> int:
    runners = {
        "grad": lambda: checks.run_grad_check(),
        "qp": lambda: checks.run_qp_check(),
        "lemma": lambda: checks.run_lemma_check(),
    }
    passed, detail = runners[suite]()
    print(f"check {suite}: {'PASS' if passed else 'FAIL'} ({detail})")
    return EXIT_OK if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocbf",
        description="Offline barrier learning and QP-filtered control for the AGV benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="config file (key = value with [sections])")
        sp.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="SECTION.KEY=VALUE", help="override one config key")

    common(sub.add_parser("gen-data", help="generate the offline dataset"))
    tr = sub.add_parser("train", help="train one component")
    tr.add_argument("which", choices=["barrier", "dynamics", "bc", "cbvf-mb"])
    common(tr)
    ev = sub.add_parser("eval", help="run one evaluation table")
    ev.add_argument("mode", choices=["table1", "ssv", "tau", "noise", "dyncompare"])
    ev.add_argument("--emit-plots-data", action="store_true",
                    help="also write per-seed long-format CSV")
    common(ev)
    ck = sub.add_parser("check", help="run a property suite standalone")
    ck.add_argument("suite", choices=["grad", "qp", "lemma"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args.suite)
        cfg = config.load(args.config, args.overrides)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.which)
        if args.command == "eval":
            return cmd_eval(cfg, args.mode, args.emit_plots_data)
        raise AssertionError(args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DatasetFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, ValueError) as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except MissingArtifactError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
