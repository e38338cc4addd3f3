"""Experiment orchestration shared by the CLI subcommands.

Every run writes its fully resolved configuration next to its
artifacts, so a result directory is self-describing and a rerun with
the same config reproduces the same bytes (the train log's wall-clock
column is the one excluded diagnostic).
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .benchmarks import ManufacturedCosine
from .config import ExperimentConfig, Resolved, resolve
from .exceptions import ConfigError
from .langevin import network_noise_field, run_trajectories
from .metrics import (ErrorReport, linf_error, rel_l2_error, residual_linf,
                      trajectory_stats, write_errors_csv)
from .network import forward_laplacian_batch, init_network, load_checkpoint, save_checkpoint
from .fd_reference import FdGrid, howard_solve
from .training import sample_interior, train

__all__ = ["solve_run", "langevin_run", "fd_run", "sweep_run"]


def _ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return "%.17g" % float(x)


def error_report(res: Resolved, params) -> ErrorReport | None:
    """Laplacian error row against the exact solution, when one exists."""
    bench = res.benchmark
    if not isinstance(bench, ManufacturedCosine):
        return None
    rng = np.random.default_rng(res.metrics_seed)
    pts = sample_interior(res.problem.domain, res.metrics_n_test, rng)
    exact = bench.exact_laplacian(pts)
    _, _, approx = forward_laplacian_batch(params, pts)
    return ErrorReport(
        lam=res.problem.lam,
        e_l2_rel=rel_l2_error(exact, approx),
        e_linf=linf_error(exact, approx),
        residual_eps=residual_linf(params, res.problem, pts),
        n_test=res.metrics_n_test,
        seed=res.metrics_seed,
    )


def solve_run(res: Resolved, out_dir) -> dict:
    """Train the value network and write checkpoint, log, and errors."""
    out = _ensure_dir(out_dir)
    res.write_resolved(out)
    params = init_network(res.train.seed, res.layer_sizes)
    params, log = train(res.problem, params, res.train)
    save_checkpoint(out / "checkpoint.bin", params, res.train.seed)
    log.to_csv(out / "train_log.csv")
    report = error_report(res, params)
    if report is not None:
        write_errors_csv(out / "errors.csv", [report])
    return {"params": params, "log": log, "report": report, "out": out}


def _write_trajectories_csv(path, f_hat, err_mean) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("k,f_hat,err_mean\n")
        for k in range(len(f_hat)):
            err = "nan" if err_mean is None else _fmt(err_mean[k])
            f.write("%d,%s,%s\n" % (k, _fmt(f_hat[k]), err))


def _dump_states(path, states) -> None:
    n, steps, d = states.shape
    header = {"format_version": 1, "n_traj": n, "horizon": steps - 1, "dimension": d}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(np.ascontiguousarray(states, dtype="<f8").tobytes())


def langevin_run(res: Resolved, out_dir, checkpoint_path, params=None) -> dict:
    """Simulate trajectories under a trained noise field."""
    out = _ensure_dir(out_dir)
    res.write_resolved(out)
    if params is None:
        if checkpoint_path is None:
            raise ConfigError("run-langevin needs a checkpoint")
        params, _ = load_checkpoint(checkpoint_path)
    if params.dimension != res.benchmark.dimension:
        raise ConfigError(
            f"checkpoint dimension {params.dimension} does not match benchmark "
            f"{res.benchmark.name} (d={res.benchmark.dimension})")
    noise = network_noise_field(params, res.problem.lam, res.problem.control)
    log = run_trajectories(res.problem, noise, res.langevin)
    f_hat, err_mean = trajectory_stats(log.objectives, log.states, res.benchmark.minimizers)
    _write_trajectories_csv(out / "trajectories.csv", f_hat, err_mean)
    if res.dump_states:
        _dump_states(out / "states.bin", log.states)
    return {"log": log, "f_hat": f_hat, "err_mean": err_mean, "out": out}


def fd_run(res: Resolved, out_dir) -> dict:
    """Solve the 1-d reference problem and write the grid profile."""
    if res.benchmark.dimension != 1:
        raise ConfigError("fd-reference needs a one-dimensional benchmark")
    if res.fd_n_points < 4:
        raise ConfigError("fd grid needs at least 4 points (two interior nodes)")
    out = _ensure_dir(out_dir)
    res.write_resolved(out)
    bench = res.benchmark
    grid = FdGrid(float(bench.domain.lower[0]), float(bench.domain.upper[0]), res.fd_n_points)
    result = howard_solve(
        f=lambda xs: bench.evaluate(xs[:, None]),
        fprime=lambda xs: bench.gradient(xs[:, None])[:, 0],
        rho=res.problem.rho,
        control=res.control,
        grid=grid,
    )
    noise_classical = np.sqrt(2.0 * result.policy)
    with open(out / "fd_reference.csv", "w", newline="\n") as f:
        f.write("x,v,v_xx,policy,noise_classical\n")
        for row in zip(grid.xs(), result.values, result.curvature, result.policy, noise_classical):
            f.write(",".join(_fmt(v) for v in row) + "\n")
    return {"result": result, "grid": grid, "out": out}


# ---------------------------------------------------------------------------
# sweeps


def _set_config_key(cfg: ExperimentConfig, dotted: str, value: float) -> None:
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"sweep parameter must look like 'section.key', got {dotted!r}")
    section, key = parts
    if section == "problem":
        target = cfg.problem
    elif section == "train":
        target = cfg.train
    elif section == "langevin":
        target = cfg.langevin
    else:
        raise ConfigError(f"sweeps support problem.*, train.*, langevin.*; got {dotted!r}")
    if key not in target:
        raise ConfigError(f"unknown sweep key {dotted!r}")
    target[key] = value


SWEEP_CSV_HEADER = "param,value,e_l2_rel,e_linf,residual_eps,f_hat_final,err_final"


def sweep_run(cfg: ExperimentConfig, out_dir, param: str, values, checkpoint_path=None) -> dict:
    """Run the pipeline once per parameter value.

    A sweep over a langevin key with a given checkpoint reuses the
    trained network and only re-simulates.  Any other sweep retrains
    per value; when the config's benchmark has known minimizers and a
    langevin section, each retrained network is also simulated.
    """
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    out = _ensure_dir(out_dir)
    simulate_only = param.startswith("langevin.") and checkpoint_path is not None
    rows = []
    runs = []
    for value in values:
        sub_cfg = copy.deepcopy(cfg)
        _set_config_key(sub_cfg, param, value)
        sub_dir = out / f"{param.replace('.', '_')}={value:g}"
        res = resolve(sub_cfg)
        row = {"e_l2_rel": np.nan, "e_linf": np.nan, "residual_eps": np.nan,
               "f_hat_final": np.nan, "err_final": np.nan}
        if simulate_only:
            lr = langevin_run(res, sub_dir, checkpoint_path)
            row["f_hat_final"] = lr["f_hat"][-1]
            if lr["err_mean"] is not None:
                row["err_final"] = lr["err_mean"][-1]
            runs.append(lr)
        else:
            sr = solve_run(res, sub_dir)
            if sr["report"] is not None:
                row["e_l2_rel"] = sr["report"].e_l2_rel
                row["e_linf"] = sr["report"].e_linf
                row["residual_eps"] = sr["report"].residual_eps
            if len(res.benchmark.minimizers) and res.langevin.horizon > 0:
                lr = langevin_run(res, sub_dir, None, params=sr["params"])
                row["f_hat_final"] = lr["f_hat"][-1]
                if lr["err_mean"] is not None:
                    row["err_final"] = lr["err_mean"][-1]
            runs.append(sr)
        rows.append((value, row))
    with open(out / "summary.csv", "w", newline="\n") as f:
        f.write(SWEEP_CSV_HEADER + "\n")
        for value, row in rows:
            f.write("%s,%s,%s,%s,%s,%s,%s\n" % (
                param, _fmt(value), _fmt(row["e_l2_rel"]), _fmt(row["e_linf"]),
                _fmt(row["residual_eps"]), _fmt(row["f_hat_final"]), _fmt(row["err_final"])))
    return {"rows": rows, "runs": runs, "out": out}
