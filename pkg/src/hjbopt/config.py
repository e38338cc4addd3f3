"""Experiment configuration: flat JSON sections, presets, resolution.

A config file is one JSON object with sections

    benchmark   registry name (string, required)
    problem     rho, lambda, u_min, and exactly one of c_kappa / u_max
    train       preset ("paper" | "ci") plus per-field overrides
    langevin    eta, horizon, n_traj, s (truncation fraction), seed
    metrics     n_test, seed for error-report test points
    fd          n_points for the 1-d reference solver
    output      dir

Unknown sections or keys are rejected.  resolve() turns a config into
concrete runtime objects, estimating the gradient bound kappa when
u_max is given as a multiple c_kappa of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import benchmarks
from .exceptions import ConfigError
from .langevin import LangevinConfig, estimate_kappa
from .operators import ControlSet, Problem
from .training import TrainConfig

__all__ = ["ExperimentConfig", "Resolved", "load_config", "resolve", "PRESETS"]

PRESETS = {
    "paper": {"iterations": 20000, "n_interior": 16384, "width": 64, "depth": 5},
    "ci": {"iterations": 5000, "n_interior": 2048, "width": 32, "depth": 5},
}


def _take(section: dict, name: str, allowed: dict):
    """Pop known keys with defaults; reject everything else."""
    out = {}
    data = dict(section)
    for key, default in allowed.items():
        out[key] = data.pop(key) if key in data else default
    if data:
        raise ConfigError(f"unknown keys in section {name!r}: {', '.join(sorted(data))}")
    return out


_REQUIRED = object()


@dataclass
class ExperimentConfig:
    benchmark: str
    problem: dict
    train: dict
    langevin: dict
    metrics: dict
    fd: dict
    output: dict

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        data = dict(raw)
        benchmark = data.pop("benchmark", None)
        if not isinstance(benchmark, str):
            raise ConfigError("config needs a 'benchmark' name")
        if benchmark not in benchmarks.BENCHMARK_NAMES:
            raise ConfigError(
                f"unknown benchmark {benchmark!r}; known: {', '.join(benchmarks.BENCHMARK_NAMES)}")
        sections = {}
        for name in ("problem", "train", "langevin", "metrics", "fd", "output"):
            section = data.pop(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a JSON object")
            sections[name] = section
        if data:
            raise ConfigError(f"unknown top-level keys: {', '.join(sorted(data))}")

        problem = _take(sections["problem"], "problem", {
            "rho": _REQUIRED, "lambda": _REQUIRED, "u_min": _REQUIRED,
            "c_kappa": None, "u_max": None,
            "kappa_samples": 2000, "kappa_seed": 101,
        })
        for key in ("rho", "lambda", "u_min"):
            if problem[key] is _REQUIRED:
                raise ConfigError(f"problem section needs {key!r}")
        if (problem["c_kappa"] is None) == (problem["u_max"] is None):
            raise ConfigError("problem section needs exactly one of 'c_kappa' and 'u_max'")

        train = _take(sections["train"], "train", {
            "preset": "ci", "iterations": None, "n_interior": None,
            "width": None, "depth": None,
            "n_boundary": 64, "learning_rate": 3e-4, "lr_schedule": "constant",
            "lr_min": 3e-5, "alpha_res": None, "alpha_bnd": 50.0,
            "beta1": 0.9, "beta2": 0.99, "weight_decay": 0.0,
            "seed": 0, "log_every": 100,
        })
        if train["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {train['preset']!r}; choose from {', '.join(PRESETS)}")

        langevin = _take(sections["langevin"], "langevin", {
            "eta": 0.016, "horizon": 1000, "n_traj": 100,
            "s": 0.0, "seed": 7, "dump_states": False,
        })
        if not (0.0 <= float(langevin["s"]) <= 1.0):
            raise ConfigError("langevin truncation fraction s must lie in [0, 1]")

        metrics = _take(sections["metrics"], "metrics", {"n_test": 4096, "seed": 90210})
        fd = _take(sections["fd"], "fd", {"n_points": 1001})
        output = _take(sections["output"], "output", {"dir": f"runs/{benchmark}"})
        return ExperimentConfig(benchmark, problem, train, langevin, metrics, fd, output)

    def apply_overrides(self, preset=None, seed=None, out=None) -> None:
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}")
            self.train["preset"] = preset
        if seed is not None:
            self.train["seed"] = int(seed)
            self.langevin["seed"] = int(seed)
        if out is not None:
            self.output["dir"] = str(out)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(raw)


@dataclass
class Resolved:
    """Concrete runtime objects for one experiment."""

    benchmark: benchmarks.Benchmark
    problem: Problem
    control: ControlSet
    kappa: float | None
    layer_sizes: list[int]
    train: TrainConfig
    langevin: LangevinConfig
    dump_states: bool
    metrics_n_test: int
    metrics_seed: int
    fd_n_points: int
    out_dir: str

    def resolved_dict(self) -> dict:
        d = {
            "benchmark": self.benchmark.name,
            "problem": {
                "rho": self.problem.rho,
                "lambda": self.problem.lam,
                "u_min": self.control.u_min,
                "u_max": self.control.u_max,
                "kappa": self.kappa,
            },
            "network": {"layer_sizes": list(self.layer_sizes)},
            "train": asdict(self.train),
            "langevin": asdict(self.langevin),
            "dump_states": self.dump_states,
            "metrics": {"n_test": self.metrics_n_test, "seed": self.metrics_seed},
            "fd": {"n_points": self.fd_n_points},
            "output": {"dir": self.out_dir},
        }
        return d

    def write_resolved(self, out_dir) -> None:
        path = Path(out_dir) / "config.resolved"
        path.write_text(json.dumps(self.resolved_dict(), sort_keys=True, indent=2) + "\n")


def resolve(cfg: ExperimentConfig) -> Resolved:
    p = cfg.problem
    rho = float(p["rho"])
    lam = float(p["lambda"])
    u_min = float(p["u_min"])

    # benchmark first: kappa needs its gradient and domain
    if cfg.benchmark.startswith("cosine_d"):
        if p["u_max"] is None:
            raise ConfigError("cosine instances have zero drift: give an explicit u_max")
        control = ControlSet(u_min, float(p["u_max"]))
        bench = benchmarks.get(cfg.benchmark, rho=rho, control=control)
        kappa = None
    else:
        bench = benchmarks.get(cfg.benchmark)
        if p["u_max"] is not None:
            control = ControlSet(u_min, float(p["u_max"]))
            kappa = None
        else:
            kappa = estimate_kappa(bench.gradient, bench.domain,
                                   int(p["kappa_samples"]), int(p["kappa_seed"]))
            control = ControlSet(u_min, float(p["c_kappa"]) * kappa)

    problem = Problem(evaluate=bench.evaluate, gradient=bench.gradient,
                      domain=bench.domain, rho=rho, lam=lam, control=control)

    t = cfg.train
    preset = PRESETS[t["preset"]]
    width = int(t["width"] if t["width"] is not None else preset["width"])
    depth = int(t["depth"] if t["depth"] is not None else preset["depth"])
    layer_sizes = [bench.dimension] + [width] * depth + [1]
    try:
        train = TrainConfig(
            alpha_res=float(t["alpha_res"]) if t["alpha_res"] is not None else 1.0 / rho,
            alpha_bnd=float(t["alpha_bnd"]),
            n_interior=int(t["n_interior"] if t["n_interior"] is not None else preset["n_interior"]),
            n_boundary=int(t["n_boundary"]),
            iterations=int(t["iterations"] if t["iterations"] is not None else preset["iterations"]),
            learning_rate=float(t["learning_rate"]),
            lr_schedule=str(t["lr_schedule"]),
            lr_min=float(t["lr_min"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            weight_decay=float(t["weight_decay"]),
            seed=int(t["seed"]),
            log_every=int(t["log_every"]),
        )
    except ValueError as e:
        raise ConfigError(f"bad train section: {e}") from e

    lg = cfg.langevin
    tau = float(lg["s"]) * float(np.sqrt(2.0 * control.u_max))
    try:
        langevin = LangevinConfig(
            step_size=float(lg["eta"]),
            horizon=int(lg["horizon"]),
            truncation=tau,
            n_traj=int(lg["n_traj"]),
            seed=int(lg["seed"]),
        )
    except ValueError as e:
        raise ConfigError(f"bad langevin section: {e}") from e

    return Resolved(
        benchmark=bench,
        problem=problem,
        control=control,
        kappa=kappa,
        layer_sizes=layer_sizes,
        train=train,
        langevin=langevin,
        dump_states=bool(lg["dump_states"]),
        metrics_n_test=int(cfg.metrics["n_test"]),
        metrics_seed=int(cfg.metrics["seed"]),
        fd_n_points=int(cfg.fd["n_points"]),
        out_dir=str(cfg.output["dir"]),
    )
