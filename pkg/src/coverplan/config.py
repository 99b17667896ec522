"""Versioned JSON config schema for the CLI.

Strict by design: unknown keys are errors, not warnings, so typos in config
files fail fast instead of silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import DomainSamples, load_samples
from .dynamics import DynamicsModel
from .evaluation import SweepConfig
from .solver import ALConfig, AnnealingSchedule, InnerConfig, SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


_SECTIONS_PLAN = {"schema_version", "domain", "model", "horizon", "objective",
                  "al", "inner", "seed", "output"}
_SECTIONS_BENCH = {"schema_version", "domain", "sweep", "al", "inner", "seed"}

_KEYS = {
    "domain": {"path", "format", "has_weights"},
    "model": {"kind", "v_max", "a_max", "L_max", "t_max", "dt_min", "dt_max",
              "velocity_bound", "fix_initial", "initial_state", "final_state"},
    "objective": {"mode", "h0", "h_phys_star", "num_stages", "h_fixed", "include_constant"},
    "al": {"mu0", "gamma", "eps_eq", "eps_ineq", "rounds_per_stage", "polish_rounds",
           "anneal_feas"},
    "inner": {"max_iter", "grad_tol", "ftol", "ftol_window", "armijo_c", "backtrack",
              "min_step", "max_move", "accel", "lbfgs_memory"},
    "seed": {"strategy", "rng_seed"},
    "output": {"stem"},
    "sweep": {"horizon", "v_max", "L_max", "radius", "h_phys_star", "h0", "num_stages",
              "h_fixed", "scales", "repeats", "methods", "dt_min", "dt_max"},
}


def _check_keys(section: str, data: dict, allowed: set) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown keys in '{section}': {sorted(unknown)}; allowed: {sorted(allowed)}")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return doc


@dataclass
class PlanConfig:
    """Fully validated plan run: domain, model, and solver settings."""

    domain_path: str
    domain_format: Optional[str]
    has_weights: Optional[bool]
    samples: DomainSamples
    model: DynamicsModel
    solver: SolverConfig
    output_stem: str = "run"
    raw: dict = field(default_factory=dict)


def _build_model(mdata: dict, dim: int) -> DynamicsModel:
    _check_keys("model", mdata, _KEYS["model"])
    return DynamicsModel(
        kind=mdata.get("kind", "single_integrator"),
        dim=dim,
        v_max=float(mdata.get("v_max", 1.0)),
        a_max=mdata.get("a_max"),
        L_max=mdata.get("L_max"),
        t_max=mdata.get("t_max"),
        dt_bounds=(float(mdata.get("dt_min", 1e-3)), float(mdata.get("dt_max", 1e3))),
        velocity_bound=mdata.get("velocity_bound", "step_length"),
        initial_state=mdata.get("initial_state"),
        final_state=mdata.get("final_state"),
    )


def _build_al(doc: dict) -> ALConfig:
    al = doc.get("al", {})
    _check_keys("al", al, _KEYS["al"])
    return ALConfig(**al)


def _build_inner(doc: dict) -> InnerConfig:
    inner = doc.get("inner", {})
    _check_keys("inner", inner, _KEYS["inner"])
    return InnerConfig(**inner)


def load_plan_config(path, seed_override: Optional[int] = None) -> PlanConfig:
    doc = _load_json(path)
    _check_keys("top level", doc, _SECTIONS_PLAN)
    for required in ("domain", "horizon", "objective"):
        if required not in doc:
            raise ConfigError(f"missing required section '{required}'")

    ddata = doc["domain"]
    _check_keys("domain", ddata, _KEYS["domain"])
    if "path" not in ddata:
        raise ConfigError("domain.path is required")
    base = Path(path).parent
    dpath = Path(ddata["path"])
    if not dpath.is_absolute():
        dpath = base / dpath
    samples = load_samples(dpath, format=ddata.get("format"),
                           has_weights=ddata.get("has_weights"))

    model = _build_model(doc.get("model", {}), samples.dim)

    odata = doc["objective"]
    _check_keys("objective", odata, _KEYS["objective"])
    mode = odata.get("mode", "log_emmd")
    sdata = doc.get("seed", {})
    _check_keys("seed", sdata, _KEYS["seed"])
    rng_seed = int(sdata.get("rng_seed", 0)) if seed_override is None else int(seed_override)

    annealing = None
    if mode == "log_emmd":
        from .domain import compute_extent

        if "h_phys_star" not in odata:
            raise ConfigError("objective.h_phys_star is required for log_emmd mode")
        annealing = AnnealingSchedule(
            h0=float(odata.get("h0", 0.05)),
            h_phys_star=float(odata["h_phys_star"]),
            num_stages=int(odata.get("num_stages", 10)),
            extent=compute_extent(samples),
        )
    solver = SolverConfig(
        horizon=int(doc["horizon"]),
        annealing=annealing,
        objective=mode,
        h_fixed=odata.get("h_fixed"),
        include_constant=bool(odata.get("include_constant", True)),
        al=_build_al(doc),
        inner=_build_inner(doc),
        seed_strategy=sdata.get("strategy", "line"),
        rng_seed=rng_seed,
        fix_initial=bool(doc.get("model", {}).get("fix_initial", True)),
    )
    out = doc.get("output", {})
    _check_keys("output", out, _KEYS["output"])
    return PlanConfig(
        domain_path=str(dpath),
        domain_format=ddata.get("format"),
        has_weights=ddata.get("has_weights"),
        samples=samples,
        model=model,
        solver=solver,
        output_stem=out.get("stem", "run"),
        raw=doc,
    )


@dataclass
class BenchConfig:
    domain_path: str
    sweep: SweepConfig
    scales: list
    repeats: int
    raw: dict = field(default_factory=dict)


def load_bench_config(path, seed_override: Optional[int] = None) -> BenchConfig:
    doc = _load_json(path)
    _check_keys("top level", doc, _SECTIONS_BENCH)
    for required in ("domain", "sweep"):
        if required not in doc:
            raise ConfigError(f"missing required section '{required}'")
    ddata = doc["domain"]
    _check_keys("domain", ddata, _KEYS["domain"])
    base = Path(path).parent
    dpath = Path(ddata["path"])
    if not dpath.is_absolute():
        dpath = base / dpath
    samples = load_samples(dpath, format=ddata.get("format"),
                           has_weights=ddata.get("has_weights"))

    sw = dict(doc["sweep"])
    _check_keys("sweep", sw, _KEYS["sweep"])
    sdata = doc.get("seed", {})
    _check_keys("seed", sdata, _KEYS["seed"])
    rng_seed = int(sdata.get("rng_seed", 0)) if seed_override is None else int(seed_override)

    scales = [float(s) for s in sw.pop("scales", [1.0])]
    repeats = int(sw.pop("repeats", 1))
    overrides = {
        "al": _build_al(doc),
        "inner": _build_inner(doc),
        "seed_strategy": sdata.get("strategy", "hover"),
    }
    h_fixed = sw.pop("h_fixed", None)
    dt_min = float(sw.pop("dt_min", 1e-3))
    dt_max = float(sw.pop("dt_max", 1e3))
    try:
        sweep = SweepConfig(
            samples=samples,
            horizon=int(sw.pop("horizon")),
            v_max=float(sw.pop("v_max")),
            L_max=float(sw.pop("L_max")),
            radius=float(sw.pop("radius")),
            h_phys_star=float(sw.pop("h_phys_star")),
            h0=float(sw.pop("h0", 0.05)),
            num_stages=int(sw.pop("num_stages", 10)),
            h_fixed=None if h_fixed is None else float(h_fixed),
            methods=tuple(sw.pop("methods", ("si_emmd", "emmd", "tsp"))),
            dt_bounds=(dt_min, dt_max),
            rng_seed=rng_seed,
            solver_overrides=overrides,
        )
    except KeyError as exc:
        raise ConfigError(f"sweep section missing required key {exc}") from None
    return BenchConfig(domain_path=str(dpath), sweep=sweep, scales=scales,
                       repeats=repeats, raw=doc)
