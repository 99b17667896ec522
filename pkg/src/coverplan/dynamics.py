"""Trajectories with optimizable log time steps and differential constraints.

States are stacked as [position, velocity] (single integrator) or
[position, velocity, acceleration] (double integrator), all in physical
units. Time steps are decision variables stored in log space, so every
dt = exp(log_dt) is positive by construction and no explicit positivity
constraint is needed.

Equality constraints are explicit-Euler consistency conditions

    p_{t+1} - (p_t + dt_t v_t) = 0        (and v_{t+1} - (v_t + dt_t a_t) = 0
                                           for the double integrator)

plus optional fixed-endpoint residuals. Inequality constraints cover the
step-length velocity bound ||p_{t+1} - p_t|| <= v_max dt_t (or a per-state
speed bound), log-space dt bounds, and optional total path length / total
time budgets. Residuals and their transposed-Jacobian products are exact
and are verified against finite differences in the tests.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .domain import DomainSamples, NormalizedDomain
from .objective import TrajectoryPoints

_KINDS = ("single_integrator", "double_integrator")
_VELOCITY_BOUNDS = ("step_length", "state_speed")
_SEED_STRATEGIES = ("line", "lawnmower_2d", "random_jitter", "hover")


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Dynamics kind, bounds, and optional boundary conditions.

    ``initial_state``/``final_state`` may have length d (pins the position
    only) or the full state dimension.
    """

    kind: str = "single_integrator"
    dim: int = 2
    v_max: float = 1.0
    a_max: Optional[float] = None
    L_max: Optional[float] = None
    t_max: Optional[float] = None
    dt_bounds: Tuple[float, float] = (1e-3, 1e3)
    velocity_bound: str = "step_length"
    initial_state: Optional[np.ndarray] = None
    final_state: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}; expected one of {_KINDS}")
        if self.velocity_bound not in _VELOCITY_BOUNDS:
            raise ValueError(f"unknown velocity bound {self.velocity_bound!r}")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        lo, hi = self.dt_bounds
        if not (lo > 0 and lo <= hi):
            raise ValueError(f"dt_bounds must satisfy 0 < lo <= hi, got {self.dt_bounds}")
        for name in ("initial_state", "final_state"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] not in (self.dim, self.state_dim):
                    raise ValueError(
                        f"{name} must have length {self.dim} (position) or "
                        f"{self.state_dim} (full state), got {v.shape[0]}")
                object.__setattr__(self, name, v)

    @property
    def state_dim(self) -> int:
        return self.dim * (3 if self.kind == "double_integrator" else 2)

    def position(self, states: np.ndarray) -> np.ndarray:
        """Position block of a (T, n) state array: the first d components."""
        return states[..., : self.dim]

    def velocity(self, states: np.ndarray) -> np.ndarray:
        return states[..., self.dim : 2 * self.dim]

    def acceleration(self, states: np.ndarray) -> np.ndarray:
        if self.kind != "double_integrator":
            raise ValueError("acceleration states exist only for the double integrator")
        return states[..., 2 * self.dim : 3 * self.dim]

    def scaled(self, s: float) -> "DynamicsModel":
        """Model with all length-typed quantities multiplied by s."""
        s = float(s)
        return replace(
            self,
            v_max=self.v_max * s,
            a_max=None if self.a_max is None else self.a_max * s,
            L_max=None if self.L_max is None else self.L_max * s,
            initial_state=None if self.initial_state is None else self.initial_state * s,
            final_state=None if self.final_state is None else self.final_state * s,
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """T states plus T-1 log time steps under a dynamics model."""

    states: np.ndarray  # (T, n)
    log_dt: np.ndarray  # (T-1,)
    model: DynamicsModel

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        log_dt = np.asarray(self.log_dt, dtype=float).ravel()
        T = states.shape[0]
        if T < 2:
            raise ValueError(f"trajectory needs at least 2 states, got {T}")
        if states.shape[1] != self.model.state_dim:
            raise ValueError(
                f"state dimension {states.shape[1]} does not match model "
                f"({self.model.state_dim})")
        if log_dt.shape[0] != T - 1:
            raise ValueError(f"expected {T - 1} log time steps, got {log_dt.shape[0]}")
        if not (np.isfinite(states).all() and np.isfinite(log_dt).all()):
            raise ValueError("trajectory contains NaN or Inf")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "log_dt", log_dt)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return np.exp(self.log_dt)

    @property
    def positions(self) -> np.ndarray:
        return self.model.position(self.states)

    @property
    def velocities(self) -> np.ndarray:
        return self.model.velocity(self.states)

    def path_length(self) -> float:
        steps = np.diff(self.positions, axis=0)
        return float(np.linalg.norm(steps, axis=1).sum())

    def with_arrays(self, states: np.ndarray, log_dt: np.ndarray) -> "Trajectory":
        return Trajectory(states=states, log_dt=log_dt, model=self.model)


@dataclass
class ConstraintResidual:
    """Stacked equality (= 0) and inequality (<= 0) residual vectors."""

    equality: np.ndarray
    inequality: np.ndarray

    @property
    def max_eq_violation(self) -> float:
        return float(np.abs(self.equality).max()) if self.equality.size else 0.0

    @property
    def max_ineq_violation(self) -> float:
        return float(max(0.0, self.inequality.max())) if self.inequality.size else 0.0


def _boundary_parts(model: DynamicsModel):
    parts = []
    for which, v in (("initial", model.initial_state), ("final", model.final_state)):
        if v is not None:
            parts.append((which, v))
    return parts


def equality_residuals(traj: Trajectory) -> ConstraintResidual:
    """Euler consistency residuals (plus boundary pins), stacked per step.

    Layout: position rows for t = 0..T-2, then velocity rows (double
    integrator only), then any boundary residuals.
    """
    model = traj.model
    dt = traj.dt[:, None]
    p = traj.positions
    v = traj.velocities
    blocks = [p[1:] - p[:-1] - dt * v[:-1]]
    if model.kind == "double_integrator":
        a = model.acceleration(traj.states)
        blocks.append(v[1:] - v[:-1] - dt * a[:-1])
    out = [np.concatenate([b.ravel() for b in blocks])]
    for which, target in _boundary_parts(model):
        x = traj.states[0 if which == "initial" else -1]
        out.append(x[: target.shape[0]] - target)
    return ConstraintResidual(equality=np.concatenate(out), inequality=np.empty(0))


def equality_vjp(traj: Trajectory, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Transposed-Jacobian product of the equality residuals.

    Returns (grad_states (T, n), grad_log_dt (T-1,)) for the scalar w . f.
    Note d/d(log_dt) of -dt*v is -dt*v itself (chain through exp).
    """
    model = traj.model
    T, n, d = traj.horizon, model.state_dim, model.dim
    dt = traj.dt
    gs = np.zeros((T, n))
    gl = np.zeros(T - 1)
    m = (T - 1) * d
    wp = w[:m].reshape(T - 1, d)
    gs[1:, :d] += wp
    gs[:-1, :d] -= wp
    gs[:-1, d : 2 * d] -= dt[:, None] * wp
    gl -= dt * np.einsum("td,td->t", wp, traj.velocities[:-1])
    off = m
    if model.kind == "double_integrator":
        wv = w[off : off + m].reshape(T - 1, d)
        acc = model.acceleration(traj.states)
        gs[1:, d : 2 * d] += wv
        gs[:-1, d : 2 * d] -= wv
        gs[:-1, 2 * d : 3 * d] -= dt[:, None] * wv
        gl -= dt * np.einsum("td,td->t", wv, acc[:-1])
        off += m
    for which, target in _boundary_parts(model):
        k = target.shape[0]
        gs[0 if which == "initial" else -1, :k] += w[off : off + k]
        off += k
    return gs, gl


def _safe_unit(steps: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(steps, axis=1, keepdims=True)
    return np.where(norms > 0.0, steps / np.where(norms > 0.0, norms, 1.0), 0.0)


def inequality_residuals(traj: Trajectory) -> ConstraintResidual:
    """Velocity/step bounds, log-dt box, and optional length/time budgets.

    Layout: step-length or speed rows, dt lower rows, dt upper rows,
    acceleration rows (double integrator with a_max), then the optional
    scalar path-length and total-time rows.
    """
    model = traj.model
    dt = traj.dt
    steps = np.diff(traj.positions, axis=0)
    step_len = np.linalg.norm(steps, axis=1)
    blocks = []
    if model.velocity_bound == "step_length":
        blocks.append(step_len - model.v_max * dt)
    else:
        blocks.append(np.linalg.norm(traj.velocities, axis=1) - model.v_max)
    lo, hi = model.dt_bounds
    blocks.append(np.log(lo) - traj.log_dt)
    blocks.append(traj.log_dt - np.log(hi))
    if model.kind == "double_integrator" and model.a_max is not None:
        acc = model.acceleration(traj.states)
        blocks.append(np.linalg.norm(acc, axis=1) - model.a_max)
    if model.L_max is not None:
        blocks.append(np.array([step_len.sum() - model.L_max]))
    if model.t_max is not None:
        blocks.append(np.array([dt.sum() - model.t_max]))
    return ConstraintResidual(equality=np.empty(0), inequality=np.concatenate(blocks))


def inequality_vjp(traj: Trajectory, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Transposed-Jacobian product of the inequality residuals."""
    model = traj.model
    T, n, d = traj.horizon, model.state_dim, model.dim
    dt = traj.dt
    steps = np.diff(traj.positions, axis=0)
    units = _safe_unit(steps)
    gs = np.zeros((T, n))
    gl = np.zeros(T - 1)
    off = 0
    if model.velocity_bound == "step_length":
        ws = w[off : off + T - 1]
        gs[1:, :d] += ws[:, None] * units
        gs[:-1, :d] -= ws[:, None] * units
        gl -= ws * model.v_max * dt
        off += T - 1
    else:
        ws = w[off : off + T]
        vel = traj.velocities
        vu = _safe_unit(vel)
        gs[:, d : 2 * d] += ws[:, None] * vu
        off += T
    gl -= w[off : off + T - 1]  # dt lower bound rows
    off += T - 1
    gl += w[off : off + T - 1]  # dt upper bound rows
    off += T - 1
    if model.kind == "double_integrator" and model.a_max is not None:
        ws = w[off : off + T]
        acc = model.acceleration(traj.states)
        au = _safe_unit(acc)
        gs[:, 2 * d : 3 * d] += ws[:, None] * au
        off += T
    if model.L_max is not None:
        wl = w[off]
        gs[1:, :d] += wl * units
        gs[:-1, :d] -= wl * units
        off += 1
    if model.t_max is not None:
        gl += w[off] * dt
        off += 1
    return gs, gl


def residuals(traj: Trajectory) -> ConstraintResidual:
    """Both residual families in one record."""
    return ConstraintResidual(
        equality=equality_residuals(traj).equality,
        inequality=inequality_residuals(traj).inequality,
    )


def project_to_search_space(traj: Trajectory, domain: NormalizedDomain) -> TrajectoryPoints:
    """Normalized visit points g(x_t) mapped through the domain transform."""
    return TrajectoryPoints(domain.normalize(traj.positions))


def search_space_jacobian(model: DynamicsModel, domain: NormalizedDomain) -> np.ndarray:
    """Jacobian of the normalized projection w.r.t. the state, (d, n).

    Equals (1/e) times the position selector; the 1/e factor cancels the
    physical scaling in the chain rule, which is what makes gradients
    scale-invariant.
    """
    d, n = model.dim, model.state_dim
    J = np.zeros((d, n))
    J[:, :d] = np.eye(d) / domain.extent
    return J


def chain_gradient_to_states(grad_omegas: np.ndarray, model: DynamicsModel,
                             extent: float) -> np.ndarray:
    """Lift a (T, d) search-space gradient to a (T, n) state gradient."""
    T = grad_omegas.shape[0]
    gs = np.zeros((T, model.state_dim))
    gs[:, : model.dim] = grad_omegas / extent
    return gs


def seed_trajectory(model: DynamicsModel, domain, T: int, strategy: str = "line",
                    rng_seed: int = 0) -> Trajectory:
    """Deterministic initial guess inside the sample bounding box.

    Velocities are chosen to satisfy the Euler constraints exactly for the
    seeded positions and time steps; time steps start uniform at
    clamp(L_seed / (T v_max), dt_bounds). Fixed boundary positions from the
    model overwrite the first/last waypoint.
    """
    if T < 2:
        raise ValueError("horizon must be at least 2")
    if strategy not in _SEED_STRATEGIES:
        raise ValueError(f"unknown seed strategy {strategy!r}; expected one of {_SEED_STRATEGIES}")
    samples = domain.source if isinstance(domain, NormalizedDomain) else domain
    if not isinstance(samples, DomainSamples):
        raise TypeError("domain must be DomainSamples or NormalizedDomain")
    if samples.dim != model.dim:
        raise ValueError(f"domain dimension {samples.dim} != model dimension {model.dim}")
    lo = samples.points.min(axis=0)
    hi = samples.points.max(axis=0)
    extent = float((hi - lo).max())
    rng = np.random.default_rng(rng_seed)
    d = model.dim

    if strategy == "line":
        frac = np.linspace(0.0, 1.0, T)[:, None]
        pos = lo[None, :] + frac * (hi - lo)[None, :]
    elif strategy == "hover":
        # Minimal-assumption start: every knot at the initial position (the
        # bbox center when no boundary pin is configured), plus a tiny
        # deterministic jitter. Coincident knots sit at a stationary point of
        # the self-similarity term (and, on symmetric domains, of the whole
        # objective), which a first-order method cannot leave; the jitter
        # breaks that symmetry. The power-of-two scale keeps the perturbation
        # exactly proportional under domain rescaling.
        anchor = model.initial_state[:d] if model.initial_state is not None else 0.5 * (lo + hi)
        pos = np.tile(np.asarray(anchor, dtype=float), (T, 1))
        pos = pos + (extent * 2.0**-10) * rng.standard_normal((T, d))
        pos = np.clip(pos, lo[None, :], hi[None, :])
    elif strategy == "lawnmower_2d":
        if d < 2:
            raise ValueError("lawnmower_2d needs at least 2 spatial dimensions")
        rows = max(2, int(np.ceil(np.sqrt(T))))
        pos = np.empty((T, d))
        per_row = np.array_split(np.arange(T), rows)
        y_levels = np.linspace(lo[1], hi[1], rows)
        for r, idx in enumerate(per_row):
            xs = np.linspace(lo[0], hi[0], max(len(idx), 1))
            if r % 2 == 1:
                xs = xs[::-1]
            pos[idx, 0] = xs
            pos[idx, 1] = y_levels[r]
        if d > 2:
            pos[:, 2:] = 0.5 * (lo[2:] + hi[2:])[None, :]
    else:  # random_jitter: line seed plus bounded noise
        frac = np.linspace(0.0, 1.0, T)[:, None]
        pos = lo[None, :] + frac * (hi - lo)[None, :]
        pos = pos + 0.05 * extent * rng.standard_normal((T, d))
        pos = np.clip(pos, lo[None, :], hi[None, :])

    for which, target in _boundary_parts(model):
        pos[0 if which == "initial" else -1] = target[:d]

    seed_len = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())
    if strategy != "hover" and seed_len > 0:
        dt0 = seed_len / (T * model.v_max)
    elif model.L_max is not None:
        # (Near-)stationary seed: budget the nominal length over the horizon.
        dt0 = model.L_max / (T * model.v_max)
    else:
        dt0 = float(np.sqrt(model.dt_bounds[0] * model.dt_bounds[1]))
    dt0 = float(np.clip(dt0, *model.dt_bounds))
    log_dt = np.full(T - 1, np.log(dt0))

    states = np.zeros((T, model.state_dim))
    states[:, :d] = pos
    vel = np.zeros((T, d))
    vel[:-1] = np.diff(pos, axis=0) / dt0
    states[:, d : 2 * d] = vel
    if model.kind == "double_integrator":
        acc = np.zeros((T, d))
        acc[:-1] = np.diff(vel, axis=0) / dt0
        states[:, 2 * d : 3 * d] = acc
    return Trajectory(states=states, log_dt=log_dt, model=model)


# ---------------------------------------------------------------------------
# Serialization. CSV columns are t, x_1..x_n, dt (dt empty on the last row);
# JSON carries model metadata, units, and the normalization record so
# downstream tools never re-derive scale.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.model.state_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + ["dt"])
        dt = traj.dt
        for t in range(traj.horizon):
            row = [str(t)] + [_fmt(v) for v in traj.states[t]]
            row.append(_fmt(dt[t]) if t < traj.horizon - 1 else "")
            writer.writerow(row)


def model_to_dict(model: DynamicsModel) -> dict:
    return {
        "kind": model.kind,
        "dim": model.dim,
        "v_max": model.v_max,
        "a_max": model.a_max,
        "L_max": model.L_max,
        "t_max": model.t_max,
        "dt_bounds": list(model.dt_bounds),
        "velocity_bound": model.velocity_bound,
        "initial_state": None if model.initial_state is None else list(model.initial_state),
        "final_state": None if model.final_state is None else list(model.final_state),
    }


def model_from_dict(data: dict) -> DynamicsModel:
    return DynamicsModel(
        kind=data["kind"],
        dim=data["dim"],
        v_max=data["v_max"],
        a_max=data.get("a_max"),
        L_max=data.get("L_max"),
        t_max=data.get("t_max"),
        dt_bounds=tuple(data.get("dt_bounds", (1e-3, 1e3))),
        velocity_bound=data.get("velocity_bound", "step_length"),
        initial_state=data.get("initial_state"),
        final_state=data.get("final_state"),
    )


def save_trajectory_json(traj: Trajectory, path, extent: Optional[float] = None,
                         offset: Optional[np.ndarray] = None) -> None:
    doc = {
        "schema_version": 1,
        "units": {"length": "m", "time": "s"},
        "model": model_to_dict(traj.model),
        "normalization": None if extent is None else {
            "extent": float(extent),
            "offset": [float(v) for v in np.asarray(offset).ravel()],
        },
        "states": [[float(v) for v in row] for row in traj.states],
        "log_dt": [float(v) for v in traj.log_dt],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_trajectory_json(path) -> Tuple[Trajectory, Optional[dict]]:
    """Load a trajectory plus its normalization record (None when absent)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ValueError(f"{path}: unsupported trajectory schema version "
                         f"{doc.get('schema_version')!r}")
    model = model_from_dict(doc["model"])
    traj = Trajectory(states=np.asarray(doc["states"], dtype=float),
                      log_dt=np.asarray(doc["log_dt"], dtype=float), model=model)
    return traj, doc.get("normalization")
