"""Constrained minimization of the coverage objective.

The solve is organized as three nested loops:

* an outer geometric bandwidth continuation h_0 -> h* (broad kernels first,
  shrinking toward the physically meaningful footprint), warm-starting each
  stage from the previous solution;
* an augmented-Lagrangian loop per stage that maintains multiplier
  estimates for the Euler equality constraints and the inequality bounds,
  growing the penalty when feasibility stalls;
* a first-order inner minimizer over the joint (states, log_dt) vector with
  a backtracking Armijo line search and optional L-BFGS acceleration.

The solver works on an internally normalized copy of the problem: positions
and velocities are divided by the domain extent, so the numbers it
manipulates are identical (up to rounding of the inputs) for physically
rescaled instances. Residual tolerances therefore apply on the normalized
scale. The raw-estimator mode skips normalization and annealing entirely
and evaluates the kernel on physical coordinates at one fixed bandwidth;
it exists as a baseline and fails by design at large scales.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .domain import DomainSamples, NormalizedDomain
from .dynamics import (
    ConstraintResidual,
    DynamicsModel,
    Trajectory,
    chain_gradient_to_states,
    equality_residuals,
    equality_vjp,
    inequality_residuals,
    inequality_vjp,
    seed_trajectory,
)
from .kernel import KernelConfig
from .objective import EmmdProblem


class InvalidSchedule(ValueError):
    """Annealing schedule with nonpositive parameters or too few stages."""


class NonFiniteObjective(RuntimeError):
    """The objective or its gradient became NaN/Inf and retries failed."""


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric bandwidth continuation from h0 to h_phys_star / extent^2.

    The target bandwidth is stated physically (squared-length units) and
    divided by the squared extent so one physical footprint means the same
    thing at every scale.
    """

    h0: float
    h_phys_star: float
    num_stages: int
    extent: float

    def __post_init__(self):
        if self.num_stages < 2:
            raise InvalidSchedule(f"need at least 2 stages, got {self.num_stages}")
        for name in ("h0", "h_phys_star", "extent"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise InvalidSchedule(f"{name} must be positive and finite, got {v}")

    @property
    def h_norm_star(self) -> float:
        return self.h_phys_star / self.extent**2

    @classmethod
    def from_normalized(cls, h0: float, h_norm_star: float, num_stages: int) -> "AnnealingSchedule":
        """Schedule stated directly in normalized bandwidth (extent 1)."""
        return cls(h0=h0, h_phys_star=h_norm_star, num_stages=num_stages, extent=1.0)


def anneal_sequence(schedule: AnnealingSchedule) -> np.ndarray:
    """The K bandwidths h_k = h0 (h*/h0)^(k/(K-1)); endpoints exact."""
    K = schedule.num_stages
    ratio = schedule.h_norm_star / schedule.h0
    k = np.arange(K)
    return schedule.h0 * ratio ** (k / (K - 1))


@dataclass
class InnerConfig:
    """Inner minimizer knobs. ``accel='lbfgs'`` turns on quasi-second-order
    acceleration; ``'gd'`` is plain gradient descent."""

    max_iter: int = 200
    grad_tol: float = 1e-8
    ftol: float = 1e-12  # relative decrease over `ftol_window` accepted steps
    ftol_window: int = 5
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14
    max_move: float = 1.0  # cap on the per-iteration inf-norm move
    accel: str = "lbfgs"
    lbfgs_memory: int = 10

    def __post_init__(self):
        if self.accel not in ("lbfgs", "gd"):
            raise ValueError(f"accel must be 'lbfgs' or 'gd', got {self.accel!r}")


@dataclass
class ALConfig:
    """Augmented-Lagrangian loop parameters."""

    mu0: float = 10.0
    gamma: float = 10.0
    eps_eq: float = 1e-6
    eps_ineq: float = 1e-6
    rounds_per_stage: int = 4
    polish_rounds: int = 8
    # Feasibility tracked only down to this level while the bandwidth is
    # still moving; the final tolerances are enforced by the polish phase.
    anneal_feas: float = 1e-4

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not (self.eps_eq > 0 and self.eps_ineq > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class SolverConfig:
    """Everything a solve needs besides the domain and the dynamics model."""

    horizon: int
    annealing: Optional[AnnealingSchedule] = None
    objective: str = "log_emmd"  # "log_emmd" (normalized, annealed) or "emmd" (raw baseline)
    h_fixed: Optional[float] = None  # bandwidth for the raw baseline
    include_constant: bool = True
    al: ALConfig = field(default_factory=ALConfig)
    inner: InnerConfig = field(default_factory=InnerConfig)
    seed_strategy: str = "line"
    rng_seed: int = 0
    fix_initial: bool = True

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.objective not in ("log_emmd", "emmd"):
            raise ValueError(f"objective must be 'log_emmd' or 'emmd', got {self.objective!r}")
        if self.objective == "log_emmd" and self.annealing is None:
            raise ValueError("log_emmd mode requires an annealing schedule")
        if self.objective == "emmd" and self.h_fixed is None:
            raise ValueError("emmd mode requires h_fixed")


@dataclass
class TraceEntry:
    stage: int
    h: float
    al_round: int
    inner_iter: int
    value: float


@dataclass
class SolverReport:
    """Solve outcome: final trajectory (physical units), the objective trace,
    residuals on the normalized scale, and provenance."""

    trajectory: Trajectory
    objective_trace: List[TraceEntry]
    residuals: ConstraintResidual
    converged: bool
    wall_time: float
    evaluations: int
    objective_value: float
    extent: float
    offset: np.ndarray
    diagnostics: Optional[str] = None
    config_echo: dict = field(default_factory=dict)
    line_search_evals: int = 0


@dataclass
class ObjectiveContext:
    """Binds the coverage objective to a trajectory coordinate frame.

    ``extent``/``offset`` map trajectory positions into the frame the
    ``problem`` was built in (identity for an already-normalized problem).
    """

    problem: EmmdProblem
    h: float
    mode: str = "log_emmd"
    include_constant: bool = True
    extent: float = 1.0
    offset: Optional[np.ndarray] = None

    def value_and_omega_grad(self, traj: Trajectory) -> Tuple[float, np.ndarray]:
        pos = traj.positions
        if self.offset is not None:
            pos = pos - self.offset
        om = pos / self.extent
        if self.mode == "log_emmd":
            ev = self.problem.log_emmd(om, h=self.h, include_constant=self.include_constant)
        else:
            ev = self.problem.emmd(om, h=self.h)
        return ev.value, ev.grad_omegas


def augmented_lagrangian_value_and_grad(
    traj: Trajectory,
    lam: np.ndarray,
    sigma: np.ndarray,
    mu: float,
    ctx: ObjectiveContext,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """AL value and its gradient over (states, log_dt).

    L = obj + lam.f + (mu/2)|f|^2 + (1/2mu)(|max(0, sigma + mu g)|^2 - |sigma|^2)

    which matches the classic inequality form (mu/2)|max(0, sigma/mu + g)|^2
    - |sigma|^2/(2 mu). With mu = 0 the plain Lagrangian obj + lam.f +
    sigma.g is used (the quadratic form degenerates).
    """
    value, grad_om = ctx.value_and_omega_grad(traj)
    gs = chain_gradient_to_states(grad_om, traj.model, ctx.extent)
    gl = np.zeros(traj.horizon - 1)

    eq = equality_residuals(traj).equality
    ineq = inequality_residuals(traj).inequality
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if lam.shape != eq.shape:
        raise ValueError(f"expected {eq.shape[0]} equality multipliers, got {lam.shape}")
    if sigma.shape != ineq.shape:
        raise ValueError(f"expected {ineq.shape[0]} inequality multipliers, got {sigma.shape}")

    if mu > 0:
        active = np.maximum(0.0, sigma + mu * ineq)
        value += float(lam @ eq + 0.5 * mu * (eq @ eq))
        value += float((active @ active - sigma @ sigma) / (2.0 * mu))
        w_eq = lam + mu * eq
        w_in = active
    else:
        value += float(lam @ eq + sigma @ ineq)
        w_eq = lam
        w_in = sigma
    if eq.size:
        a, b = equality_vjp(traj, w_eq)
        gs += a
        gl += b
    if ineq.size:
        a, b = inequality_vjp(traj, w_in)
        gs += a
        gl += b
    return value, gs, gl


# -- inner minimizer ---------------------------------------------------------

@dataclass
class InnerResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    stalled: bool
    evaluations: int
    line_search_evals: int
    status: str = "max_iter"  # grad_tol | ftol | stalled | max_iter | nonfinite
    nonfinite: bool = False


def inner_minimize(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                   x0: np.ndarray, cfg: InnerConfig,
                   callback: Optional[Callable[[int, float], None]] = None) -> InnerResult:
    """First-order descent with backtracking line search.

    Accepted steps satisfy the Armijo sufficient-decrease condition, so the
    value sequence is monotone non-increasing. Non-finite trial values are
    treated as failed trials (the step is halved); a non-finite value or
    gradient at the current iterate aborts via NonFiniteObjective after one
    halved-step retry.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    evals = 1
    ls_evals = 0
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise NonFiniteObjective("objective non-finite at the starting point")
    if callback:
        callback(0, f)

    s_hist: List[np.ndarray] = []
    y_hist: List[np.ndarray] = []
    f_window: List[float] = [f]
    step = 1.0
    stalled = False
    it = 0
    while it < cfg.max_iter:
        gnorm = float(np.abs(g).max()) if g.size else 0.0
        if gnorm <= cfg.grad_tol:
            return InnerResult(x, f, gnorm, it, True, False, evals, ls_evals, status="grad_tol")
        if len(f_window) > cfg.ftol_window:
            f_window.pop(0)
            if f_window[0] - f <= cfg.ftol * max(1.0, abs(f)):
                return InnerResult(x, f, gnorm, it, False, False, evals, ls_evals, status="ftol")

        p = -g
        if cfg.accel == "lbfgs" and s_hist:
            p = -_lbfgs_direction(g, s_hist, y_hist)
            if not np.isfinite(p).all() or p @ g >= 0.0:
                p = -g
        # Unit-scale first try for quasi-Newton directions; for plain descent
        # reuse (and grow) the last accepted step. Either way the first trial
        # is capped so one iteration never moves a coordinate by more than
        # max_move (keeps trial states finite and curvature pairs sane).
        alpha = 1.0 if cfg.accel == "lbfgs" else min(step * 2.0, 1e3)
        pmax = float(np.abs(p).max())
        if pmax * alpha > cfg.max_move:
            alpha = cfg.max_move / pmax
        slope = float(p @ g)
        accepted = False
        retried_nonfinite = False
        while alpha >= cfg.min_step:
            x_try = x + alpha * p
            f_try, g_try = fun(x_try)
            evals += 1
            ls_evals += 1
            if not np.isfinite(f_try):
                if retried_nonfinite and alpha < 1e-8:
                    raise NonFiniteObjective(
                        f"objective stayed non-finite during line search at iter {it}")
                retried_nonfinite = True
                alpha *= cfg.backtrack
                continue
            if f_try <= f + cfg.armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            stalled = True
            break
        if not np.isfinite(g_try).all():
            # One retry from a half step, per the NaN policy; then give up.
            x_half = x + 0.5 * alpha * p
            f_half, g_half = fun(x_half)
            evals += 1
            if np.isfinite(f_half) and np.isfinite(g_half).all() and f_half <= f:
                x_try, f_try, g_try = x_half, f_half, g_half
            else:
                return InnerResult(x, f, float(np.abs(g).max()), it, False, True,
                                   evals, ls_evals, status="nonfinite", nonfinite=True)
        if cfg.accel == "lbfgs":
            s = x_try - x
            y = g_try - g
            sy = float(s @ y)
            if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                s_hist.append(s)
                y_hist.append(y)
                if len(s_hist) > cfg.lbfgs_memory:
                    s_hist.pop(0)
                    y_hist.pop(0)
        x, f, g = x_try, f_try, g_try
        step = alpha
        it += 1
        f_window.append(f)
        if callback:
            callback(it, f)
    gnorm = float(np.abs(g).max()) if g.size else 0.0
    status = "stalled" if stalled else ("grad_tol" if gnorm <= cfg.grad_tol else "max_iter")
    return InnerResult(x, f, gnorm, it, gnorm <= cfg.grad_tol, stalled, evals, ls_evals,
                       status=status)


def _lbfgs_direction(g: np.ndarray, s_hist: List[np.ndarray], y_hist: List[np.ndarray]) -> np.ndarray:
    """Two-loop recursion for H g with the standard last-pair scaling."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / (y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


# -- the full solve ----------------------------------------------------------

def _pack(states: np.ndarray, log_dt: np.ndarray) -> np.ndarray:
    return np.concatenate([states.ravel(), log_dt])


def _unpack(z: np.ndarray, T: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    return z[: T * n].reshape(T, n), z[T * n :]


def _normalized_model(domain: NormalizedDomain, model: DynamicsModel) -> DynamicsModel:
    """Rescale all length-typed model quantities into extent-1 coordinates."""
    e = domain.extent
    d = model.dim

    def norm_state(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).copy()
        x[:d] = (x[:d] - domain.offset) / e
        x[d:] = x[d:] / e  # velocity (and acceleration) blocks scale by 1/e
        return x

    return replace(
        model,
        v_max=model.v_max / e,
        a_max=None if model.a_max is None else model.a_max / e,
        L_max=None if model.L_max is None else model.L_max / e,
        initial_state=None if model.initial_state is None else norm_state(model.initial_state),
        final_state=None if model.final_state is None else norm_state(model.final_state),
    )


def _denormalize_trajectory(traj: Trajectory, model: DynamicsModel,
                            domain: NormalizedDomain) -> Trajectory:
    e = domain.extent
    d = model.dim
    states = traj.states.copy()
    states[:, :d] = states[:, :d] * e + domain.offset
    states[:, d:] = states[:, d:] * e
    return Trajectory(states=states, log_dt=traj.log_dt, model=model)


def solve(domain, model: DynamicsModel, config: SolverConfig) -> SolverReport:
    """Run the annealed augmented-Lagrangian solve and report the outcome.

    ``domain`` may be DomainSamples or NormalizedDomain. The trajectory in
    the report is in physical units; ``residuals`` are measured on the
    normalized problem (physical divided by the extent), which is the scale
    the convergence tolerances apply to. Deterministic for a fixed config
    and rng_seed.
    """
    t_start = time.perf_counter()
    ndom = domain if isinstance(domain, NormalizedDomain) else NormalizedDomain(domain)

    normalize = config.objective == "log_emmd"
    if normalize:
        # Seed directly on the normalized problem: its inputs are identical
        # across uniform physical rescalings, so the whole solve is too.
        work_model = _normalized_model(ndom, model)
        ds_hat = DomainSamples(ndom.normalized_points, ndom.weights)
        work_traj = seed_trajectory(work_model, ds_hat, config.horizon,
                                    strategy=config.seed_strategy,
                                    rng_seed=config.rng_seed)
        problem = EmmdProblem(ndom, KernelConfig())
        h_values = anneal_sequence(config.annealing)
    else:
        work_model = model
        work_traj = seed_trajectory(model, ndom.source, config.horizon,
                                    strategy=config.seed_strategy,
                                    rng_seed=config.rng_seed)
        problem = EmmdProblem(ndom.source.points, KernelConfig(),
                              weights=ndom.source.weights)
        h_values = np.array([config.h_fixed], dtype=float)

    if config.fix_initial and work_model.initial_state is None:
        pin = work_traj.positions[0].copy()
        work_model = replace(work_model, initial_state=pin)
        work_traj = Trajectory(states=work_traj.states, log_dt=work_traj.log_dt,
                               model=work_model)
        if normalize:
            model = replace(model, initial_state=ndom.denormalize(pin))
        else:
            model = replace(model, initial_state=pin)

    T, n = config.horizon, work_model.state_dim
    n_eq = equality_residuals(work_traj).equality.shape[0]
    n_in = inequality_residuals(work_traj).inequality.shape[0]
    lam = np.zeros(n_eq)
    sigma = np.zeros(n_in)
    mu = config.al.mu0
    prev_violation = np.inf

    trace: List[TraceEntry] = []
    ls_total = 0
    z = _pack(work_traj.states, work_traj.log_dt)
    diagnostics = None

    def make_traj(zv: np.ndarray) -> Trajectory:
        st, ld = _unpack(zv, T, n)
        return Trajectory(states=st, log_dt=ld, model=work_model)

    eps_floor = max(config.al.eps_eq, config.al.eps_ineq)

    def al_round(k: int, h: float, rnd: int, ctx: ObjectiveContext, grow_floor: float):
        """One inner minimize plus multiplier/penalty update. Returns
        (feasible, inner status)."""
        nonlocal z, lam, sigma, mu, prev_violation, ls_total

        def fun(zv: np.ndarray) -> Tuple[float, np.ndarray]:
            t = make_traj(zv)
            val, gs, gl = augmented_lagrangian_value_and_grad(t, lam, sigma, mu, ctx)
            return val, _pack(gs, gl)

        def record(i: int, v: float) -> None:
            trace.append(TraceEntry(stage=k, h=h, al_round=rnd, inner_iter=i, value=v))

        res = inner_minimize(fun, z, config.inner, callback=record)
        z = res.x
        ls_total += res.line_search_evals
        cur = make_traj(z)
        eq = equality_residuals(cur).equality
        ineq = inequality_residuals(cur).inequality
        lam = lam + mu * eq
        sigma = np.maximum(0.0, sigma + mu * ineq)
        eq_viol = float(np.abs(eq).max()) if eq.size else 0.0
        in_viol = float(max(0.0, ineq.max())) if ineq.size else 0.0
        violation = max(eq_viol, in_viol)
        # Grow the penalty when the violation fails to drop by 4x while
        # still above the floor; a hard cap keeps the inner problem from
        # becoming hopelessly stiff.
        if violation > grow_floor and violation > prev_violation / 4.0:
            mu = min(mu * config.al.gamma, 1e12)
        prev_violation = violation
        feasible = eq_viol <= config.al.eps_eq and in_viol <= config.al.eps_ineq
        return feasible, res.status

    try:
        # Continuation over bandwidths. Feasibility is enforced loosely here
        # (growth only above anneal_feas, progress reference reset per stage
        # because each bandwidth change legitimately perturbs the residuals)
        # so the penalty stays mild and the objective makes progress.
        stage_floor = max(config.al.anneal_feas, 10.0 * eps_floor)
        for k, h in enumerate(h_values):
            prev_violation = np.inf
            ctx = ObjectiveContext(problem=problem, h=float(h), mode=config.objective,
                                   include_constant=config.include_constant)
            for rnd in range(config.al.rounds_per_stage):
                feasible, status = al_round(k, float(h), rnd, ctx, stage_floor)
                if feasible and status in ("grad_tol", "ftol", "stalled"):
                    break
        # Feasibility polish at the final bandwidth with the strict rule.
        k_last = len(h_values) - 1
        ctx = ObjectiveContext(problem=problem, h=float(h_values[-1]), mode=config.objective,
                               include_constant=config.include_constant)
        for rnd in range(config.al.polish_rounds):
            cur = make_traj(z)
            if (equality_residuals(cur).max_eq_violation <= config.al.eps_eq
                    and inequality_residuals(cur).max_ineq_violation <= config.al.eps_ineq):
                break
            al_round(k_last, float(h_values[-1]), config.al.rounds_per_stage + rnd,
                     ctx, eps_floor)
    except NonFiniteObjective as exc:
        diagnostics = f"aborted: {exc}"

    final = make_traj(z)
    res_eq = equality_residuals(final)
    res_in = inequality_residuals(final)
    final_residuals = ConstraintResidual(equality=res_eq.equality, inequality=res_in.inequality)
    converged = (
        diagnostics is None
        and final_residuals.max_eq_violation <= config.al.eps_eq
        and final_residuals.max_ineq_violation <= config.al.eps_ineq
    )
    ctx = ObjectiveContext(problem=problem, h=float(h_values[-1]), mode=config.objective,
                           include_constant=config.include_constant)
    final_value, _ = ctx.value_and_omega_grad(final)

    if normalize:
        traj_phys = _denormalize_trajectory(final, model, ndom)
        extent, offset = ndom.extent, np.asarray(ndom.offset)
    else:
        traj_phys = final
        extent, offset = 1.0, np.zeros(model.dim)

    return SolverReport(
        trajectory=traj_phys,
        objective_trace=trace,
        residuals=final_residuals,
        converged=bool(converged),
        wall_time=time.perf_counter() - t_start,
        evaluations=len(trace),
        objective_value=float(final_value),
        extent=float(extent),
        offset=offset,
        diagnostics=diagnostics,
        config_echo=config_to_dict(config),
        line_search_evals=ls_total,
    )


def config_to_dict(config: SolverConfig) -> dict:
    ann = config.annealing
    return {
        "horizon": config.horizon,
        "objective": config.objective,
        "h_fixed": config.h_fixed,
        "include_constant": config.include_constant,
        "annealing": None if ann is None else {
            "h0": ann.h0, "h_phys_star": ann.h_phys_star,
            "num_stages": ann.num_stages, "extent": ann.extent,
        },
        "al": {
            "mu0": config.al.mu0, "gamma": config.al.gamma,
            "eps_eq": config.al.eps_eq, "eps_ineq": config.al.eps_ineq,
            "rounds_per_stage": config.al.rounds_per_stage,
        },
        "inner": {
            "max_iter": config.inner.max_iter, "grad_tol": config.inner.grad_tol,
            "armijo_c": config.inner.armijo_c, "backtrack": config.inner.backtrack,
            "accel": config.inner.accel, "lbfgs_memory": config.inner.lbfgs_memory,
        },
        "seed_strategy": config.seed_strategy,
        "rng_seed": config.rng_seed,
        "fix_initial": config.fix_initial,
    }
