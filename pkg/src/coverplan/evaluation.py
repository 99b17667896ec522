"""Coverage metrics, baselines, and the scale-sweep benchmark harness.

Coverage counts a sample as covered when its distance to the trajectory
*polyline* (segments, not just knots) is within a physical covering radius,
so the knot count does not artificially limit coverage. The fraction is
weighted by the sample weights; uniform weights reduce it to a plain count.
The metric is deterministic and scale-equivariant: scaling trajectory,
samples, and radius together leaves the result unchanged, which is what
makes cross-scale comparisons meaningful.

The TSP baseline is a greedy nearest-neighbor walk truncated at the length
budget. It is deliberately simple: the point of the comparison is that
visit-order heuristics cannot trade path length for global spread, not that
a better TSP solver would close the gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .domain import DomainSamples, NormalizedDomain
from .dynamics import DynamicsModel, Trajectory
from .solver import AnnealingSchedule, SolverConfig, SolverReport, solve


@dataclass
class CoverageResult:
    """Weighted covered fraction plus the per-sample mask and path length."""

    covered_fraction: float
    radius_phys: float
    per_sample_covered: np.ndarray  # bool mask, length M
    path_length: float


def _polyline(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.positions
    pts = np.atleast_2d(np.asarray(traj, dtype=float))
    return pts


def point_segment_distances(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Min distance from each point to any segment of the polyline.

    A single-vertex polyline degenerates to point-to-point distance.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.atleast_2d(np.asarray(polyline, dtype=float))
    if poly.shape[0] == 1:
        return np.linalg.norm(points - poly[0], axis=1)
    best = np.full(points.shape[0], np.inf)
    starts = poly[:-1]
    steps = np.diff(poly, axis=0)
    lens2 = np.einsum("td,td->t", steps, steps)
    for a, ab, l2 in zip(starts, steps, lens2):
        if l2 > 0.0:
            t = np.clip((points - a) @ ab / l2, 0.0, 1.0)
            proj = a + t[:, None] * ab
        else:
            proj = np.broadcast_to(a, points.shape)
        best = np.minimum(best, np.linalg.norm(points - proj, axis=1))
    return best


def coverage(traj, samples: DomainSamples, radius_phys: float) -> CoverageResult:
    """Weighted fraction of samples within radius_phys of the trajectory."""
    if not radius_phys > 0:
        raise ValueError(f"covering radius must be positive, got {radius_phys}")
    poly = _polyline(traj)
    if poly.shape[1] != samples.dim:
        raise ValueError(f"trajectory dimension {poly.shape[1]} != samples dimension {samples.dim}")
    dists = point_segment_distances(samples.points, poly)
    mask = dists <= radius_phys
    frac = float(samples.weights @ mask)
    length = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum()) if poly.shape[0] > 1 else 0.0
    return CoverageResult(covered_fraction=frac, radius_phys=float(radius_phys),
                          per_sample_covered=mask, path_length=length)


def tsp_nearest_neighbor(samples: DomainSamples, start: np.ndarray,
                         L_max: Optional[float] = None) -> np.ndarray:
    """Greedy nearest-neighbor visit order from ``start``, truncated at L_max.

    Returns the visited polyline including the start point. Ties break
    lexicographically on coordinates, making the walk deterministic. With no
    length budget every sample is visited exactly once.
    """
    pts = samples.points
    M = pts.shape[0]
    start = np.asarray(start, dtype=float).ravel()
    if start.shape[0] != samples.dim:
        raise ValueError(f"start has dimension {start.shape[0]}, samples have {samples.dim}")
    # Lexicographic key used to break distance ties deterministically.
    order = np.lexsort(pts.T[::-1])
    visited = np.zeros(M, dtype=bool)
    path = [start]
    cur = start
    budget = np.inf if L_max is None else float(L_max)
    used = 0.0
    for _ in range(M):
        remaining = np.flatnonzero(~visited)
        if remaining.size == 0:
            break
        d = np.linalg.norm(pts[remaining] - cur, axis=1)
        dmin = d.min()
        cand = remaining[d <= dmin]
        if cand.size > 1:
            ranks = {idx: r for r, idx in enumerate(order)}
            cand = np.array(sorted(cand, key=lambda i: ranks[i]))
        nxt = int(cand[0])
        if used + dmin > budget:
            break
        used += dmin
        visited[nxt] = True
        cur = pts[nxt]
        path.append(cur)
    return np.asarray(path)


def subsample_for_tsp(samples: DomainSamples, count: int, rng_seed: int = 0) -> DomainSamples:
    """Uniform random subsample used for the unconstrained-TSP comparison."""
    M = samples.num_points
    if count >= M:
        return samples
    idx = np.sort(np.random.default_rng(rng_seed).choice(M, size=count, replace=False))
    return DomainSamples(samples.points[idx], samples.weights[idx])


# -- scale-sweep harness -----------------------------------------------------

_METHODS = ("si_emmd", "emmd", "tsp", "tsp_free")


@dataclass
class SweepConfig:
    """One benchmark problem, stated at scale 1.

    Per scale s, lengths (coordinates, v_max, L_max, radius) multiply by s
    and the physical bandwidth by s^2; the raw-estimator baseline keeps its
    scale-1 bandwidth, which is exactly the failure mode under test.
    """

    samples: DomainSamples
    horizon: int
    v_max: float
    L_max: float
    radius: float
    h_phys_star: float
    h0: float = 0.05
    num_stages: int = 10
    h_fixed: Optional[float] = None  # raw-estimator bandwidth; h_phys_star when unset
    methods: Sequence[str] = ("si_emmd", "emmd", "tsp")
    dt_bounds: tuple = (1e-3, 1e3)
    rng_seed: int = 0
    solver_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in self.methods:
            if m not in _METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {_METHODS}")


@dataclass
class SweepCell:
    """One (method, scale, repeat) run."""

    method: str
    scale: float
    repeat: int
    coverage_pct: float
    wall_time: float
    converged: bool
    path_length: float


@dataclass
class BenchmarkRow:
    """Aggregate over repeats for one (method, scale)."""

    method: str
    scale: float
    coverage_pct: float
    time_mean: float
    time_std: Optional[float]  # reported only with >= 3 repeats
    converged: bool
    repeats: int


@dataclass
class SweepResult:
    cells: List[SweepCell]
    rows: List[BenchmarkRow]


def _start_point(samples: DomainSamples) -> np.ndarray:
    """Shared initial position: the sample closest to the bbox minimum."""
    lo = samples.points.min(axis=0)
    i = int(np.argmin(np.linalg.norm(samples.points - lo, axis=1)))
    return samples.points[i].copy()


def _solver_config(cfg: SweepConfig, samples: DomainSamples, method: str,
                   rng_seed: int) -> SolverConfig:
    from .domain import compute_extent

    extent = compute_extent(samples)
    if method == "si_emmd":
        kw = dict(
            horizon=cfg.horizon,
            annealing=AnnealingSchedule(h0=cfg.h0, h_phys_star=cfg.h_phys_star,
                                        num_stages=cfg.num_stages, extent=extent),
            objective="log_emmd",
            rng_seed=rng_seed,
        )
    else:  # raw estimator: fixed scale-1 bandwidth, no normalization
        h_fixed = cfg.h_fixed if cfg.h_fixed is not None else cfg.h_phys_star
        kw = dict(horizon=cfg.horizon, objective="emmd", h_fixed=h_fixed,
                  rng_seed=rng_seed)
    kw.update(cfg.solver_overrides)
    return SolverConfig(**kw)


def run_sweep_cell(cfg: SweepConfig, method: str, scale: float, repeat: int) -> SweepCell:
    """Run one method at one scale; failures become converged=False cells."""
    s = float(scale)
    samples = cfg.samples.scaled(s)
    radius = cfg.radius * s
    seed = cfg.rng_seed + repeat
    t0 = time.perf_counter()
    if method in ("tsp", "tsp_free"):
        if method == "tsp_free":
            sub = subsample_for_tsp(samples, cfg.horizon, rng_seed=seed)
            path = tsp_nearest_neighbor(sub, _start_point(samples), L_max=None)
        else:
            path = tsp_nearest_neighbor(samples, _start_point(samples), L_max=cfg.L_max * s)
        cov = coverage(path, samples, radius)
        return SweepCell(method=method, scale=s, repeat=repeat,
                         coverage_pct=100.0 * cov.covered_fraction,
                         wall_time=time.perf_counter() - t0, converged=True,
                         path_length=cov.path_length)
    model = DynamicsModel(kind="single_integrator", dim=samples.dim,
                          v_max=cfg.v_max * s, L_max=cfg.L_max * s,
                          dt_bounds=cfg.dt_bounds,
                          initial_state=_start_point(samples))
    scfg = cfg_base = _solver_config(cfg, samples, method, seed)
    if method == "si_emmd":
        scfg = replace(cfg_base, annealing=replace(cfg_base.annealing,
                                                   h_phys_star=cfg.h_phys_star * s * s))
    try:
        report = solve(samples, model, scfg)
        cov = coverage(report.trajectory, samples, radius)
        return SweepCell(method=method, scale=s, repeat=repeat,
                         coverage_pct=100.0 * cov.covered_fraction,
                         wall_time=time.perf_counter() - t0,
                         converged=report.converged, path_length=cov.path_length)
    except Exception:
        return SweepCell(method=method, scale=s, repeat=repeat, coverage_pct=0.0,
                         wall_time=time.perf_counter() - t0, converged=False,
                         path_length=0.0)


def run_scale_sweep(cfg: SweepConfig, scales: Sequence[float], repeats: int = 1) -> SweepResult:
    """All (method, scale, repeat) cells plus per-(method, scale) aggregates."""
    cells = [
        run_sweep_cell(cfg, method, scale, r)
        for method in cfg.methods
        for scale in scales
        for r in range(repeats)
    ]
    rows = []
    for method in cfg.methods:
        for scale in scales:
            grp = [c for c in cells if c.method == method and c.scale == float(scale)]
            times = np.array([c.wall_time for c in grp])
            rows.append(BenchmarkRow(
                method=method,
                scale=float(scale),
                coverage_pct=float(np.mean([c.coverage_pct for c in grp])),
                time_mean=float(times.mean()),
                time_std=float(times.std(ddof=1)) if len(grp) >= 3 else None,
                converged=all(c.converged for c in grp),
                repeats=len(grp),
            ))
    return SweepResult(cells=cells, rows=rows)


def format_benchmark_table(rows: Sequence[BenchmarkRow]) -> str:
    """Human-readable table, one block per method, one column per scale."""
    scales = sorted({r.scale for r in rows})
    out = []
    header = ["Metric"] + [f"Scale {s:g}" for s in scales]
    out.append("  ".join(f"{h:>18}" for h in header))
    for method in dict.fromkeys(r.method for r in rows):
        out.append(method)
        by_scale = {r.scale: r for r in rows if r.method == method}
        covs = [f"{by_scale[s].coverage_pct:.2f}" if s in by_scale else "-" for s in scales]
        tims = []
        for s in scales:
            r = by_scale.get(s)
            if r is None:
                tims.append("-")
            elif r.time_std is None:
                tims.append(f"{r.time_mean:.2f}")
            else:
                tims.append(f"{r.time_mean:.2f} +/- {r.time_std:.2f}")
        out.append("  ".join(f"{v:>18}" for v in ["  Coverage (%)"] + covs))
        out.append("  ".join(f"{v:>18}" for v in ["  Time (s)"] + tims))
    return "\n".join(out)


# -- adaptive vs fixed time steps --------------------------------------------

@dataclass
class AdaptiveDtComparison:
    adaptive_report: SolverReport
    fixed_report: SolverReport
    adaptive_coverage: CoverageResult
    fixed_coverage: CoverageResult

    @property
    def adaptive_wins_or_ties(self) -> bool:
        return self.adaptive_coverage.covered_fraction >= self.fixed_coverage.covered_fraction


def fixed_vs_adaptive_dt(samples: DomainSamples, model: DynamicsModel,
                         config: SolverConfig, radius_phys: float) -> AdaptiveDtComparison:
    """Solve twice with the same seed and budget: dt free vs dt pinned.

    The fixed run pins every step to L_max / (T v_max) (the uniform budget
    split) by collapsing the dt bounds, which is the fixed-step ablation.
    """
    adaptive = solve(samples, model, config)
    if model.L_max is None:
        raise ValueError("fixed-step comparison needs a path-length budget L_max")
    dt_fixed = model.L_max / (config.horizon * model.v_max)
    fixed_model = replace(model, dt_bounds=(dt_fixed, dt_fixed))
    fixed = solve(samples, fixed_model, config)
    return AdaptiveDtComparison(
        adaptive_report=adaptive,
        fixed_report=fixed,
        adaptive_coverage=coverage(adaptive.trajectory, samples, radius_phys),
        fixed_coverage=coverage(fixed.trajectory, samples, radius_phys),
    )
