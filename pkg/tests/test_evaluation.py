import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverplan.domain import DomainSamples, compute_extent
from coverplan.dynamics import DynamicsModel
from coverplan.evaluation import (
    SweepConfig,
    coverage,
    fixed_vs_adaptive_dt,
    format_benchmark_table,
    point_segment_distances,
    run_scale_sweep,
    subsample_for_tsp,
    tsp_nearest_neighbor,
)
from coverplan.solver import ALConfig, AnnealingSchedule, InnerConfig, SolverConfig


def brute_point_segment(p, a, b, steps=20001):
    """Dense sampling oracle for point-to-segment distance."""
    ts = np.linspace(0.0, 1.0, steps)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return np.linalg.norm(pts - p, axis=1).min()


# -- coverage -----------------------------------------------------------------

def test_coverage_trajectory_through_all_samples(rng):
    pts = rng.random((12, 2))
    cov = coverage(pts, DomainSamples(pts), radius_phys=1e-6)
    assert cov.covered_fraction == 1.0
    assert cov.per_sample_covered.all()


def test_coverage_far_trajectory():
    samples = DomainSamples([[0.0, 0.0], [1.0, 0.0]])
    poly = np.array([[10.0, 10.0], [11.0, 10.0]])
    cov = coverage(poly, samples, radius_phys=1.0)
    assert cov.covered_fraction == 0.0


def test_coverage_segment_interpolation():
    # Samples near the middle of a segment count even though no knot is close.
    samples = DomainSamples([[1.0, 0.5], [1.0, 2.0]])
    poly = np.array([[0.0, 0.0], [2.0, 0.0]])
    cov = coverage(poly, samples, radius_phys=1.0)
    assert cov.covered_fraction == pytest.approx(0.5)
    assert cov.per_sample_covered.tolist() == [True, False]
    # brute-force the two point-to-segment distances
    d0 = brute_point_segment(np.array([1.0, 0.5]), poly[0], poly[1])
    d1 = brute_point_segment(np.array([1.0, 2.0]), poly[0], poly[1])
    assert d0 == pytest.approx(0.5, abs=1e-8)
    assert d1 == pytest.approx(2.0, abs=1e-8)


def test_point_segment_distances_match_brute_force(rng):
    poly = rng.random((5, 2))
    pts = rng.random((20, 2)) * 2.0 - 0.5
    got = point_segment_distances(pts, poly)
    want = np.array([
        min(brute_point_segment(p, poly[i], poly[i + 1]) for i in range(len(poly) - 1))
        for p in pts
    ])
    assert got == pytest.approx(want, abs=1e-7)


def test_coverage_weighted(rng):
    samples = DomainSamples([[0.0, 0.0], [5.0, 0.0]], weights=[0.75, 0.25])
    poly = np.array([[0.0, 0.0], [0.1, 0.0]])
    cov = coverage(poly, samples, radius_phys=0.5)
    assert cov.covered_fraction == pytest.approx(0.75)


def test_coverage_rejects_nonpositive_radius(rng):
    samples = DomainSamples([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        coverage(np.zeros((2, 2)), samples, radius_phys=0.0)


@settings(deadline=None, max_examples=30)
@given(r1=st.floats(min_value=0.01, max_value=2.0), r2=st.floats(min_value=0.01, max_value=2.0))
def test_coverage_monotone_in_radius(r1, r2):
    rng = np.random.default_rng(5)
    samples = DomainSamples(rng.random((25, 2)))
    poly = rng.random((6, 2))
    lo, hi = min(r1, r2), max(r1, r2)
    a = coverage(poly, samples, lo).covered_fraction
    b = coverage(poly, samples, hi).covered_fraction
    assert a <= b


def test_coverage_scale_equivariant(rng):
    samples = rng.random((30, 3))
    poly = rng.random((7, 3))
    base = coverage(poly, DomainSamples(samples), 0.2)
    for s in (10.0, 1000.0):
        scaled = coverage(poly * s, DomainSamples(samples * s), 0.2 * s)
        assert scaled.per_sample_covered.tolist() == base.per_sample_covered.tolist()
        assert scaled.covered_fraction == base.covered_fraction


# -- TSP baseline -------------------------------------------------------------

def test_tsp_collinear_order():
    samples = DomainSamples([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    path = tsp_nearest_neighbor(samples, start=np.array([0.0, 0.0]))
    assert path == pytest.approx(np.array([[0, 0], [0, 0], [1, 0], [3, 0]], dtype=float))


def test_tsp_zero_budget():
    samples = DomainSamples([[1.0, 0.0], [2.0, 0.0]])
    path = tsp_nearest_neighbor(samples, start=np.array([0.0, 0.0]), L_max=0.0)
    assert path.shape == (1, 2)


def test_tsp_unlimited_visits_all_once(rng):
    pts = rng.random((40, 2))
    samples = DomainSamples(pts)
    start = np.array([0.5, 0.5])
    path = tsp_nearest_neighbor(samples, start)
    assert path.shape == (41, 2)
    visited = path[1:]
    # permutation: every sample appears exactly once
    matched = set()
    for v in visited:
        hits = np.flatnonzero((pts == v).all(axis=1))
        assert hits.size == 1
        matched.add(int(hits[0]))
    assert len(matched) == 40


def test_tsp_respects_budget(rng):
    for _ in range(5):
        pts = rng.random((25, 2)) * 3.0
        samples = DomainSamples(pts)
        L = float(rng.uniform(0.5, 5.0))
        path = tsp_nearest_neighbor(samples, start=pts[0], L_max=L)
        length = np.linalg.norm(np.diff(path, axis=0), axis=1).sum()
        assert length <= L + 1e-12


def test_tsp_deterministic_tie_break():
    # Two samples equidistant from the start: lexicographically smaller first.
    samples = DomainSamples([[1.0, 1.0], [-1.0, 1.0], [0.0, 5.0]])
    p1 = tsp_nearest_neighbor(samples, start=np.array([0.0, 1.0]))
    p2 = tsp_nearest_neighbor(samples, start=np.array([0.0, 1.0]))
    assert np.array_equal(p1, p2)
    assert p1[1] == pytest.approx([-1.0, 1.0])


def test_subsample_for_tsp(rng):
    pts = rng.random((50, 2))
    samples = DomainSamples(pts)
    sub = subsample_for_tsp(samples, 12, rng_seed=1)
    assert sub.num_points == 12
    sub2 = subsample_for_tsp(samples, 12, rng_seed=1)
    assert np.array_equal(sub.points, sub2.points)
    assert subsample_for_tsp(samples, 100).num_points == 50


# -- sweep harness ------------------------------------------------------------

def small_sweep_config(rng_seed=0, methods=("si_emmd", "tsp")):
    g = np.arange(6) / 4.0
    xx, yy = np.meshgrid(g, g)
    samples = DomainSamples(np.column_stack([xx.ravel(), yy.ravel()]))
    return SweepConfig(
        samples=samples,
        horizon=16,
        v_max=1.0,
        L_max=6.0,
        radius=0.2,
        h_phys_star=0.04,
        h0=0.1,
        num_stages=4,
        methods=methods,
        rng_seed=rng_seed,
        solver_overrides={
            "al": ALConfig(rounds_per_stage=2, polish_rounds=6),
            "inner": InnerConfig(max_iter=80, ftol=1e-10),
            "seed_strategy": "hover",
        },
    )


def test_run_scale_sweep_structure():
    cfg = small_sweep_config()
    result = run_scale_sweep(cfg, scales=[1.0, 100.0], repeats=2)
    assert len(result.cells) == 2 * 2 * 2
    assert len(result.rows) == 2 * 2
    for row in result.rows:
        assert row.repeats == 2
        assert row.time_std is None  # fewer than 3 repeats
    cell_keys = {(c.method, c.scale, c.repeat) for c in result.cells}
    assert len(cell_keys) == len(result.cells)


def test_run_scale_sweep_si_invariant_coverage():
    cfg = small_sweep_config(methods=("si_emmd",))
    result = run_scale_sweep(cfg, scales=[1.0, 100.0], repeats=1)
    covs = [c.coverage_pct for c in result.cells]
    assert abs(covs[0] - covs[1]) <= 1.0


def test_run_scale_sweep_std_reported_with_three_repeats():
    cfg = small_sweep_config(methods=("tsp",))
    result = run_scale_sweep(cfg, scales=[1.0], repeats=3)
    assert result.rows[0].time_std is not None


def test_sweep_unknown_method_rejected():
    with pytest.raises(ValueError, match="si_emmd"):
        small_sweep_config(methods=("annealing_gizmo",))


def test_format_benchmark_table():
    cfg = small_sweep_config()
    result = run_scale_sweep(cfg, scales=[1.0], repeats=1)
    table = format_benchmark_table(result.rows)
    assert "si_emmd" in table
    assert "Coverage (%)" in table
    assert "Scale 1" in table


# -- adaptive vs fixed dt -----------------------------------------------------

def two_cluster_samples():
    from coverplan.data import fixture_path
    from coverplan.domain import load_samples

    return load_samples(fixture_path("two_clusters.csv"))


def test_fixed_vs_adaptive_dt_two_clusters():
    samples = two_cluster_samples()
    e = compute_extent(samples)
    start = samples.points[np.argmin(np.linalg.norm(samples.points, axis=1))]
    model = DynamicsModel(kind="single_integrator", dim=2, v_max=1.0, L_max=18.0,
                          initial_state=start)
    cfg = SolverConfig(
        horizon=40,
        annealing=AnnealingSchedule(h0=0.5, h_phys_star=0.0225, num_stages=8, extent=e),
        al=ALConfig(rounds_per_stage=2, polish_rounds=8),
        inner=InnerConfig(max_iter=200, ftol=1e-10),
        seed_strategy="hover",
        rng_seed=0,
    )
    cmp = fixed_vs_adaptive_dt(samples, model, cfg, radius_phys=0.15)
    # fixed mode pins dt up to the constraint tolerance (1e-6 in log space)
    dts = cmp.fixed_report.trajectory.dt
    assert np.ptp(dts) / dts.mean() < 5e-6
    assert cmp.adaptive_wins_or_ties
    # the adaptive run uses a wide range of time steps on the sparse domain
    assert cmp.adaptive_report.trajectory.dt.max() > 2.0 * cmp.adaptive_report.trajectory.dt.min()


def test_fixed_vs_adaptive_requires_length_budget():
    samples = two_cluster_samples()
    model = DynamicsModel(kind="single_integrator", dim=2, v_max=1.0)
    cfg = SolverConfig(
        horizon=8,
        annealing=AnnealingSchedule(h0=0.5, h_phys_star=0.02, num_stages=3,
                                    extent=compute_extent(samples)),
        rng_seed=0,
    )
    with pytest.raises(ValueError, match="L_max"):
        fixed_vs_adaptive_dt(samples, model, cfg, radius_phys=0.15)
