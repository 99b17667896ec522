import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverplan.kernel import (
    EmptyInput,
    KernelConfig,
    eval_kernel,
    log_kernel_matrix,
    logsumexp,
    metric_gradient,
)

from conftest import central_difference


def test_eval_kernel_identity():
    cfg = KernelConfig(bandwidth_h=0.7)
    for v in ([0.0, 0.0], [1.5, -2.0], [3.0, 4.0, 5.0]):
        assert eval_kernel(cfg, v, v) == 1.0


def test_eval_kernel_unit_distance():
    cfg = KernelConfig(bandwidth_h=1.0)
    assert eval_kernel(cfg, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_eval_kernel_scaled_bandwidth():
    # d = 2, d/h = 4: cross-checked against direct scalar evaluation.
    cfg = KernelConfig(bandwidth_h=0.5)
    expected = math.exp(-((1.0 + 1.0) / 0.5))
    assert eval_kernel(cfg, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.0183156, abs=1e-7)


def test_kernel_symmetry_and_bounds(rng):
    cfg = KernelConfig(bandwidth_h=0.3)
    for _ in range(50):
        u = rng.standard_normal(3)
        v = rng.standard_normal(3)
        kuv = eval_kernel(cfg, u, v)
        assert kuv == eval_kernel(cfg, v, u)
        assert 0.0 < kuv <= 1.0
        assert (kuv == 1.0) == bool(np.allclose(u, v))


def test_gram_matrix_positive_semidefinite(rng):
    cfg = KernelConfig(bandwidth_h=0.4)
    for _ in range(5):
        pts = rng.random((rng.integers(3, 21), 3))
        gram = np.exp(log_kernel_matrix(cfg, pts, pts).entries)
        eigs = np.linalg.eigvalsh(gram)
        assert eigs.min() >= -1e-9


def test_log_kernel_matrix_trivial():
    cfg = KernelConfig(bandwidth_h=1.0)
    m = log_kernel_matrix(cfg, [[0.0, 0.0]], [[0.0, 0.0]])
    assert m.entries.item() == pytest.approx(0.0)
    m = log_kernel_matrix(cfg, [[0.0, 0.0]], [[1.0, 0.0]])
    assert m.entries.item() == pytest.approx(-1.0)


def test_log_kernel_matrix_matches_eval(rng):
    cfg = KernelConfig(bandwidth_h=0.23)
    U = rng.random((5, 2))
    V = rng.random((7, 2))
    m = log_kernel_matrix(cfg, U, V)
    assert m.rows == 5 and m.cols == 7
    assert (m.entries <= 0).all()
    for i in range(5):
        for j in range(7):
            assert math.exp(m.entries[i, j]) == pytest.approx(
                eval_kernel(cfg, U[i], V[j]), abs=1e-15)


def test_log_kernel_matrix_self_diagonal(rng):
    cfg = KernelConfig(bandwidth_h=0.1)
    U = rng.random((6, 3))
    m = log_kernel_matrix(cfg, U, U)
    assert np.diag(m.entries) == pytest.approx(np.zeros(6), abs=0.0)


def test_logsumexp_basics():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), rel=1e-12)
    assert logsumexp([-1000.0, -1000.0]) == pytest.approx(-1000.0 + math.log(2.0), rel=1e-12)
    assert logsumexp([-3.0]) == -3.0  # singleton is exact


def test_logsumexp_edge_cases():
    with pytest.raises(EmptyInput):
        logsumexp([])
    assert logsumexp([-np.inf, 0.0]) == pytest.approx(0.0)
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    with pytest.raises(ValueError):
        logsumexp([np.nan, 0.0])
    with pytest.raises(ValueError):
        logsumexp([np.inf])


@settings(deadline=None, max_examples=60)
@given(
    xs=st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=12),
    c=st.floats(min_value=-1e6, max_value=1e6),
)
def test_logsumexp_shift_invariance(xs, c):
    xs = np.asarray(xs)
    lhs = logsumexp(xs + c)
    rhs = logsumexp(xs) + c
    assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(rhs)) + 1e-9)


def test_metric_gradient_squared_euclidean():
    cfg = KernelConfig(bandwidth_h=1.0)
    assert metric_gradient(cfg, [1.0, 0.0], [0.0, 0.0]) == pytest.approx([2.0, 0.0])
    assert metric_gradient(cfg, [0.3, -0.2], [0.3, -0.2]) == pytest.approx([0.0, 0.0])


def test_metric_gradient_matches_finite_differences(rng):
    cfg = KernelConfig(bandwidth_h=1.0)
    for _ in range(10):
        u = rng.standard_normal(3)
        v = rng.standard_normal(3)
        g = metric_gradient(cfg, u, v)
        fd = central_difference(lambda x: float(np.sum((x - v) ** 2)), u, eps=1e-6)
        assert np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(fd)) < 1e-7


def test_custom_metric_roundtrip(rng):
    # A scaled squared-Euclidean metric exercises the custom path.
    dist = lambda u, v: 3.0 * float(np.sum((u - v) ** 2))
    grad = lambda u, v: 6.0 * (np.asarray(u) - np.asarray(v))
    cfg = KernelConfig(metric="custom", bandwidth_h=0.5, custom_metric=(dist, grad))
    u, v = rng.standard_normal(2), rng.standard_normal(2)
    assert eval_kernel(cfg, u, v) == pytest.approx(math.exp(-dist(u, v) / 0.5), rel=1e-12)
    assert metric_gradient(cfg, u, v) == pytest.approx(grad(u, v))


def test_custom_metric_validation_rejects_asymmetry():
    dist = lambda u, v: float(abs(u[0] - 2 * v[0]))  # asymmetric
    grad = lambda u, v: np.zeros_like(u)
    cfg = KernelConfig(metric="custom", bandwidth_h=1.0, custom_metric=(dist, grad))
    with pytest.raises(ValueError, match="asymmetric|d\\(u,u\\)"):
        eval_kernel(cfg, np.ones(2), np.zeros(2))


def test_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(bandwidth_h=0.0)
    with pytest.raises(ValueError):
        KernelConfig(bandwidth_h=-1.0)
    with pytest.raises(ValueError):
        KernelConfig(metric="custom")
    with pytest.raises(ValueError):
        KernelConfig(metric="cosine")
