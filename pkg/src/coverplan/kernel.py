"""Stationary isotropic kernels on the normalized domain.

Kernels have the form k(u, v) = exp(-d(u, v) / h) with a strictly positive
bandwidth h and a nonnegative symmetric distance d. The default distance is
the squared Euclidean norm, which gives the Gaussian/RBF kernel. All pairwise
kernel matrices are kept in log space (entries -d/h) so that downstream
reductions can run through log-sum-exp without over- or underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist


class EmptyInput(ValueError):
    """Raised when a reduction receives no values."""


_METRICS = ("squared_euclidean", "custom")

# Pairs used for the one-time spot check of custom metrics.
_VALIDATION_PAIRS = 16


@dataclass(frozen=True)
class KernelConfig:
    """Kernel choice: metric, bandwidth, and optional custom distance.

    ``custom_metric`` is a pair ``(distance, gradient)`` where
    ``distance(u, v) >= 0`` and ``gradient(u, v)`` returns the derivative of
    the distance with respect to ``u``. Custom metrics are spot-checked for
    symmetry and d(u, u) = 0 on random pairs the first time they are used;
    full correctness remains the caller's responsibility.
    """

    metric: str = "squared_euclidean"
    bandwidth_h: float = 1.0
    custom_metric: Optional[Tuple[Callable, Callable]] = None
    _validated: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.metric not in _METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {_METRICS}")
        if not (self.bandwidth_h > 0.0 and np.isfinite(self.bandwidth_h)):
            raise ValueError(f"bandwidth_h must be positive and finite, got {self.bandwidth_h}")
        if self.metric == "custom" and self.custom_metric is None:
            raise ValueError("metric='custom' requires custom_metric=(distance, gradient)")

    def with_bandwidth(self, h: float) -> "KernelConfig":
        """Copy of this config with a different bandwidth."""
        cfg = KernelConfig(metric=self.metric, bandwidth_h=float(h), custom_metric=self.custom_metric)
        cfg._validated.update(self._validated)
        return cfg

    def _check_custom(self, dim: int) -> None:
        # Spot check on first use for each dimension seen (the config does not
        # know the point dimension before then).
        if self.metric != "custom" or self._validated.get(dim):
            return
        dist, _ = self.custom_metric
        rng = np.random.default_rng(0)
        for _ in range(_VALIDATION_PAIRS):
            u = rng.standard_normal(dim)
            v = rng.standard_normal(dim)
            duv = float(dist(u, v))
            dvu = float(dist(v, u))
            duu = float(dist(u, u))
            if duv < 0.0:
                raise ValueError(f"custom metric returned negative distance {duv}")
            if abs(duu) > 1e-12:
                raise ValueError(f"custom metric has d(u,u)={duu}, expected 0")
            if abs(duv - dvu) > 1e-9 * max(1.0, abs(duv)):
                raise ValueError(f"custom metric is asymmetric: d(u,v)={duv}, d(v,u)={dvu}")
        self._validated[dim] = True


@dataclass(frozen=True)
class LogKernelMatrix:
    """Pairwise log-kernel values log k(u_i, v_j) = -d(u_i, v_j)/h."""

    rows: int
    cols: int
    entries: np.ndarray  # shape (rows, cols), all entries <= 0


def pairwise_distance(config: KernelConfig, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Matrix of d(U_i, V_j) under the configured metric."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[1] != V.shape[1]:
        raise ValueError(f"dimension mismatch: {U.shape[1]} vs {V.shape[1]}")
    if config.metric == "squared_euclidean":
        return cdist(U, V, "sqeuclidean")
    config._check_custom(U.shape[1])
    dist, _ = config.custom_metric
    out = np.empty((U.shape[0], V.shape[0]))
    for i in range(U.shape[0]):
        for j in range(V.shape[0]):
            out[i, j] = dist(U[i], V[j])
    return out


def eval_kernel(config: KernelConfig, u: np.ndarray, v: np.ndarray) -> float:
    """Evaluate k(u, v) = exp(-d(u, v)/h). Always in (0, 1] for finite inputs."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    if config.metric == "squared_euclidean":
        d = float(np.sum((u - v) ** 2))
    else:
        config._check_custom(u.shape[-1])
        d = float(config.custom_metric[0](u, v))
    return float(np.exp(-d / config.bandwidth_h))


def log_kernel_matrix(config: KernelConfig, U: np.ndarray, V: np.ndarray) -> LogKernelMatrix:
    """Pairwise log-kernel matrix, entry (i, j) = -d(U_i, V_j)/h.

    No exponentiation is performed; callers reduce the entries through
    :func:`logsumexp` or exponentiate inside normalized-weight computations.
    """
    d = pairwise_distance(config, U, V)
    entries = -d / config.bandwidth_h
    return LogKernelMatrix(rows=entries.shape[0], cols=entries.shape[1], entries=entries)


def logsumexp(values) -> float:
    """log(sum(exp(values))), shifted by the max so nothing overflows.

    Entries may be -inf (they contribute nothing); NaN and +inf are rejected.
    Exact for singletons.
    """
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        raise EmptyInput("logsumexp of an empty sequence")
    if np.isnan(a).any():
        raise ValueError("logsumexp received NaN")
    if np.isposinf(a).any():
        raise ValueError("logsumexp received +inf")
    if a.size == 1:
        return float(a[0])
    m = float(np.max(a))
    if m == -np.inf:
        return -np.inf
    return m + float(np.log(np.sum(np.exp(a - m))))


def metric_gradient(config: KernelConfig, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient of the metric in its first argument, grad_u d(u, v).

    For the squared Euclidean metric this is exactly 2(u - v).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if config.metric == "squared_euclidean":
        return 2.0 * (u - v)
    config._check_custom(u.shape[-1])
    return np.asarray(config.custom_metric[1](u, v), dtype=float)
