"""Ergodic coverage objectives over normalized coordinates.

Two objectives are provided, both measuring the mismatch between the
trajectory's empirical visitation measure (mass 1/T at each visited point)
and the weighted target samples:

* ``emmd``: the finite-sample squared-MMD estimator

      (1/T^2) sum_{t,t'} k  -  (2/T) sum_t sum_i pi_i k  +  sum_{i,j} pi_i pi_j k

  Uniform weights pi_i = 1/M reduce the last two terms to the familiar
  (2/TM) and (1/M^2) forms. The target-only term is constant in the
  trajectory and is cached per (domain, bandwidth).

* ``log_emmd``: the log-surrogate log A - 2 log B + log C with
  A = |m_rho|^2, B = <m_rho, m_mu>, C = |m_mu|^2 in the kernel feature
  space. By Cauchy-Schwarz the value is nonnegative and vanishes exactly
  where the raw estimator does, but its gradients are bounded by O(D/h)
  with the domain diameter D, independent of T and M. All sums run through
  log-sum-exp over log-kernel matrices, so nothing under- or overflows.
  ``include_constant=False`` drops the constant terms (log C and the
  normalizers), leaving log sum_{t,t'} k - 2 log sum_{t,i} k; the gradient
  is the same in both modes.

Gradients are derived for k = exp(-d/h) and checked against central finite
differences in the test suite; the normalized soft-attention weights

    alpha_ts = k(w_t, w_s) / F_xx,     beta_ti = pi_i k(w_t, w_i) / F_xmu

turn the surrogate gradient into a convex-combination form (the "soft
attention" view) that is the basis of the bounded-gradient property.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .domain import NormalizedDomain
from .kernel import KernelConfig, log_kernel_matrix, logsumexp, pairwise_distance

Points = Union[np.ndarray, "TrajectoryPoints"]


@dataclass(frozen=True, eq=False)
class TrajectoryPoints:
    """Trajectory visit points in normalized coordinates, shape (T, d)."""

    omegas: np.ndarray

    def __post_init__(self):
        om = np.atleast_2d(np.asarray(self.omegas, dtype=float))
        if not np.isfinite(om).all():
            raise ValueError("trajectory points contain NaN or Inf")
        object.__setattr__(self, "omegas", om)

    @property
    def horizon(self) -> int:
        return self.omegas.shape[0]


@dataclass
class ObjectiveEval:
    """Objective value, gradient w.r.t. normalized trajectory points, and
    the intermediate terms (log-sums for the surrogate, plain sums for the
    raw estimator)."""

    value: float
    grad_omegas: np.ndarray  # (T, d)
    terms: dict


def _as_points(traj: Points) -> np.ndarray:
    if isinstance(traj, TrajectoryPoints):
        return traj.omegas
    return np.atleast_2d(np.asarray(traj, dtype=float))


def _log_weights(weights: np.ndarray) -> np.ndarray:
    out = np.full(weights.shape, -np.inf)
    pos = weights > 0
    out[pos] = np.log(weights[pos])
    return out


class EmmdProblem:
    """Evaluation context binding a target sample set to a kernel.

    Caches the target-target distance matrix (bandwidth independent) and the
    per-bandwidth constant term, so annealing loops pay the O(M^2) cost once.
    Safe for concurrent readers; cache population is locked.
    """

    def __init__(self, domain, kernel: KernelConfig, weights: Optional[np.ndarray] = None):
        if isinstance(domain, NormalizedDomain):
            self.mu_points = domain.normalized_points
            w = domain.weights
        else:
            self.mu_points = np.atleast_2d(np.asarray(domain, dtype=float))
            M = self.mu_points.shape[0]
            w = np.full(M, 1.0 / M) if weights is None else np.asarray(weights, dtype=float)
            total = w.sum()
            if total <= 0 or (w < 0).any():
                raise ValueError("weights must be nonnegative with positive sum")
            w = w / total
        self.weights = w
        self.log_weights = _log_weights(w)
        self.kernel = kernel
        self._lock = threading.Lock()
        self._dmm: Optional[np.ndarray] = None
        self._log_c: dict = {}
        self._log_c_computes = 0  # exposed for cache tests

    @property
    def num_samples(self) -> int:
        return self.mu_points.shape[0]

    def _target_distances(self) -> np.ndarray:
        if self._dmm is None:
            with self._lock:
                if self._dmm is None:
                    self._dmm = pairwise_distance(self.kernel, self.mu_points, self.mu_points)
        return self._dmm

    def log_constant(self, h: float) -> float:
        """log C = log sum_{i,j} pi_i pi_j k_h(w_i, w_j), cached per bandwidth."""
        key = float(h)
        got = self._log_c.get(key)
        if got is None:
            dmm = self._target_distances()
            with self._lock:
                got = self._log_c.get(key)
                if got is None:
                    lw = self.log_weights
                    got = logsumexp(-dmm / key + lw[:, None] + lw[None, :])
                    self._log_c[key] = got
                    self._log_c_computes += 1
        return got

    def _h(self, h: Optional[float]) -> float:
        return self.kernel.bandwidth_h if h is None else float(h)

    def _log_sums(self, om: np.ndarray, h: float):
        """log F_xx, log F_xmu and the log-kernel matrices they reduce."""
        kern = self.kernel.with_bandwidth(h)
        log_kxx = log_kernel_matrix(kern, om, om).entries
        log_kxm = log_kernel_matrix(kern, om, self.mu_points).entries
        log_fxx = logsumexp(log_kxx)
        log_fxm = logsumexp(log_kxm + self.log_weights[None, :])
        return log_kxx, log_kxm, log_fxx, log_fxm

    def _pair_gradient(self, om: np.ndarray, coeff_xx: np.ndarray, coeff_xm: np.ndarray) -> np.ndarray:
        """Assemble sum_t coeff_xx[s,t] grad_d(w_s, w_t) + sum_i coeff_xm[s,i] grad_d(w_s, w_i)."""
        if self.kernel.metric == "squared_euclidean":
            # grad_u d = 2(u - v); row-sum trick avoids materializing T x T x d.
            gx = coeff_xx.sum(axis=1)[:, None] * om - coeff_xx @ om
            gm = coeff_xm.sum(axis=1)[:, None] * om - coeff_xm @ self.mu_points
            return 2.0 * (gx + gm)
        grad_fn = self.kernel.custom_metric[1]
        T = om.shape[0]
        out = np.zeros_like(om)
        for s in range(T):
            for t in range(T):
                if coeff_xx[s, t] != 0.0:
                    out[s] += coeff_xx[s, t] * np.asarray(grad_fn(om[s], om[t]), dtype=float)
            for i in range(self.num_samples):
                if coeff_xm[s, i] != 0.0:
                    out[s] += coeff_xm[s, i] * np.asarray(grad_fn(om[s], self.mu_points[i]), dtype=float)
        return out

    def emmd(self, traj: Points, h: Optional[float] = None, want_grad: bool = True) -> ObjectiveEval:
        """Raw finite-sample squared-MMD estimator and its gradient."""
        om = _as_points(traj)
        h = self._h(h)
        T = om.shape[0]
        kern = self.kernel.with_bandwidth(h)
        kxx = np.exp(-pairwise_distance(kern, om, om) / h)
        kxm = np.exp(-pairwise_distance(kern, om, self.mu_points) / h)
        s_xx = float(kxx.sum()) / T**2
        s_xm = float((kxm @ self.weights).sum()) / T
        s_mm = float(np.exp(self.log_constant(h)))
        value = s_xx - 2.0 * s_xm + s_mm
        grad = np.zeros_like(om)
        if want_grad:
            coeff_xx = -(2.0 / (h * T**2)) * kxx
            coeff_xm = (2.0 / (h * T)) * (kxm * self.weights[None, :])
            grad = self._pair_gradient(om, coeff_xx, coeff_xm)
        return ObjectiveEval(value=value, grad_omegas=grad,
                             terms={"S_xx": s_xx, "S_xmu": s_xm, "S_mumu": s_mm})

    def log_emmd(self, traj: Points, h: Optional[float] = None,
                 include_constant: bool = True, want_grad: bool = True) -> ObjectiveEval:
        """Log-surrogate objective; nonnegative when the constant is included."""
        om = _as_points(traj)
        h = self._h(h)
        T = om.shape[0]
        log_kxx, log_kxm, log_fxx, log_fxm = self._log_sums(om, h)
        if include_constant:
            # log A - 2 log B + log C; the 1/T^2 and 1/T normalizers cancel.
            value = log_fxx - 2.0 * log_fxm + self.log_constant(h)
        else:
            # As printed without constants: log F_xx - 2 log (sum_{t,i} k),
            # the weighted sum rescaled by M so uniform weights match exactly.
            value = log_fxx - 2.0 * (log_fxm + np.log(self.num_samples))
        grad = np.zeros_like(om)
        if want_grad:
            alpha = np.exp(log_kxx - log_fxx)
            beta = np.exp(log_kxm + self.log_weights[None, :] - log_fxm)
            coeff_xx = -(alpha + alpha.T) / h
            coeff_xm = (2.0 / h) * beta
            grad = self._pair_gradient(om, coeff_xx, coeff_xm)
        return ObjectiveEval(value=float(value), grad_omegas=grad,
                             terms={"log_F_xx": log_fxx, "log_F_xmu": log_fxm,
                                    "log_F_mumu": self.log_constant(h)})

    def attention_weights(self, traj: Points, h: Optional[float] = None):
        """Globally normalized soft-attention weights (alpha: T x T, beta: T x M).

        Both matrices sum to one over all their entries.
        """
        om = _as_points(traj)
        h = self._h(h)
        log_kxx, log_kxm, log_fxx, log_fxm = self._log_sums(om, h)
        alpha = np.exp(log_kxx - log_fxx)
        beta = np.exp(log_kxm + self.log_weights[None, :] - log_fxm)
        return alpha, beta

    def log_sum_gradients(self, traj: Points, h: Optional[float] = None):
        """Gradients of log F_xx and log F_xmu separately (for bound checks)."""
        om = _as_points(traj)
        h = self._h(h)
        log_kxx, log_kxm, log_fxx, log_fxm = self._log_sums(om, h)
        alpha = np.exp(log_kxx - log_fxx)
        beta = np.exp(log_kxm + self.log_weights[None, :] - log_fxm)
        zeros = np.zeros((om.shape[0], self.num_samples))
        g_xx = self._pair_gradient(om, -(alpha + alpha.T) / h, zeros)
        g_xm = self._pair_gradient(om, np.zeros((om.shape[0],) * 2), -beta / h)
        return g_xx, g_xm


def _problem(domain, kernel: KernelConfig, weights=None) -> EmmdProblem:
    if isinstance(domain, EmmdProblem):
        return domain
    return EmmdProblem(domain, kernel, weights=weights)


def emmd(traj: Points, domain, kernel: KernelConfig, weights=None) -> ObjectiveEval:
    """Finite-sample squared-MMD between trajectory visitation and targets."""
    return _problem(domain, kernel, weights).emmd(traj)


def emmd_gradient(traj: Points, domain, kernel: KernelConfig, weights=None) -> np.ndarray:
    """Gradient of :func:`emmd` w.r.t. the normalized trajectory points."""
    return _problem(domain, kernel, weights).emmd(traj).grad_omegas


def log_emmd(traj: Points, domain, kernel: KernelConfig,
             include_constant: bool = True, weights=None) -> ObjectiveEval:
    """Log-surrogate objective; see module docstring for the two forms."""
    return _problem(domain, kernel, weights).log_emmd(traj, include_constant=include_constant)


def log_emmd_gradient(traj: Points, domain, kernel: KernelConfig, weights=None) -> np.ndarray:
    """Gradient of :func:`log_emmd` w.r.t. the normalized trajectory points."""
    return _problem(domain, kernel, weights).log_emmd(traj).grad_omegas


def attention_weights(traj: Points, domain, kernel: KernelConfig, weights=None):
    """Normalized kernel weights (alpha, beta) used by the surrogate gradient."""
    return _problem(domain, kernel, weights).attention_weights(traj)
