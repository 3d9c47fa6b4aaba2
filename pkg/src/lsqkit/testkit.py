"""Independent oracles and generators for the test suites.

Everything here is deliberately implemented without calling the module it is
used to test: finite differences arbitrate the adjoint gradient rules, the
QR-based pseudo-inverse arbitrates the null-space projections, and the dense
mirrors arbitrate the iterative solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficiencyError
from .linop import dense_operator

__all__ = ["FdConfig", "fd_grad", "dense_pinv_apply", "random_problem", "op_to_dense"]


@dataclass(frozen=True)
class FdConfig:
    """Central finite-difference settings.

    The per-coordinate step is ``base_step * (1 + |theta_i|)``.  One-sided
    schemes are not offered; they cannot reach the gradient tolerances used
    throughout the test suites.
    """

    base_step: float = 1e-6

    def __post_init__(self):
        if self.base_step <= 0:
            raise ValueError("base_step must be positive")


def fd_grad(f: Callable, theta, cfg: FdConfig = FdConfig()):
    """Central-difference gradient of a scalar function ``f(theta)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        h = cfg.base_step * (1.0 + abs(theta[i]))
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        f_up = float(f(up))
        f_dn = float(f(dn))
        if not (np.isfinite(f_up) and np.isfinite(f_dn)):
            raise FloatingPointError(
                f"non-finite evaluation while differencing coordinate {i}")
        grad[i] = (f_up - f_dn) / (2.0 * h)
    return grad


def dense_pinv_apply(matrix, v):
    """Apply the Moore-Penrose pseudo-inverse of a full-rank dense matrix via QR."""
    matrix = np.asarray(matrix, dtype=float)
    v = np.asarray(v, dtype=float)
    m, n = matrix.shape
    if m >= n:
        q, r = sla.qr(matrix, mode="economic")
        _require_full_rank(r, m, n)
        return sla.solve_triangular(r, q.T @ v)
    # Wide: pinv(A) v = A^T (A A^T)^{-1} v, via QR of A^T.
    q, r = sla.qr(matrix.T, mode="economic")
    _require_full_rank(r, m, n)
    return q @ sla.solve_triangular(r, v, trans="T")


def _require_full_rank(r, m, n):
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= max(m, n) * np.finfo(float).eps * d.max():
        raise RankDeficiencyError(
            f"matrix of shape ({m}, {n}) is numerically rank deficient")


def random_problem(m, n, cond, lam, seed):
    """Matched matrix-free problem and dense mirror with a seeded Gaussian rhs.

    Returns ``(problem, dense)`` where ``problem.op`` wraps exactly the
    returned dense array.
    """
    from .solvers import LstSqProblem, make_illconditioned

    dense = make_illconditioned(m, n, cond, seed)
    rng = np.random.default_rng(seed + 0x5EED)
    b = rng.standard_normal(m)
    problem = LstSqProblem(dense_operator(dense), b, lam)
    return problem, dense


def op_to_dense(op):
    """Materialize an operator by applying it to the unit basis (test scale only)."""
    cols = [np.asarray(op.apply_forward(np.eye(op.cols)[:, j]), dtype=float)
            for j in range(op.cols)]
    return np.column_stack(cols)
