"""Reverse-mode gradients of the least-squares solve.

Given a converged solution ``x`` of ``LstSq(A(theta), b, lambda)`` and the
downstream gradient ``grad_x mu`` of a scalar objective, these routines
assemble ``grad_theta mu``, ``grad_b mu``, and ``grad_lambda mu`` from exactly
two extra least-squares solves plus calls to the operator's
``param_inner_grad`` hook.

Tall case (m >= n), with ``pig(u, v) = grad_theta <u, A(theta) v>``:

    grad_b mu  = LstSq(A^T, grad_x mu, lambda)
    xi         = LstSq(A,   grad_b mu, 0)        # solves (A^T A + l^2 I) xi = grad_x mu
    r          = A x - b
    grad_theta = THETA_SIGN * (pig(r, xi) + pig(grad_b mu, x))
    grad_lam   = LAMBDA_SIGN * 2 lambda <xi, x>

Wide case (m < n):

    grad_b mu  = LstSq(A^T, grad_x mu, lambda)
    y          = LstSq(A^T, x, 0)                # equals (A A^T + l^2 I)^{-1} b
    r          = A^T grad_b mu - grad_x mu
    grad_theta = THETA_SIGN * (pig(grad_b mu, x) + pig(y, r))
    grad_lam   = LAMBDA_SIGN * 2 lambda <grad_b mu, y>

Sign arbitration: re-deriving the adjoint equations from the normal-equation
constraints gives the two signs below; they are opposite to some printed
variants of these formulas, and scalar closed forms plus the central
finite-difference oracle in the test suite pin them down.  If either constant
is flipped, ``tests/test_adjoint.py::test_sign_arbitration`` fails loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import SolverError, UnsupportedCapabilityError
from .linop import adjointed_operator
from .solvers import (
    MODE_TALL,
    LstSqProblem,
    SolveConfig,
    SolveReport,
    lsmr,
)

__all__ = ["Cotangent", "GradientBundle", "AdjointScratch",
           "grad_tall", "grad_wide", "vjp_lstsq", "Pullback"]

# Frozen, finite-difference-arbitrated signs (see module docstring).
THETA_SIGN = -1.0
LAMBDA_SIGN = -1.0


@dataclass(frozen=True)
class Cotangent:
    """Downstream gradient ``grad_x mu`` at the solution."""

    grad_x: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grad_x, dtype=float)
        object.__setattr__(self, "grad_x", g)
        if not np.all(np.isfinite(g)):
            raise ValueError("cotangent contains non-finite entries")


@dataclass(frozen=True)
class GradientBundle:
    """The three reverse-mode gradients of a scalar through the solve."""

    grad_params: np.ndarray
    grad_b: np.ndarray
    grad_lambda: float


@dataclass(frozen=True)
class AdjointScratch:
    """Intermediate adjoint quantities, exposed for the dense identity tests.

    Tall case: ``xi`` solves ``(A^T A + lambda^2 I) xi = grad_x mu`` and
    ``residual = A x - b``.  Wide case: ``y = (A A^T + lambda^2 I)^{-1} b``,
    ``residual = A^T grad_b mu - grad_x mu``, and the two constraint
    multipliers are ``p_adj = grad_x mu``, ``q_adj = -grad_b mu``.
    """

    residual: np.ndarray
    xi: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    p_adj: Optional[np.ndarray] = None
    q_adj: Optional[np.ndarray] = None


def _tighten(cfg: SolveConfig) -> SolveConfig:
    # Gradient accuracy is bounded by inner-solve accuracy.
    return replace(cfg, atol=cfg.atol / 10.0, btol=cfg.btol / 10.0)


def _inner_solve(problem, cfg, what, counter):
    report = lsmr(problem, cfg)
    if counter is not None:
        counter.count += 1
    if not report.converged:
        raise SolverError(
            f"inner solve for {what} stopped with '{report.stop_reason}' "
            f"after {report.iterations} iterations", report)
    return report.x


class SolveCounter:
    """Counts inner least-squares solves (one instance per pullback call)."""

    def __init__(self):
        self.count = 0


def _require_pig(op):
    if op.num_params > 0 and not op.has_param_inner_grad:
        raise UnsupportedCapabilityError(
            "operator has parameters but no param_inner_grad hook")


def grad_tall(problem: LstSqProblem, x, cot: Cotangent,
              cfg: SolveConfig = SolveConfig(), counter=None,
              with_scratch=False):
    """Gradients for a tall (m >= n) problem; exactly two inner solves."""
    op = problem.op
    _require_pig(op)
    inner_cfg = _tighten(cfg)
    x = np.asarray(x, dtype=float)

    grad_b = _inner_solve(
        LstSqProblem(adjointed_operator(op), cot.grad_x, problem.lam),
        inner_cfg, "grad_b (tall)", counter)
    xi = _inner_solve(
        LstSqProblem(op, grad_b, 0.0), inner_cfg, "xi (tall)", counter)

    r = np.asarray(op.apply_forward(x), dtype=float) - problem.b
    if op.num_params > 0:
        grad_params = THETA_SIGN * (op.param_inner_grad(r, xi)
                                    + op.param_inner_grad(grad_b, x))
    else:
        grad_params = np.zeros(0)
    grad_lam = LAMBDA_SIGN * 2.0 * problem.lam * float(xi @ x)
    bundle = GradientBundle(grad_params, grad_b, grad_lam)
    if with_scratch:
        return bundle, AdjointScratch(residual=r, xi=xi)
    return bundle


def grad_wide(problem: LstSqProblem, x, cot: Cotangent,
              cfg: SolveConfig = SolveConfig(), counter=None,
              with_scratch=False):
    """Gradients for a wide (m < n) problem; exactly two inner solves."""
    op = problem.op
    _require_pig(op)
    inner_cfg = _tighten(cfg)
    x = np.asarray(x, dtype=float)
    opT = adjointed_operator(op)

    grad_b = _inner_solve(
        LstSqProblem(opT, cot.grad_x, problem.lam), inner_cfg,
        "grad_b (wide)", counter)
    y = _inner_solve(
        LstSqProblem(opT, x, 0.0), inner_cfg, "y (wide)", counter)

    r = np.asarray(op.apply_adjoint(grad_b), dtype=float) - cot.grad_x
    if op.num_params > 0:
        grad_params = THETA_SIGN * (op.param_inner_grad(grad_b, x)
                                    + op.param_inner_grad(y, r))
    else:
        grad_params = np.zeros(0)
    grad_lam = LAMBDA_SIGN * 2.0 * problem.lam * float(grad_b @ y)
    bundle = GradientBundle(grad_params, grad_b, grad_lam)
    if with_scratch:
        return bundle, AdjointScratch(residual=r, y=y,
                                      p_adj=cot.grad_x, q_adj=-grad_b)
    return bundle


class Pullback:
    """Reusable cotangent-to-gradients map captured from a forward solve.

    Each invocation performs exactly two inner least-squares solves;
    ``inner_solves`` records the count of the most recent call and
    ``total_solves`` the running total.
    """

    def __init__(self, problem, x, cfg):
        self._problem = problem
        self._x = x
        self._cfg = cfg
        self.inner_solves = 0
        self.total_solves = 0

    def __call__(self, cot: Cotangent) -> GradientBundle:
        counter = SolveCounter()
        fn = grad_tall if self._problem.mode == MODE_TALL else grad_wide
        bundle = fn(self._problem, self._x, cot, self._cfg, counter=counter)
        self.inner_solves = counter.count
        self.total_solves += counter.count
        return bundle


def vjp_lstsq(problem: LstSqProblem, cfg: SolveConfig = SolveConfig()):
    """Run the forward solve and return ``(report, pullback)``.

    The pullback dispatches on the problem mode and may be invoked with any
    number of cotangents; the forward solution is captured, not re-solved.
    """
    report = lsmr(problem, cfg)
    if not report.converged:
        raise SolverError(
            f"forward solve stopped with '{report.stop_reason}' after "
            f"{report.iterations} iterations", report)
    return report, Pullback(problem, report.x, cfg)
