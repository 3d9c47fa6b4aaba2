"""Least-squares solvers: LSMR, CGLS, and a dense QR oracle.

``lsmr`` is the primary matrix-free solver.  It runs the Golub-Kahan
recurrence with Fong & Saunders' rotation scheme, supports Tikhonov damping
(``lambda``) without explicit stacking, and works on tall problems
(``min |Ax-b|^2 + lambda^2 |x|^2``) and wide ones (min-norm solution of a
consistent system when ``lambda = 0``; the push-through form
``A^T (A A^T + lambda^2 I)^{-1} b`` otherwise).

``cgls`` is the robustness baseline: conjugate gradients on the normal
equations, ``(A^T A + lambda^2 I) x = A^T b`` for tall problems and
``(A A^T + lambda^2 I) y = b``, ``x = A^T y`` for wide ones.  Because it works
with the squared operator it loses roughly twice the digits LSMR does on
ill-conditioned problems, which the benchmark suite demonstrates.

Precision: with ``precision="single"`` both solvers store vectors and apply
the operator in float32 while accumulating every scalar (norms, dots,
rotations) in float64, isolating the conditioning effect from
scalar-accumulation noise.  A genuinely single-precision experiment must
also supply a float32-backed operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, RankDeficiencyError
from .linop import LinearOperator

__all__ = [
    "LstSqProblem",
    "SolveConfig",
    "SolveReport",
    "lsmr",
    "cgls",
    "dense_lstsq",
    "make_illconditioned",
    "STOP_CONVERGED",
    "STOP_MAX_ITER",
    "STOP_CONLIM",
    "STOP_EXACT_BREAKDOWN",
]

STOP_CONVERGED = "converged"
STOP_MAX_ITER = "max_iter"
STOP_CONLIM = "conlim_exceeded"
STOP_EXACT_BREAKDOWN = "exact_breakdown"

MODE_TALL = "tall"
MODE_WIDE = "wide"


@dataclass(frozen=True)
class LstSqProblem:
    """A regularized least-squares problem ``LstSq(A, b, lambda)``.

    The operator is assumed full rank (violations surface as a cond-limit
    stop, never as a silent answer).  ``mode`` is derived from the shape:
    tall means ``m >= n``.
    """

    op: LinearOperator
    b: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.b)
        object.__setattr__(self, "b", b)
        if b.shape != (self.op.rows,):
            raise ConfigurationError(
                f"rhs length {b.shape} does not match operator rows ({self.op.rows},)")
        if self.lam < 0:
            raise ConfigurationError("lambda must be nonnegative")

    @property
    def mode(self):
        return MODE_TALL if self.op.rows >= self.op.cols else MODE_WIDE


@dataclass(frozen=True)
class SolveConfig:
    """Stopping rules and precision for an iterative solve.

    The dual criteria follow standard LSMR practice: stop when
    ``|r| <= btol |b| + atol |A| |x|`` or ``|A^T r| <= atol |A| |r|``, or when
    the condition estimate exceeds ``conlim``.  ``max_iter=None`` resolves to
    ``2 min(m, n) + 100`` at solve time.  ``reorthogonalize`` re-projects each
    new Lanczos vector against all previous ones (memory O(iters * (m + n)));
    it is off by default and exists for severely ill-conditioned problems
    where the plain recurrence loses orthogonality before converging.
    """

    atol: float = 1e-6
    btol: float = 1e-6
    conlim: float = 1e8
    max_iter: Optional[int] = None
    precision: str = "double"
    reorthogonalize: bool = False

    def __post_init__(self):
        if self.atol <= 0 or self.btol <= 0 or self.conlim <= 0:
            raise ConfigurationError("tolerances and conlim must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.precision not in ("single", "double"):
            raise ConfigurationError(f"unknown precision {self.precision!r}")

    def resolve_max_iter(self, m, n):
        return self.max_iter if self.max_iter is not None else 2 * min(m, n) + 100

    def work_dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class SolveReport:
    """Solution plus convergence telemetry.

    ``resid_norm`` is ``|Ax - b|`` for unregularized problems and the
    augmented residual ``sqrt(|Ax-b|^2 + lambda^2 |x|^2)`` otherwise;
    ``normal_resid_norm`` estimates ``|A^T r - lambda^2 x|``-style optimality.
    Both are the solver's internal running estimates, not recomputed.
    """

    x: np.ndarray
    iterations: int
    resid_norm: float
    normal_resid_norm: float
    anorm_est: float
    cond_est: float
    stop_reason: str

    @property
    def converged(self):
        return self.stop_reason in (STOP_CONVERGED, STOP_EXACT_BREAKDOWN)


def _norm(x):
    # float64 accumulation regardless of storage dtype
    xd = x.astype(np.float64, copy=False)
    return float(np.sqrt(xd @ xd))


def _dot(x, y):
    return float(x.astype(np.float64, copy=False) @ y.astype(np.float64, copy=False))


def _sym_ortho(a, b):
    """Stable Givens rotation: returns (c, s, r) with c*a + s*b = r, -s*a + c*b = 0."""
    if b == 0.0:
        return (1.0 if a >= 0 else -1.0) if a != 0 else 1.0, 0.0, abs(a)
    if a == 0.0:
        return 0.0, 1.0 if b > 0 else -1.0, abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = (1.0 if b > 0 else -1.0) / np.sqrt(1.0 + tau * tau)
        c = s * tau
        r = b / s
    else:
        tau = b / a
        c = (1.0 if a > 0 else -1.0) / np.sqrt(1.0 + tau * tau)
        s = c * tau
        r = a / c
    return float(c), float(s), float(r)


def _validate(problem):
    if not np.all(np.isfinite(problem.b)):
        raise ValueError("rhs contains non-finite entries")


def lsmr(problem: LstSqProblem, cfg: SolveConfig = SolveConfig()) -> SolveReport:
    """Solve the problem with LSMR (bidiagonalization + MINRES-like rotations)."""
    _validate(problem)
    op = problem.op
    m, n = op.rows, op.cols
    damp = float(problem.lam)
    wt = cfg.work_dtype()
    maxiter = cfg.resolve_max_iter(m, n)
    eps = float(np.finfo(np.float64).eps)
    ctol = 1.0 / cfg.conlim

    b = np.asarray(problem.b, dtype=wt)
    normb = _norm(b)
    x = np.zeros(n, dtype=wt)
    if normb == 0.0:
        return SolveReport(x, 0, 0.0, 0.0, 0.0, 1.0, STOP_CONVERGED)

    apply_fw = lambda v: np.asarray(op.apply_forward(v), dtype=wt)
    apply_ad = lambda u: np.asarray(op.apply_adjoint(u), dtype=wt)

    beta = normb
    u = b / wt(beta)
    v = apply_ad(u)
    alpha = _norm(v)
    if alpha == 0.0:
        # b orthogonal to range(A): x = 0 already satisfies the normal equations.
        return SolveReport(x, 0, normb, 0.0, 0.0, 1.0, STOP_CONVERGED)
    v = v / wt(alpha)

    us = [u.copy()] if cfg.reorthogonalize else None
    vs = [v.copy()] if cfg.reorthogonalize else None

    # Rotation state (all float64 scalars).
    zetabar = alpha * beta
    alphabar = alpha
    rho = rhobar = cbar = 1.0
    sbar = 0.0
    h = v.copy()
    hbar = np.zeros(n, dtype=wt)

    # State for the |r| estimate (handles damping).
    betadd = beta
    betad = 0.0
    rhodold = 1.0
    tautildeold = 0.0
    thetatilde = 0.0
    zeta = 0.0
    d = 0.0

    normA2 = alpha * alpha
    maxrbar = 0.0
    minrbar = 1e100
    normA = np.sqrt(normA2)
    condA = 1.0
    normr = beta
    normar = alpha * beta
    normx = 0.0

    itn = 0
    stop = None
    while itn < maxiter:
        itn += 1

        u = apply_fw(v) - wt(alpha) * u
        if us is not None:
            for uo in us:
                u = u - wt(_dot(u, uo)) * uo
        beta = _norm(u)
        exact_breakdown = beta == 0.0
        if beta > 0.0:
            u = u / wt(beta)
            if us is not None:
                us.append(u.copy())
            v = apply_ad(u) - wt(beta) * v
            if vs is not None:
                for vo in vs:
                    v = v - wt(_dot(v, vo)) * vo
            alpha = _norm(v)
            exact_breakdown = alpha == 0.0
            if alpha > 0.0:
                v = v / wt(alpha)
                if vs is not None:
                    vs.append(v.copy())
        else:
            alpha = 0.0

        # Fold the damping term into the rotation, then the two standard planes.
        chat, shat, alphahat = _sym_ortho(alphabar, damp)

        rhoold = rho
        c, s, rho = _sym_ortho(alphahat, beta)
        thetanew = s * alpha
        alphabar = c * alpha

        rhobarold = rhobar
        zetaold = zeta
        thetabar = sbar * rho
        rhotemp = cbar * rho
        cbar, sbar, rhobar = _sym_ortho(cbar * rho, thetanew)
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        hbar = h - wt(thetabar * rho / (rhoold * rhobarold)) * hbar
        x = x + wt(zeta / (rho * rhobar)) * hbar
        h = v - wt(thetanew / rho) * h

        # Residual-norm estimate.
        betaacute = chat * betadd
        betacheck = -shat * betadd
        betahat = c * betaacute
        betadd = -s * betaacute

        thetatildeold = thetatilde
        ctildeold, stildeold, rhotildeold = _sym_ortho(rhodold, thetabar)
        thetatilde = stildeold * rhobar
        rhodold = ctildeold * rhobar
        betad = -stildeold * betad + ctildeold * betahat

        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold
        taud = (zeta - thetatilde * tautildeold) / rhodold
        d = d + betacheck * betacheck
        normr = np.sqrt(d + (betad - taud) ** 2 + betadd * betadd)

        normA2 = normA2 + beta * beta
        normA = np.sqrt(normA2)
        normA2 = normA2 + alpha * alpha

        maxrbar = max(maxrbar, rhobarold)
        if itn > 1:
            minrbar = min(minrbar, rhobarold)
        condA = max(maxrbar, rhotemp) / min(minrbar, rhotemp)

        normar = abs(zetabar)
        normx = _norm(x)

        if exact_breakdown:
            stop = STOP_EXACT_BREAKDOWN
            break

        test1 = normr / normb
        test2 = normar / (normA * normr) if normA * normr > 0 else np.inf
        test3 = 1.0 / condA
        t1 = test1 / (1.0 + normA * normx / normb)
        rtol = cfg.btol + cfg.atol * normA * normx / normb

        if 1.0 + test3 <= 1.0 or test3 <= ctol:
            stop = STOP_CONLIM
            break
        if 1.0 + test2 <= 1.0 or test2 <= cfg.atol:
            stop = STOP_CONVERGED
            break
        if 1.0 + t1 <= 1.0 or test1 <= rtol:
            stop = STOP_CONVERGED
            break
    if stop is None:
        stop = STOP_MAX_ITER

    return SolveReport(
        x=np.asarray(x, dtype=np.float64),
        iterations=itn,
        resid_norm=float(normr),
        normal_resid_norm=float(normar),
        anorm_est=float(normA),
        cond_est=float(condA),
        stop_reason=stop,
    )


def cgls(problem: LstSqProblem, cfg: SolveConfig = SolveConfig()) -> SolveReport:
    """Conjugate gradients on the normal equations (robustness baseline).

    Documented to be less robust than :func:`lsmr` on ill-conditioned
    problems because it works with the squared operator.
    """
    _validate(problem)
    if problem.mode == MODE_TALL:
        return _cgls_tall(problem, cfg)
    return _cgls_wide(problem, cfg)


def _cgls_tall(problem, cfg):
    op = problem.op
    m, n = op.rows, op.cols
    lam2 = float(problem.lam) ** 2
    wt = cfg.work_dtype()
    maxiter = cfg.resolve_max_iter(m, n)

    b = np.asarray(problem.b, dtype=wt)
    normb = _norm(b)
    x = np.zeros(n, dtype=wt)
    if normb == 0.0:
        return SolveReport(x, 0, 0.0, 0.0, 0.0, np.nan, STOP_CONVERGED)

    apply_fw = lambda v: np.asarray(op.apply_forward(v), dtype=wt)
    apply_ad = lambda u: np.asarray(op.apply_adjoint(u), dtype=wt)

    r = b.copy()
    s = apply_ad(r)
    if _norm(s) == 0.0:
        return SolveReport(x, 0, normb, 0.0, 0.0, np.nan, STOP_CONVERGED)
    p = s.copy()
    gamma = _norm(s) ** 2
    anorm = 0.0
    itn = 0
    stop = None
    norms = np.sqrt(gamma)
    while itn < maxiter:
        itn += 1
        q = apply_fw(p)
        normp = _norm(p)
        if normp > 0:
            anorm = max(anorm, _norm(q) / normp)
        delta = _norm(q) ** 2 + lam2 * normp**2
        if delta <= 0.0:
            stop = STOP_EXACT_BREAKDOWN
            break
        step = gamma / delta
        x = x + wt(step) * p
        r = r - wt(step) * q
        s = apply_ad(r) - wt(lam2) * x
        gamma_new = _norm(s) ** 2
        beta = gamma_new / gamma
        gamma = gamma_new
        p = s + wt(beta) * p

        norms = np.sqrt(gamma)
        normr = np.sqrt(_norm(r) ** 2 + lam2 * _norm(x) ** 2)
        normx = _norm(x)
        anorm_aug = np.sqrt(anorm**2 + lam2)
        if norms <= cfg.atol * anorm_aug * normr:
            stop = STOP_CONVERGED
            break
        if normr <= cfg.btol * normb + cfg.atol * anorm_aug * normx:
            stop = STOP_CONVERGED
            break
    if stop is None:
        stop = STOP_MAX_ITER
    normr = np.sqrt(_norm(r) ** 2 + lam2 * _norm(x) ** 2)
    return SolveReport(
        x=np.asarray(x, dtype=np.float64),
        iterations=itn,
        resid_norm=float(normr if lam2 > 0 else _norm(r)),
        normal_resid_norm=float(norms),
        anorm_est=float(np.sqrt(anorm**2 + lam2)),
        cond_est=float("nan"),
        stop_reason=stop,
    )


def _cgls_wide(problem, cfg):
    op = problem.op
    m, n = op.rows, op.cols
    lam2 = float(problem.lam) ** 2
    wt = cfg.work_dtype()
    maxiter = cfg.resolve_max_iter(m, n)

    b = np.asarray(problem.b, dtype=wt)
    normb = _norm(b)
    x = np.zeros(n, dtype=wt)
    if normb == 0.0:
        return SolveReport(x, 0, 0.0, 0.0, 0.0, np.nan, STOP_CONVERGED)

    apply_fw = lambda v: np.asarray(op.apply_forward(v), dtype=wt)
    apply_ad = lambda u: np.asarray(op.apply_adjoint(u), dtype=wt)

    # CG on (A A^T + lam^2 I) y = b; x = A^T y tracked incrementally.
    r = b.copy()
    p = r.copy()
    gamma = normb**2
    anorm2 = 0.0
    itn = 0
    stop = None
    while itn < maxiter:
        itn += 1
        t = apply_ad(p)
        q = apply_fw(t) + wt(lam2) * p
        normp = _norm(p)
        if normp > 0:
            anorm2 = max(anorm2, _norm(q) / normp)
        denom = _dot(p, q)
        if denom <= 0.0:
            stop = STOP_EXACT_BREAKDOWN
            break
        step = gamma / denom
        x = x + wt(step) * t
        r = r - wt(step) * q
        gamma_new = _norm(r) ** 2
        beta = gamma_new / gamma
        gamma = gamma_new
        p = r + wt(beta) * p

        normr = np.sqrt(gamma)
        if normr <= cfg.btol * normb + cfg.atol * np.sqrt(max(anorm2 - lam2, 0.0)) * _norm(x):
            stop = STOP_CONVERGED
            break
    if stop is None:
        stop = STOP_MAX_ITER
    normr = np.sqrt(gamma)
    anorm = np.sqrt(max(anorm2 - lam2, 0.0))
    return SolveReport(
        x=np.asarray(x, dtype=np.float64),
        iterations=itn,
        resid_norm=float(normr),
        normal_resid_norm=float(normr),
        anorm_est=float(anorm),
        cond_est=float("nan"),
        stop_reason=stop,
    )


def dense_lstsq(matrix, b, lam=0.0):
    """Dense oracle: Householder QR on the (possibly stacked) system.

    Tall or regularized problems solve ``[A; lam I] x = [b; 0]``; wide
    unregularized problems return the min-norm solution via QR of ``A^T``.
    Numerical rank deficiency raises (rank-deficient inputs are out of
    scope for the iterative solvers too).
    """
    matrix = np.asarray(matrix, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = matrix.shape
    if b.shape != (m,):
        raise ConfigurationError(f"rhs length {b.shape} does not match matrix rows {m}")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    if lam > 0:
        stacked = np.vstack([matrix, lam * np.eye(n)])
        rhs = np.concatenate([b, np.zeros(n)])
        q, r = sla.qr(stacked, mode="economic")
        _check_rank(r, m, n)
        return sla.solve_triangular(r, q.T @ rhs)
    if m >= n:
        q, r = sla.qr(matrix, mode="economic")
        _check_rank(r, m, n)
        return sla.solve_triangular(r, q.T @ b)
    q, r = sla.qr(matrix.T, mode="economic")
    _check_rank(r, m, n)
    return q @ sla.solve_triangular(r, b, trans="T")


def _check_rank(r, m, n):
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= max(m, n) * np.finfo(float).eps * d.max():
        raise RankDeficiencyError(
            f"matrix of shape ({m}, {n}) is numerically rank deficient")


def make_illconditioned(m, n, cond, seed):
    """Dense matrix with log-spaced singular values in ``[1, cond]``.

    Built as ``Q1 diag(sigma) Q2^T`` with orthonormal factors from QR of
    seeded Gaussian matrices; deterministic per seed.
    """
    if cond < 1:
        raise ConfigurationError("cond must be >= 1")
    rng = np.random.default_rng(seed)
    k = min(m, n)
    q1, _ = np.linalg.qr(rng.standard_normal((m, k)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, k)))
    sigma = np.logspace(0.0, np.log10(cond), k)
    return q1 @ (sigma[:, None] * q2.T)
