"""Golub-Kahan bidiagonalization of a matrix-free operator.

The streaming recurrence, started from a right-hand side ``b``, produces unit
vectors ``u_k`` (length m) and ``v_k`` (length n) together with nonnegative
scalars ``alpha_k``, ``beta_k`` satisfying

    beta_1 u_1 = b,                  alpha_1 v_1 = A^T u_1,
    beta_{k+1} u_{k+1} = A v_k - alpha_k u_k,
    alpha_{k+1} v_{k+1} = A^T u_{k+1} - beta_{k+1} v_k.

Collecting k steps gives ``A V_k = U_{k+1} B_k`` with ``B_k`` the
(k+1) x k lower-bidiagonal matrix carrying ``alpha_1..alpha_k`` on the
diagonal and ``beta_2..beta_{k+1}`` below it.  The streaming form feeds the
LSMR solver; :func:`gk_factor` accumulates explicit factors for small-k
testing, optionally with full reorthogonalization.

Convention note: the recurrence started from ``b`` yields ``U e_1 = b/|b|``
(the first *left* vector is the normalized start).  With that convention the
min-norm solution of a consistent wide system ``A x = b`` at ``k = m`` is
``|b| V B^{-1} e_1``, which tests verify against a dense pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateStartError

__all__ = ["BidiagState", "BidiagFactors", "gk_init", "gk_step", "gk_factor"]

# A normalizer counts as zero when it falls below this multiple of the running
# estimate of |A| (the u, v vectors it scales are unit length).
BREAKDOWN_RTOL = 1e-14


@dataclass(frozen=True)
class BidiagState:
    """One step of the coupled two-term recurrence.

    ``breakdown`` is ``None`` while the recurrence can continue, otherwise
    the name of the normalizer ("alpha" or "beta") that vanished; a broken
    state means the exact factorization has been reached (or, at
    initialization, that ``b`` is orthogonal to the range of ``A``).
    """

    k: int
    u: np.ndarray
    v: np.ndarray
    alpha: float
    beta: float
    anorm_est: float
    breakdown: str | None = None


@dataclass(frozen=True)
class BidiagFactors:
    """Explicit factors from k steps: ``A V = U B`` up to roundoff.

    Without breakdown ``U`` has k+1 columns and ``B`` is (k+1) x k; a
    beta-breakdown truncates to square k x k factors.  ``exhausted`` is set
    whenever the recurrence terminated before the requested step count.
    """

    U: np.ndarray
    V: np.ndarray
    B: np.ndarray
    steps: int
    exhausted: bool


def gk_init(op, b):
    """Start the recurrence: ``beta_1 = |b|``, ``u_1 = b/beta_1``, then ``v_1``."""
    b = np.asarray(b, dtype=float)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise DegenerateStartError("bidiagonalization started from b = 0")
    u = b / beta
    w = np.asarray(op.apply_adjoint(u), dtype=float)
    alpha = float(np.linalg.norm(w))
    if alpha < np.finfo(float).tiny:
        # b is (numerically) orthogonal to range(A).
        return BidiagState(1, u, np.zeros(op.cols), alpha, beta, alpha, breakdown="alpha")
    return BidiagState(1, u, w / alpha, alpha, beta, alpha)


def gk_step(op, state):
    """Advance the recurrence by one step, signalling breakdown via the state."""
    if state.breakdown is not None:
        raise ValueError("cannot step a broken-down bidiagonalization state")
    u_next = np.asarray(op.apply_forward(state.v), dtype=float) - state.alpha * state.u
    beta = float(np.linalg.norm(u_next))
    anorm = float(np.sqrt(state.anorm_est**2 + beta**2))
    if beta <= BREAKDOWN_RTOL * anorm:
        return replace(state, beta=beta, breakdown="beta")
    u_next = u_next / beta
    v_next = np.asarray(op.apply_adjoint(u_next), dtype=float) - beta * state.v
    alpha = float(np.linalg.norm(v_next))
    anorm = float(np.sqrt(anorm**2 + alpha**2))
    if alpha <= BREAKDOWN_RTOL * anorm:
        return BidiagState(state.k + 1, u_next, state.v, alpha, beta, anorm,
                           breakdown="alpha")
    return BidiagState(state.k + 1, u_next, v_next / alpha, alpha, beta, anorm)


def gk_factor(op, b, k, reorthogonalize=False):
    """Accumulate explicit factors from k steps of the recurrence.

    Intended for small k (tests and debugging).  With
    ``reorthogonalize=True`` every new Lanczos vector is re-projected against
    all previous ones, which restores the orthonormality that the plain
    recurrence slowly loses.  Breakdown before k steps returns truncated
    factors with ``exhausted`` set.
    """
    if not 1 <= k <= min(op.rows, op.cols):
        raise ValueError(f"k must lie in [1, min(m, n)] = [1, {min(op.rows, op.cols)}]")
    if reorthogonalize:
        us, vs, alphas, betas, exhausted = _recurrence_reorth(op, b, k)
    else:
        us, vs, alphas, betas, exhausted = _recurrence_plain(op, b, k)
    if not vs:
        # alpha-breakdown at initialization: empty factorization.
        return BidiagFactors(U=np.column_stack(us), V=np.zeros((op.cols, 0)),
                             B=np.zeros((len(us), 0)), steps=0, exhausted=True)
    U = np.column_stack(us)
    V = np.column_stack(vs)
    B = np.zeros((len(us), len(alphas)))
    for i, a in enumerate(alphas):
        B[i, i] = a
    for i, bt in enumerate(betas):
        B[i + 1, i] = bt
    return BidiagFactors(U=U, V=V, B=B, steps=len(alphas), exhausted=exhausted)


def _recurrence_plain(op, b, k):
    """Drive gk_init/gk_step so the scalars match the streaming path exactly."""
    state = gk_init(op, b)
    us = [state.u]
    vs = []
    alphas = []
    betas = []  # beta_2, beta_3, ... (one fewer than the u columns)
    if state.breakdown is not None:
        return us, vs, alphas, betas, True
    vs.append(state.v)
    alphas.append(state.alpha)
    while state.k < k:
        state = gk_step(op, state)
        if state.breakdown == "beta":
            return us, vs, alphas, betas, True
        us.append(state.u)
        betas.append(state.beta)
        if state.breakdown == "alpha":
            return us, vs, alphas, betas, True
        vs.append(state.v)
        alphas.append(state.alpha)
    # Half step: beta_{k+1}, u_{k+1} complete the (k+1) x k convention.
    w = np.asarray(op.apply_forward(state.v), dtype=float) - state.alpha * state.u
    beta_next = float(np.linalg.norm(w))
    if beta_next <= BREAKDOWN_RTOL * state.anorm_est:
        return us, vs, alphas, betas, True
    us.append(w / beta_next)
    betas.append(beta_next)
    return us, vs, alphas, betas, False


def _recurrence_reorth(op, b, k):
    b = np.asarray(b, dtype=float)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise DegenerateStartError("bidiagonalization started from b = 0")
    us = [b / beta]
    vs = []
    alphas = []
    betas = []
    anorm = 0.0
    for step in range(k):
        w = np.asarray(op.apply_adjoint(us[-1]), dtype=float)
        if vs:
            w -= betas[-1] * vs[-1]
        for vo in vs:
            w -= (w @ vo) * vo
        alpha = float(np.linalg.norm(w))
        anorm = float(np.sqrt(anorm**2 + alpha**2))
        if alpha <= BREAKDOWN_RTOL * max(anorm, np.finfo(float).tiny):
            return us, vs, alphas, betas, True
        vs.append(w / alpha)
        alphas.append(alpha)
        w = np.asarray(op.apply_forward(vs[-1]), dtype=float) - alpha * us[-1]
        for uo in us:
            w -= (w @ uo) * uo
        beta = float(np.linalg.norm(w))
        anorm = float(np.sqrt(anorm**2 + beta**2))
        if beta <= BREAKDOWN_RTOL * anorm:
            return us, vs, alphas, betas, True
        us.append(w / beta)
        betas.append(beta)
    return us, vs, alphas, betas, False
