"""Matrix-free linear operators with explicit adjoints.

Every solver and gradient rule in this package consumes the
:class:`LinearOperator` interface: a shape, a forward map ``v -> A v``, an
adjoint map ``u -> A^T u``, and (for parameterized operators) a hook that
returns the gradient of ``<u, A(theta) v>`` with respect to the parameter
vector ``theta``.  Operators are immutable after construction; applying one
never mutates it, so a single operator may serve many concurrent solves.

Adjoints are supplied explicitly rather than derived from the forward map.
The price of that choice is that a hand-written adjoint can be wrong, so the
package treats :func:`dot_test` as the enforcement mechanism: it measures
``|<u, A v> - <A^T u, v>|`` over random probes and every shipped operator
kind is required to pass it.
"""

from __future__ import annotations

import csv
from typing import Callable

import numpy as np

from .errors import DimensionMismatchError, UnsupportedCapabilityError

__all__ = [
    "LinearOperator",
    "dense_operator",
    "diagonal_operator",
    "convolution1d_operator",
    "scaled_operator",
    "adjointed_operator",
    "stacked_operator",
    "constraint_jacobian_operator",
    "dot_test",
    "load_dense_fixture",
    "save_dense_fixture",
]

# Tags for the shipped operator kinds.
KIND_DENSE = "dense"
KIND_DIAGONAL = "diagonal"
KIND_CONVOLUTION1D = "convolution1d"
KIND_RFF_FEATURES = "rff_features"
KIND_CONSTRAINT_JACOBIAN = "constraint_jacobian"
KIND_STACKED = "stacked"
KIND_ADJOINTED = "adjointed"
KIND_SCALED = "scaled"


class LinearOperator:
    """A parameterized matrix-free linear map ``A(theta)``.

    Parameters
    ----------
    rows, cols : int
        Output and input dimensions of the forward map.
    forward : callable
        ``v -> A v`` for ``v`` of length ``cols``.
    adjoint : callable
        ``u -> A^T u`` for ``u`` of length ``rows``.
    params : ndarray, optional
        Flat parameter vector ``theta``; empty when the operator carries no
        trainable parameters.
    param_inner_grad : callable, optional
        ``(u, v) -> grad_theta <u, A(theta) v>`` evaluated at the stored
        parameters.  Operators without parameters may omit it or supply one
        returning an empty vector.
    kind : str
        Tag naming the concrete operator kind (for reports and tests).
    """

    __slots__ = ("rows", "cols", "params", "kind", "_forward", "_adjoint", "_pig")

    def __init__(self, rows, cols, forward, adjoint, params=None,
                 param_inner_grad=None, kind="custom"):
        if rows <= 0 or cols <= 0:
            raise ValueError(f"operator shape must be positive, got ({rows}, {cols})")
        self.rows = int(rows)
        self.cols = int(cols)
        self.params = np.zeros(0) if params is None else np.atleast_1d(np.asarray(params, dtype=float))
        self.kind = kind
        self._forward = forward
        self._adjoint = adjoint
        self._pig = param_inner_grad

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def num_params(self):
        return self.params.shape[0]

    def apply_forward(self, v):
        """Return ``A v``; raises on a length mismatch."""
        v = np.asarray(v)
        if v.shape != (self.cols,):
            raise DimensionMismatchError(f"forward input of {self.kind} operator", (self.cols,), v.shape)
        return self._forward(v)

    def apply_adjoint(self, u):
        """Return ``A^T u``; raises on a length mismatch."""
        u = np.asarray(u)
        if u.shape != (self.rows,):
            raise DimensionMismatchError(f"adjoint input of {self.kind} operator", (self.rows,), u.shape)
        return self._adjoint(u)

    def param_inner_grad(self, u, v):
        """Return ``grad_theta <u, A(theta) v>`` at the stored parameters."""
        if self._pig is None:
            raise UnsupportedCapabilityError(
                f"operator of kind '{self.kind}' does not provide param_inner_grad")
        u = np.asarray(u)
        v = np.asarray(v)
        if u.shape != (self.rows,):
            raise DimensionMismatchError("param_inner_grad u", (self.rows,), u.shape)
        if v.shape != (self.cols,):
            raise DimensionMismatchError("param_inner_grad v", (self.cols,), v.shape)
        return np.atleast_1d(np.asarray(self._pig(u, v), dtype=float))

    @property
    def has_param_inner_grad(self):
        return self._pig is not None

    def __repr__(self):
        return f"LinearOperator(kind={self.kind!r}, shape={self.rows}x{self.cols}, p={self.num_params})"


def dense_operator(matrix, parameterized=False):
    """Wrap an explicit matrix.

    With ``parameterized=True`` the flattened entries act as the parameter
    vector, so ``param_inner_grad(u, v)`` is the flattened outer product
    ``u v^T``.
    """
    matrix = np.asarray(matrix)
    m, n = matrix.shape

    def pig(u, v):
        return np.outer(u, v).ravel()

    return LinearOperator(
        m, n,
        forward=lambda v: matrix @ v,
        adjoint=lambda u: matrix.T @ u,
        params=matrix.astype(float).ravel() if parameterized else None,
        param_inner_grad=pig if parameterized else _empty_pig,
        kind=KIND_DENSE,
    )


def diagonal_operator(diag):
    """Diagonal operator with the diagonal as its parameter vector."""
    diag = np.asarray(diag, dtype=float)
    n = diag.shape[0]
    return LinearOperator(
        n, n,
        forward=lambda v: diag * v,
        adjoint=lambda u: diag * u,
        params=diag,
        param_inner_grad=lambda u, v: u * v,
        kind=KIND_DIAGONAL,
    )


def convolution1d_operator(kernel, n):
    """Circular (periodic) 1-d convolution on ``R^n`` with the kernel as parameters.

    The matrix is square: entry ``(i, j)`` is ``kernel[(i - j) mod n]`` for
    lags below the kernel length and zero otherwise, so
    ``(A v)_i = sum_l kernel[l] * v[(i - l) mod n]``.
    """
    kernel = np.asarray(kernel, dtype=float)
    taps = kernel.shape[0]
    if taps > n:
        raise ValueError(f"kernel length {taps} exceeds signal length {n}")

    def forward(v):
        out = np.zeros(n, dtype=np.result_type(v, kernel))
        for lag in range(taps):
            out += kernel[lag] * np.roll(v, lag)
        return out

    def adjoint(u):
        out = np.zeros(n, dtype=np.result_type(u, kernel))
        for lag in range(taps):
            out += kernel[lag] * np.roll(u, -lag)
        return out

    def pig(u, v):
        return np.array([float(u @ np.roll(v, lag)) for lag in range(taps)])

    return LinearOperator(n, n, forward, adjoint, params=kernel,
                          param_inner_grad=pig, kind=KIND_CONVOLUTION1D)


def scaled_operator(op, scale):
    """The operator ``scale * A`` for a fixed scalar ``scale``."""
    scale = float(scale)
    pig = None
    if op.has_param_inner_grad:
        pig = lambda u, v: scale * op.param_inner_grad(u, v)
    return LinearOperator(
        op.rows, op.cols,
        forward=lambda v: scale * op.apply_forward(v),
        adjoint=lambda u: scale * op.apply_adjoint(u),
        params=op.params,
        param_inner_grad=pig,
        kind=KIND_SCALED,
    )


def adjointed_operator(op):
    """The transpose view ``A^T``.

    Adjointing twice returns the original operator object, so shape metadata
    round-trips exactly.
    """
    if op.kind == KIND_ADJOINTED and hasattr(op, "_base"):
        return op._base
    pig = None
    if op.has_param_inner_grad:
        # <u, A^T v> = <v, A u>
        pig = lambda u, v: op.param_inner_grad(v, u)
    wrapped = _AdjointedOperator(
        op.cols, op.rows,
        forward=op.apply_adjoint,
        adjoint=op.apply_forward,
        params=op.params,
        param_inner_grad=pig,
    )
    wrapped._base = op
    return wrapped


class _AdjointedOperator(LinearOperator):
    __slots__ = ("_base",)

    def __init__(self, rows, cols, forward, adjoint, params, param_inner_grad):
        super().__init__(rows, cols, forward, adjoint, params,
                         param_inner_grad, kind=KIND_ADJOINTED)


def stacked_operator(blocks):
    """Vertical stack ``[A_1; A_2; ...]`` of operators sharing a column count.

    The stack carries no parameter hook of its own; it exists for building
    augmented systems such as ``[A; lambda I]`` in tests.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("stacked_operator needs at least one block")
    cols = blocks[0].cols
    for b in blocks:
        if b.cols != cols:
            raise DimensionMismatchError("stacked block columns", (cols,), (b.cols,))
    rows = sum(b.rows for b in blocks)
    offsets = np.cumsum([0] + [b.rows for b in blocks])

    def forward(v):
        return np.concatenate([b.apply_forward(v) for b in blocks])

    def adjoint(u):
        out = np.zeros(cols)
        for b, lo, hi in zip(blocks, offsets[:-1], offsets[1:]):
            out += b.apply_adjoint(u[lo:hi])
        return out

    return LinearOperator(rows, cols, forward, adjoint,
                          param_inner_grad=_empty_pig, kind=KIND_STACKED)


def constraint_jacobian_operator(jvp, tjvp, dim_constraint, dim_theta):
    """Wrap constraint Jacobian-vector products as a ``k x D`` operator."""
    return LinearOperator(dim_constraint, dim_theta, forward=jvp, adjoint=tjvp,
                          param_inner_grad=_empty_pig, kind=KIND_CONSTRAINT_JACOBIAN)


def _empty_pig(u, v):
    return np.zeros(0)


def dot_test(op, trials=10, seed=0):
    """Max discrepancy ``|<u, A v> - <A^T u, v>|`` over random Gaussian probes.

    Deterministic for a fixed seed.  The caller normalizes by
    ``|u| |v| |A|`` when comparing against a tolerance.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.rows)
        v = rng.standard_normal(op.cols)
        lhs = float(u @ np.asarray(op.apply_forward(v), dtype=float))
        rhs = float(np.asarray(op.apply_adjoint(u), dtype=float) @ v)
        worst = max(worst, abs(lhs - rhs))
    return worst


def save_dense_fixture(path, matrix):
    """Write a dense matrix as CSV: header ``rows,cols`` then row-major data lines."""
    matrix = np.asarray(matrix)
    m, n = matrix.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([m, n])
        for row in matrix:
            writer.writerow([repr(float(x)) for x in row])


def load_dense_fixture(path):
    """Read a dense matrix written by :func:`save_dense_fixture`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m, n = int(header[0]), int(header[1])
        data = [[float(x) for x in row] for row in reader if row]
    matrix = np.asarray(data)
    if matrix.shape != (m, n):
        raise DimensionMismatchError("fixture data", (m, n), matrix.shape)
    return matrix
