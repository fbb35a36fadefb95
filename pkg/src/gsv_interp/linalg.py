"""Real linear algebra used by the interpolation engines.

Dense matrices are plain 2-D ``numpy`` arrays.  Sparse matrices use the
CSR layout in :class:`SparseMatrix`, whose products go through the kernel
backend selected in :mod:`gsv_interp._kernels`.  The iterative solvers are
written against :class:`LinearOperator` so the interpolation systems can be
solved without ever forming the coefficient matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from . import _kernels

__all__ = [
    "LinalgError",
    "DimensionError",
    "SingularMatrixError",
    "BreakdownError",
    "DivergenceError",
    "SparseMatrix",
    "LinearOperator",
    "LayerSchedule",
    "KrylovResult",
    "aslinearoperator",
    "matvec",
    "lu_solve",
    "dense_inverse",
    "cg_solve",
    "bicg_solve",
]


class LinalgError(ArithmeticError):
    """Base class for solver failures."""


class DimensionError(ValueError):
    pass


class SingularMatrixError(LinalgError):
    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix is singular to working precision at pivot {pivot}")


class BreakdownError(LinalgError):
    def __init__(self, iteration, quantity="rho"):
        self.iteration = iteration
        super().__init__(f"BiCG breakdown at iteration {iteration}: {quantity} vanished")


class DivergenceError(LinalgError):
    def __init__(self, iteration, solver="solver"):
        self.iteration = iteration
        super().__init__(f"{solver} produced a non-finite residual at iteration {iteration}")


def _as_vector(v, name="v"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix.

    Column indices are strictly increasing inside each row, so two matrices
    with the same entries have identical storage.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        rows, cols = (int(s) for s in self.shape)
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if rows < 0 or cols < 0:
            raise DimensionError(f"negative shape {self.shape}")
        if indptr.shape != (rows + 1,) or indptr[0] != 0:
            raise ValueError("indptr must have rows + 1 entries starting at 0")
        if np.any(np.diff(indptr) < 0) or indptr[-1] != len(indices):
            raise ValueError("indptr must be non-decreasing and end at nnz")
        if len(data) != len(indices):
            raise ValueError("indices and data lengths differ")
        if len(indices):
            if indices.min() < 0 or indices.max() >= cols:
                raise ValueError(f"column index out of range for {cols} columns")
            # strictly increasing within each row
            step = np.diff(indices)
            row_start = np.zeros(len(indices), dtype=bool)
            row_start[indptr[:-1][np.diff(indptr) > 0]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within rows")
        if not np.all(np.isfinite(data)):
            raise ValueError("sparse values must be finite")
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        object.__setattr__(self, "shape", (rows, cols))
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    @property
    def nnz(self):
        return len(self.data)

    @property
    def rows(self):
        return self.shape[0]

    @property
    def cols(self):
        return self.shape[1]

    @classmethod
    def from_triplets(cls, shape, rows, cols, values):
        """Build from coordinate triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("triplet arrays must have equal length")
        nrows, ncols = shape
        if len(rows) and (rows.min() < 0 or rows.max() >= nrows):
            raise ValueError("row index out of range")
        if len(cols) and (cols.min() < 0 or cols.max() >= ncols):
            raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows):
            key = rows * ncols + cols
            first = np.concatenate(([True], key[1:] != key[:-1]))
            groups = np.cumsum(first) - 1
            values = np.bincount(groups, weights=values)
            rows, cols = rows[first], cols[first]
        indptr = np.zeros(nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=nrows), out=indptr[1:])
        return cls((nrows, ncols), indptr, cols, values)

    @classmethod
    def from_dense(cls, a, drop_zeros=True):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
        mask = a != 0 if drop_zeros else np.ones(a.shape, dtype=bool)
        rows, cols = np.nonzero(mask)
        return cls.from_triplets(a.shape, rows, cols, a[rows, cols])

    @classmethod
    def zeros(cls, shape):
        return cls(shape, np.zeros(shape[0] + 1, dtype=np.int64), [], [])

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls((n, n), np.arange(n + 1), idx, np.ones(n))

    def row_ids(self):
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.indptr))

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def transpose(self):
        return SparseMatrix.from_triplets(
            (self.cols, self.rows), self.indices, self.row_ids(), self.data
        )

    @property
    def T(self):
        return self.transpose()

    def scaled(self, factor):
        return SparseMatrix(self.shape, self.indptr, self.indices, self.data * factor)

    def row_sums(self):
        return np.bincount(self.row_ids(), weights=self.data, minlength=self.rows)

    def dot(self, x):
        x = _as_vector(x, "x")
        if len(x) != self.cols:
            raise DimensionError(
                f"cannot multiply {self.rows}x{self.cols} matrix by vector of length {len(x)}"
            )
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, x, self.rows)

    def rdot(self, x):
        """Transpose product ``self.T @ x`` without forming the transpose."""
        x = _as_vector(x, "x")
        if len(x) != self.rows:
            raise DimensionError(
                f"cannot multiply transpose of {self.rows}x{self.cols} matrix "
                f"by vector of length {len(x)}"
            )
        return _kernels.csr_rmatvec(self.indptr, self.indices, self.data, x, self.cols)

    def __matmul__(self, x):
        return self.dot(x)


def matvec(m, v):
    """``m @ v`` for a :class:`SparseMatrix` or a dense 2-D array."""
    if isinstance(m, SparseMatrix):
        return m.dot(v)
    m = np.asarray(m, dtype=np.float64)
    v = _as_vector(v)
    if m.ndim != 2 or m.shape[1] != len(v):
        raise DimensionError(
            f"cannot multiply {m.shape[0]}x{m.shape[1] if m.ndim == 2 else '?'} "
            f"matrix by vector of length {len(v)}"
        )
    return m @ v


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free operator with forward and transpose application."""

    shape: tuple[int, int]
    forward: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    transpose: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    @property
    def out_dim(self):
        return self.shape[0]

    @property
    def in_dim(self):
        return self.shape[1]

    def matvec(self, x):
        return self.forward(x)

    def rmatvec(self, y):
        return self.transpose(y)

    def __matmul__(self, x):
        return self.forward(x)

    @property
    def T(self):
        return LinearOperator((self.shape[1], self.shape[0]), self.transpose, self.forward)

    def to_dense(self):
        """Materialize column by column.  Intended for small oracle checks."""
        eye = np.eye(self.in_dim)
        return np.column_stack([self.forward(e) for e in eye]) if self.in_dim else np.zeros(self.shape)


def aslinearoperator(a):
    if isinstance(a, LinearOperator):
        return a
    if isinstance(a, SparseMatrix):
        return LinearOperator(a.shape, a.dot, a.rdot)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
    return LinearOperator(a.shape, a.__matmul__, a.T.__matmul__)


def _lu_factor(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"LU needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    scale = np.abs(a).max() if n else 0.0
    diag = np.abs(np.diag(lu))
    tiny = np.nonzero(diag <= n * np.finfo(float).eps * scale)[0]
    if n and (scale == 0.0 or len(tiny)):
        raise SingularMatrixError(int(tiny[0]) if len(tiny) else 0)
    return lu, piv


def lu_solve(a, b):
    """Solve ``a x = b`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` (carrying the pivot index) when a
    pivot is zero to working precision.
    """
    b = np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"LU needs a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, matrix has {a.shape[0]}")
    lu, piv = _lu_factor(a)
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def dense_inverse(a):
    """Explicit inverse through the same LU factorization (oracle use only)."""
    a = np.asarray(a, dtype=np.float64)
    return lu_solve(a, np.eye(a.shape[0]))


@dataclass(frozen=True, eq=False)
class LayerSchedule:
    """Per-iteration BiCG coefficients for an unrolled solve.

    ``alpha`` and ``beta`` are either 1-D (one value per BiCG layer, shared
    by every DR layer) or 2-D with shape ``(dr_layers, bicg_layers)``.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        beta = np.array(self.beta, dtype=np.float64)
        if alpha.shape != beta.shape:
            raise ValueError(f"alpha shape {alpha.shape} differs from beta shape {beta.shape}")
        if alpha.ndim not in (1, 2) or alpha.shape[-1] == 0:
            raise ValueError("schedule must be a non-empty 1-D or 2-D array")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise ValueError("schedule entries must be finite")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def __len__(self):
        return self.alpha.shape[-1]

    @property
    def per_dr_layer(self):
        return self.alpha.ndim == 2

    def for_layer(self, k):
        """1-D schedule used by DR layer ``k``."""
        if not self.per_dr_layer:
            return self
        if k >= self.alpha.shape[0]:
            raise ValueError(f"schedule has {self.alpha.shape[0]} DR rows, layer {k} requested")
        return LayerSchedule(self.alpha[k], self.beta[k])

    def __eq__(self, other):
        if not isinstance(other, LayerSchedule):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha) and np.array_equal(self.beta, other.beta)

    def to_json(self):
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


class KrylovResult(NamedTuple):
    x: np.ndarray
    iters: int
    residual: float
    coefficients: LayerSchedule | None = None


def _true_residual(op, x, b, bnorm):
    return float(np.linalg.norm(b - op.matvec(x)) / bnorm)


def cg_solve(op, b, max_iters=None, tol=1e-8, x0=None):
    """Conjugate gradient for a symmetric positive definite operator.

    Stops when ``||op(x) - b|| / ||b|| <= tol`` or after ``max_iters``
    iterations (default: the dimension).  The reported residual is the true
    relative residual of the returned iterate.
    """
    op = aslinearoperator(op)
    b = _as_vector(b, "b")
    n = op.in_dim
    if len(b) != op.out_dim:
        raise DimensionError(f"right-hand side length {len(b)} != operator rows {op.out_dim}")
    if max_iters is None:
        max_iters = n
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else _as_vector(x0, "x0").copy()
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, 0.0)
    r = b - op.matvec(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = r @ r
    k = 0
    while k < max_iters:
        if np.sqrt(rr) <= tol * bnorm:
            break
        q = op.matvec(p)
        alpha = rr / (p @ q)
        x += alpha * p
        r -= alpha * q
        rr_new = r @ r
        k += 1
        if not np.isfinite(rr_new):
            raise DivergenceError(k, "CG")
        p = r + (rr_new / rr) * p
        rr = rr_new
    return KrylovResult(x, k, _true_residual(op, x, b, bnorm))


_BREAKDOWN = 1e-14


def bicg_solve(op, b, schedule=None, max_iters=None, tol=1e-8):
    """Biconjugate gradient for a square, possibly asymmetric operator.

    Without ``schedule`` the classical coefficients
    ``alpha = rho / <p~, A p>`` and ``beta = rho_new / rho`` are used, with
    early exit at relative residual ``tol``.  With a schedule the solver is
    unrolled: exactly ``len(schedule)`` iterations run with the supplied
    ``alpha[k]``, ``beta[k]`` and nothing is divided by a computed quantity.

    The returned :class:`KrylovResult` carries the coefficients actually
    used, so a classical run can be replayed as a schedule.
    """
    op = aslinearoperator(op)
    b = _as_vector(b, "b")
    n = op.in_dim
    if op.out_dim != n:
        raise DimensionError(f"BiCG needs a square operator, got {op.shape}")
    if len(b) != n:
        raise DimensionError(f"right-hand side length {len(b)} != operator size {n}")
    if schedule is not None:
        if schedule.per_dr_layer:
            raise ValueError("pass a 1-D schedule; select a DR row with for_layer()")
        iters = len(schedule)
        if max_iters is not None and max_iters > iters:
            raise ValueError(f"schedule has {iters} layers but {max_iters} iterations requested")
        iters = iters if max_iters is None else max_iters
        sched_alpha, sched_beta = schedule.alpha, schedule.beta
    else:
        iters = n if max_iters is None else max_iters

    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return KrylovResult(x, 0, 0.0, None)
    r = b.copy()
    rt = b.copy()
    p = r.copy()
    pt = rt.copy()
    rho = rt @ r
    alphas, betas = [], []
    k = 0
    while k < iters:
        rnorm = np.linalg.norm(r)
        if schedule is None:
            if rnorm <= tol * bnorm or rnorm == 0.0:
                break
            if abs(rho) <= _BREAKDOWN * np.linalg.norm(rt) * rnorm:
                raise BreakdownError(k, "rho")
        q = op.matvec(p)
        qt = op.rmatvec(pt)
        if schedule is None:
            ptq = pt @ q
            if abs(ptq) <= _BREAKDOWN * np.linalg.norm(pt) * np.linalg.norm(q):
                raise BreakdownError(k, "<p~, A p>")
            alpha = rho / ptq
        else:
            alpha = sched_alpha[k]
        x += alpha * p
        r -= alpha * q
        rt -= alpha * qt
        if schedule is None:
            rho_new = rt @ r
            beta = rho_new / rho
            rho = rho_new
        else:
            beta = sched_beta[k]
        p = r + beta * p
        pt = rt + beta * pt
        alphas.append(alpha)
        betas.append(beta)
        k += 1
        if not np.all(np.isfinite(r)):
            raise DivergenceError(k, "BiCG")
    coeffs = LayerSchedule(alphas, betas) if alphas else None
    return KrylovResult(x, k, _true_residual(op, x, b, bnorm), coeffs)
