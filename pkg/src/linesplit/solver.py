"""CSR storage, Jacobi-preconditioned conjugate gradients and a dense oracle."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import BreakdownError, NotConverged, SingularMatrix


class CsrMatrix:
    """Square CSR matrix with sorted, unique column indices in every row."""

    __slots__ = ("indptr", "indices", "data", "n", "_sp")

    def __init__(self, indptr, indices, data, n: int):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self.n = int(n)
        self._sp = None

    @classmethod
    def from_coo(cls, rows, cols, vals, n: int) -> "CsrMatrix":
        """Duplicates are summed in input order, so the result is reproducible."""
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls.from_scipy(m)

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        out = cls(m.indptr, m.indices, m.data, m.shape[0])
        out._sp = m
        return out

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def to_scipy(self) -> sp.csr_matrix:
        if self._sp is None:
            self._sp = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        return self._sp

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x

    __matmul__ = matvec

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def scaled(self, c: float) -> "CsrMatrix":
        return CsrMatrix(self.indptr, self.indices, c * self.data, self.n)

    def __add__(self, other: "CsrMatrix") -> "CsrMatrix":
        return CsrMatrix.from_scipy(self.to_scipy() + other.to_scipy())

    def todense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def asymmetry(self) -> float:
        """max |A - A^T|."""
        d = self.to_scipy() - self.to_scipy().T
        return float(abs(d).max()) if d.nnz else 0.0


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    max_iter: int | None = None

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")

    def iteration_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else int(20 * math.sqrt(n) + 200)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    wall_time: float
    restarts: int = 0
    history: list[float] = field(default_factory=list, repr=False)


def cg_solve(A: CsrMatrix, b, config: SolverConfig = SolverConfig(), *, check: bool = True, callback=None):
    """Jacobi-preconditioned CG from a zero initial guess.

    The reported residual ||b - A x|| / ||b|| is recomputed from scratch at
    exit; if the recursive residual drifted, CG restarts from the true one.
    """
    t_start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t_start)
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise BreakdownError("non-positive diagonal entry; matrix is not SPD")
    inv_d = 1.0 / diag
    cap = config.iteration_cap(n)
    target = config.rel_tol * bnorm
    history = []
    r = b.copy()
    it = 0
    restarts = 0
    while True:
        z = inv_d * r
        p = z.copy()
        rz = float(r @ z)
        while it < cap:
            Ap = A.matvec(p)
            pAp = float(p @ Ap)
            if not pAp > 0.0:
                raise BreakdownError(f"p^T A p = {pAp:.3e} <= 0 at iteration {it}; matrix is not SPD")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rnorm = float(np.linalg.norm(r))
            history.append(rnorm / bnorm)
            if callback is not None:
                callback(x)
            if rnorm <= target:
                break
            z = inv_d * r
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new
        r = b - A.matvec(x)
        true_res = float(np.linalg.norm(r)) / bnorm
        if true_res <= config.rel_tol or it >= cap or restarts >= 5:
            break
        restarts += 1
    report = SolveReport(it, true_res, true_res <= config.rel_tol, time.perf_counter() - t_start, restarts, history)
    if check and not report.converged:
        raise NotConverged(f"CG stopped after {it} iterations at relative residual {true_res:.3e}", report)
    return x, report


def dense_solve(A_dense, b) -> np.ndarray:
    """Partial-pivoting LU solve; a test oracle for small systems."""
    A_dense = np.asarray(A_dense, dtype=float)
    if A_dense.shape[0] > 2000:
        raise ValueError("dense_solve is limited to n <= 2000")
    try:
        with warnings.catch_warnings():
            # singularity is detected below and raised as an error
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(A_dense, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularMatrix(str(exc)) from exc
    d = np.abs(np.diag(lu))
    if d.min(initial=np.inf) <= np.finfo(float).eps * max(d.max(initial=0.0), 1e-300) * len(d):
        raise SingularMatrix("matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=float))
