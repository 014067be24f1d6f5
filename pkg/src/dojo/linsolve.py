"""Linear solves for the interior-point Newton systems.

``BlockLDU`` eliminates the mechanism graph leaves-to-root, so every block
update lands on the parent's diagonal block and the work is linear in the
number of nodes.  ``DenseQR`` is the fallback for graphs with loops or when a
block pivot is too small.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

PIVOT_TOL = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class BlockStructure:
    rows: tuple  # per node, index arrays into the matrix rows
    cols: tuple  # per node, index arrays into the matrix columns
    parent: tuple  # per node, parent node index or -1
    order: tuple  # elimination order, children before parents


class BlockLDU:
    def __init__(self, A: np.ndarray, struct: BlockStructure):
        self.struct = struct
        self.n = A.shape[0]
        rows, cols, parent = struct.rows, struct.cols, struct.parent
        diag = {i: A[np.ix_(rows[i], cols[i])] for i in struct.order}
        self.lu, self.lower, self.upper = {}, {}, {}
        for i in struct.order:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)  # the pivot check below reports it
                lu = sla.lu_factor(diag[i], check_finite=False)
            piv = np.abs(np.diag(lu[0]))
            if piv.size and not piv.min() >= PIVOT_TOL:
                raise SingularMatrixError(f"small pivot {piv.min():.3e} in block {i}")
            self.lu[i] = lu
            p = parent[i]
            if p >= 0:
                lower = A[np.ix_(rows[p], cols[i])]
                upper = A[np.ix_(rows[i], cols[p])]
                self.lower[i], self.upper[i] = lower, upper
                diag[p] = diag[p] - lower @ sla.lu_solve(lu, upper, check_finite=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        s = self.struct
        y = {i: np.array(b[s.rows[i]], dtype=float) for i in s.order}
        for i in s.order:
            p = s.parent[i]
            if p >= 0:
                y[p] -= self.lower[i] @ sla.lu_solve(self.lu[i], y[i], check_finite=False)
        x = np.zeros((self.n,) + b.shape[1:])
        for i in reversed(s.order):
            rhs = y[i]
            p = s.parent[i]
            if p >= 0:
                rhs = rhs - self.upper[i] @ x[s.cols[p]]
            x[s.cols[i]] = sla.lu_solve(self.lu[i], rhs, check_finite=False)
        return x


class DenseQR:
    def __init__(self, A: np.ndarray):
        if not np.all(np.isfinite(A)):
            raise SingularMatrixError("non-finite entries in the Jacobian")
        self.q, self.r = np.linalg.qr(A)
        d = np.abs(np.diag(self.r))
        if d.size and d.min() <= 1e-13 * max(d.max(), 1.0):
            raise SingularMatrixError(f"rank-deficient matrix (min |R_ii| = {d.min():.3e})")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.r, self.q.T @ b, check_finite=False)


class RowScaled:
    """Row equilibration wrapper: factorizes ``diag(s) A`` with ``s_i = 1 / max_j |A_ij|``."""

    def __init__(self, A: np.ndarray, inner):
        norms = np.max(np.abs(A), axis=1) if A.size else np.ones(A.shape[0])
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise SingularMatrixError("zero or non-finite row in the Jacobian")
        self.scale = 1.0 / norms
        self.inner = inner(self.scale[:, None] * A)

    def solve(self, b: np.ndarray) -> np.ndarray:
        s = self.scale if b.ndim == 1 else self.scale[:, None]
        return self.inner.solve(s * b)


def factorize(A: np.ndarray, struct: BlockStructure | None = None, method: str = "structured"):
    if struct is not None and method == "structured":
        try:
            return RowScaled(A, lambda M: BlockLDU(M, struct))
        except (SingularMatrixError, np.linalg.LinAlgError, ValueError):
            pass
    return RowScaled(A, DenseQR)
