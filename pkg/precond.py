import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from matcore import CsrMatrix, DenseVector, DimensionError

logger = logging.getLogger(__name__)

# Absolute pivot threshold for ILU(0)
PIVOT_TOL = 1e-300


class BreakdownError(ArithmeticError):
    """A recurrence or factorization hit a (near) zero divisor"""

    def __init__(self, stage: str, index: int, message: str = ""):
        self.stage = stage
        self.index = index
        super().__init__(message or f"breakdown in {stage} at index {index}")


class PrecSide(Enum):
    """Direction of the preconditioned system"""
    NONE = 'none'
    LEFT = 'left'
    RIGHT = 'right'
    TWO_SIDED = 'two-sided'

    @classmethod
    def from_name(cls, name: str) -> 'PrecSide':
        key = name.strip().lower().replace('_', '-')
        if key in ('twosided', 'two', 'w'):
            key = 'two-sided'
        for side in cls:
            if side.value == key:
                return side
        raise ValueError(f"Unknown preconditioning side '{name}'")


class SplitOp(Enum):
    """Factor operations of P = P_L P_R"""
    LINV = 'Linv'      # P_L^{-1} v
    RINV = 'Rinv'      # P_R^{-1} v
    LINV_T = 'LinvT'   # P_L^{-T} v
    RINV_T = 'RinvT'   # P_R^{-T} v
    LMUL = 'Lmul'      # P_L v
    RMUL = 'Rmul'      # P_R v
    LT_MUL = 'LTmul'   # P_L^T v
    RT_MUL = 'RTmul'   # P_R^T v


class Preconditioner(ABC):
    """P = P_L P_R with the solves and products the BiCG variants need"""

    n: int

    @abstractmethod
    def apply_split(self, which: SplitOp, v: DenseVector) -> DenseVector:
        pass

    def _check(self, v: DenseVector) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise DimensionError(f"Preconditioner of size {self.n} applied to vector of shape {v.shape}")
        return v

    def apply_minv(self, v: DenseVector) -> DenseVector:
        """P^{-1} v = P_R^{-1} (P_L^{-1} v)"""
        return self.apply_split(SplitOp.RINV, self.apply_split(SplitOp.LINV, v))

    def apply_minv_transpose(self, v: DenseVector) -> DenseVector:
        """P^{-T} v = P_L^{-T} (P_R^{-T} v)"""
        return self.apply_split(SplitOp.LINV_T, self.apply_split(SplitOp.RINV_T, v))

    def apply_p(self, v: DenseVector) -> DenseVector:
        """P v = P_L (P_R v)"""
        return self.apply_split(SplitOp.LMUL, self.apply_split(SplitOp.RMUL, v))

    def apply_p_transpose(self, v: DenseVector) -> DenseVector:
        """P^T v = P_R^T (P_L^T v)"""
        return self.apply_split(SplitOp.RT_MUL, self.apply_split(SplitOp.LT_MUL, v))


class IdentityPreconditioner(Preconditioner):
    """P = P_L = P_R = I"""

    def __init__(self, n: int):
        self.n = n

    def apply_split(self, which: SplitOp, v: DenseVector) -> DenseVector:
        return self._check(v).copy()

    def __repr__(self) -> str:
        return f"IdentityPreconditioner(n={self.n})"


class Ilu0Factors(Preconditioner):
    """ILU(0) factors on the pattern of A, split as P_L = L, P_R = U"""

    def __init__(self, lower: CsrMatrix, upper: CsrMatrix, lower_diagonal: Optional[np.ndarray] = None):
        if lower.n != upper.n:
            raise DimensionError(f"Factor sizes differ: {lower.n} vs {upper.n}")
        self.n = lower.n
        self.lower = lower  # strictly lower part of L
        self.upper = upper  # U including its diagonal
        if lower_diagonal is None:
            lower_diagonal = np.ones(self.n)
        self.lower_diagonal = np.asarray(lower_diagonal, dtype=np.float64)

        if np.any(np.abs(self.upper.diagonal()) < PIVOT_TOL):
            raise ValueError("U has a zero diagonal entry")

        # Solves go through scipy's triangular kernel; transposes are built once
        self._L = (lower.to_scipy() + sp.diags(self.lower_diagonal, format='csr')).tocsr()
        self._U = upper.to_scipy()
        self._Lt = self._L.T.tocsr()
        self._Ut = self._U.T.tocsr()
        for m in (self._L, self._U, self._Lt, self._Ut):
            m.sort_indices()

    @property
    def unit_lower(self) -> bool:
        return bool(np.all(self.lower_diagonal == 1.0))

    def apply_split(self, which: SplitOp, v: DenseVector) -> DenseVector:
        v = self._check(v)
        if which is SplitOp.LINV:
            return spsolve_triangular(self._L, v, lower=True)
        if which is SplitOp.RINV:
            return spsolve_triangular(self._U, v, lower=False)
        if which is SplitOp.LINV_T:
            return spsolve_triangular(self._Lt, v, lower=False)
        if which is SplitOp.RINV_T:
            return spsolve_triangular(self._Ut, v, lower=True)
        if which is SplitOp.LMUL:
            return self._L @ v
        if which is SplitOp.RMUL:
            return self._U @ v
        if which is SplitOp.LT_MUL:
            return self._Lt @ v
        if which is SplitOp.RT_MUL:
            return self._Ut @ v
        raise ValueError(f"Unknown split operation {which}")

    def product(self) -> np.ndarray:
        """Dense L U, for small-matrix checks"""
        return (self._L @ self._U).toarray()

    def __repr__(self) -> str:
        return f"Ilu0Factors(n={self.n}, nnz_L={self.lower.nnz}, nnz_U={self.upper.nnz})"


class AssignedSplit(Preconditioner):
    """Puts the whole of a preconditioner on one side of the two-sided formulas"""

    def __init__(self, base: Preconditioner, placement: PrecSide):
        if placement not in (PrecSide.LEFT, PrecSide.RIGHT):
            raise ValueError(f"Placement must be left or right, got {placement}")
        self.base = base
        self.placement = placement
        self.n = base.n

    def apply_split(self, which: SplitOp, v: DenseVector) -> DenseVector:
        left_ops = {SplitOp.LINV, SplitOp.LINV_T, SplitOp.LMUL, SplitOp.LT_MUL}
        on_left = which in left_ops
        if on_left != (self.placement is PrecSide.LEFT):
            return self._check(v).copy()
        if which in (SplitOp.LINV, SplitOp.RINV):
            return self.base.apply_minv(v)
        if which in (SplitOp.LINV_T, SplitOp.RINV_T):
            return self.base.apply_minv_transpose(v)
        if which in (SplitOp.LMUL, SplitOp.RMUL):
            return self.base.apply_p(v)
        return self.base.apply_p_transpose(v)

    def __repr__(self) -> str:
        return f"AssignedSplit({self.base!r}, {self.placement.value})"


def ilu0_factorize(A: CsrMatrix, balanced: bool = False) -> Ilu0Factors:
    """IKJ ILU(0) restricted to the pattern of A.

    With balanced=True the split is rescaled to P_L = L D^{1/2}, P_R = D^{-1/2} U
    (D = diag(U)); the product P is unchanged. Balancing needs a positive diagonal.
    """
    n = A.n
    indptr = A.row_ptr.tolist()
    indices = A.col_idx.tolist()
    w = A.values.astype(np.float64).tolist()

    diag_pos = [-1] * n
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            if indices[jj] == i:
                diag_pos[i] = jj
                break

    marker = [-1] * n
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for jj in range(start, end):
            marker[indices[jj]] = jj

        for jj in range(start, end):
            k = indices[jj]
            if k >= i:
                break
            w[jj] /= w[diag_pos[k]]
            lik = w[jj]
            for kk in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = marker[indices[kk]]
                if pos != -1:
                    w[pos] -= lik * w[kk]

        for jj in range(start, end):
            marker[indices[jj]] = -1

        if diag_pos[i] < 0 or abs(w[diag_pos[i]]) < PIVOT_TOL:
            logger.warning(f"ILU(0) breakdown: zero or missing pivot in row {i}")
            raise BreakdownError('ilu0', i, f"ILU(0) pivot at row {i} is zero or missing")

    values = np.array(w, dtype=np.float64)
    cols = A.col_idx
    rows = np.repeat(np.arange(n), np.diff(A.row_ptr))
    lower_mask = cols < rows
    upper_mask = ~lower_mask

    def _part(mask: np.ndarray, vals: np.ndarray) -> CsrMatrix:
        counts = np.bincount(rows[mask], minlength=n)
        ptr = np.concatenate(([0], np.cumsum(counts)))
        return CsrMatrix(n, ptr, cols[mask], vals)

    if not balanced:
        factors = Ilu0Factors(_part(lower_mask, values[lower_mask]), _part(upper_mask, values[upper_mask]))
    else:
        d = values[np.array(diag_pos)]
        if np.any(d <= 0.0):
            raise ValueError("Balanced ILU(0) split needs a positive pivot diagonal")
        root = np.sqrt(d)
        # L D^{1/2} scales columns of L; D^{-1/2} U scales rows of U
        lower_vals = values[lower_mask] * root[cols[lower_mask]]
        upper_vals = values[upper_mask] / root[rows[upper_mask]]
        factors = Ilu0Factors(_part(lower_mask, lower_vals), _part(upper_mask, upper_vals), lower_diagonal=root)

    logger.info(f"ILU(0) factorization done: n={n}, nnz={A.nnz}, balanced={balanced}")
    return factors


def apply_minv(F: Preconditioner, v: DenseVector) -> DenseVector:
    """Solve L U y = v"""
    return F.apply_minv(v)


def apply_minv_transpose(F: Preconditioner, v: DenseVector) -> DenseVector:
    """Solve U^T L^T y = v"""
    return F.apply_minv_transpose(v)


def apply_split(F: Preconditioner, which: SplitOp, v: DenseVector) -> DenseVector:
    return F.apply_split(which, v)
