import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from matcore import CsrMatrix, DenseVector, DimensionError, matvec, matvec_transpose, dot, norm2
from precond import (BreakdownError, IdentityPreconditioner, Preconditioner, PrecSide, SplitOp)

logger = logging.getLogger(__name__)

# Keys of the optional vector history
VECTOR_KEYS = ('x', 'r', 'rs', 'p', 'ps')


class InitialShadowDegenerate(BreakdownError):
    """<r*_0, r_0> vanishes for the chosen initial shadow residual"""

    def __init__(self, value: float):
        super().__init__('isrv', 0, f"initial shadow residual is degenerate: <r*_0, r_0> = {value:.3e}")


class SolveStatus(Enum):
    CONVERGED = 'converged'
    MAX_ITER = 'max_iter'
    BREAKDOWN = 'breakdown'


@dataclass
class SolverConfig:
    """Stopping and breakdown parameters shared by every solver"""
    tol: float = 1e-8
    max_iter: Optional[int] = None  # None means 2n
    record_vectors: bool = False
    breakdown_tol: float = 1e-14
    residual_fault: float = 0.0  # relative error injected into the residual step size

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.breakdown_tol < 0.0:
            raise ValueError(f"breakdown_tol must be nonnegative, got {self.breakdown_tol}")
        if not np.isfinite(self.residual_fault):
            raise ValueError(f"residual_fault must be finite, got {self.residual_fault}")

    def iteration_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else 2 * n


class IsrvKind(Enum):
    R0 = 'r0'
    ISRV1 = 'isrv1'  # P^{-1} r0
    ISRV2 = 'isrv2'  # P^T r0
    ISRV3 = 'isrv3'  # P_R^T P_L^{-1} r0
    AT_R0 = 'atr0'   # A^T r0
    CUSTOM = 'custom'  # U r0


@dataclass(frozen=True, eq=False)
class IsrvSpec:
    """How the initial shadow residual vector r*_0 is built from r_0"""
    kind: IsrvKind = IsrvKind.ISRV1
    matrix: Optional[CsrMatrix] = None  # only for CUSTOM

    def __post_init__(self):
        if (self.kind is IsrvKind.CUSTOM) != (self.matrix is not None):
            raise ValueError("A matrix is required for, and only for, a custom ISRV")

    @classmethod
    def custom(cls, U: CsrMatrix) -> 'IsrvSpec':
        return cls(IsrvKind.CUSTOM, U)

    @classmethod
    def from_name(cls, name: str) -> 'IsrvSpec':
        key = name.strip().lower().replace('_', '')
        for kind in IsrvKind:
            if kind.value == key and kind is not IsrvKind.CUSTOM:
                return cls(kind)
        raise ValueError(f"Unknown ISRV '{name}' (expected one of r0, isrv1, isrv2, isrv3, atr0)")

    @property
    def label(self) -> str:
        return self.kind.value


def build_isrv(spec: IsrvSpec, A: CsrMatrix, P: Preconditioner, r0: DenseVector) -> DenseVector:
    """Construct r*_0 as the ISRV kind prescribes"""
    if spec.kind is IsrvKind.R0:
        return np.array(r0, dtype=np.float64, copy=True)
    if spec.kind is IsrvKind.ISRV1:
        return P.apply_minv(r0)
    if spec.kind is IsrvKind.ISRV2:
        return P.apply_p_transpose(r0)
    if spec.kind is IsrvKind.ISRV3:
        return P.apply_split(SplitOp.RT_MUL, P.apply_split(SplitOp.LINV, r0))
    if spec.kind is IsrvKind.AT_R0:
        return matvec_transpose(A, r0)
    if spec.matrix.n != A.n:
        raise DimensionError(f"Custom ISRV matrix has size {spec.matrix.n}, system has {A.n}")
    return matvec(spec.matrix, r0)


@dataclass
class IterationTrace:
    """Per-iteration record of one solve"""
    method: str
    side: PrecSide = PrecSide.NONE
    isrv: str = ''
    alphas: List[float] = field(default_factory=list)
    betas: List[float] = field(default_factory=list)
    relres_alg: List[float] = field(default_factory=list)
    relres_true: List[float] = field(default_factory=list)
    vectors: Optional[Dict[str, List[np.ndarray]]] = None

    @property
    def iterations(self) -> int:
        return len(self.alphas)

    def history(self, key: str) -> List[np.ndarray]:
        """Recorded vectors for one key; raises if the solve kept none"""
        if self.vectors is None:
            raise ValueError(f"Trace of {self.method} has no vector history (record_vectors was off)")
        return self.vectors[key]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'k': np.arange(self.iterations, dtype=np.int64),
            'alpha': np.asarray(self.alphas, dtype=np.float64),
            'beta': np.asarray(self.betas, dtype=np.float64),
            'relres_alg': np.asarray(self.relres_alg, dtype=np.float64),
            'relres_true': np.asarray(self.relres_true, dtype=np.float64),
        })


@dataclass
class SolveResult:
    x: np.ndarray
    status: SolveStatus
    iterations: int
    trace: IterationTrace
    breakdown_stage: str = ''
    breakdown_k: int = -1

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


@dataclass
class ConvertedOperator:
    """A, b and x expressed in the variables of a preconditioned system"""
    side: PrecSide
    apply_a: Callable[[DenseVector], DenseVector]
    apply_at: Callable[[DenseVector], DenseVector]
    to_tilde_rhs: Callable[[DenseVector], DenseVector]
    to_tilde_x: Callable[[DenseVector], DenseVector]
    from_tilde_x: Callable[[DenseVector], DenseVector]
    adjust: Callable[[DenseVector], DenseVector]  # converted residual -> vector measured against ||b||


def _copy(v: DenseVector) -> DenseVector:
    return np.array(v, dtype=np.float64, copy=True)


def build_operator(A: CsrMatrix, P: Optional[Preconditioner], side: PrecSide) -> ConvertedOperator:
    """Conversions A~ = P_L^{-1} A P_R^{-1}, b~ = P_L^{-1} b, x~ = P_R x for the given side"""
    if side is PrecSide.NONE:
        return ConvertedOperator(side, lambda v: matvec(A, v), lambda v: matvec_transpose(A, v),
                                 _copy, _copy, _copy, _copy)
    if P is None:
        raise ValueError(f"A preconditioner is required for side '{side.value}'")
    if P.n != A.n:
        raise DimensionError(f"Preconditioner size {P.n} does not match matrix size {A.n}")

    if side is PrecSide.LEFT:
        return ConvertedOperator(
            side,
            apply_a=lambda v: P.apply_minv(matvec(A, v)),
            apply_at=lambda v: matvec_transpose(A, P.apply_minv_transpose(v)),
            to_tilde_rhs=P.apply_minv,
            to_tilde_x=_copy,
            from_tilde_x=_copy,
            adjust=P.apply_p,
        )
    if side is PrecSide.RIGHT:
        return ConvertedOperator(
            side,
            apply_a=lambda v: matvec(A, P.apply_minv(v)),
            apply_at=lambda v: P.apply_minv_transpose(matvec_transpose(A, v)),
            to_tilde_rhs=_copy,
            to_tilde_x=P.apply_p,
            from_tilde_x=P.apply_minv,
            adjust=_copy,
        )
    return ConvertedOperator(
        side,
        apply_a=lambda v: P.apply_split(SplitOp.LINV, matvec(A, P.apply_split(SplitOp.RINV, v))),
        apply_at=lambda v: P.apply_split(SplitOp.RINV_T, matvec_transpose(A, P.apply_split(SplitOp.LINV_T, v))),
        to_tilde_rhs=lambda v: P.apply_split(SplitOp.LINV, v),
        to_tilde_x=lambda v: P.apply_split(SplitOp.RMUL, v),
        from_tilde_x=lambda v: P.apply_split(SplitOp.RINV, v),
        adjust=lambda v: P.apply_split(SplitOp.LMUL, v),
    )


def _prepare(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector]) -> Tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise DimensionError(f"Right-hand side has shape {b.shape}, matrix has n={A.n}")
    if x0 is None:
        return b, np.zeros(A.n)
    x0 = np.array(x0, dtype=np.float64, copy=True)
    if x0.shape != (A.n,):
        raise DimensionError(f"Initial guess has shape {x0.shape}, matrix has n={A.n}")
    return b, x0


def _preconditioner(A: CsrMatrix, P: Optional[Preconditioner]) -> Preconditioner:
    if P is None:
        return IdentityPreconditioner(A.n)
    if P.n != A.n:
        raise DimensionError(f"Preconditioner size {P.n} does not match matrix size {A.n}")
    return P


class _Recorder:
    """Trace bookkeeping, stopping and breakdown tests shared by all solvers"""

    def __init__(self, method: str, A: CsrMatrix, b: np.ndarray, cfg: SolverConfig,
                 side: PrecSide = PrecSide.NONE, isrv: str = ''):
        self.A = A
        self.b = b
        self.cfg = cfg
        self.bnorm = norm2(b)
        self.max_iter = cfg.iteration_cap(A.n)
        vectors = {key: [] for key in VECTOR_KEYS} if cfg.record_vectors else None
        self.trace = IterationTrace(method=method, side=side, isrv=isrv, vectors=vectors)

    def keep(self, **vectors: np.ndarray):
        if self.trace.vectors is None:
            return
        for key, v in vectors.items():
            self.trace.vectors[key].append(np.array(v, copy=True))

    def degenerate(self, value: float, u: np.ndarray, v: np.ndarray) -> bool:
        """Relative breakdown test |<u, v>| <= tol ||u|| ||v||"""
        if not np.isfinite(value):
            return True
        return abs(value) <= self.cfg.breakdown_tol * norm2(u) * norm2(v)

    def residual_step(self, alpha: float) -> float:
        return alpha * (1.0 + self.cfg.residual_fault)

    def check_initial(self, rho: float, u: np.ndarray, v: np.ndarray):
        if self.degenerate(rho, u, v):
            logger.warning(f"{self.trace.method}: degenerate initial shadow residual, <r*_0, r_0> = {rho:.3e}")
            raise InitialShadowDegenerate(rho)

    def finish(self, x: np.ndarray, status: SolveStatus, stage: str = '', k: int = -1) -> SolveResult:
        iterations = self.trace.iterations
        if status is SolveStatus.BREAKDOWN:
            logger.warning(f"{self.trace.method}: breakdown ({stage}) at k={k}")
        else:
            last = self.trace.relres_alg[-1] if iterations else 0.0
            logger.info(f"{self.trace.method}: {status.value} after {iterations} iterations, relres={last:.3e}")
        return SolveResult(x=x, status=status, iterations=iterations, trace=self.trace,
                           breakdown_stage=stage, breakdown_k=k)

    def zero_rhs(self) -> SolveResult:
        logger.info(f"{self.trace.method}: b = 0, returning x = 0")
        return self.finish(np.zeros(self.A.n), SolveStatus.CONVERGED)

    def close_iteration(self, k: int, alpha: float, beta: float, relres: float, x: np.ndarray,
                        rho_next: float, rho_pair: Tuple[np.ndarray, np.ndarray],
                        **final_vectors: np.ndarray) -> Optional[SolveResult]:
        """Record iteration k; return a result when the solve has to stop"""
        relres_true = norm2(self.b - matvec(self.A, x)) / self.bnorm
        if not all(np.isfinite(value) for value in (alpha, beta, relres, relres_true)):
            return self.finish(x, SolveStatus.BREAKDOWN, 'nonfinite', k)

        self.trace.alphas.append(alpha)
        self.trace.betas.append(beta)
        self.trace.relres_alg.append(relres)
        self.trace.relres_true.append(relres_true)
        logger.debug(f"{self.trace.method} k={k}: alpha={alpha:.6e} beta={beta:.6e} "
                     f"relres={relres:.3e} true={relres_true:.3e}")

        if relres <= self.cfg.tol:
            status, stage, at = SolveStatus.CONVERGED, '', -1
        elif k + 1 >= self.max_iter:
            status, stage, at = SolveStatus.MAX_ITER, '', -1
        elif self.degenerate(rho_next, *rho_pair):
            status, stage, at = SolveStatus.BREAKDOWN, 'rho', k + 1
        else:
            return None
        self.keep(x=x, **final_vectors)
        return self.finish(x, status, stage, at)


def _converted_bicg(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector], op: ConvertedOperator,
                    shadow: Callable[[np.ndarray], np.ndarray], cfg: SolverConfig,
                    method: str, isrv: str) -> SolveResult:
    """BiCG recurrences on the converted system A~ x~ = b~"""
    b, x = _prepare(A, b, x0)
    rec = _Recorder(method, A, b, cfg, side=op.side, isrv=isrv)
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    xt = op.to_tilde_x(x)
    r = op.to_tilde_rhs(b) - op.apply_a(xt)
    if norm2(op.adjust(r)) / rec.bnorm <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    rs = shadow(r)
    rho = dot(rs, r)
    rec.check_initial(rho, rs, r)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = r + beta * p
        ps = rs + beta * ps
        ap = op.apply_a(p)
        sigma = dot(ps, ap)
        if rec.degenerate(sigma, ps, ap):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        xt = xt + alpha * p
        r = r - rec.residual_step(alpha) * ap
        rs = rs - alpha * op.apply_at(ps)
        x = op.from_tilde_x(xt)

        rho_next = dot(rs, r)
        beta = rho_next / rho
        relres = norm2(op.adjust(r)) / rec.bnorm
        done = rec.close_iteration(k, alpha, beta, relres, x, rho_next, (rs, r), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


def bicg(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
         isrv: Optional[IsrvSpec] = None, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Unpreconditioned BiCG"""
    isrv = isrv or IsrvSpec(IsrvKind.R0)
    cfg = cfg or SolverConfig()
    identity = IdentityPreconditioner(A.n)
    op = build_operator(A, None, PrecSide.NONE)
    return _converted_bicg(A, b, x0, op, lambda r0: build_isrv(isrv, A, identity, r0),
                           cfg, 'bicg', isrv.label)


def bicg_converted(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
                   P: Optional[Preconditioner] = None, side: PrecSide = PrecSide.NONE,
                   cfg: Optional[SolverConfig] = None) -> SolveResult:
    """BiCG on the explicitly converted left, right or two-sided system, with r~*_0 = r~_0.

    The reported x is always in the original variables; relres_alg is the adjusted
    norm ||P r~||, ||r~|| or ||P_L r~|| over ||b|| for left, right and two-sided.
    """
    cfg = cfg or SolverConfig()
    op = build_operator(A, P, side)
    return _converted_bicg(A, b, x0, op, _copy, cfg, 'bicg_converted', 'r0')


def pbicg_right(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
                P: Optional[Preconditioner] = None, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """PBiCG on the right-preconditioned system, shadow work vectors r_flat/p_flat with r_flat_0 = r_0"""
    cfg = cfg or SolverConfig()
    P = _preconditioner(A, P)
    b, x = _prepare(A, b, x0)
    rec = _Recorder('pbicg_right', A, b, cfg, isrv='r0')
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    r = b - matvec(A, x)
    if norm2(r) / rec.bnorm <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    rs = r.copy()
    rho = dot(rs, r)
    rec.check_initial(rho, rs, r)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = r + beta * p
        ps = rs + beta * ps
        q = P.apply_minv(p)
        aq = matvec(A, q)
        sigma = dot(ps, aq)
        if rec.degenerate(sigma, ps, aq):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        x = x + alpha * q
        r = r - rec.residual_step(alpha) * aq
        rs = rs - alpha * P.apply_minv_transpose(matvec_transpose(A, ps))

        rho_next = dot(rs, r)
        beta = rho_next / rho
        done = rec.close_iteration(k, alpha, beta, norm2(r) / rec.bnorm, x, rho_next, (rs, r), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


def pbicg_left(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
               P: Optional[Preconditioner] = None, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """PBiCG on the left-preconditioned system; r_plus = P^{-1}(b - Ax), r*_0 = r_plus_0"""
    cfg = cfg or SolverConfig()
    P = _preconditioner(A, P)
    b, x = _prepare(A, b, x0)
    rec = _Recorder('pbicg_left', A, b, cfg, isrv='r0')
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    # Stopping is measured against ||P^{-1} b||
    scale = norm2(P.apply_minv(b))
    r = P.apply_minv(b - matvec(A, x))
    if norm2(r) / scale <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    rs = r.copy()
    rho = dot(rs, r)
    rec.check_initial(rho, rs, r)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = r + beta * p
        ps = rs + beta * ps
        w = P.apply_minv(matvec(A, p))
        sigma = dot(ps, w)
        if rec.degenerate(sigma, ps, w):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        x = x + alpha * p
        r = r - rec.residual_step(alpha) * w
        rs = rs - alpha * matvec_transpose(A, P.apply_minv_transpose(ps))

        rho_next = dot(rs, r)
        beta = rho_next / rho
        done = rec.close_iteration(k, alpha, beta, norm2(r) / scale, x, rho_next, (rs, r), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


def pbicg_standard(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
                   P: Optional[Preconditioner] = None, isrv: Optional[IsrvSpec] = None,
                   cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Standard PBiCG.

    alpha_k = <r*_k, P^{-1} r_k> / <p_flat_k, A p_plus_k> with p_plus = P^{-1} p and
    p_flat = P^{-T} p*. The direction of the system it solves is decided by r*_0:
    ISRV1 gives the left, ISRV2 the right and ISRV3 the two-sided system.
    """
    isrv = isrv or IsrvSpec(IsrvKind.ISRV1)
    cfg = cfg or SolverConfig()
    P = _preconditioner(A, P)
    b, x = _prepare(A, b, x0)
    rec = _Recorder('pbicg_standard', A, b, cfg, isrv=isrv.label)
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    r = b - matvec(A, x)
    if norm2(r) / rec.bnorm <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    rs = build_isrv(isrv, A, P, r)
    z = P.apply_minv(r)
    rho = dot(rs, z)
    rec.check_initial(rho, rs, z)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = z + beta * p
        ps = P.apply_minv_transpose(rs) + beta * ps
        ap = matvec(A, p)
        sigma = dot(ps, ap)
        if rec.degenerate(sigma, ps, ap):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        x = x + alpha * p
        r = r - rec.residual_step(alpha) * ap
        rs = rs - alpha * matvec_transpose(A, ps)
        z = P.apply_minv(r)

        rho_next = dot(rs, z)
        beta = rho_next / rho
        done = rec.close_iteration(k, alpha, beta, norm2(r) / rec.bnorm, x, rho_next, (rs, z), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


def pbicg_improved2(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
                    P: Optional[Preconditioner] = None, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Improved PBiCG: keeps p_plus = P^{-1} p and p*, applying P^{-T} to p* and P^{-1} to r only"""
    cfg = cfg or SolverConfig()
    P = _preconditioner(A, P)
    b, x = _prepare(A, b, x0)
    rec = _Recorder('pbicg_improved2', A, b, cfg, isrv='isrv1')
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    r = b - matvec(A, x)
    if norm2(r) / rec.bnorm <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    z = P.apply_minv(r)
    rs = z.copy()
    rho = dot(rs, z)
    rec.check_initial(rho, rs, z)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = z + beta * p
        ps = rs + beta * ps
        pf = P.apply_minv_transpose(ps)
        ap = matvec(A, p)
        sigma = dot(pf, ap)
        if rec.degenerate(sigma, pf, ap):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        x = x + alpha * p
        r = r - rec.residual_step(alpha) * ap
        rs = rs - alpha * matvec_transpose(A, pf)
        z = P.apply_minv(r)

        rho_next = dot(rs, z)
        beta = rho_next / rho
        done = rec.close_iteration(k, alpha, beta, norm2(r) / rec.bnorm, x, rho_next, (rs, z), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


def bicr(A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
         cfg: Optional[SolverConfig] = None) -> SolveResult:
    """BiCR with r*_0 = r_0; Ap and A^T p* are carried by recurrence"""
    cfg = cfg or SolverConfig()
    b, x = _prepare(A, b, x0)
    rec = _Recorder('bicr', A, b, cfg, isrv='r0')
    if rec.bnorm == 0.0:
        return rec.zero_rhs()

    r = b - matvec(A, x)
    if norm2(r) / rec.bnorm <= cfg.tol:
        return rec.finish(x, SolveStatus.CONVERGED)
    rs = r.copy()
    ar = matvec(A, r)
    atrs = matvec_transpose(A, rs)
    rho = dot(rs, ar)
    rec.check_initial(rho, rs, ar)

    p = np.zeros(A.n)
    ps = np.zeros(A.n)
    ap = np.zeros(A.n)
    atps = np.zeros(A.n)
    beta = 0.0
    for k in range(rec.max_iter):
        rec.keep(x=x, r=r, rs=rs)
        p = r + beta * p
        ps = rs + beta * ps
        ap = ar + beta * ap
        atps = atrs + beta * atps
        sigma = dot(atps, ap)
        if rec.degenerate(sigma, atps, ap):
            return rec.finish(x, SolveStatus.BREAKDOWN, 'sigma', k)
        rec.keep(p=p, ps=ps)

        alpha = rho / sigma
        x = x + alpha * p
        r = r - rec.residual_step(alpha) * ap
        rs = rs - alpha * atps
        ar = matvec(A, r)
        atrs = matvec_transpose(A, rs)

        rho_next = dot(rs, ar)
        beta = rho_next / rho
        done = rec.close_iteration(k, alpha, beta, norm2(r) / rec.bnorm, x, rho_next, (rs, ar), r=r, rs=rs)
        if done is not None:
            return done
        rho = rho_next
    return rec.finish(x, SolveStatus.MAX_ITER)


# Command-line method names
METHODS = ('bicg', 'bicg-conv', 'pbicg-right', 'pbicg-left', 'pbicg-std', 'pbicg-impr2', 'bicr')
PRECONDITIONED_METHODS = ('bicg-conv', 'pbicg-right', 'pbicg-left', 'pbicg-std', 'pbicg-impr2')
ISRV_METHODS = ('bicg', 'pbicg-std')


def run_method(method: str, A: CsrMatrix, b: DenseVector, x0: Optional[DenseVector] = None,
               P: Optional[Preconditioner] = None, isrv: Optional[IsrvSpec] = None,
               side: Optional[PrecSide] = None, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Dispatch a solve by its command-line method name"""
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}' (expected one of {', '.join(METHODS)})")
    if isrv is not None and method not in ISRV_METHODS:
        raise ValueError(f"Method '{method}' does not take an ISRV choice")
    if side is not None and method != 'bicg-conv':
        raise ValueError(f"Method '{method}' does not take a preconditioning side")
    if P is not None and method not in PRECONDITIONED_METHODS:
        logger.warning(f"Method '{method}' is unpreconditioned; ignoring the preconditioner")

    if method == 'bicg':
        return bicg(A, b, x0, isrv, cfg)
    if method == 'bicg-conv':
        if side is None:
            side = PrecSide.LEFT if P is not None else PrecSide.NONE
        if side is not PrecSide.NONE and P is None:
            P = IdentityPreconditioner(A.n)
        return bicg_converted(A, b, x0, P, side, cfg)
    if method == 'pbicg-right':
        return pbicg_right(A, b, x0, P, cfg)
    if method == 'pbicg-left':
        return pbicg_left(A, b, x0, P, cfg)
    if method == 'pbicg-std':
        return pbicg_standard(A, b, x0, P, isrv, cfg)
    if method == 'pbicg-impr2':
        return pbicg_improved2(A, b, x0, P, cfg)
    return bicr(A, b, x0, cfg)


def parse_variant(spec: str) -> Tuple[str, Optional[IsrvSpec], Optional[PrecSide]]:
    """Split 'method[:isrv|:side]', e.g. 'pbicg-std:isrv2' or 'bicg-conv:two-sided'"""
    method, _, option = spec.strip().partition(':')
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}' in variant '{spec}'")
    if not option:
        return method, None, None
    if method in ISRV_METHODS:
        return method, IsrvSpec.from_name(option), None
    if method == 'bicg-conv':
        return method, None, PrecSide.from_name(option)
    raise ValueError(f"Method '{method}' takes no option, got '{spec}'")
