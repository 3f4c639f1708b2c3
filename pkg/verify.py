import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from matcore import CsrMatrix, DenseVector, matvec, matvec_transpose, norm2
from precond import IdentityPreconditioner, Preconditioner, PrecSide, SplitOp
from krylov import IterationTrace, SolverConfig, build_operator, run_method

logger = logging.getLogger(__name__)

# Explicit polynomial evaluation is only trusted for small degrees
MAX_POLYNOMIAL_DEGREE = 15
DEFAULT_K_RANGE = 8
TINY = 1e-300


@dataclass
class PolynomialTrace:
    """Residual polynomials R_k and direction polynomials P_k, coefficients of z^0..z^k"""
    R: List[np.ndarray]
    P: List[np.ndarray]

    @property
    def degree(self) -> int:
        return len(self.R) - 1

    def evaluate(self, k: int, apply_op: Callable[[DenseVector], DenseVector], v: DenseVector) -> DenseVector:
        """R_k(T) v by Horner's rule, T given as an operator"""
        coeffs = self.R[k]
        y = coeffs[-1] * np.asarray(v, dtype=np.float64)
        for c in coeffs[-2::-1]:
            y = apply_op(y) + c * v
        return y


@dataclass
class OrthoReport:
    """Largest normalized off-diagonal inner products; 0.0 for a measure that was not taken"""
    max_offdiag_biortho: float
    max_offdiag_biconj: float
    k_range: int


@dataclass
class TraceComparison:
    max_rel_alpha: float
    max_rel_beta: float
    max_rel_relres: float

    @property
    def max_rel_scalars(self) -> float:
        return max(self.max_rel_alpha, self.max_rel_beta)


def polynomial_trace(alphas: Sequence[float], betas: Sequence[float]) -> PolynomialTrace:
    """R_k = R_{k-1} - a_{k-1} z P_{k-1};  P_k = R_k + b_{k-1} P_{k-1}"""
    if len(alphas) != len(betas):
        raise ValueError(f"alphas and betas differ in length: {len(alphas)} vs {len(betas)}")
    R = [np.array([1.0])]
    P = [np.array([1.0])]
    for alpha, beta in zip(alphas, betas):
        shifted = np.concatenate(([0.0], P[-1]))
        r_next = np.concatenate((R[-1], [0.0])) - alpha * shifted
        p_next = r_next + beta * np.concatenate((P[-1], [0.0]))
        R.append(r_next)
        P.append(p_next)
    return PolynomialTrace(R=R, P=P)


def _side(trace: IterationTrace, side: Optional[PrecSide]) -> PrecSide:
    return side if side is not None else trace.side


def _residual_form(trace: IterationTrace, A: CsrMatrix, P: Optional[Preconditioner],
                   side: PrecSide) -> Tuple[Callable, np.ndarray, Callable]:
    """(T, s, M) such that the iterated residual is r_k = M R_k(T) s"""
    r0 = trace.history('r')[0]
    identity = lambda v: v
    if trace.method in ('bicg', 'bicr'):
        return (lambda v: matvec(A, v)), r0, identity
    if trace.method == 'bicg_converted':
        op = build_operator(A, P, side)
        return op.apply_a, r0, identity

    P = P if P is not None else IdentityPreconditioner(A.n)
    if trace.method == 'pbicg_right':
        return (lambda v: matvec(A, P.apply_minv(v))), r0, identity
    if trace.method == 'pbicg_left':
        return (lambda v: P.apply_minv(matvec(A, v))), r0, identity
    if trace.method in ('pbicg_standard', 'pbicg_improved2'):
        # r_k = P R_k(P^{-1} A) P^{-1} r_0
        return (lambda v: P.apply_minv(matvec(A, v))), P.apply_minv(r0), P.apply_p
    raise ValueError(f"No residual structure known for method '{trace.method}'")


def check_polynomial_consistency(A: CsrMatrix, P: Optional[Preconditioner], side: Optional[PrecSide],
                                 trace: IterationTrace, k_max: int = 10) -> float:
    """Max relative gap between iterated residuals and R_k applied to the initial residual.

    R_k(T) s is rebuilt from the trace's alpha/beta by mirroring the coupled two-term
    recurrences on vectors, one operator application per step.
    Horner evaluation of the expanded coefficients loses about 1e-7 by k=10 under ILU(0),
    so PolynomialTrace.evaluate is not used here.
    """
    if k_max > MAX_POLYNOMIAL_DEGREE:
        raise ValueError(f"k_max={k_max} exceeds {MAX_POLYNOMIAL_DEGREE}; explicit evaluation is unreliable there")
    history = trace.history('r')
    steps = min(k_max, trace.iterations, len(history) - 1)
    T, s, M = _residual_form(trace, A, P, _side(trace, side))

    def gap(iterated: np.ndarray, rebuilt: np.ndarray) -> float:
        return norm2(iterated - rebuilt) / max(norm2(iterated), TINY)

    r = np.array(s, copy=True)
    p = np.array(s, copy=True)
    worst = gap(history[0], M(r))
    for k in range(steps):
        r = r - trace.alphas[k] * T(p)
        worst = max(worst, gap(history[k + 1], M(r)))
        p = r + trace.betas[k] * p
    logger.debug(f"Polynomial consistency of {trace.method}: {worst:.3e} over {steps} steps")
    return worst


def _inner_product_vectors(trace: IterationTrace, A: CsrMatrix, P: Optional[Preconditioner],
                           side: PrecSide, count: int, conjugate: bool) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Shadow-side and linear-side vectors whose pairings vanish off the diagonal"""
    method = trace.method
    if conjugate:
        shadow, linear = trace.history('ps')[:count], trace.history('p')[:count]
    else:
        shadow, linear = trace.history('rs')[:count], trace.history('r')[:count]
    Pc = P if P is not None else IdentityPreconditioner(A.n)

    if method == 'bicg':
        lin_op = (lambda v: matvec(A, v)) if conjugate else None
        shadow_op = None
    elif method == 'bicg_converted':
        lin_op = build_operator(A, P, side).apply_a if conjugate else None
        shadow_op = None
    elif method == 'pbicg_right':
        lin_op = (lambda v: matvec(A, Pc.apply_minv(v))) if conjugate else None
        shadow_op = None
    elif method == 'pbicg_left':
        lin_op = (lambda v: Pc.apply_minv(matvec(A, v))) if conjugate else None
        shadow_op = None
    elif method == 'pbicg_standard':
        lin_op = (lambda v: matvec(A, v)) if conjugate else Pc.apply_minv
        shadow_op = None
    elif method == 'pbicg_improved2':
        lin_op = (lambda v: matvec(A, v)) if conjugate else Pc.apply_minv
        shadow_op = Pc.apply_minv_transpose if conjugate else None
    elif method == 'bicr':
        lin_op = lambda v: matvec(A, v)
        shadow_op = (lambda v: matvec_transpose(A, v)) if conjugate else None
    else:
        raise ValueError(f"No inner-product structure known for method '{method}'")

    if shadow_op is not None:
        shadow = [shadow_op(v) for v in shadow]
    if lin_op is not None:
        linear = [lin_op(v) for v in linear]
    return shadow, linear


def _max_offdiag(shadow: List[np.ndarray], linear: List[np.ndarray]) -> float:
    if len(shadow) < 2:
        return 0.0
    U = np.vstack(shadow)
    V = np.vstack(linear)
    gram = U @ V.T
    scale = np.outer(np.maximum(np.linalg.norm(U, axis=1), TINY), np.maximum(np.linalg.norm(V, axis=1), TINY))
    normalized = np.abs(gram) / scale
    np.fill_diagonal(normalized, 0.0)
    return float(normalized.max())


def _k_range(trace: IterationTrace, key: str, k_range: Optional[int]) -> int:
    available = len(trace.history(key)) - 1
    if k_range is None:
        return max(0, min(DEFAULT_K_RANGE, available))
    if k_range > available:
        raise ValueError(f"k_range={k_range} exceeds the {available} recorded steps of {trace.method}")
    return k_range


def check_biorthogonality(trace: IterationTrace, A: CsrMatrix, P: Optional[Preconditioner] = None,
                          side: Optional[PrecSide] = None, k_range: Optional[int] = None) -> OrthoReport:
    """Normalized <shadow residual_i, residual_j> for i != j <= k_range"""
    k = _k_range(trace, 'r', k_range)
    shadow, linear = _inner_product_vectors(trace, A, P, _side(trace, side), k + 1, conjugate=False)
    return OrthoReport(max_offdiag_biortho=_max_offdiag(shadow, linear), max_offdiag_biconj=0.0, k_range=k)


def check_biconjugacy(trace: IterationTrace, A: CsrMatrix, P: Optional[Preconditioner] = None,
                      side: Optional[PrecSide] = None, k_range: Optional[int] = None) -> OrthoReport:
    """Normalized <shadow direction_i, A direction_j> for i != j <= k_range"""
    k = _k_range(trace, 'p', k_range)
    shadow, linear = _inner_product_vectors(trace, A, P, _side(trace, side), k + 1, conjugate=True)
    return OrthoReport(max_offdiag_biortho=0.0, max_offdiag_biconj=_max_offdiag(shadow, linear), k_range=k)


def _max_relative(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), TINY)
    return float(np.max(np.abs(a - b) / scale))


def compare_traces(t1: IterationTrace, t2: IterationTrace, k_max: int) -> TraceComparison:
    """Max relative deviation of alpha, beta and relres_alg over the first k_max iterations"""
    for trace in (t1, t2):
        if trace.iterations < k_max:
            raise ValueError(f"Trace of {trace.method} has {trace.iterations} iterations, need {k_max}")
    return TraceComparison(
        max_rel_alpha=_max_relative(t1.alphas[:k_max], t2.alphas[:k_max]),
        max_rel_beta=_max_relative(t1.betas[:k_max], t2.betas[:k_max]),
        max_rel_relres=_max_relative(t1.relres_alg[:k_max], t2.relres_alg[:k_max]),
    )


def resolved_window(trace: IterationTrace, floor: float = 1e-6) -> int:
    """Leading iterations whose scalars are computed from residuals above floor"""
    if trace.iterations == 0:
        return 0
    n = 1
    while n < trace.iterations and trace.relres_true[n - 1] >= floor:
        n += 1
    return n


class CountingPreconditioner(Preconditioner):
    """Counts P^{-1} and P^{-T} applications made through it"""

    def __init__(self, base: Preconditioner):
        self.base = base
        self.n = base.n
        self.minv_calls = 0
        self.minv_transpose_calls = 0

    def apply_split(self, which: SplitOp, v: DenseVector) -> DenseVector:
        return self.base.apply_split(which, v)

    def apply_minv(self, v: DenseVector) -> DenseVector:
        self.minv_calls += 1
        return self.base.apply_minv(v)

    def apply_minv_transpose(self, v: DenseVector) -> DenseVector:
        self.minv_transpose_calls += 1
        return self.base.apply_minv_transpose(v)


def applications_per_iteration(method: str, A: CsrMatrix, b: DenseVector, P: Preconditioner,
                               short: int = 2, long: int = 5) -> Tuple[float, float]:
    """P^{-1} and P^{-T} applications per iteration, from two instrumented runs of different length"""
    counts = []
    for iterations in (short, long):
        counter = CountingPreconditioner(P)
        cfg = SolverConfig(tol=np.finfo(float).tiny, max_iter=iterations)
        result = run_method(method, A, b, P=counter, cfg=cfg)
        if result.iterations != iterations:
            raise RuntimeError(f"{method} stopped after {result.iterations} of {iterations} iterations")
        counts.append((counter.minv_calls, counter.minv_transpose_calls))
    span = long - short
    return ((counts[1][0] - counts[0][0]) / span, (counts[1][1] - counts[0][1]) / span)
