import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from matcore import CsrMatrix, generate_random, generate_stencil, matvec, norm2
from precond import AssignedSplit, Ilu0Factors, PrecSide, ilu0_factorize
from krylov import (IsrvKind, IsrvSpec, IterationTrace, SolverConfig, bicg_converted, build_isrv,
                    parse_variant, run_method)
from verify import (applications_per_iteration, check_biconjugacy, check_biorthogonality,
                    check_polynomial_consistency, compare_traces, resolved_window)

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (4, 8, 12)
MIN_GRID_SIZE = 2
STENCIL_CONVECTION = 0.3

POLYNOMIAL_TOL = 1e-8
ORTHOGONALITY_TOL = 1e-8
CONGRUENCY_TOL = 1e-12
ISRV_SWITCH_TOL = 1e-6
BALANCED_SPLIT_TOL = 1e-10

# Structure checks only look at steps whose residual is still resolved
POLYNOMIAL_K_MAX = 10
ORTHOGONALITY_K_RANGE = 6
RESOLUTION_FLOOR = 1e-6

# Relative error the corrupted solvers inject into every residual step
CORRUPTION = 1e-3

PRECONDITIONED_VARIANTS = (
    'bicg', 'bicr', 'pbicg-right', 'pbicg-left', 'pbicg-std:isrv1', 'pbicg-std:isrv2',
    'pbicg-std:isrv3', 'pbicg-impr2', 'bicg-conv:left', 'bicg-conv:right', 'bicg-conv:two-sided',
)
ISRV_SWITCH_PAIRS = (
    ('bicg-conv:left', 'pbicg-std:isrv1'),
    ('bicg-conv:right', 'pbicg-std:isrv2'),
    ('bicg-conv:two-sided', 'pbicg-std:isrv3'),
)
PLACEMENT_METHODS = ('pbicg-right', 'pbicg-left', 'pbicg-std', 'pbicg-impr2')


@dataclass
class CheckOutcome:
    suite: str
    case: str
    value: float
    threshold: float
    passed: bool

    def format_line(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        return f"{status} {self.suite:<16} {self.case:<44} value={self.value:.3e} threshold={self.threshold:.1e}"


def _outcome(suite: str, case: str, value: float, threshold: float) -> CheckOutcome:
    passed = bool(np.isfinite(value)) and value <= threshold
    if not passed:
        logger.warning(f"{suite} check failed for {case}: {value:.3e} > {threshold:.1e}")
    return CheckOutcome(suite, case, float(value), threshold, passed)


def _solver_config(corrupt: bool) -> SolverConfig:
    return SolverConfig(record_vectors=True, residual_fault=CORRUPTION if corrupt else 0.0)


def _solve_variants(A: CsrMatrix, b: np.ndarray, P: Optional[Ilu0Factors], variants: Sequence[str],
                    cfg: SolverConfig) -> Dict[str, IterationTrace]:
    traces = {}
    for variant in variants:
        method, isrv, side = parse_variant(variant)
        precond = P if method not in ('bicg', 'bicr') else None
        traces[variant] = run_method(method, A, b, P=precond, isrv=isrv, side=side, cfg=cfg).trace
    return traces


def _structure_checks(label: str, A: CsrMatrix, P: Optional[Ilu0Factors],
                      traces: Dict[str, IterationTrace]) -> List[CheckOutcome]:
    outcomes = []
    for variant, trace in traces.items():
        case = f"{label} {variant}"
        window = resolved_window(trace, RESOLUTION_FLOOR)
        error = check_polynomial_consistency(A, P, None, trace, k_max=min(POLYNOMIAL_K_MAX, window))
        outcomes.append(_outcome('polynomial', case, error, POLYNOMIAL_TOL))

        k_range = min(ORTHOGONALITY_K_RANGE, window)
        biortho = check_biorthogonality(trace, A, P, k_range=k_range)
        biconj = check_biconjugacy(trace, A, P, k_range=min(k_range, len(trace.history('p')) - 1))
        outcomes.append(_outcome('biorthogonality', case, biortho.max_offdiag_biortho, ORTHOGONALITY_TOL))
        outcomes.append(_outcome('biconjugacy', case, biconj.max_offdiag_biconj, ORTHOGONALITY_TOL))
    return outcomes


def _congruency_checks(label: str, A: CsrMatrix, b: np.ndarray, P: Ilu0Factors, corrupt: bool) -> List[CheckOutcome]:
    outcomes = []
    for placement in (PrecSide.LEFT, PrecSide.RIGHT):
        dedicated = bicg_converted(A, b, P=P, side=placement).trace
        assigned = bicg_converted(A, b, P=AssignedSplit(P, placement), side=PrecSide.TWO_SIDED,
                                  cfg=_solver_config(corrupt)).trace
        k = min(dedicated.iterations, assigned.iterations)
        cmp = compare_traces(dedicated, assigned, k)
        value = max(cmp.max_rel_alpha, cmp.max_rel_beta, cmp.max_rel_relres)
        if dedicated.iterations != assigned.iterations:
            value = float('inf')
        outcomes.append(_outcome('congruency', f"{label} {placement.value}", value, CONGRUENCY_TOL))
    return outcomes


def _isrv_switch_checks(label: str, reference: Dict[str, IterationTrace],
                        traces: Dict[str, IterationTrace]) -> List[CheckOutcome]:
    outcomes = []
    for converted, standard in ISRV_SWITCH_PAIRS:
        t1, t2 = reference[converted], traces[standard]
        k = min(t1.iterations, t2.iterations)
        value = compare_traces(t1, t2, k).max_rel_relres
        outcomes.append(_outcome('isrv-switch', f"{label} {converted}~{standard}", value, ISRV_SWITCH_TOL))
    return outcomes


def _placement_checks(label: str, A: CsrMatrix, b: np.ndarray, P: Ilu0Factors) -> List[CheckOutcome]:
    outcomes = []
    for method in PLACEMENT_METHODS:
        minv_rate, minv_t_rate = applications_per_iteration(method, A, b, P)
        value = max(abs(minv_rate - 1.0), abs(minv_t_rate - 1.0))
        outcomes.append(_outcome('placement', f"{label} {method}", value, 0.0))
    return outcomes


def _balanced_split_check(m: int, seed: int) -> CheckOutcome:
    """On a symmetric matrix with a balanced split, ISRV3 reduces to r0"""
    A = generate_stencil(m, 0.0, seed)
    P = ilu0_factorize(A, balanced=True)
    r0 = matvec(A, np.ones(A.n))
    isrv3 = build_isrv(IsrvSpec(IsrvKind.ISRV3), A, P, r0)
    return _outcome('balanced-split', f"spd-stencil m={m}", norm2(isrv3 - r0) / norm2(r0), BALANCED_SPLIT_TOL)


def run_suite(seed: int = 0, sizes: Sequence[int] = DEFAULT_SIZES, corrupt: bool = False) -> List[CheckOutcome]:
    """Run every verification check on seeded stencil and random matrices"""
    if not sizes:
        raise ValueError("at least one grid size is needed")
    if min(sizes) < MIN_GRID_SIZE:
        raise ValueError(f"grid sizes must be at least {MIN_GRID_SIZE}, got {min(sizes)}")
    outcomes: List[CheckOutcome] = []
    cfg = _solver_config(corrupt)
    for m in sizes:
        A = generate_stencil(m, STENCIL_CONVECTION, seed)
        b = matvec(A, np.ones(A.n))
        P = ilu0_factorize(A)
        label = f"stencil m={m}"
        logger.info(f"Verifying on {label} (n={A.n})")

        reference = _solve_variants(A, b, P, PRECONDITIONED_VARIANTS, _solver_config(False))
        traces = _solve_variants(A, b, P, PRECONDITIONED_VARIANTS, cfg) if corrupt else reference
        outcomes.extend(_structure_checks(label, A, P, traces))
        outcomes.extend(_congruency_checks(label, A, b, P, corrupt))
        outcomes.extend(_isrv_switch_checks(label, reference, traces))
        outcomes.extend(_placement_checks(label, A, b, P))
        outcomes.append(_balanced_split_check(m, seed))

        n = max(m * m, 15)
        R = generate_random(n, min(0.5, 4.0 / n), seed)
        rb = matvec(R, np.ones(n))
        random_traces = _solve_variants(R, rb, None, ('bicg', 'bicr'), cfg)
        outcomes.extend(_structure_checks(f"random n={n}", R, None, random_traces))
    return outcomes
