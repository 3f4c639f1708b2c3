#!/usr/bin/env python3
"""
Test script for the BiCG family: plain, converted, the four PBiCG variants and BiCR
"""

import numpy as np
import pytest

from matcore import (CsrMatrix, MatrixSourceError, find_matrix, generate_random, generate_stencil, matvec, norm2,
                     read_matrix_market)
from precond import AssignedSplit, IdentityPreconditioner, PrecSide, ilu0_factorize
from krylov import (InitialShadowDegenerate, IsrvKind, IsrvSpec, SolveStatus, SolverConfig, bicg, bicg_converted,
                    bicr, build_isrv, parse_variant, pbicg_improved2, pbicg_left, pbicg_right, pbicg_standard,
                    run_method)
from verify import compare_traces, resolved_window

FLOOR = 1e-6


def _problem(m=16, convection=0.5, seed=0):
    A = generate_stencil(m, convection, seed)
    return A, matvec(A, np.ones(A.n)), ilu0_factorize(A)


def _window(*traces, limit=30):
    return min([limit] + [resolved_window(t, FLOOR) for t in traces])


def _reference_cg(A, b, steps):
    dense = A.to_dense()
    x = np.zeros(A.n)
    r = b.copy()
    p = r.copy()
    iterates = [x.copy()]
    for _ in range(steps):
        ap = dense @ p
        alpha = np.dot(r, r) / np.dot(p, ap)
        x = x + alpha * p
        r_next = r - alpha * ap
        p = r_next + np.dot(r_next, r_next) / np.dot(r, r) * p
        r = r_next
        iterates.append(x.copy())
    return iterates


def _reference_cr(A, b, steps):
    dense = A.to_dense()
    x = np.zeros(A.n)
    r = b.copy()
    p = r.copy()
    ar = dense @ r
    ap = ar.copy()
    iterates = [x.copy()]
    for _ in range(steps):
        rho = np.dot(r, ar)
        alpha = rho / np.dot(ap, ap)
        x = x + alpha * p
        r = r - alpha * ap
        ar = dense @ r
        beta = np.dot(r, ar) / rho
        p = r + beta * p
        ap = ar + beta * ap
        iterates.append(x.copy())
    return iterates


def test_identity_system_one_step():
    print("🧪 Testing identity systems...")
    I = CsrMatrix.from_dense(np.eye(5))
    b = np.arange(1.0, 6.0)
    for result in (bicg(I, b), bicr(I, b)):
        assert result.status is SolveStatus.CONVERGED
        assert result.iterations == 1
        assert np.allclose(result.x, b, rtol=1e-15, atol=0.0)
    assert bicg(I, b).trace.alphas[0] == 1.0
    print("✅ Identity systems converge in one step")


@pytest.mark.parametrize("method", ['bicg', 'bicg-conv', 'pbicg-right', 'pbicg-left', 'pbicg-std',
                                    'pbicg-impr2', 'bicr'])
def test_zero_rhs_converges_immediately(method):
    A, _, P = _problem(m=4)
    result = run_method(method, A, np.zeros(A.n), P=P if method not in ('bicg', 'bicr') else None)
    assert result.status is SolveStatus.CONVERGED
    assert result.iterations == 0
    assert not np.any(result.x)


@pytest.mark.parametrize("method", ['bicg', 'bicg-conv', 'pbicg-right', 'pbicg-left', 'pbicg-std',
                                    'pbicg-impr2', 'bicr'])
def test_every_method_solves_stencil(method):
    A, b, P = _problem(m=8, convection=0.3)
    result = run_method(method, A, b, P=P if method not in ('bicg', 'bicr') else None)
    assert result.converged
    assert result.trace.relres_true[-1] <= 1e-6
    assert np.allclose(result.x, np.ones(A.n), atol=1e-4)


def test_exact_initial_guess():
    A, b, P = _problem(m=4)
    result = pbicg_standard(A, b, x0=np.ones(A.n), P=P)
    assert result.status is SolveStatus.CONVERGED
    assert result.iterations == 0


def test_max_iter_stops():
    A, b, P = _problem(m=8)
    result = pbicg_left(A, b, P=P, cfg=SolverConfig(max_iter=2))
    assert result.status is SolveStatus.MAX_ITER
    assert result.iterations == 2
    assert len(result.trace.to_frame()) == 2


def test_sigma_breakdown_is_reported():
    A = CsrMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    result = bicg(A, np.array([1.0, 0.0]))
    assert result.status is SolveStatus.BREAKDOWN
    assert result.breakdown_stage == 'sigma'
    assert result.breakdown_k == 0


def test_degenerate_initial_shadow():
    I = CsrMatrix.from_dense(np.eye(2))
    swap = CsrMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(InitialShadowDegenerate):
        bicg(I, np.array([1.0, 0.0]), isrv=IsrvSpec.custom(swap))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(residual_fault=float('nan'))
    assert SolverConfig().iteration_cap(10) == 20
    with pytest.raises(ValueError):
        IsrvSpec(IsrvKind.CUSTOM)
    with pytest.raises(ValueError):
        IsrvSpec.from_name('isrv9')


def test_bicg_matches_cg_on_spd():
    """r*_0 = r_0 and P = I on a symmetric positive definite matrix is CG"""
    print("🧪 Testing BiCG against a reference CG...")
    A = generate_stencil(10, 0.0)
    b = matvec(A, np.ones(A.n))
    result = bicg(A, b, cfg=SolverConfig(tol=1e-12, record_vectors=True))
    assert result.iterations >= 15
    reference = _reference_cg(A, b, 15)
    history = result.trace.history('x')
    for k in range(1, 16):
        assert norm2(history[k] - reference[k]) <= 1e-10 * norm2(reference[k])
    print("✅ BiCG iterates follow CG")


def test_bicr_matches_cr_on_spd():
    A = generate_stencil(8, 0.0)
    b = matvec(A, np.ones(A.n))
    result = bicr(A, b, cfg=SolverConfig(tol=1e-12, record_vectors=True))
    steps = min(12, result.iterations)
    reference = _reference_cr(A, b, steps)
    history = result.trace.history('x')
    for k in range(1, steps + 1):
        assert norm2(history[k] - reference[k]) <= 1e-10 * norm2(reference[k])


def test_identity_preconditioner_reduces_to_bicg():
    A, b, _ = _problem(m=8, convection=0.4)
    I = IdentityPreconditioner(A.n)
    plain = bicg(A, b).trace
    variants = [
        pbicg_right(A, b, P=I).trace,
        pbicg_left(A, b, P=I).trace,
        pbicg_standard(A, b, P=I, isrv=IsrvSpec(IsrvKind.ISRV1)).trace,
        pbicg_standard(A, b, P=I, isrv=IsrvSpec(IsrvKind.ISRV2)).trace,
        pbicg_standard(A, b, P=I, isrv=IsrvSpec(IsrvKind.ISRV3)).trace,
        pbicg_improved2(A, b, P=I).trace,
        bicg_converted(A, b, P=I, side=PrecSide.LEFT).trace,
        bicg_converted(A, b, P=I, side=PrecSide.TWO_SIDED).trace,
        bicg_converted(A, b).trace,
    ]
    for trace in variants:
        assert trace.iterations == plain.iterations
        cmp = compare_traces(plain, trace, plain.iterations)
        assert max(cmp.max_rel_alpha, cmp.max_rel_beta, cmp.max_rel_relres) <= 1e-12


def test_left_class_agrees():
    """Left PBiCG, standard PBiCG with ISRV1 and Improved2 share alpha and beta"""
    print("🧪 Testing the left-system variants...")
    A, b, P = _problem()
    left = pbicg_left(A, b, P=P).trace
    standard = pbicg_standard(A, b, P=P, isrv=IsrvSpec(IsrvKind.ISRV1)).trace
    improved = pbicg_improved2(A, b, P=P).trace
    k = _window(left, standard, improved)
    assert k >= 5
    for t1, t2 in ((left, standard), (left, improved), (standard, improved)):
        assert compare_traces(t1, t2, k).max_rel_scalars <= 1e-8
    print(f"✅ Left-system variants agree over {k} iterations")


def test_improved2_residuals_match_standard():
    A, b, P = _problem()
    cfg = SolverConfig(record_vectors=True)
    standard = pbicg_standard(A, b, P=P, cfg=cfg).trace
    improved = pbicg_improved2(A, b, P=P, cfg=cfg).trace
    k = _window(standard, improved)
    for r1, r2 in zip(standard.history('r')[:k + 1], improved.history('r')[:k + 1]):
        assert norm2(r1 - r2) <= 1e-8 * norm2(r1)


def test_right_system_differs():
    A, b, P = _problem()
    right = pbicg_right(A, b, P=P).trace
    left = pbicg_left(A, b, P=P).trace
    k = min(30, right.iterations, left.iterations)
    assert compare_traces(right, left, k).max_rel_alpha > 1e-2


def test_isrv2_is_the_right_system():
    A, b, P = _problem()
    right = pbicg_right(A, b, P=P).trace
    standard = pbicg_standard(A, b, P=P, isrv=IsrvSpec(IsrvKind.ISRV2)).trace
    k = _window(right, standard)
    assert compare_traces(right, standard, k).max_rel_scalars <= 1e-8


def test_isrv_switches_the_system():
    """Converted left/right/two-sided BiCG track standard PBiCG with ISRV1/2/3 up to convergence"""
    print("🧪 Testing ISRV switching on a 32x32 grid...")
    A, b, P = _problem(m=32, convection=0.3)
    pairs = (
        (PrecSide.LEFT, IsrvKind.ISRV1),
        (PrecSide.RIGHT, IsrvKind.ISRV2),
        (PrecSide.TWO_SIDED, IsrvKind.ISRV3),
    )
    for side, kind in pairs:
        converted = bicg_converted(A, b, P=P, side=side).trace
        standard = pbicg_standard(A, b, P=P, isrv=IsrvSpec(kind)).trace
        k = min(converted.iterations, standard.iterations)
        assert abs(converted.iterations - standard.iterations) <= 1
        assert compare_traces(converted, standard, k).max_rel_relres <= 1e-6
        print(f"✅ {side.value} ~ {kind.value} over {k} iterations")


def test_congruency_of_assigned_splits():
    A, b, P = _problem(m=8, convection=0.4)
    for side in (PrecSide.LEFT, PrecSide.RIGHT):
        dedicated = bicg_converted(A, b, P=P, side=side).trace
        assigned = bicg_converted(A, b, P=AssignedSplit(P, side), side=PrecSide.TWO_SIDED).trace
        assert dedicated.iterations == assigned.iterations
        cmp = compare_traces(dedicated, assigned, dedicated.iterations)
        assert max(cmp.max_rel_alpha, cmp.max_rel_beta, cmp.max_rel_relres) <= 1e-12


def test_bicr_is_bicg_with_transposed_shadow():
    A = generate_random(30, 0.2, seed=4)
    b = matvec(A, np.ones(A.n))
    shadowed = bicg(A, b, isrv=IsrvSpec(IsrvKind.AT_R0)).trace
    reference = bicr(A, b).trace
    k = _window(shadowed, reference, limit=10)
    assert compare_traces(shadowed, reference, k).max_rel_scalars <= 1e-6


def test_balanced_isrv3_is_r0_for_spd():
    A = generate_stencil(6, 0.0)
    P = ilu0_factorize(A, balanced=True)
    r0 = matvec(A, np.ones(A.n))
    assert norm2(build_isrv(IsrvSpec(IsrvKind.ISRV3), A, P, r0) - r0) <= 1e-10 * norm2(r0)


def test_trace_frame_and_determinism():
    A, b, P = _problem(m=6)
    first = pbicg_standard(A, b, P=P).trace.to_frame()
    second = pbicg_standard(A, b, P=P).trace.to_frame()
    assert list(first.columns) == ['k', 'alpha', 'beta', 'relres_alg', 'relres_true']
    assert first.equals(second)
    with pytest.raises(ValueError):
        pbicg_standard(A, b, P=P).trace.history('r')


def test_variant_parsing():
    method, isrv, side = parse_variant('pbicg-std:isrv2')
    assert method == 'pbicg-std' and isrv.kind is IsrvKind.ISRV2 and side is None
    assert parse_variant('bicg-conv:two-sided')[2] is PrecSide.TWO_SIDED
    assert parse_variant('pbicg-left') == ('pbicg-left', None, None)
    with pytest.raises(ValueError):
        parse_variant('pbicg-left:isrv1')
    with pytest.raises(ValueError):
        parse_variant('gmres')
    A, b, P = _problem(m=4)
    with pytest.raises(ValueError):
        run_method('pbicg-right', A, b, P=P, isrv=IsrvSpec())


def _stored_problem(name):
    try:
        A = read_matrix_market(find_matrix(name))
    except MatrixSourceError:
        pytest.skip(f"{name} not on KRYLOV_MATRIX_DIR")
    return A, matvec(A, np.ones(A.n)), ilu0_factorize(A)


@pytest.mark.parametrize("name", ["sherman4", "watt__1"])
def test_stored_matrix_left_class(name):
    A, b, P = _stored_problem(name)
    left = pbicg_left(A, b, P=P).trace
    standard = pbicg_standard(A, b, P=P).trace
    improved = pbicg_improved2(A, b, P=P).trace
    k = _window(left, standard, improved)
    assert compare_traces(left, standard, k).max_rel_scalars <= 1e-8
    assert compare_traces(left, improved, k).max_rel_scalars <= 1e-8


def test_sherman4_right_system_and_isrv_switching():
    A, b, P = _stored_problem("sherman4")
    right = pbicg_right(A, b, P=P).trace
    left = pbicg_left(A, b, P=P).trace
    assert compare_traces(right, left, min(30, right.iterations, left.iterations)).max_rel_alpha > 1e-2
    converted = bicg_converted(A, b, P=P, side=PrecSide.LEFT).trace
    standard = pbicg_standard(A, b, P=P, isrv=IsrvSpec(IsrvKind.ISRV1)).trace
    k = min(converted.iterations, standard.iterations)
    assert compare_traces(converted, standard, k).max_rel_relres <= 1e-6


def main():
    """Run the solver checks without pytest"""
    print("🚀 Starting Krylov Solver Tests")
    print("=" * 50)
    test_identity_system_one_step()
    test_exact_initial_guess()
    test_max_iter_stops()
    test_sigma_breakdown_is_reported()
    test_degenerate_initial_shadow()
    test_bicg_matches_cg_on_spd()
    test_bicr_matches_cr_on_spd()
    test_identity_preconditioner_reduces_to_bicg()
    test_left_class_agrees()
    test_improved2_residuals_match_standard()
    test_right_system_differs()
    test_isrv2_is_the_right_system()
    test_isrv_switches_the_system()
    test_congruency_of_assigned_splits()
    test_bicr_is_bicg_with_transposed_shadow()
    test_balanced_isrv3_is_r0_for_spd()
    print("\n🎉 Krylov solver tests completed!")


if __name__ == "__main__":
    main()
