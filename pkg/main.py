#!/usr/bin/env python3
"""
Command-line harness for the preconditioned BiCG solvers: solve, compare, verify
"""

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import pandas as pd

from matcore import CsrMatrix, find_matrix, generate_random, generate_stencil, matvec, read_matrix_market
from precond import BreakdownError, Preconditioner, PrecSide, ilu0_factorize
from krylov import (ISRV_METHODS, METHODS, PRECONDITIONED_METHODS, IsrvSpec, IterationTrace,
                    SolveStatus, SolverConfig, parse_variant, run_method)
from verify import compare_traces, resolved_window
from verification_suite import DEFAULT_SIZES, MIN_GRID_SIZE, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_ITER = 2
EXIT_BREAKDOWN = 3
EXIT_VERIFY_FAILED = 4

CSV_FLOAT_FORMAT = '%.17g'
PRECONDITIONERS = ('none', 'ilu0', 'ilu0-balanced')
RHS_MODES = ('ones_solution', 'file', 'unit')

STATUS_EXIT_CODES = {
    SolveStatus.CONVERGED: EXIT_OK,
    SolveStatus.MAX_ITER: EXIT_MAX_ITER,
    SolveStatus.BREAKDOWN: EXIT_BREAKDOWN,
}


@dataclass
class ExperimentConfig:
    """One solve as requested on the command line"""
    matrix: str
    method: str = 'pbicg-std'
    isrv: Optional[str] = None
    side: Optional[str] = None
    precond: str = 'ilu0'
    tol: float = 1e-8
    max_iter: Optional[int] = None
    rhs_mode: str = 'ones_solution'
    rhs_file: Optional[str] = None
    output: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Unknown method '{self.method}' (expected one of {', '.join(METHODS)})")
        if self.isrv is not None and self.method not in ISRV_METHODS:
            raise ValueError(f"--isrv is only valid for {', '.join(ISRV_METHODS)}, not '{self.method}'")
        if self.side is not None and self.method != 'bicg-conv':
            raise ValueError(f"--side is only valid for bicg-conv, not '{self.method}'")
        if self.precond not in PRECONDITIONERS:
            raise ValueError(f"Unknown preconditioner '{self.precond}'")
        if self.rhs_mode not in RHS_MODES:
            raise ValueError(f"Unknown right-hand side mode '{self.rhs_mode}'")
        if self.rhs_mode == 'file' and not self.rhs_file:
            raise ValueError("--rhs file needs --rhs-file")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iter=self.max_iter)

    def isrv_spec(self) -> Optional[IsrvSpec]:
        return IsrvSpec.from_name(self.isrv) if self.isrv else None

    def prec_side(self) -> Optional[PrecSide]:
        return PrecSide.from_name(self.side) if self.side else None


def load_matrix(source: str) -> CsrMatrix:
    """Matrix from a generator spec, a path, or a bare name on KRYLOV_MATRIX_DIR"""
    if source.startswith('gen:'):
        parts = source.split(':')
        try:
            if parts[1] == 'stencil' and len(parts) in (4, 5):
                seed = int(parts[4]) if len(parts) == 5 else 0
                return generate_stencil(int(parts[2]), float(parts[3]), seed)
            if parts[1] == 'random' and len(parts) == 5:
                return generate_random(int(parts[2]), float(parts[3]), int(parts[4]))
        except (ValueError, IndexError) as e:
            raise ValueError(f"Bad generator spec '{source}': {e}")
        raise ValueError(f"Bad generator spec '{source}' (use gen:stencil:m:conv[:seed] or gen:random:n:density:seed)")

    path = find_matrix(source)
    logger.info(f"Loading matrix from {path}")
    return read_matrix_market(path)


def build_preconditioner(kind: str, A: CsrMatrix) -> Optional[Preconditioner]:
    if kind == 'none':
        return None
    return ilu0_factorize(A, balanced=(kind == 'ilu0-balanced'))


def build_rhs(mode: str, A: CsrMatrix, rhs_file: Optional[str] = None) -> np.ndarray:
    """b = A 1 (exact solution of ones), b = e_1, or a vector read from a file"""
    if mode == 'ones_solution':
        return matvec(A, np.ones(A.n))
    if mode == 'unit':
        b = np.zeros(A.n)
        b[0] = 1.0
        return b
    b = np.loadtxt(rhs_file, dtype=np.float64, comments='%', ndmin=1)
    if b.shape != (A.n,):
        raise ValueError(f"Right-hand side file has {b.size} values, matrix has n={A.n}")
    return b


def write_csv(frame: pd.DataFrame, output: Optional[str], stream: TextIO):
    """Write a frame with %.17g floats to a file, or to the stream when no file is given"""
    kwargs = dict(index=False, float_format=CSV_FLOAT_FORMAT, na_rep='', lineterminator='\n')
    if output:
        frame.to_csv(output, **kwargs)
        logger.info(f"Wrote {len(frame)} rows to {output}")
    else:
        stream.write(frame.to_csv(**kwargs))


class ExperimentRunner:
    """Loads the problem once and runs solves on it"""

    def __init__(self, matrix: str, precond: str = 'ilu0', rhs_mode: str = 'ones_solution',
                 rhs_file: Optional[str] = None):
        self.A = load_matrix(matrix)
        self.b = build_rhs(rhs_mode, self.A, rhs_file)
        self.P = build_preconditioner(precond, self.A)
        logger.info(f"Problem ready: n={self.A.n}, nnz={self.A.nnz}, precond={precond}")

    def solve(self, method: str, isrv: Optional[IsrvSpec], side: Optional[PrecSide], cfg: SolverConfig):
        P = self.P if method in PRECONDITIONED_METHODS else None
        return run_method(method, self.A, self.b, P=P, isrv=isrv, side=side, cfg=cfg)


def run_solve(cfg: ExperimentConfig, stream: TextIO = None) -> int:
    """Run one solve and write its trace as CSV; returns the exit code"""
    stream = stream or sys.stdout
    try:
        runner = ExperimentRunner(cfg.matrix, cfg.precond, cfg.rhs_mode, cfg.rhs_file)
        result = runner.solve(cfg.method, cfg.isrv_spec(), cfg.prec_side(), cfg.solver_config())
    except BreakdownError as e:
        logger.error(f"Breakdown: {e}")
        return EXIT_BREAKDOWN
    except (OSError, ValueError) as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT

    write_csv(result.trace.to_frame(), cfg.output, stream)
    if result.status is SolveStatus.BREAKDOWN:
        logger.error(f"{cfg.method} broke down ({result.breakdown_stage}) at k={result.breakdown_k}")
    return STATUS_EXIT_CODES[result.status]


def comparison_frame(traces: Dict[str, IterationTrace], series: str, k_max: int) -> pd.DataFrame:
    """Wide table, one column per variant and series, rows k = 0..k_max-1"""
    rows = min(k_max, max((t.iterations for t in traces.values()), default=0))
    columns = {'k': np.arange(rows, dtype=np.int64)}
    fields = ('alpha', 'beta') if series == 'alpha-beta' else ('relres',)
    for name in fields:
        for variant, trace in traces.items():
            values = {'alpha': trace.alphas, 'beta': trace.betas, 'relres': trace.relres_alg}[name][:rows]
            column = np.full(rows, np.nan)
            column[:len(values)] = values
            columns[f"{name}_{variant}"] = column
    return pd.DataFrame(columns)


def classify(value: float, agree_tol: float, differ_tol: float) -> str:
    if value <= agree_tol:
        return 'agree'
    if value > differ_tol:
        return 'differ'
    return 'neither'


def pair_verdicts(traces: Dict[str, IterationTrace], series: str, k_max: int, agree_tol: float,
                  differ_tol: float, floor: float) -> List[Tuple[str, str, str, float]]:
    """Verdict per variant pair over the iterations both traces resolve"""
    verdicts = []
    for (name1, t1), (name2, t2) in itertools.combinations(traces.items(), 2):
        if series == 'alpha-beta':
            k = min(k_max, resolved_window(t1, floor), resolved_window(t2, floor))
        else:
            k = min(k_max, t1.iterations, t2.iterations)
        if k == 0:
            verdicts.append((name1, name2, 'neither', float('nan')))
            continue
        cmp = compare_traces(t1, t2, k)
        value = cmp.max_rel_scalars if series == 'alpha-beta' else cmp.max_rel_relres
        verdicts.append((name1, name2, classify(value, agree_tol, differ_tol), value))
    return verdicts


def overall_verdict(verdicts: Sequence[Tuple[str, str, str, float]]) -> str:
    kinds = {v[2] for v in verdicts}
    if not verdicts:
        return 'inconclusive'
    if kinds == {'agree'}:
        return 'agree'
    if kinds == {'differ'}:
        return 'differ'
    return 'mixed'


def run_compare(matrix: str, variants: Sequence[str], k_max: int = 30, precond: str = 'ilu0',
                series: str = 'alpha-beta', tol: float = 1e-8, max_iter: Optional[int] = None,
                agree_tol: float = 1e-8, differ_tol: float = 1e-2, floor: float = 1e-6,
                output: Optional[str] = None, stream: TextIO = None) -> int:
    """Run several variants on one problem, write the wide CSV and the verdict lines"""
    stream = stream or sys.stdout
    try:
        runner = ExperimentRunner(matrix, precond)
        parsed = [(v, parse_variant(v)) for v in variants]
        cfg = SolverConfig(tol=tol, max_iter=max_iter)
    except BreakdownError as e:
        logger.error(f"Breakdown: {e}")
        return EXIT_BREAKDOWN
    except (OSError, ValueError) as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT

    traces: Dict[str, IterationTrace] = {}
    for variant, (method, isrv, side) in parsed:
        try:
            result = runner.solve(method, isrv, side, cfg)
        except (BreakdownError, ValueError) as e:
            logger.error(f"Variant {variant} failed: {e}")
            continue
        if result.status is SolveStatus.BREAKDOWN:
            logger.warning(f"Variant {variant} broke down ({result.breakdown_stage}) at k={result.breakdown_k}")
        traces[variant] = result.trace

    if not traces:
        logger.error("No variant could be run")
        return EXIT_INPUT

    write_csv(comparison_frame(traces, series, k_max), output, stream)
    verdicts = pair_verdicts(traces, series, k_max, agree_tol, differ_tol, floor)
    for name1, name2, verdict, value in verdicts:
        stream.write(f"# verdict,{name1},{name2},{verdict},{value:.3e}\n")
    stream.write(f"# verdict,overall,{overall_verdict(verdicts)}\n")
    return EXIT_OK


def run_verify(seed: int = 0, sizes: Sequence[int] = DEFAULT_SIZES, corrupt: bool = False,
               stream: TextIO = None) -> int:
    """Run the verification suite and print one line per check"""
    stream = stream or sys.stdout
    try:
        outcomes = run_suite(seed, sizes, corrupt)
    except BreakdownError as e:
        logger.error(f"Breakdown: {e}")
        return EXIT_BREAKDOWN
    except ValueError as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT
    for outcome in outcomes:
        stream.write(outcome.format_line() + "\n")
    failed = sum(1 for o in outcomes if not o.passed)
    stream.write(f"{len(outcomes) - failed}/{len(outcomes)} checks passed\n")
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAILED


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one grid size")
    if min(values) < MIN_GRID_SIZE:
        raise argparse.ArgumentTypeError(f"grid sizes must be at least {MIN_GRID_SIZE}, got {min(values)}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Preconditioned BiCG experiments: solve, compare, verify")
    parser.add_argument('--verbose', action='store_true', help="log progress to standard error")
    parser.add_argument('--debug', action='store_true', help="log every iteration")
    sub = parser.add_subparsers(dest='command', required=True)

    solve = sub.add_parser('solve', help="run one solver and emit its trace as CSV")
    solve.add_argument('--matrix', required=True, help="path, name on KRYLOV_MATRIX_DIR, or gen:... spec")
    solve.add_argument('--method', default='pbicg-std', choices=METHODS)
    solve.add_argument('--isrv', default=None, help="r0, isrv1, isrv2, isrv3 or atr0 (bicg, pbicg-std)")
    solve.add_argument('--side', default=None, help="none, left, right or two-sided (bicg-conv)")
    solve.add_argument('--precond', default='ilu0', choices=PRECONDITIONERS)
    solve.add_argument('--tol', type=float, default=1e-8)
    solve.add_argument('--max-iter', type=int, default=None)
    solve.add_argument('--rhs', default='ones_solution', choices=RHS_MODES)
    solve.add_argument('--rhs-file', default=None)
    solve.add_argument('--output', default=None, help="CSV file (default: standard output)")

    compare = sub.add_parser('compare', help="run several variants and compare their traces")
    compare.add_argument('--matrix', required=True)
    compare.add_argument('--variants', required=True,
                         help="comma separated, e.g. pbicg-left,pbicg-std:isrv1,pbicg-impr2")
    compare.add_argument('--k-max', type=int, default=30)
    compare.add_argument('--precond', default='ilu0', choices=PRECONDITIONERS)
    compare.add_argument('--series', default='alpha-beta', choices=('alpha-beta', 'relres'))
    compare.add_argument('--tol', type=float, default=1e-8)
    compare.add_argument('--max-iter', type=int, default=None)
    compare.add_argument('--agree-tol', type=float, default=1e-8)
    compare.add_argument('--differ-tol', type=float, default=1e-2)
    compare.add_argument('--floor', type=float, default=1e-6,
                         help="alpha/beta are compared while the true residual stays above this")
    compare.add_argument('--output', default=None)

    verify = sub.add_parser('verify', help="run the verification suite")
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--sizes', type=_int_list, default=list(DEFAULT_SIZES))
    verify.add_argument('--corrupt', action='store_true', help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')

    if args.command == 'solve':
        try:
            cfg = ExperimentConfig(matrix=args.matrix, method=args.method, isrv=args.isrv, side=args.side,
                                   precond=args.precond, tol=args.tol, max_iter=args.max_iter,
                                   rhs_mode=args.rhs, rhs_file=args.rhs_file, output=args.output)
            cfg.solver_config()
        except ValueError as e:
            logger.error(f"Invalid configuration: {e}")
            return EXIT_INPUT
        return run_solve(cfg)

    if args.command == 'compare':
        variants = [v for v in args.variants.split(',') if v.strip()]
        return run_compare(args.matrix, variants, k_max=args.k_max, precond=args.precond, series=args.series,
                           tol=args.tol, max_iter=args.max_iter, agree_tol=args.agree_tol,
                           differ_tol=args.differ_tol, floor=args.floor, output=args.output)

    return run_verify(args.seed, args.sizes, args.corrupt)


if __name__ == "__main__":
    sys.exit(main())
