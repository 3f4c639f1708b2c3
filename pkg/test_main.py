#!/usr/bin/env python3
"""
Test script for the command-line harness: solve, compare and verify
"""

import io
import sys

import pandas as pd
import pytest

from main import (EXIT_BREAKDOWN, EXIT_INPUT, EXIT_MAX_ITER, EXIT_OK, EXIT_VERIFY_FAILED, ExperimentConfig,
                  load_matrix, main, overall_verdict, run_verify)

STENCIL = 'gen:stencil:16:0.5'


def _write(path, text):
    path.write_text(text)
    return str(path)


def _frame(text):
    return pd.read_csv(io.StringIO(text), comment='#')


def _verdicts(text):
    return [line.split(',') for line in text.splitlines() if line.startswith('# verdict')]


def test_solve_converges(capsys):
    code = main(['solve', '--matrix', STENCIL, '--method', 'pbicg-std', '--isrv', 'isrv1',
                 '--precond', 'ilu0', '--tol', '1e-8'])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.splitlines()[0] == 'k,alpha,beta,relres_alg,relres_true'
    frame = _frame(out)
    assert list(frame['k']) == list(range(len(frame)))
    assert frame['relres_alg'].iloc[-1] <= 1e-8


def test_solve_is_byte_identical(capsys):
    args = ['solve', '--matrix', 'gen:random:40:0.1:3', '--method', 'pbicg-impr2']
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first


def test_unit_rhs_on_identity(tmp_path, capsys):
    path = _write(tmp_path / 'eye.mtx', "%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 1\n2 2 1\n3 3 1\n")
    assert main(['solve', '--matrix', path, '--rhs', 'unit']) == EXIT_OK
    frame = _frame(capsys.readouterr().out)
    assert len(frame) == 1
    assert frame['alpha'].iloc[0] == 1.0


def test_rhs_from_file(tmp_path, capsys):
    matrix = _write(tmp_path / 'eye.mtx', "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 2\n2 2 4\n")
    rhs = _write(tmp_path / 'b.txt', "% right-hand side\n2\n4\n")
    assert main(['solve', '--matrix', matrix, '--rhs', 'file', '--rhs-file', rhs, '--precond', 'none',
                 '--method', 'bicg']) == EXIT_OK
    assert main(['solve', '--matrix', matrix, '--rhs', 'file', '--precond', 'none']) == EXIT_INPUT


def test_missing_matrix(tmp_path, capsys):
    assert main(['solve', '--matrix', str(tmp_path / 'absent.mtx')]) == EXIT_INPUT
    assert capsys.readouterr().out == ''


def test_bad_generator_and_combinations(capsys):
    assert main(['solve', '--matrix', 'gen:stencil:x:0.5']) == EXIT_INPUT
    assert main(['solve', '--matrix', STENCIL, '--method', 'pbicg-left', '--isrv', 'isrv2']) == EXIT_INPUT
    assert main(['solve', '--matrix', STENCIL, '--method', 'pbicg-std', '--side', 'left']) == EXIT_INPUT
    assert main(['solve', '--matrix', STENCIL, '--tol', '-1']) == EXIT_INPUT
    assert capsys.readouterr().out == ''


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(['solve', '--matrix', STENCIL, '--method', 'gmres'])
    assert info.value.code == EXIT_INPUT


def test_max_iter_exit_code(capsys):
    assert main(['solve', '--matrix', STENCIL, '--max-iter', '2']) == EXIT_MAX_ITER
    assert len(_frame(capsys.readouterr().out)) == 2


def test_breakdown_exit_codes(tmp_path, capsys):
    swap = _write(tmp_path / 'swap.mtx', "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1\n2 1 1\n")
    assert main(['solve', '--matrix', swap, '--method', 'bicg', '--precond', 'none', '--rhs', 'unit']) == EXIT_BREAKDOWN
    assert main(['solve', '--matrix', swap, '--precond', 'ilu0']) == EXIT_BREAKDOWN


def test_solve_to_file(tmp_path, capsys):
    output = tmp_path / 'trace.csv'
    assert main(['solve', '--matrix', 'gen:stencil:6:0.2', '--output', str(output)]) == EXIT_OK
    assert capsys.readouterr().out == ''
    assert list(pd.read_csv(output).columns) == ['k', 'alpha', 'beta', 'relres_alg', 'relres_true']


def test_compare_left_class_agrees(capsys):
    code = main(['compare', '--matrix', STENCIL, '--variants', 'pbicg-left,pbicg-std:isrv1,pbicg-impr2'])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    frame = _frame(out)
    assert 'alpha_pbicg-left' in frame.columns and 'beta_pbicg-impr2' in frame.columns
    assert len(frame) <= 30
    verdicts = _verdicts(out)
    assert [v[3] for v in verdicts[:-1]] == ['agree', 'agree', 'agree']
    assert verdicts[-1] == ['# verdict', 'overall', 'agree']


def test_compare_right_differs(capsys):
    assert main(['compare', '--matrix', STENCIL, '--variants', 'pbicg-right,pbicg-left']) == EXIT_OK
    verdicts = _verdicts(capsys.readouterr().out)
    assert verdicts[0][1:4] == ['pbicg-right', 'pbicg-left', 'differ']
    assert verdicts[-1] == ['# verdict', 'overall', 'differ']


def test_compare_without_preconditioner_agrees(capsys):
    assert main(['compare', '--matrix', STENCIL, '--precond', 'none',
                 '--variants', 'bicg,pbicg-right,pbicg-left,pbicg-std,pbicg-impr2']) == EXIT_OK
    assert _verdicts(capsys.readouterr().out)[-1] == ['# verdict', 'overall', 'agree']


def test_compare_relres_series_to_file(tmp_path, capsys):
    output = tmp_path / 'cmp.csv'
    assert main(['compare', '--matrix', STENCIL, '--series', 'relres', '--output', str(output),
                 '--variants', 'bicg-conv:left,pbicg-std:isrv1']) == EXIT_OK
    out = capsys.readouterr().out
    assert all(line.startswith('# verdict') for line in out.splitlines())
    columns = list(pd.read_csv(output).columns)
    assert columns == ['k', 'relres_bicg-conv:left', 'relres_pbicg-std:isrv1']


def test_compare_bad_variant(capsys):
    assert main(['compare', '--matrix', STENCIL, '--variants', 'pbicg-left,lsqr']) == EXIT_INPUT


def test_verify_small_sizes(capsys):
    assert main(['verify', '--sizes', '4']) == EXIT_OK
    first = capsys.readouterr().out
    assert main(['verify', '--sizes', '4']) == EXIT_OK
    assert capsys.readouterr().out == first
    assert first.splitlines()[-1].endswith('checks passed')


def test_verify_corrupt_fails(capsys):
    assert main(['verify', '--sizes', '4', '--corrupt']) == EXIT_VERIFY_FAILED
    assert 'FAIL' in capsys.readouterr().out


@pytest.mark.parametrize("sizes", ['1', '', '4,0'])
def test_verify_rejects_bad_sizes(sizes, capsys):
    with pytest.raises(SystemExit) as info:
        main(['verify', '--sizes', sizes])
    assert info.value.code == EXIT_INPUT
    assert capsys.readouterr().out == ''


def test_run_verify_rejects_bad_sizes(capsys):
    assert run_verify(sizes=[1]) == EXIT_INPUT
    assert run_verify(sizes=[]) == EXIT_INPUT
    assert capsys.readouterr().out == ''


def test_config_and_helpers():
    with pytest.raises(ValueError):
        ExperimentConfig(matrix=STENCIL, method='bicr', isrv='isrv1')
    assert ExperimentConfig(matrix=STENCIL).solver_config().tol == 1e-8
    assert load_matrix('gen:stencil:3:0.0').n == 9
    assert load_matrix('gen:random:12:0.2:1').n == 12
    assert overall_verdict([]) == 'inconclusive'
    assert overall_verdict([('a', 'b', 'agree', 0.0), ('a', 'c', 'differ', 1.0)]) == 'mixed'


def run_tests():
    """Run the harness tests through pytest, which supplies the capture and tmp_path fixtures"""
    print("🚀 Starting Command-Line Harness Tests")
    print("=" * 50)
    code = pytest.main([__file__, '-q'])
    print("\n🎉 Harness tests completed!" if code == 0 else "\n❌ Harness tests failed")
    return code


if __name__ == "__main__":
    sys.exit(run_tests())
