import threading

import numpy as np
import pytest

from blocksmooth import blocktri
from blocksmooth.blocktri import BlockTriSystem, assemble_dense, residual
from blocksmooth.errors import DimensionMismatch, NotSymmetric, PivotNotPositiveDefinite, SizeCapExceeded
from blocksmooth.sim import random_system, weakest_link_toy

from oracles import dense_matrix, dense_solve, rel

SOLVERS = [blocktri.fbt_solve, blocktri.bbt_solve, blocktri.twofilter_solve, blocktri.hybrid_solve]


def toy():
    return weakest_link_toy(False).system


def test_toy_forward_pivots():
    d = blocktri.fbt_solve(toy()).trace.d_forward[:, 0, 0]
    assert d[0] == 14401.0
    assert d[1] == pytest.approx(14400.0, rel=1e-3)
    assert d[2] == pytest.approx(4.8222e-9, rel=1e-3)


def test_toy_backward_pivots():
    d = blocktri.bbt_solve(toy()).trace.d_backward[:, 0, 0]
    np.testing.assert_allclose(d, [1.0, 1.0, 1.0], rtol=0, atol=1e-10)


def test_decoupled_identity_blocks():
    r = np.arange(12.0).reshape(4, 3, 1)
    sys = BlockTriSystem(np.broadcast_to(np.eye(3), (4, 3, 3)), np.zeros((3, 3, 3)), r)
    sol = blocktri.fbt_solve(sys)
    np.testing.assert_array_equal(sol.e, r)
    np.testing.assert_array_equal(sol.trace.d_forward, sys.diag)


def test_decoupled_bbt_halves():
    r = np.arange(8.0).reshape(4, 2, 1)
    sys = BlockTriSystem(np.broadcast_to(2 * np.eye(2), (4, 2, 2)), np.zeros((3, 2, 2)), r)
    np.testing.assert_allclose(blocktri.bbt_solve(sys).e, r / 2, rtol=1e-15)


def test_fbt_matches_dense_cholesky():
    sys = random_system(11, n=2, N=4).system
    ref, _ = dense_solve(sys)
    assert rel(blocktri.fbt_solve(sys).e, ref) <= 1e-10


def test_bbt_matches_fbt():
    sys = random_system(12, n=2, N=5).system
    ref, _ = dense_solve(sys)
    e_b = blocktri.bbt_solve(sys).e
    assert rel(e_b, blocktri.fbt_solve(sys).e) <= 1e-8
    assert rel(e_b, ref) <= 1e-8


def test_twofilter_single_block():
    sys = BlockTriSystem(np.array([[[4.0, 1.0], [1.0, 3.0]]]), np.zeros((0, 2, 2)), np.array([[[1.0], [2.0]]]))
    sol = blocktri.twofilter_solve(sys)
    np.testing.assert_allclose(sol.e[0], np.linalg.solve(sys.diag[0], sys.rhs[0]), rtol=1e-14)
    np.testing.assert_array_equal(sol.trace.d_forward[0], sys.diag[0])
    np.testing.assert_array_equal(sol.trace.d_backward[0], sys.diag[0])


def test_twofilter_toy_agrees_with_fbt():
    sys = toy()
    A = dense_matrix(sys)
    w = np.linalg.eigvalsh(A)
    kappa = w[-1] / w[0]
    assert rel(blocktri.twofilter_solve(sys).e, blocktri.fbt_solve(sys).e) <= 1e-6 * kappa


def test_twofilter_last_combined_block_is_forward_pivot():
    sys = random_system(13, n=3, N=6).system
    tr = blocktri.twofilter_solve(sys).trace
    np.testing.assert_array_equal(tr.d_backward[-1], sys.diag[-1])
    np.testing.assert_allclose(tr.d_combined[-1], tr.d_forward[-1], rtol=1e-10, atol=1e-10 * np.abs(tr.d_forward[-1]).max())
    np.testing.assert_allclose(tr.d_combined[0], tr.d_backward[0], rtol=1e-10, atol=1e-10 * np.abs(tr.d_backward[0]).max())


def test_hybrid_decoupled_pair():
    b = np.array([[[2.0]], [[5.0]]])
    sys = BlockTriSystem(b, np.zeros((1, 1, 1)), np.array([[[4.0]], [[10.0]]]))
    np.testing.assert_allclose(blocktri.hybrid_solve(sys).e[:, 0, 0], [2.0, 2.0], rtol=1e-15)


@pytest.mark.parametrize("N", [2, 3, 6, 7])
def test_hybrid_trace_split(N):
    sys = random_system(N, n=2, N=N).system
    tr = blocktri.hybrid_solve(sys).trace
    m = N // 2
    assert tr.midpoint.m == m
    assert tr.d_forward.shape[0] == m
    assert tr.d_backward.shape[0] == N - m
    assert tr.backward_start == m + 1


def test_hybrid_exchange_decouples_halves():
    # after the exchange, row m carries only d_hat and row m+1 only d_{m+1}^b
    sys = random_system(21, n=2, N=6).system
    sol = blocktri.hybrid_solve(sys)
    tr, m = sol.trace, 3
    c = sys.sub[m - 1]
    db_next = tr.d_backward[0]
    d_hat = tr.d_forward[m - 1] - c.T @ np.linalg.solve(db_next, c)
    np.testing.assert_allclose(tr.midpoint.d_hat, d_hat, rtol=1e-12)
    np.testing.assert_allclose(sol.e[m - 1], np.linalg.solve(tr.midpoint.d_hat, tr.midpoint.s_hat_forward), rtol=1e-10)
    np.testing.assert_allclose(sol.e[m], np.linalg.solve(db_next, tr.midpoint.s_hat_backward), rtol=1e-10)
    expect = tr.s_backward[0] - c @ np.linalg.solve(tr.midpoint.d_hat, tr.midpoint.s_hat_forward)
    np.testing.assert_allclose(tr.midpoint.s_hat_backward, expect, rtol=1e-10)


def test_hybrid_parallel_matches_dense_and_sequential():
    sys = random_system(7, n=2, N=7).system
    ref, _ = dense_solve(sys)
    seq = blocktri.hybrid_solve(sys, parallel=False).e
    par = blocktri.hybrid_solve(sys, parallel=True).e
    assert rel(par, ref) <= 1e-8
    ulps = np.abs(seq - par) / np.spacing(np.abs(seq))
    assert ulps.max() <= 1.0


def test_hybrid_parallel_uses_two_workers():
    sys = random_system(8, n=2, N=40).system
    names = set()
    orig = blocktri._forward_sweep

    def spy(*a, **k):
        names.add(threading.current_thread().name)
        return orig(*a, **k)

    blocktri._forward_sweep = spy
    try:
        blocktri.hybrid_solve(sys, parallel=True)
    finally:
        blocktri._forward_sweep = orig
    assert threading.main_thread().name not in names


def test_assemble_dense_toy():
    A = assemble_dense(toy())
    np.testing.assert_array_equal(A, [[14401, 120, 0], [120, 14401, 120], [0, 120, 1]])


def test_assemble_dense_single_block():
    b = np.array([[[3.0, 1.0], [1.0, 2.0]]])
    np.testing.assert_array_equal(assemble_dense(BlockTriSystem(b, np.zeros((0, 2, 2)), np.ones((1, 2)))), b[0])


def test_assemble_dense_layout():
    sys = random_system(3, n=2, N=2).system
    A = assemble_dense(sys)
    B = dense_matrix(sys)
    np.testing.assert_allclose(A, 0.5 * (B + B.T), rtol=0, atol=0)
    assert A[2, 0] == sys.sub[0, 0, 0] and A[0, 2] == sys.sub[0, 0, 0]
    assert A[3, 0] == sys.sub[0, 1, 0] and A[0, 3] == sys.sub[0, 1, 0]


def test_assemble_dense_cap():
    sys = random_system(3, n=2, N=5).system
    with pytest.raises(SizeCapExceeded):
        assemble_dense(sys, cap=9)


def test_residual_exact_and_zero():
    sys = random_system(4, n=3, N=5).system
    ref, _ = dense_solve(sys)
    rnorm = np.linalg.norm(sys.rhs)
    assert residual(sys, ref) <= 1e-12 * rnorm
    assert residual(sys, np.zeros_like(sys.rhs)) == pytest.approx(rnorm, rel=1e-15)


def test_residual_perturbed_matches_dense():
    sys = random_system(5, n=2, N=6).system
    e = np.random.default_rng(0).standard_normal(sys.rhs.shape)
    dense = np.linalg.norm(dense_matrix(sys) @ e.reshape(-1) - sys.rhs.reshape(-1))
    assert residual(sys, e) == pytest.approx(dense, rel=1e-12)


def test_residual_dimension_mismatch():
    sys = random_system(5, n=2, N=6).system
    with pytest.raises(DimensionMismatch):
        residual(sys, np.zeros((5, 2, 1)))


def test_validation_errors():
    with pytest.raises(DimensionMismatch):
        BlockTriSystem(np.ones(3), np.ones(3), np.ones(3))
    with pytest.raises(DimensionMismatch):
        BlockTriSystem(np.ones(3), np.ones(2), np.ones(2))
    with pytest.raises(NotSymmetric):
        BlockTriSystem(np.array([[[1.0, 2.0], [0.0, 1.0]]]), np.zeros((0, 2, 2)), np.ones((1, 2)))


@pytest.mark.parametrize("solver", SOLVERS)
def test_indefinite_raises_with_block_index(solver):
    # 2x2 scalar system [[1, 2], [2, 1]] is indefinite
    sys = BlockTriSystem(np.array([1.0, 1.0]), np.array([2.0]), np.ones(2))
    with pytest.raises(PivotNotPositiveDefinite) as info:
        solver(sys)
    assert info.value.k in (1, 2)
    assert info.value.lambda_min < 0
    assert info.value.stage in ("forward", "backward", "combined", "exchange")


def test_fbt_failure_reports_step():
    sys = BlockTriSystem(np.array([1.0, 1.0, 1.0]), np.array([0.5, 2.0]), np.ones(3))
    with pytest.raises(PivotNotPositiveDefinite) as info:
        blocktri.fbt_solve(sys)
    assert info.value.k == 3 and info.value.stage == "forward"


def test_parallel_failure_propagates_real_error():
    sys = BlockTriSystem(np.array([1.0, 1.0, 1.0, 1.0]), np.array([0.1, 0.1, 2.0]), np.ones(4))
    with pytest.raises(PivotNotPositiveDefinite):
        blocktri.hybrid_solve(sys, parallel=True)
    with pytest.raises(PivotNotPositiveDefinite):
        blocktri.twofilter_solve(sys, parallel=True)


def test_multiple_rhs_columns():
    sys = random_system(9, n=3, N=8, ell=4).system
    ref, _ = dense_solve(sys)
    for solver in SOLVERS:
        assert rel(solver(sys).e, ref) <= 1e-10


def test_solve_dispatch():
    sys = random_system(9, n=2, N=5).system
    np.testing.assert_array_equal(blocktri.solve(sys, "mf").e, blocktri.twofilter_solve(sys).e)
    with pytest.raises(Exception):
        blocktri.solve(sys, "nope")


def test_trace_spectra_rows():
    sys = random_system(2, n=2, N=4).system
    rows = blocktri.twofilter_solve(sys).trace.block_spectra
    assert len(rows) == 12
    for k, stage, lo, hi, cond in rows:
        assert 1 <= k <= 4 and 0 < lo <= hi and cond == pytest.approx(hi / lo)
