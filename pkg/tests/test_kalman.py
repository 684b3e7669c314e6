import numpy as np
import pytest

from blocksmooth import blocktri, kalman
from blocksmooth.blocktri import assemble_dense
from blocksmooth.errors import (
    CovarianceNotPD,
    DimensionMismatch,
    IdentityViolation,
    MeasurementInfoSingular,
    SingularInput,
)
from blocksmooth.kalman import LinearGaussianModel
from blocksmooth.sim import random_model, weakest_link_toy

from oracles import dense_smooth, normal_equations, rel


def model_no_data(x0, G, Q):
    N = len(Q)
    none = [None] * N
    return LinearGaussianModel(x0, G, Q, none, none, none)


def test_assemble_scalar_two_steps():
    g = 0.7
    m = model_no_data([0.0], [g], [1.0, 1.0])
    sys = kalman.assemble_system(m)
    np.testing.assert_allclose(sys.diag[:, 0, 0], [1 + g * g, 1.0])
    np.testing.assert_allclose(sys.sub[:, 0, 0], [-g])


def test_assemble_matches_stacked_oracle():
    m = random_model(3, n=2, N=4, m_pattern="mixed").model
    sys = kalman.assemble_system(m)
    A, rhs = normal_equations(m)
    np.testing.assert_allclose(assemble_dense(sys), A, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sys.rhs.reshape(-1), rhs, rtol=1e-12, atol=1e-12)


def test_rhs_with_identity_measurements():
    rng = np.random.default_rng(0)
    n, N = 2, 3
    z = [rng.standard_normal(n) for _ in range(N)]
    x0 = rng.standard_normal(n)
    Q = np.array([np.diag([2.0, 0.5])] * N)
    m = LinearGaussianModel(x0, np.zeros((N - 1, n, n)), Q, [np.eye(n)] * N, [np.eye(n)] * N, z)
    rhs = kalman.assemble_system(m).rhs[:, :, 0]
    np.testing.assert_allclose(rhs[0], z[0] + np.linalg.solve(Q[0], x0))
    np.testing.assert_allclose(rhs[1:], np.array(z[1:]))


def test_model_validation():
    with pytest.raises(CovarianceNotPD):
        model_no_data([0.0], [1.0], [1.0, -1.0])
    with pytest.raises(DimensionMismatch):
        model_no_data([0.0, 0.0], [1.0], [1.0, 1.0])
    with pytest.raises(CovarianceNotPD):
        LinearGaussianModel([0.0], [], [1.0], [[[1.0]]], [[[0.0]]], [[1.0]])


def test_objective_zero():
    m = model_no_data([0.0], [0.5, 0.5], [1.0, 1.0, 1.0])
    assert kalman.objective(m, np.zeros((3, 1))) == 0.0


def test_gradient_is_residual_of_normal_equations():
    m = random_model(4, n=3, N=6, m_pattern="mixed").model
    A, rhs = normal_equations(m)
    x = np.random.default_rng(1).standard_normal((6, 3))
    g = kalman.objective_gradient(m, x).reshape(-1)
    assert rel(g, A @ x.reshape(-1) - rhs) <= 1e-10


def test_gradient_vanishes_at_solution():
    m = random_model(5, n=2, N=10).model
    sys = kalman.assemble_system(m)
    e = blocktri.fbt_solve(sys).e
    assert np.linalg.norm(kalman.objective_gradient(m, e)) <= 1e-8 * np.linalg.norm(sys.rhs)


def test_gradient_matches_central_differences():
    m = random_model(6, n=2, N=5, m_pattern="scalar").model
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 2))
    g = kalman.objective_gradient(m, x)
    h = 1e-6 * max(1.0, np.abs(x).max())
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (kalman.objective(m, xp) - kalman.objective(m, xm)) / (2 * h)
    assert rel(fd, g) <= 1e-5


def test_rts_single_step():
    rng = np.random.default_rng(3)
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    H = rng.standard_normal((1, 2))
    R = np.array([[0.4]])
    z = np.array([0.7])
    x0 = np.array([1.0, -1.0])
    m = LinearGaussianModel(x0, [], [Q], [H], [R], [z])
    Qi, Ri = np.linalg.inv(Q), np.linalg.inv(R)
    expect = np.linalg.solve(Qi + H.T @ Ri @ H, H.T @ Ri @ z + Qi @ x0)
    np.testing.assert_allclose(kalman.rts_smoother(m)[0][0], expect, rtol=1e-12)


def test_rts_matches_fbt():
    m = random_model(7, n=3, N=10, m_pattern="mixed").model
    e = blocktri.fbt_solve(kalman.assemble_system(m)).e[:, :, 0]
    assert rel(kalman.rts_smoother(m)[0], e) <= 1e-8


def test_rts_no_data_is_rollout():
    rng = np.random.default_rng(4)
    n, N = 2, 6
    G = rng.standard_normal((N - 1, n, n)) * 0.8
    x0 = rng.standard_normal(n)
    m = model_no_data(x0, G, np.broadcast_to(np.eye(n), (N, n, n)))
    x = x0
    roll = [x0]
    for k in range(N - 1):
        x = G[k] @ x
        roll.append(x)
    np.testing.assert_allclose(kalman.rts_smoother(m)[0], np.array(roll), rtol=1e-10, atol=1e-12)


def test_rts_identities_small():
    m = random_model(8, n=1, N=3).model
    rep = kalman.rts_block_identities(m)
    assert rep.passed and max(rep.errors.values()) <= 1e-8


def test_rts_identities_single_step():
    m = random_model(9, n=2, N=1).model
    sol = blocktri.fbt_solve(kalman.assemble_system(m))
    st = kalman.information_filter(m)[0]
    np.testing.assert_allclose(sol.trace.d_forward[0], st.info_filt, rtol=1e-12)
    assert kalman.rts_block_identities(m).passed


def test_rts_identities_without_measurements():
    m = random_model(10, n=2, N=6, m_pattern="none").model
    assert kalman.rts_block_identities(m).passed


def test_identity_violation_raised():
    rep = kalman.IdentityReport(tol=1e-8)
    rep.record("d_forward", 2, 1e-3)
    with pytest.raises(IdentityViolation) as info:
        rep.raise_on_failure()
    assert info.value.k == 2 and info.value.which == "d_forward"


def test_filter_state_information_consistency():
    m = random_model(11, n=3, N=5).model
    for st in kalman.information_filter(m):
        assert rel(st.y_filt, np.linalg.solve(st.P_filt, st.x_filt)) <= 1e-10


def test_mayne_matches_bbt_and_identities():
    m = random_model(12, n=2, N=10, m_pattern="mixed").model
    e = blocktri.bbt_solve(kalman.assemble_system(m)).e[:, :, 0]
    xs, states = kalman.mayne_a_smoother(m)
    assert rel(xs, e) <= 1e-8
    assert kalman.mayne_block_identities(m).passed
    for st in states:
        assert rel(st.Qchol @ st.Qchol.T, m.Q[st.k - 1]) <= 1e-10
        assert np.linalg.eigvalsh(st.Delta)[0] > 0


def test_mayne_no_measurements():
    m = random_model(13, n=2, N=5, m_pattern="none").model
    states = kalman.mayne_backward(m)
    assert not states[-1].P.any() and not states[-1].phi.any()
    for st in states:
        assert np.linalg.eigvalsh(st.P)[0] >= -1e-12


def test_mayne_toy_backward_pivots():
    toy = weakest_link_toy(False).model
    db = blocktri.bbt_solve(kalman.assemble_system(toy)).trace.d_backward[:, 0, 0]
    states = kalman.mayne_backward(toy)
    from_mayne = np.array([st.P[0, 0] + toy.Qinv[k, 0, 0] for k, st in enumerate(states)])
    np.testing.assert_allclose(db, [1, 1, 1], atol=1e-10)
    np.testing.assert_allclose(from_mayne, [1, 1, 1], atol=1e-10)


def test_pq_identity():
    assert kalman.pq_identity_check(np.eye(3), np.eye(3))
    rng = np.random.default_rng(14)
    A, B = rng.standard_normal((2, 3, 3))
    assert kalman.pq_identity_check(A @ A.T + np.eye(3), B @ B.T + np.eye(3))
    p, q = np.diag([2.0, 3.0]), np.diag([0.5, 4.0])
    assert kalman.pq_identity_check(p, q)
    pv, qv = np.diag(p), np.diag(q)
    lhs = pv - pv ** 2 / (1 / qv + pv)
    rhs = 1 / qv - (1 / qv ** 2) / (1 / qv + pv)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-14)
    with pytest.raises(SingularInput):
        kalman.pq_identity_check(np.zeros((2, 2)), np.eye(2))


def test_mayne_fraser_matches_rts():
    m = random_model(15, n=3, N=10, m_pattern="scalar").model
    A, _ = normal_equations(m)
    w = np.linalg.eigvalsh(A)
    xs, combined = kalman.mayne_fraser_smoother(m)
    assert rel(xs, kalman.rts_smoother(m)[0]) <= 1e-8 * w[-1] / w[0]
    tr = blocktri.twofilter_solve(kalman.assemble_system(m)).trace
    np.testing.assert_allclose(combined, tr.d_combined, rtol=1e-9, atol=1e-9 * np.abs(combined).max())
    assert rel(combined[-1], tr.d_forward[-1]) <= 1e-10


def test_mayne_fraser_single_step_is_filter():
    m = random_model(16, n=2, N=1).model
    np.testing.assert_allclose(kalman.mayne_fraser_smoother(m)[0][0], kalman.information_filter(m)[0].x_filt,
                               rtol=1e-12)


def test_woodbury_identity_measurements():
    rng = np.random.default_rng(17)
    n, N = 2, 8
    G = rng.standard_normal((N - 1, n, n)) * 0.5
    Q = np.array([np.diag(rng.uniform(0.5, 2, n)) for _ in range(N)])
    z = [rng.standard_normal(n) for _ in range(N)]
    m = LinearGaussianModel(rng.standard_normal(n), G, Q, [np.eye(n)] * N, [np.eye(n)] * N, z)
    xs, inter = kalman.woodbury_solve(m)
    assert rel(xs, kalman.rts_smoother(m)[0]) <= 1e-8
    assert rel(xs, dense_smooth(m)) <= 1e-8


def test_woodbury_scalar_closed_form():
    # one step: x = (1/q + 1/lam)^{-1} rho, and Woodbury gives lam^{-1}(rho - y) with y = lam^{-1} rho / (q + lam^{-1})
    q, lam, rho = 2.0, 3.0, 1.5
    m = LinearGaussianModel([rho * q], [], [q], [[[1.0]]], [[[1.0 / lam]]], [[0.0]])
    xs, inter = kalman.woodbury_solve(m)
    y = (rho / lam) / (q + 1.0 / lam)
    assert xs[0, 0] == pytest.approx((rho - y) / lam, rel=1e-14)
    assert xs[0, 0] == pytest.approx(rho / (1 / q + lam), rel=1e-14)


def test_woodbury_rank_deficient_rejected():
    n, N = 2, 3
    H = [np.array([[1.0, 0.0]])] * N
    m = LinearGaussianModel(np.zeros(n), np.zeros((N - 1, n, n)), np.broadcast_to(np.eye(n), (N, n, n)),
                            H, [np.eye(1)] * N, [np.zeros(1)] * N)
    with pytest.raises(MeasurementInfoSingular):
        kalman.woodbury_solve(m)


def test_woodbury_intermediate_bounded_below_by_q():
    m = random_model(18, n=3, N=10).model
    _, inter = kalman.woodbury_solve(m)
    w = np.linalg.eigvalsh(assemble_dense(inter))
    assert w[0] >= np.linalg.eigvalsh(m.Q)[:, 0].min() - 1e-10


def test_backward_pivot_report_toy_like():
    m = random_model(19, n=2, N=10, conditioning="ill-last-block").model
    rep = kalman.backward_pivot_report(m)
    assert rep.psd_ok and rep.kappa_ok
    assert rep.alpha >= 1.0
