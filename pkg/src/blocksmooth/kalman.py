"""Linear-Gaussian smoothing as a block tridiagonal least-squares problem.

The model is::

    x_k = G_k x_{k-1} + w_k,   w_k ~ N(0, Q_k),   k = 1..N   (G_1 = I)
    z_k = H_k x_k + v_k,       v_k ~ N(0, R_k)

with ``x_0`` known.  Maximizing the posterior is a linear least-squares
problem whose normal equations are block tridiagonal; :func:`assemble_system`
builds them.  The remaining functions are classical smoother recursions
written independently of :mod:`blocktri`, so that they can serve as
oracles for the elimination solvers:

* :func:`rts_smoother` - covariance/information Kalman filter plus the
  Rauch-Tung-Striebel backward sweep.
* :func:`mayne_a_smoother` - Mayne's backward information recursion
  followed by a forward pass.
* :func:`mayne_fraser_smoother` - forward filter and Mayne's backward
  filter combined step by step.
* :func:`woodbury_solve` - the matrix-inversion-lemma route through
  ``(Q + G Lambda^{-1} G^T) y = G Lambda^{-1} rho``.

States are returned as arrays of shape (N, n).
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg as sla

from . import blocktri, spectral
from .blocktri import BlockTriSystem
from .errors import (
    CombinedNotPD,
    CovarianceNotPD,
    DimensionMismatch,
    IdentityViolation,
    MeasurementInfoSingular,
    SingularInput,
)

IDENTITY_TOL = 1e-8


def _chol_or_raise(M, what, k):
    try:
        return sla.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise CovarianceNotPD(what, k) from None


def _spd_inverse(M, what, k):
    cf = _chol_or_raise(M, what, k)
    inv = sla.cho_solve(cf, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


def _as_stack(seq, N, shape, name):
    arr = np.asarray(seq, dtype=float)
    if arr.shape != (N,) + shape:
        raise DimensionMismatch(f"{name} must have shape {(N,) + shape}, got {arr.shape}")
    return arr


@dataclass
class LinearGaussianModel:
    """State-space model with known initial state.

    Parameters
    ----------
    x0 : array (n,)
    G : array (N, n, n) or (N-1, n, n)
        Transition matrices.  With N entries the first must be the identity;
        with N-1 entries they are ``G_2 .. G_N`` and ``G_1 = I`` is prepended.
    Q : array (N, n, n)
        Process covariances, symmetric positive definite.
    H, R, z : lists of length N
        Per-step measurement matrix (m_k, n), covariance (m_k, m_k) and data
        (m_k,).  ``m_k = 0`` (or ``None``) means no measurement at that step.
    """

    x0: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    H: list
    R: list
    z: list
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.ndim == 1:
            self.Q = self.Q[:, None, None]
        if self.Q.ndim != 3 or self.Q.shape[1] != self.Q.shape[2] or self.Q.shape[0] < 1:
            raise DimensionMismatch(f"Q must be a stack of square matrices, got shape {self.Q.shape}")
        N, n = self.Q.shape[0], self.Q.shape[1]
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape != (n,):
            raise DimensionMismatch(f"x0 must have {n} entries, got {self.x0.shape}")

        G = np.asarray(self.G, dtype=float)
        if G.size == 0:
            G = np.zeros((0, n, n))
        elif G.ndim == 1:
            G = G[:, None, None]
        if G.shape == (N - 1, n, n):
            G = np.concatenate([np.eye(n)[None], G])
        if G.shape != (N, n, n):
            raise DimensionMismatch(f"G must have shape {(N, n, n)} or {(N - 1, n, n)}, got {G.shape}")
        if not np.array_equal(G[0], np.eye(n)):
            raise DimensionMismatch("G_1 must be the identity (x_1 = x_0 + w_1)")
        self.G = G

        if not (len(self.H) == len(self.R) == len(self.z) == N):
            raise DimensionMismatch(f"H, R and z need {N} entries each")
        H, R, z = [], [], []
        for k in range(N):
            Hk = np.zeros((0, n)) if self.H[k] is None else np.asarray(self.H[k], dtype=float)
            if Hk.size == 0:
                Hk = np.zeros((0, n))
            Hk = Hk.reshape(-1, n)
            m = Hk.shape[0]
            Rk = np.zeros((0, 0)) if m == 0 else np.asarray(self.R[k], dtype=float).reshape(m, m)
            zk = np.zeros(0) if m == 0 else np.asarray(self.z[k], dtype=float).reshape(m)
            H.append(Hk)
            R.append(Rk)
            z.append(zk)
        self.H, self.R, self.z = H, R, z

        for k in range(N):
            if np.abs(self.Q[k] - self.Q[k].T).max() > spectral.SYM_TOL * np.abs(self.Q[k]).max():
                raise CovarianceNotPD("Q (not symmetric)", k + 1)
            _chol_or_raise(self.Q[k], "Q", k + 1)
            if self.R[k].size:
                if np.abs(self.R[k] - self.R[k].T).max() > spectral.SYM_TOL * np.abs(self.R[k]).max():
                    raise CovarianceNotPD("R (not symmetric)", k + 1)
                _chol_or_raise(self.R[k], "R", k + 1)

    @property
    def N(self):
        return self.Q.shape[0]

    @property
    def n(self):
        return self.Q.shape[1]

    def m(self, k):
        """Measurement dimension at 1-based step ``k``."""
        return self.H[k - 1].shape[0]

    @cached_property
    def Qinv(self):
        return np.array([_spd_inverse(q, "Q", k + 1) for k, q in enumerate(self.Q)])

    @cached_property
    def _meas(self):
        N, n = self.N, self.n
        u = np.zeros((N, n, n))
        h = np.zeros((N, n))
        for k in range(N):
            if self.H[k].shape[0] == 0:
                continue
            cf = sla.cho_factor(self.R[k], lower=True)
            RiH = sla.cho_solve(cf, self.H[k])
            uk = self.H[k].T @ RiH
            u[k] = 0.5 * (uk + uk.T)
            h[k] = RiH.T @ self.z[k]
        return u, h

    def measurement_info(self):
        """``u_k = H_k^T R_k^{-1} H_k`` for every step, shape (N, n, n)."""
        return self._meas[0].copy()

    def measurement_rhs(self):
        """``H_k^T R_k^{-1} z_k`` for every step, shape (N, n)."""
        return self._meas[1].copy()


def assemble_system(model):
    """Normal equations of the MAP problem as a block tridiagonal system.

    ``b_k = Q_k^{-1} + G_{k+1}^T Q_{k+1}^{-1} G_{k+1} + H_k^T R_k^{-1} H_k`` (no
    G term at k = N), ``c_k = -Q_k^{-1} G_k`` and ``r_k = H_k^T R_k^{-1} z_k``
    plus ``Q_1^{-1} x_0`` at k = 1.
    """
    Qi, G = model.Qinv, model.G
    u, h = model._meas
    diag = Qi + u
    diag[:-1] += np.einsum("kji,kjl,klm->kim", G[1:], Qi[1:], G[1:])
    diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
    sub = -np.einsum("kij,kjl->kil", Qi[1:], G[1:])
    rhs = h.copy()
    rhs[0] += Qi[0] @ model.x0
    return BlockTriSystem(diag, sub, rhs[:, :, None])


def _states(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.shape != (model.N, model.n):
        raise DimensionMismatch(f"state sequence must have shape {(model.N, model.n)}, got {x.shape}")
    return x


def _process_residuals(model, x):
    prev = np.concatenate([model.x0[None], x[:-1]])
    return x - np.einsum("kij,kj->ki", model.G, prev)


def objective(model, x):
    """Negative log posterior (up to a constant) of the state sequence ``x``."""
    x = _states(model, x)
    w = _process_residuals(model, x)
    f = 0.5 * np.einsum("ki,kij,kj->", w, model.Qinv, w)
    for k in range(model.N):
        if model.H[k].shape[0]:
            v = model.z[k] - model.H[k] @ x[k]
            f += 0.5 * v @ np.linalg.solve(model.R[k], v)
    return float(f)


def objective_gradient(model, x):
    """Gradient of :func:`objective`, shape (N, n).

    Evaluated term by term from the residuals, not through the assembled
    system, so it can check the system independently.
    """
    x = _states(model, x)
    w = _process_residuals(model, x)
    Qw = np.einsum("kij,kj->ki", model.Qinv, w)
    grad = Qw.copy()
    grad[:-1] -= np.einsum("kji,kj->ki", model.G[1:], Qw[1:])
    for k in range(model.N):
        if model.H[k].shape[0]:
            v = model.z[k] - model.H[k] @ x[k]
            grad[k] -= model.H[k].T @ np.linalg.solve(model.R[k], v)
    return grad


@dataclass
class FilterState:
    """Quantities of one forward Kalman step (1-based ``k``)."""

    k: int
    P_pred: np.ndarray
    x_pred: np.ndarray
    y_pred: np.ndarray
    P_filt: np.ndarray
    x_filt: np.ndarray
    y_filt: np.ndarray
    info_pred: np.ndarray
    info_filt: np.ndarray
    C_gain: np.ndarray = None


def information_filter(model):
    """Forward Kalman filter, covariance prediction with information update.

    ``P_{k|k-1} = G_k P_{k-1|k-1} G_k^T + Q_k`` (with ``P_{0|0} = 0``), then
    ``P_{k|k}^{-1} = P_{k|k-1}^{-1} + H_k^T R_k^{-1} H_k`` and
    ``y_{k|k} = y_{k|k-1} + H_k^T R_k^{-1} z_k``.
    """
    n = model.n
    u, h = model._meas
    states = []
    P = np.zeros((n, n))
    x = model.x0
    for k in range(model.N):
        G = model.G[k]
        P_pred = G @ P @ G.T + model.Q[k]
        P_pred = 0.5 * (P_pred + P_pred.T)
        x_pred = G @ x
        info_pred = _spd_inverse(P_pred, "P_{k|k-1}", k + 1)
        y_pred = info_pred @ x_pred
        info_filt = info_pred + u[k]
        y_filt = y_pred + h[k]
        cf = _chol_or_raise(info_filt, "P_{k|k}^{-1}", k + 1)
        P = sla.cho_solve(cf, np.eye(n))
        P = 0.5 * (P + P.T)
        x = sla.cho_solve(cf, y_filt)
        states.append(FilterState(k + 1, P_pred, x_pred, y_pred, P, x, y_filt, info_pred, info_filt))
    return states


def rts_smoother(model):
    """Rauch-Tung-Striebel fixed-interval smoother.

    Returns ``(x_smooth, states)``; ``x_smooth[k-1] = x_{k|N}`` and each
    state carries the gain ``C_k = P_{k|k} G_{k+1}^T P_{k+1|k}^{-1}``.
    """
    states = information_filter(model)
    N = model.N
    xs = np.empty((N, model.n))
    xs[-1] = states[-1].x_filt
    for k in range(N - 2, -1, -1):
        st, nxt = states[k], states[k + 1]
        G = model.G[k + 1]
        st.C_gain = st.P_filt @ G.T @ nxt.info_pred
        xs[k] = st.x_filt + st.C_gain @ (xs[k + 1] - G @ st.x_filt)
    return xs, states


def _rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class IdentityReport:
    """Largest relative violation of each checked identity, and where it happened."""

    errors: dict = field(default_factory=dict)
    worst_step: dict = field(default_factory=dict)
    tol: float = IDENTITY_TOL

    def record(self, which, k, err):
        if err > self.errors.get(which, -1.0):
            self.errors[which] = err
            self.worst_step[which] = k

    @property
    def passed(self):
        return all(err <= self.tol for err in self.errors.values())

    def raise_on_failure(self):
        for which, err in self.errors.items():
            if err > self.tol:
                raise IdentityViolation(self.worst_step[which], which, err)
        return self


def rts_block_identities(model, tol=IDENTITY_TOL, raise_on_failure=True):
    """Compare the forward elimination trace with the Kalman filter.

    Checks ``d_k^f = P_{k|k}^{-1} + G_{k+1}^T Q_{k+1}^{-1} G_{k+1}``,
    ``s_k^f = y_{k|k}`` and ``e_N = x_{N|N}``.
    """
    sol = blocktri.fbt_solve(assemble_system(model))
    states = information_filter(model)
    Qi, G = model.Qinv, model.G
    rep = IdentityReport(tol=tol)
    for k, st in enumerate(states):
        expect = st.info_filt.copy()
        if k + 1 < model.N:
            expect += G[k + 1].T @ Qi[k + 1] @ G[k + 1]
        rep.record("d_forward", k + 1, _rel_err(sol.trace.d_forward[k], expect))
        rep.record("s_forward", k + 1, _rel_err(sol.trace.s_forward[k, :, 0], st.y_filt))
    rep.record("e_last", model.N, _rel_err(sol.e[-1, :, 0], states[-1].x_filt))
    if raise_on_failure:
        rep.raise_on_failure()
    return rep


@dataclass
class MayneState:
    """Backward-pass quantities at 1-based step ``k``.

    ``P`` and ``phi`` are the backward information matrix and vector,
    ``Qchol`` the Cholesky factor ``C_k`` of ``Q_k`` and
    ``Delta = (I + C_k^T P_k C_k)^{-1}``.
    """

    k: int
    P: np.ndarray
    phi: np.ndarray
    Qchol: np.ndarray
    Delta: np.ndarray


def mayne_backward(model):
    """Mayne's backward information recursion.

    ``P_N = u_N`` and ``phi_N = -H_N^T R_N^{-1} z_N``; for ``k = N .. 2``::

        Delta_k = (I + C_k^T P_k C_k)^{-1}
        M_k     = I - P_k C_k Delta_k C_k^T
        P_{k-1} = G_k^T M_k P_k G_k + u_{k-1}
        phi_{k-1} = -H_{k-1}^T R_{k-1}^{-1} z_{k-1} + G_k^T M_k phi_k
    """
    N, n = model.N, model.n
    u, h = model._meas
    eye = np.eye(n)
    P = u[-1].copy()
    phi = -h[-1]
    out = [None] * N
    for k in range(N - 1, -1, -1):
        C = _chol_or_raise(model.Q[k], "Q", k + 1)[0]
        C = np.tril(C)
        inner = eye + C.T @ P @ C
        try:
            cf = sla.cho_factor(inner, lower=True)
        except np.linalg.LinAlgError:
            raise CombinedNotPD(k + 1) from None
        Delta = sla.cho_solve(cf, eye)
        Delta = 0.5 * (Delta + Delta.T)
        out[k] = MayneState(k + 1, P, phi, C, Delta)
        if k == 0:
            break
        M = eye - P @ C @ Delta @ C.T
        G = model.G[k]
        P_prev = G.T @ M @ P @ G + u[k - 1]
        P = 0.5 * (P_prev + P_prev.T)
        phi = -h[k - 1] + G.T @ M @ phi
    return out


def mayne_a_smoother(model):
    """Backward information pass followed by a forward pass.

    ``x_k = C_k Delta_k C_k^T (Q_k^{-1} G_k x_{k-1} - phi_k)`` starting from
    ``x_0``.  Returns ``(x_smooth, states)``.
    """
    states = mayne_backward(model)
    xs = np.empty((model.N, model.n))
    prev = model.x0
    for k, st in enumerate(states):
        C = st.Qchol
        xs[k] = C @ st.Delta @ C.T @ (model.Qinv[k] @ model.G[k] @ prev - st.phi)
        prev = xs[k]
    return xs, states


def mayne_block_identities(model, tol=IDENTITY_TOL, raise_on_failure=True):
    """Compare the backward elimination trace with Mayne's recursion.

    Checks ``d_k^b = P_k + Q_k^{-1}`` and ``s_k^b = -phi_k`` (plus the
    ``Q_1^{-1} x_0`` term that the right-hand side carries at k = 1).
    """
    sol = blocktri.bbt_solve(assemble_system(model))
    states = mayne_backward(model)
    rep = IdentityReport(tol=tol)
    for k, st in enumerate(states):
        rep.record("d_backward", k + 1, _rel_err(sol.trace.d_backward[k], st.P + model.Qinv[k]))
        expect = -st.phi
        if k == 0:
            expect = expect + model.Qinv[0] @ model.x0
        rep.record("s_backward", k + 1, _rel_err(sol.trace.s_backward[k, :, 0], expect))
    if raise_on_failure:
        rep.raise_on_failure()
    return rep


def pq_identity_residual(P, Q):
    """Relative gap between ``P - P(Q^{-1}+P)^{-1}P`` and ``Q^{-1} - Q^{-1}(Q^{-1}+P)^{-1}Q^{-1}``."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    for name, M in (("P", P), ("Q", Q)):
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise SingularInput(f"{name} must be square, got shape {M.shape}")
        if np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
            raise SingularInput(f"{name} is singular to working precision")
    Qi = np.linalg.inv(Q)
    S = Qi + P
    if np.linalg.cond(S) > 1.0 / np.finfo(float).eps:
        raise SingularInput("Q^{-1} + P is singular to working precision")
    lhs = P - P @ np.linalg.solve(S, P)
    rhs = Qi - Qi @ np.linalg.solve(S, Qi)
    return _rel_err(lhs, rhs)


def pq_identity_check(P, Q, tol=1e-9):
    """True when the two sides of the P/Q identity agree to ``tol`` relative."""
    return pq_identity_residual(P, Q) <= tol


def mayne_fraser_smoother(model):
    """Two-filter smoother: forward filter and backward information filter.

    ``x_k = (P_k + P_{k|k-1}^{-1})^{-1} (y_{k|k-1} - phi_k)``.  Returns
    ``(x_smooth, combined)`` where ``combined[k-1]`` is the matrix inverted
    at step k.
    """
    fwd = information_filter(model)
    bwd = mayne_backward(model)
    N, n = model.N, model.n
    xs = np.empty((N, n))
    combined = np.empty((N, n, n))
    for k in range(N):
        M = bwd[k].P + fwd[k].info_pred
        M = 0.5 * (M + M.T)
        combined[k] = M
        try:
            cf = sla.cho_factor(M, lower=True)
        except np.linalg.LinAlgError:
            raise CombinedNotPD(k + 1) from None
        xs[k] = sla.cho_solve(cf, fwd[k].y_pred - bwd[k].phi)
    return xs, combined


def woodbury_system(model):
    """The block tridiagonal system ``(Q + G Lambda^{-1} G^T) y = G Lambda^{-1} rho``.

    ``Lambda_k = H_k^T R_k^{-1} H_k`` must be invertible at every step.
    Diagonal blocks are ``Q_k + Lambda_k^{-1} + G_k Lambda_{k-1}^{-1} G_k^T``
    (no last term at k = 1) and sub-diagonal blocks ``-G_k Lambda_{k-1}^{-1}``.
    Also returns ``Lambda^{-1}`` and ``rho`` for the recovery step.
    """
    N, n = model.N, model.n
    u = model.measurement_info()
    Li = np.empty((N, n, n))
    for k in range(N):
        if model.m(k + 1) < n:
            raise MeasurementInfoSingular(k + 1)
        w = spectral.eigvals(u[k])
        # rounding can let Cholesky through on a rank-deficient H_k
        if w[0] <= n * np.finfo(float).eps * w[-1]:
            raise MeasurementInfoSingular(k + 1)
        try:
            cf = sla.cho_factor(u[k], lower=True)
        except np.linalg.LinAlgError:
            raise MeasurementInfoSingular(k + 1) from None
        inv = sla.cho_solve(cf, np.eye(n))
        Li[k] = 0.5 * (inv + inv.T)
    sysA = assemble_system(model)
    rho = sysA.rhs[:, :, 0]
    G = model.G
    diag = model.Q + Li
    diag[1:] += np.einsum("kij,kjl,kml->kim", G[1:], Li[:-1], G[1:])
    diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
    sub = -np.einsum("kij,kjl->kil", G[1:], Li[:-1])
    Lrho = np.einsum("kij,kj->ki", Li, rho)
    rhs = Lrho.copy()
    rhs[1:] -= np.einsum("kij,kj->ki", G[1:], Lrho[:-1])
    return BlockTriSystem(diag, sub, rhs[:, :, None]), Li, rho


def woodbury_solve(model):
    """Smoothed states through the Woodbury route.

    Solves the intermediate system with forward elimination, then recovers
    ``x_k = Lambda_k^{-1} (rho_k - y_k + G_{k+1}^T y_{k+1})``.
    Returns ``(x_smooth, intermediate_system)``.
    """
    inter, Li, rho = woodbury_system(model)
    y = blocktri.fbt_solve(inter).e[:, :, 0]
    Gty = y.copy()
    Gty[:-1] -= np.einsum("kji,kj->ki", model.G[1:], y[1:])
    xs = np.einsum("kij,kj->ki", Li, rho - Gty)
    return xs, inter


def backward_pivot_alpha(model):
    """Largest operator norm among ``Q_k``, ``Q_k^{-1}``, ``H_k^T R_k^{-1} H_k`` and ``G_k``."""
    norms = [
        np.linalg.norm(model.Q, ord=2, axis=(1, 2)).max(),
        np.linalg.norm(model.Qinv, ord=2, axis=(1, 2)).max(),
        np.linalg.norm(model.measurement_info(), ord=2, axis=(1, 2)).max(),
        np.linalg.norm(model.G, ord=2, axis=(1, 2)).max(),
    ]
    return float(max(norms))


@dataclass
class BackwardPivotReport:
    """Conditioning of the backward pivots of a Kalman-structured system."""

    alpha: float
    kappa_bound: float
    kappa: np.ndarray
    psd_margin: np.ndarray

    @property
    def psd_ok(self):
        return bool(np.all(self.psd_margin >= -1e-10))

    @property
    def kappa_ok(self):
        return bool(np.all(self.kappa <= self.kappa_bound))


def backward_pivot_report(model, trace=None):
    """``lambda_min(d_k^b - Q_k^{-1}) / |d_k^b|`` and ``kappa(d_k^b)`` for every k.

    The first should be non-negative and the second at most
    ``alpha^2 + alpha^6``; both follow from the backward pivots dominating
    ``Q_k^{-1}``.
    """
    if trace is None:
        trace = blocktri.bbt_solve(assemble_system(model)).trace
    d = trace.d_backward
    alpha = backward_pivot_alpha(model)
    wd = spectral.eigvals(d)
    diff = d - model.Qinv
    wdiff = spectral.eigvals(0.5 * (diff + np.swapaxes(diff, 1, 2)))
    margin = wdiff[:, 0] / np.abs(wd).max(axis=1)
    return BackwardPivotReport(alpha, alpha ** 2 + alpha ** 6, wd[:, -1] / wd[:, 0], margin)
