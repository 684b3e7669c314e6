"""Symmetric eigensolver and spectral bounds for block tridiagonal systems.

The systems studied here have the form ``E = g^T q^{-1} g (+ diag(u))``
where ``q`` is block diagonal and ``g`` is unit lower block bidiagonal
with sub-diagonal blocks ``g_2 .. g_N``.  The bounds below relate the
extreme eigenvalues of ``E`` to the singular values of the individual
blocks, which is what makes the last block the usual culprit when the
system goes ill conditioned.
"""

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptySequence, NotSymmetric, SizeCapExceeded, VacuousBound

DENSE_CAP = 4096
# above this order the Jacobi sweeps get slow in numpy; LAPACK takes over
JACOBI_MAX_ORDER = 64
SYM_TOL = 1e-12

_EPS = np.finfo(float).eps


@lru_cache(maxsize=None)
def _round_robin(n):
    """Disjoint (p, q) index pairs for each round of a parallel Jacobi sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(M, tol=None, max_sweeps=60):
    """Eigen-decomposition of (a stack of) small symmetric matrices.

    Cyclic Jacobi with round-robin ordering: every round applies up to
    ``n // 2`` disjoint plane rotations at once, and the whole batch is
    rotated together, so one sweep costs ``n - 1`` vectorized updates.

    Parameters
    ----------
    M : ndarray, shape (..., n, n)
        Symmetric input; only the symmetric part is used.
    tol : float, optional
        Stop when the off-diagonal Frobenius norm drops below
        ``tol * ||M||_F``. Defaults to machine epsilon.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    V : ndarray, shape (..., n, n)
        Orthonormal eigenvectors, column ``i`` paired with ``w[..., i]``.
    """
    M = np.asarray(M, dtype=float)
    batch_shape = M.shape[:-2]
    n = M.shape[-1]
    A = 0.5 * (M + np.swapaxes(M, -1, -2))
    A = A.reshape((-1, n, n)).copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    tol = _EPS if tol is None else tol
    scale = np.sqrt(np.sum(A * A, axis=(1, 2)))
    off_mask = ~np.eye(n, dtype=bool)
    rounds = _round_robin(n)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[:, off_mask] ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p, q in rounds:
            app = A[:, p, p]
            aqq = A[:, q, q]
            apq = A[:, p, q]
            active = apq != 0.0
            safe = np.where(active, apq, 1.0)
            # tiny apq overflows tau; t -> 0 is the right limit
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                tau = (aqq - app) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            cr, sr = c[:, :, None], s[:, :, None]
            Ap, Aq = A[:, p, :], A[:, q, :]
            A[:, p, :] = cr * Ap - sr * Aq
            A[:, q, :] = sr * Ap + cr * Aq
            cc, sc = c[:, None, :], s[:, None, :]
            Ap, Aq = A[:, :, p], A[:, :, q]
            A[:, :, p] = cc * Ap - sc * Aq
            A[:, :, q] = sc * Ap + cc * Aq
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            Vp, Vq = V[:, :, p], V[:, :, q]
            V[:, :, p] = cc * Vp - sc * Vq
            V[:, :, q] = sc * Vp + cc * Vq

    w = np.diagonal(A, axis1=1, axis2=2)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(batch_shape + (n,)), V.reshape(batch_shape + (n, n))


def check_symmetric(M, tol=SYM_TOL):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise NotSymmetric(f"expected square matrices, got shape {M.shape}")
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0)
    size = np.max(np.abs(M), initial=0.0)
    if asym > tol * size:
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds {tol:g} * max|M| = {tol * size:.3e}")
    return M


def sym_eig(M, cap=DENSE_CAP):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Accepts a single matrix or a stack.  Orders up to ``JACOBI_MAX_ORDER``
    go through :func:`jacobi_eigh`; larger ones use LAPACK ``syevd``.
    """
    M = check_symmetric(M)
    n = M.shape[-1]
    if n > cap:
        raise SizeCapExceeded(n, cap)
    if n <= JACOBI_MAX_ORDER:
        return jacobi_eigh(M)
    return np.linalg.eigh(0.5 * (M + np.swapaxes(M, -1, -2)))


def eigvals(M, cap=DENSE_CAP):
    return sym_eig(M, cap=cap)[0]


def block_spectra(blocks):
    """(lambda_min, lambda_max, kappa) for every block of a stack."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape[0] == 0:
        return np.empty((0, 3))
    w = eigvals(blocks)
    lo, hi = w[..., 0], w[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)
    return np.stack([lo, hi, kappa], axis=-1)


def condition_number(M):
    w = eigvals(M)
    if w[0] <= 0:
        return np.inf
    return w[-1] / w[0]


def singular_extremes(g):
    """(sigma_min, sigma_max) of a square block via the eigenvalues of g^T g."""
    w = eigvals(g.T @ g)
    return np.sqrt(max(w[0], 0.0)), np.sqrt(max(w[-1], 0.0))


def _inv_spd(q):
    L = np.linalg.cholesky(q)
    Linv = np.linalg.inv(L)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


@dataclass
class ProcessOnlySystem:
    """``E = g^T q^{-1} g + diag(u)`` described block by block.

    Attributes
    ----------
    q_blocks : ndarray (N, n, n)
        SPD weights.
    g_blocks : ndarray (N-1, n, n)
        Sub-diagonal blocks ``g_2 .. g_N`` of the unit bidiagonal ``g``.
    u_blocks : ndarray (N, n, n), optional
        PSD additions on the diagonal (measurement information).
    """

    q_blocks: np.ndarray
    g_blocks: np.ndarray
    u_blocks: np.ndarray = None

    def __post_init__(self):
        self.q_blocks = np.asarray(self.q_blocks, dtype=float)
        if self.q_blocks.ndim == 1:
            self.q_blocks = self.q_blocks[:, None, None]
        N, n = self.q_blocks.shape[0], self.q_blocks.shape[-1]
        g = np.asarray(self.g_blocks, dtype=float)
        if g.size == 0:
            g = np.zeros((0, n, n))
        elif g.ndim == 1:
            g = g[:, None, None]
        self.g_blocks = g
        if self.g_blocks.shape != (N - 1, n, n):
            raise EmptySequence(f"need {N - 1} g blocks of shape {(n, n)}, got {self.g_blocks.shape}")
        if self.u_blocks is not None:
            u = np.asarray(self.u_blocks, dtype=float)
            self.u_blocks = u[:, None, None] if u.ndim == 1 else u

    @property
    def N(self):
        return self.q_blocks.shape[0]

    @property
    def n(self):
        return self.q_blocks.shape[-1]

    @classmethod
    def from_model(cls, model):
        """Process part of a linear-Gaussian smoothing problem (``g_k = -G_k``)."""
        return cls(model.Q.copy(), -model.G[1:], model.measurement_info())

    def g_matrix(self):
        N, n = self.N, self.n
        g = np.eye(N * n)
        for k in range(1, N):
            g[k * n:(k + 1) * n, (k - 1) * n:k * n] = self.g_blocks[k - 1]
        return g

    def gram(self):
        g = self.g_matrix()
        return g.T @ g

    def system_matrix(self):
        N, n = self.N, self.n
        qinv = np.zeros((N * n, N * n))
        for k in range(N):
            qinv[k * n:(k + 1) * n, k * n:(k + 1) * n] = _inv_spd(self.q_blocks[k])
        g = self.g_matrix()
        E = g.T @ qinv @ g
        if self.u_blocks is not None:
            for k in range(N):
                E[k * n:(k + 1) * n, k * n:(k + 1) * n] += self.u_blocks[k]
        return 0.5 * (E + E.T)

    def to_block_system(self, rhs=None):
        """Blockwise form: ``b_k = q_k^{-1} + u_k + g_{k+1}^T q_{k+1}^{-1} g_{k+1}``, ``c_k = q_k^{-1} g_k``."""
        from .blocktri import BlockTriSystem

        N, n = self.N, self.n
        qinv = np.array([_inv_spd(q) for q in self.q_blocks])
        diag = qinv.copy()
        if self.u_blocks is not None:
            diag += self.u_blocks
        sub = np.einsum("kij,kjl->kil", qinv[1:], self.g_blocks)
        diag[:-1] += np.einsum("kji,kjl->kil", self.g_blocks, sub)
        diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
        if rhs is None:
            rhs = np.ones((N, n, 1))
        return BlockTriSystem(diag, sub, rhs)


@dataclass
class SpectralReport:
    lambda_min: float
    lambda_max: float
    kappa: float
    bound_lower: float
    bound_upper: float
    sv_bound_lower: float
    sv_bound_upper: float
    weakest_link_bound: float
    weakest_link_flag: bool
    argmax_block: int

    def to_dict(self):
        return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in asdict(self).items()}

    def table(self):
        rows = [
            ("lambda_min", self.lambda_min),
            ("lambda_max", self.lambda_max),
            ("kappa", self.kappa),
            ("bound_lower", self.bound_lower),
            ("bound_upper", self.bound_upper),
            ("sv_bound_lower", self.sv_bound_lower),
            ("sv_bound_upper", self.sv_bound_upper),
            ("weakest_link_bound", self.weakest_link_bound),
            ("weakest_link_flag", self.weakest_link_flag),
            ("argmax_block", self.argmax_block),
        ]
        return "\n".join(f"{name:<20s} {value!r:>24}" for name, value in rows)


def eigenvalue_sandwich(pos):
    """Lower and upper bounds on the spectrum of ``g^T q^{-1} g``.

    ``sigma_min(g)^2 / lambda_max(q) <= lambda(E) <= sigma_max(g)^2 / lambda_min(q)``.
    The singular values of ``g`` come from the dense eigenvalues of ``g^T g``.
    When ``u`` blocks are present the upper bound is widened by
    ``max_k lambda_max(u_k)``; the lower bound needs no change since ``u`` is PSD.
    """
    wq = eigvals(pos.q_blocks)
    qmin, qmax = wq[:, 0].min(), wq[:, -1].max()
    wg = eigvals(pos.gram())
    smin2, smax2 = max(wg[0], 0.0), wg[-1]
    upper = smax2 / qmin
    if pos.u_blocks is not None:
        upper += max(eigvals(pos.u_blocks)[:, -1].max(), 0.0)
    return smin2 / qmax, upper


def _sigma_table(g_blocks):
    g_blocks = np.asarray(g_blocks, dtype=float)
    if g_blocks.ndim == 1:
        g_blocks = g_blocks[:, None, None]
    if g_blocks.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    w = eigvals(np.einsum("kji,kjl->kil", g_blocks, g_blocks))
    w = np.clip(w, 0.0, None)
    return np.sqrt(w[:, 0]), np.sqrt(w[:, -1])


def gram_eigenvalue_bounds(g_blocks, N=None):
    """Bounds on the eigenvalues of ``g^T g`` from the blocks' singular values.

    For ``k = 1..N`` (no ``g_1``; ``g_{N+1} = 0``)::

        lower = max(0, min_k 1 + smin(g_{k+1})^2 - smax(g_k) - smax(g_{k+1}))
        upper = max_k 1 + smax(g_{k+1})^2 + smax(g_k) + smax(g_{k+1})
    """
    smin, smax = _sigma_table(g_blocks)
    if N is None:
        N = smin.shape[0] + 1
    if N < 1:
        raise EmptySequence("need at least one block")
    # index j <-> block j+1; pad: g_1 absent, g_{N+1} = 0
    smax_k = np.concatenate([[0.0], smax])
    smin_next = np.concatenate([smin, [0.0]])
    smax_next = np.concatenate([smax, [0.0]])
    lows = 1.0 + smin_next ** 2 - smax_k - smax_next
    highs = 1.0 + smax_next ** 2 + smax_k + smax_next
    return max(0.0, lows.min()), highs.max()


def local_gram_bound(g_blocks, k):
    """``1 + smin(g_{k+1})^2 - smax(g_k) - smax(g_{k+1})`` for a 1-based block ``k``."""
    smin, smax = _sigma_table(g_blocks)
    N = smin.shape[0] + 1
    s_k = smax[k - 2] if k >= 2 else 0.0
    if k <= N - 1:
        return 1.0 + smin[k - 1] ** 2 - s_k - smax[k - 1]
    return 1.0 - s_k


@dataclass
class WeakestLink:
    bound: float
    flagged: bool
    argmax_block: int = None
    lambda_min: float = None
    eigenvector: np.ndarray = None


def _argmax_block(v, n):
    norms = np.linalg.norm(v.reshape(-1, n), axis=1)
    # lowest index wins ties
    return int(np.flatnonzero(norms == norms.max())[0]) + 1


def weakest_link(g_blocks, dense=True):
    """Last-block lower bound ``1 - sigma_max(g_N)`` on ``lambda_min(g^T g)``.

    The flag is raised when ``sigma_max(g_N) >= 1``, i.e. the bound is vacuous
    and the final block is the suspected weak link.  With ``dense`` set and the
    system small enough, the minimal eigenvector of ``g^T g`` is also computed
    and the block holding its largest component is reported (1-based).
    """
    g_blocks = np.asarray(g_blocks, dtype=float)
    if g_blocks.ndim == 1:
        g_blocks = g_blocks[:, None, None]
    _, smax = _sigma_table(g_blocks)
    s_last = smax[-1] if smax.size else 0.0
    out = WeakestLink(bound=1.0 - s_last, flagged=bool(s_last >= 1.0))
    N = g_blocks.shape[0] + 1
    n = g_blocks.shape[-1] if g_blocks.shape[0] else 1
    if dense and N * n <= DENSE_CAP:
        pos = ProcessOnlySystem(np.broadcast_to(np.eye(n), (N, n, n)), g_blocks.reshape(N - 1, n, n))
        w, V = sym_eig(pos.gram())
        v = V[:, 0]
        out.lambda_min = w[0]
        out.eigenvector = v
        out.argmax_block = _argmax_block(v, n)
    return out


def norm_sandwich(pos):
    """Cheap spectral bounds that never assemble the full matrix.

    With ``s = max_k sigma_max(g_k)``, ``1 - s <= sigma(g) <= 1 + s``, so
    ``lambda(E)`` lies in ``[max(0, 1 - s)^2 / lambda_max(q),
    (1 + s)^2 / lambda_min(q) + max lambda_max(u)]``.  Meant for systems
    above the dense cap.
    """
    wq = eigvals(pos.q_blocks)
    _, smax = _sigma_table(pos.g_blocks)
    s = smax.max() if smax.size else 0.0
    upper = (1.0 + s) ** 2 / wq[:, 0].min()
    if pos.u_blocks is not None:
        upper += max(eigvals(pos.u_blocks)[:, -1].max(), 0.0)
    return max(0.0, 1.0 - s) ** 2 / wq[:, -1].max(), upper


def condition_bound(pos):
    """``lambda_max(q) sigma_max(g)^2 / (lambda_min(q) sigma_min(g)^2)``."""
    wq = eigvals(pos.q_blocks)
    qmin, qmax = wq[:, 0].min(), wq[:, -1].max()
    wg = eigvals(pos.gram())
    if wg[0] <= 0.0:
        raise VacuousBound("sigma_min(g) is zero; the condition bound is infinite")
    return float(qmax * wg[-1] / (qmin * wg[0]))


def spectral_report(pos):
    """Dense spectrum of the assembled system next to every bound above."""
    w, V = sym_eig(pos.system_matrix())
    lo, hi = eigenvalue_sandwich(pos)
    sv_lo, sv_hi = gram_eigenvalue_bounds(pos.g_blocks, pos.N)
    wl = weakest_link(pos.g_blocks, dense=False) if pos.N > 1 else WeakestLink(1.0, False)
    return SpectralReport(
        lambda_min=float(w[0]),
        lambda_max=float(w[-1]),
        kappa=float(w[-1] / w[0]) if w[0] > 0 else float("inf"),
        bound_lower=float(lo),
        bound_upper=float(hi),
        sv_bound_lower=float(sv_lo),
        sv_bound_upper=float(sv_hi),
        weakest_link_bound=float(wl.bound),
        weakest_link_flag=bool(wl.flagged),
        argmax_block=_argmax_block(V[:, 0], pos.n),
    )
