"""Independent reference computations for the tests.

Nothing here calls the package's solvers or assembly code: the stacked
least-squares matrices are built straight from the model definition and
solved with dense LAPACK.
"""

import numpy as np
from scipy import linalg as sla


def stacked(model):
    """Big matrices of the least-squares form.

    Returns ``(Gbig, Qbig, Hbig, Rbig, zbig, zeta)`` where ``Gbig`` is unit
    lower block bidiagonal with ``-G_k`` below the diagonal and ``zeta``
    stacks ``x_0`` followed by zeros.
    """
    N, n = model.N, model.n
    Gbig = np.eye(N * n)
    for k in range(1, N):
        Gbig[k * n:(k + 1) * n, (k - 1) * n:k * n] = -model.G[k]
    Qbig = sla.block_diag(*model.Q)
    ms = [h.shape[0] for h in model.H]
    M = sum(ms)
    Hbig = np.zeros((M, N * n))
    Rbig = np.zeros((M, M))
    zbig = np.zeros(M)
    row = 0
    for k, m in enumerate(ms):
        if m:
            Hbig[row:row + m, k * n:(k + 1) * n] = model.H[k]
            Rbig[row:row + m, row:row + m] = model.R[k]
            zbig[row:row + m] = model.z[k]
        row += m
    zeta = np.zeros(N * n)
    zeta[:n] = model.x0
    return Gbig, Qbig, Hbig, Rbig, zbig, zeta


def normal_equations(model):
    """Dense ``A = H^T R^-1 H + G^T Q^-1 G`` and ``rhs = H^T R^-1 z + G^T Q^-1 zeta``."""
    Gbig, Qbig, Hbig, Rbig, zbig, zeta = stacked(model)
    Qi = np.linalg.inv(Qbig)
    A = Gbig.T @ Qi @ Gbig
    rhs = Gbig.T @ Qi @ zeta
    if Hbig.shape[0]:
        Ri = np.linalg.inv(Rbig)
        A += Hbig.T @ Ri @ Hbig
        rhs += Hbig.T @ Ri @ zbig
    return 0.5 * (A + A.T), rhs


def dense_smooth(model):
    A, rhs = normal_equations(model)
    return np.linalg.solve(A, rhs).reshape(model.N, model.n)


def dense_matrix(sys):
    """Materialize a block tridiagonal system by explicit index placement."""
    N, n = sys.diag.shape[0], sys.diag.shape[1]
    A = np.zeros((N * n, N * n))
    for k in range(N):
        for i in range(n):
            for j in range(n):
                A[k * n + i, k * n + j] = sys.diag[k, i, j]
                if k > 0:
                    A[k * n + i, (k - 1) * n + j] = sys.sub[k - 1, i, j]
                    A[(k - 1) * n + j, k * n + i] = sys.sub[k - 1, i, j]
    return A


def dense_solve(sys):
    A = dense_matrix(sys)
    A = 0.5 * (A + A.T)
    x = sla.solve(A, sys.rhs.reshape(sys.N * sys.n, -1), assume_a="pos")
    return x.reshape(sys.rhs.shape), np.linalg.eigvalsh(A)


def gram_bound_formula(smin, smax):
    """Brute-force evaluation of the singular-value bounds, one block at a time.

    ``smin[k]``, ``smax[k]`` are the extremes of ``g_{k+2}`` (0-based storage
    of ``g_2 .. g_N``).
    """
    N = len(smin) + 1
    lows, highs = [], []
    for k in range(1, N + 1):
        prev = smax[k - 2] if k >= 2 else 0.0
        nxt_min = smin[k - 1] if k <= N - 1 else 0.0
        nxt_max = smax[k - 1] if k <= N - 1 else 0.0
        lows.append(1 + nxt_min ** 2 - prev - nxt_max)
        highs.append(1 + nxt_max ** 2 + prev + nxt_max)
    return max(0.0, min(lows)), max(highs)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)
