"""Symmetric positive definite block tridiagonal systems and four ways to solve them.

A system is stored as three stacks (0-based in memory, 1-based in all
user-facing indices and messages)::

    diag[k]   = b_{k+1}                      (N, n, n)
    sub[k]    = c_{k+2}, coupling block k+2 to k+1 (N-1, n, n)
    rhs[k]    = r_{k+1}                      (N, n, ell)

The matrix has ``b_k`` on the diagonal, ``c_k`` below it and ``c_k^T``
above it.  Every solver eliminates with Cholesky factors of the pivot
blocks (no explicit inverses) and records its pivots in a
:class:`SolveTrace`.

* :func:`fbt_solve`   - forward elimination, backward substitution.
* :func:`bbt_solve`   - backward elimination, forward substitution.
* :func:`twofilter_solve` - both eliminations, then a per-block combination.
* :func:`hybrid_solve` - forward on the first half, backward on the second,
  one exchange at the midpoint, then both halves substitute outward.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import lapack

from . import spectral
from .errors import BlockSmoothError, DimensionMismatch, PivotNotPositiveDefinite, SizeCapExceeded

DENSE_CAP = 4096
SYM_TOL = 1e-12

ALGORITHMS = ("fbt", "bbt", "twofilter", "hybrid")


def _sym(d):
    return 0.5 * (d + d.T)


def _chol(d, k, stage):
    L, info = lapack.dpotrf(d, lower=1, clean=1)
    if info != 0:
        lam = spectral.eigvals(_sym(d))[0] if np.all(np.isfinite(d)) else float("nan")
        raise PivotNotPositiveDefinite(k, float(lam), stage)
    return L


def _solve(L, B):
    x, _ = lapack.dpotrs(L, B, lower=1)
    return x


@dataclass
class BlockTriSystem:
    """Block tridiagonal system ``A e = r`` with symmetric diagonal blocks.

    Scalar-block systems may be given as 1-D sequences, and a 2-D ``rhs``
    of shape (N, n) is read as a single right-hand-side column.
    """

    diag: np.ndarray
    sub: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim == 1:
            diag = diag[:, None, None]
        if diag.ndim != 3 or diag.shape[1] != diag.shape[2] or diag.shape[0] < 1:
            raise DimensionMismatch(f"diag must be a stack of square blocks, got shape {diag.shape}")
        N, n = diag.shape[0], diag.shape[1]

        sub = np.asarray(self.sub, dtype=float)
        if sub.size == 0:
            sub = np.zeros((0, n, n))
        elif sub.ndim == 1:
            sub = sub[:, None, None]
        if sub.shape != (N - 1, n, n):
            raise DimensionMismatch(f"sub must have shape {(N - 1, n, n)}, got {sub.shape}")

        rhs = np.asarray(self.rhs, dtype=float)
        if rhs.ndim == 1 and n == 1:
            rhs = rhs[:, None, None]
        elif rhs.ndim == 2:
            rhs = rhs[:, :, None]
        if rhs.ndim != 3 or rhs.shape[:2] != (N, n) or rhs.shape[2] < 1:
            raise DimensionMismatch(f"rhs must have shape (N={N}, n={n}, ell>=1), got {rhs.shape}")

        for name, arr in (("diag", diag), ("sub", sub), ("rhs", rhs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        asym = np.abs(diag - np.swapaxes(diag, 1, 2)).max(axis=(1, 2))
        scale = np.abs(diag).max(axis=(1, 2))
        bad = np.flatnonzero(asym > SYM_TOL * scale)
        if bad.size:
            k = bad[0]
            raise spectral.NotSymmetric(f"diagonal block {k + 1} is not symmetric (asymmetry {asym[k]:.3e})")

        self.diag, self.sub, self.rhs = diag, sub, rhs

    @property
    def N(self):
        return self.diag.shape[0]

    @property
    def n(self):
        return self.diag.shape[1]

    @property
    def ell(self):
        return self.rhs.shape[2]

    def matvec(self, e):
        """Blockwise ``A @ e`` for ``e`` of shape (N, n, ell')."""
        e = np.asarray(e, dtype=float)
        if e.ndim == 2:
            e = e[:, :, None]
        if e.shape[:2] != (self.N, self.n):
            raise DimensionMismatch(f"expected blocks of shape (N={self.N}, n={self.n}, ...), got {e.shape}")
        out = self.diag @ e
        if self.N > 1:
            out[1:] += self.sub @ e[:-1]
            out[:-1] += np.swapaxes(self.sub, 1, 2) @ e[1:]
        return out

    def with_rhs(self, rhs):
        return BlockTriSystem(self.diag, self.sub, rhs)


def assemble_dense(sys, cap=DENSE_CAP):
    """Materialize the (N n) x (N n) symmetric matrix of ``sys``."""
    N, n = sys.N, sys.n
    size = N * n
    if size > cap:
        raise SizeCapExceeded(size, cap)
    A = np.zeros((size, size))
    for k in range(N):
        A[k * n:(k + 1) * n, k * n:(k + 1) * n] = sys.diag[k]
    for k in range(1, N):
        c = sys.sub[k - 1]
        A[k * n:(k + 1) * n, (k - 1) * n:k * n] = c
        A[(k - 1) * n:k * n, k * n:(k + 1) * n] = c.T
    # diag blocks are symmetric only to SYM_TOL; make the whole matrix exact
    return 0.5 * (A + A.T)


def residual(sys, e):
    """Frobenius norm of ``A e - r`` computed block by block."""
    e = np.asarray(e, dtype=float)
    if e.ndim == 2:
        e = e[:, :, None]
    if e.shape != sys.rhs.shape:
        raise DimensionMismatch(f"solution shape {e.shape} does not match rhs shape {sys.rhs.shape}")
    return float(np.linalg.norm(sys.matvec(e) - sys.rhs))


@dataclass
class Midpoint:
    """Exchange data of the hybrid solver; ``m`` is the last forward block (1-based)."""

    m: int
    d_hat: np.ndarray
    s_hat_forward: np.ndarray
    s_hat_backward: np.ndarray


@dataclass
class SolveTrace:
    """Pivot blocks and reduced right-hand sides recorded by a solver.

    ``d_forward[i]`` is the forward pivot of block ``i + 1``;
    ``d_backward[i]`` is the backward pivot of block ``backward_start + i``.
    """

    direction: str
    N: int
    d_forward: np.ndarray = None
    s_forward: np.ndarray = None
    d_backward: np.ndarray = None
    s_backward: np.ndarray = None
    d_combined: np.ndarray = None
    midpoint: Midpoint = None

    @property
    def backward_start(self):
        if self.d_backward is None:
            return None
        return self.N - self.d_backward.shape[0] + 1

    def pivots(self):
        """All recorded pivot blocks as ``(k, stage, block)`` with 1-based ``k``."""
        out = []
        if self.d_forward is not None:
            out += [(k + 1, "forward", d) for k, d in enumerate(self.d_forward)]
        if self.d_backward is not None:
            start = self.backward_start
            out += [(start + i, "backward", d) for i, d in enumerate(self.d_backward)]
        if self.d_combined is not None:
            out += [(k + 1, "combined", d) for k, d in enumerate(self.d_combined)]
        if self.midpoint is not None:
            out.append((self.midpoint.m, "exchange", self.midpoint.d_hat))
        return out

    @cached_property
    def block_spectra(self):
        """Rows ``(k, stage, lambda_min, lambda_max, cond)`` for every pivot."""
        piv = self.pivots()
        if not piv:
            return []
        spec = spectral.block_spectra(np.array([d for _, _, d in piv]))
        return [(k, stage, float(lo), float(hi), float(c)) for (k, stage, _), (lo, hi, c) in zip(piv, spec)]


@dataclass
class BlockSolution:
    e: np.ndarray
    residual_norm: float
    trace: SolveTrace


def _zero_couplings(c):
    # exact-zero couplings skip the elimination update
    return (~c.any(axis=(1, 2))).tolist()


def _forward_sweep(b, c, r, stop, stage="forward"):
    """Forward elimination over blocks ``0 .. stop-1``.

    Returns pivots ``d``, reduced rhs ``s`` and Cholesky factors ``L`` of
    ``d[0 .. stop-2]`` (the last pivot is left unfactored).
    """
    n, ell = b.shape[1], r.shape[2]
    d = np.empty((stop, n, n))
    s = np.empty((stop, n, ell))
    L = np.empty((stop, n, n))
    d[0] = _sym(b[0])
    s[0] = r[0]
    zero = _zero_couplings(c)
    for k in range(1, stop):
        Lp = _chol(d[k - 1], k, stage)
        L[k - 1] = Lp
        ck = c[k - 1]
        if zero[k - 1]:
            d[k] = _sym(b[k])
            s[k] = r[k]
            continue
        d[k] = _sym(b[k] - ck @ _solve(Lp, ck.T))
        s[k] = r[k] - ck @ _solve(Lp, s[k - 1])
    return d, s, L


def _backward_sweep(b, c, r, stop, stage="backward"):
    """Backward elimination over blocks ``N-1 .. stop``.

    Arrays are full length ``N``; entries below ``stop`` are unset.  Factors
    of ``d[stop+1 .. N-1]`` are returned, the pivot at ``stop`` is unfactored.
    """
    N, n, ell = b.shape[0], b.shape[1], r.shape[2]
    d = np.empty((N, n, n))
    s = np.empty((N, n, ell))
    L = np.empty((N, n, n))
    d[N - 1] = _sym(b[N - 1])
    s[N - 1] = r[N - 1]
    zero = _zero_couplings(c)
    for k in range(N - 2, stop - 1, -1):
        Lp = _chol(d[k + 1], k + 2, stage)
        L[k + 1] = Lp
        ck = c[k]
        if zero[k]:
            d[k] = _sym(b[k])
            s[k] = r[k]
            continue
        d[k] = _sym(b[k] - ck.T @ _solve(Lp, ck))
        s[k] = r[k] - ck.T @ _solve(Lp, s[k + 1])
    return d, s, L


def _substitute_up(L, s, c, e, top):
    """Back substitution from block ``top`` down to block 0 (``e[top + 1]`` known)."""
    for k in range(top, -1, -1):
        e[k] = _solve(L[k], s[k] - c[k].T @ e[k + 1])


def _substitute_down(L, s, c, e, first):
    """Forward substitution from block ``first`` to N-1 (``e[first - 1]`` known)."""
    for k in range(first, e.shape[0]):
        e[k] = _solve(L[k], s[k] - c[k - 1] @ e[k - 1])


def _finish(sys, e, trace):
    return BlockSolution(e=e, residual_norm=residual(sys, e), trace=trace)


def fbt_solve(sys):
    """Forward block tridiagonal elimination followed by backward substitution.

    ``d_1 = b_1``, ``d_k = b_k - c_k d_{k-1}^{-1} c_k^T``; then
    ``e_N = d_N^{-1} s_N`` and ``e_k = d_k^{-1}(s_k - c_{k+1}^T e_{k+1})``.
    """
    b, c, r, N = sys.diag, sys.sub, sys.rhs, sys.N
    d, s, L = _forward_sweep(b, c, r, N)
    L[N - 1] = _chol(d[N - 1], N, "forward")
    e = np.empty_like(r)
    e[N - 1] = _solve(L[N - 1], s[N - 1])
    _substitute_up(L, s, c, e, N - 2)
    return _finish(sys, e, SolveTrace("forward", N, d_forward=d, s_forward=s))


def bbt_solve(sys):
    """Backward block tridiagonal elimination followed by forward substitution.

    ``d_N = b_N``, ``d_k = b_k - c_{k+1}^T d_{k+1}^{-1} c_{k+1}``; then
    ``e_1 = d_1^{-1} s_1`` and ``e_k = d_k^{-1}(s_k - c_k e_{k-1})``.
    """
    b, c, r = sys.diag, sys.sub, sys.rhs
    d, s, L = _backward_sweep(b, c, r, 0)
    L[0] = _chol(d[0], 1, "backward")
    e = np.empty_like(r)
    e[0] = _solve(L[0], s[0])
    _substitute_down(L, s, c, e, 1)
    return _finish(sys, e, SolveTrace("backward", sys.N, d_backward=d, s_backward=s))


def _combine(b, r, df, sf, db, sb, e, lo, hi):
    dc = np.empty((hi - lo,) + b.shape[1:])
    for k in range(lo, hi):
        m = _sym(df[k] + db[k] - b[k])
        dc[k - lo] = m
        e[k] = _solve(_chol(m, k + 1, "combined"), sf[k] + sb[k] - r[k])
    return dc


def _run_pair(first, second):
    """Run two callables on two worker threads and return both results."""
    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = [pool.submit(first), pool.submit(second)]
        errors = [f.exception() for f in futures]
    real = [err for err in errors if err is not None and not isinstance(err, threading.BrokenBarrierError)]
    if real:
        raise real[0]
    if any(errors):
        raise errors[0]
    return futures[0].result(), futures[1].result()


def twofilter_solve(sys, parallel=False):
    """Independent forward and backward eliminations, combined block by block.

    ``e_k = (d_k^f + d_k^b - b_k)^{-1} (s_k^f + s_k^b - r_k)``.  With
    ``parallel`` the two eliminations run on two workers, and so do the two
    halves of the combination loop.
    """
    b, c, r, N = sys.diag, sys.sub, sys.rhs, sys.N
    if N == 1:
        sol = fbt_solve(sys)
        tr = sol.trace
        trace = SolveTrace("twofilter", 1, tr.d_forward, tr.s_forward, tr.d_forward.copy(),
                           tr.s_forward.copy(), tr.d_forward.copy())
        return BlockSolution(sol.e, sol.residual_norm, trace)

    e = np.empty_like(r)
    half = N // 2
    if parallel:
        (df, sf, _), (db, sb, _) = _run_pair(
            lambda: _forward_sweep(b, c, r, N),
            lambda: _backward_sweep(b, c, r, 0),
        )
        dc_lo, dc_hi = _run_pair(
            lambda: _combine(b, r, df, sf, db, sb, e, 0, half),
            lambda: _combine(b, r, df, sf, db, sb, e, half, N),
        )
        dc = np.concatenate([dc_lo, dc_hi])
    else:
        df, sf, _ = _forward_sweep(b, c, r, N)
        db, sb, _ = _backward_sweep(b, c, r, 0)
        dc = _combine(b, r, df, sf, db, sb, e, 0, N)
    trace = SolveTrace("twofilter", N, df, sf, db, sb, d_combined=dc)
    return _finish(sys, e, trace)


def _exchange(df_m, sf_m, db_next, sb_next, c_next, m):
    """Midpoint exchange between blocks ``m`` and ``m + 1`` (1-based ``m``).

    The backward side leads: block ``m + 1`` is eliminated from row ``m``,
    giving ``d_hat`` and ``s_hat``; then ``e_m = d_hat^{-1} s_hat``.
    """
    Lb = _chol(db_next, m + 1, "backward")
    d_hat = _sym(df_m - c_next.T @ _solve(Lb, c_next))
    s_hat = sf_m - c_next.T @ _solve(Lb, sb_next)
    Lh = _chol(d_hat, m, "exchange")
    e_m = _solve(Lh, s_hat)
    return Lb, Lh, d_hat, s_hat, e_m


def hybrid_solve(sys, parallel=False):
    """Meet-in-the-middle solver.

    Forward elimination covers blocks ``1..m`` and backward elimination
    ``m+1..N`` with ``m = N // 2``.  At the midpoint::

        d_hat = d_m^f - c_{m+1}^T (d_{m+1}^b)^{-1} c_{m+1}
        s_hat = s_m^f - c_{m+1}^T (d_{m+1}^b)^{-1} s_{m+1}^b
        e_m   = d_hat^{-1} s_hat
        e_{m+1} = (d_{m+1}^b)^{-1} (s_{m+1}^b - c_{m+1} e_m)

    after which each half back-substitutes outward on its own.  With
    ``parallel`` the halves run on two workers that meet at a single barrier;
    both compute the (tiny) exchange so neither has to wait a second time.
    The floating-point operations are identical in both modes.
    """
    N = sys.N
    if N == 1:
        sol = fbt_solve(sys)
        sol.trace.direction = "hybrid"
        return sol
    b, c, r = sys.diag, sys.sub, sys.rhs
    m = N // 2
    e = np.empty_like(r)
    fwd, bwd, mid = {}, {}, {}

    def forward_half(barrier=None):
        d, s, L = _forward_sweep(b, c, r, m)
        fwd.update(d=d, s=s, L=L)
        if barrier is not None:
            barrier.wait()
        _, Lh, d_hat, s_hat, e_m = _exchange(d[m - 1], s[m - 1], bwd["d"][m], bwd["s"][m], c[m - 1], m)
        mid.update(d_hat=d_hat, s_hat=s_hat)
        e[m - 1] = e_m
        _substitute_up(L, s, c, e, m - 2)

    def backward_half(barrier=None):
        d, s, L = _backward_sweep(b, c, r, m)
        bwd.update(d=d, s=s, L=L)
        if barrier is not None:
            barrier.wait()
        Lb, _, _, _, e_m = _exchange(fwd["d"][m - 1], fwd["s"][m - 1], d[m], s[m], c[m - 1], m)
        s_hat_b = s[m] - c[m - 1] @ e_m
        mid.update(s_hat_b=s_hat_b)
        L[m] = Lb
        e[m] = _solve(Lb, s_hat_b)
        _substitute_down(L, s, c, e, m + 1)

    if parallel:
        barrier = threading.Barrier(2)

        def guarded(fn):
            def run():
                try:
                    fn(barrier)
                except BaseException:
                    barrier.abort()
                    raise
            return run

        _run_pair(guarded(forward_half), guarded(backward_half))
    else:
        # eliminate both halves first, exactly as the parallel workers would
        d, s, L = _forward_sweep(b, c, r, m)
        fwd.update(d=d, s=s, L=L)
        d, s, L = _backward_sweep(b, c, r, m)
        bwd.update(d=d, s=s, L=L)
        Lb, Lh, d_hat, s_hat, e_m = _exchange(fwd["d"][m - 1], fwd["s"][m - 1], d[m], s[m], c[m - 1], m)
        e[m - 1] = e_m
        s_hat_b = s[m] - c[m - 1] @ e_m
        mid.update(d_hat=d_hat, s_hat=s_hat, s_hat_b=s_hat_b)
        L[m] = Lb
        e[m] = _solve(Lb, s_hat_b)
        _substitute_up(fwd["L"], fwd["s"], c, e, m - 2)
        _substitute_down(L, s, c, e, m + 1)

    trace = SolveTrace(
        "hybrid",
        N,
        d_forward=fwd["d"],
        s_forward=fwd["s"],
        d_backward=bwd["d"][m:],
        s_backward=bwd["s"][m:],
        midpoint=Midpoint(m, mid["d_hat"], mid["s_hat"], mid["s_hat_b"]),
    )
    return _finish(sys, e, trace)


def solve(sys, algorithm="fbt", parallel=False):
    """Dispatch to one of the four solvers by name (``mf`` is an alias of ``twofilter``)."""
    if algorithm == "fbt":
        return fbt_solve(sys)
    if algorithm == "bbt":
        return bbt_solve(sys)
    if algorithm in ("twofilter", "mf"):
        return twofilter_solve(sys, parallel=parallel)
    if algorithm == "hybrid":
        return hybrid_solve(sys, parallel=parallel)
    raise BlockSmoothError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
