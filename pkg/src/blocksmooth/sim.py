"""Seeded synthetic problems: random models and systems, and the 3x3 weak-link toy.

Randomness comes from ``numpy.random.default_rng(seed)``, i.e. the PCG64
generator seeded through ``SeedSequence``.  The same seed reproduces the
same scenario bit for bit within one installation.  Expected values in the
tests are always recomputed by an oracle in the same run, so nothing depends
on the exact stream beyond its statistical properties.
"""

from dataclasses import dataclass, field

import numpy as np

from .blocktri import BlockTriSystem
from .errors import BadParameters
from .kalman import LinearGaussianModel, assemble_system
from .spectral import ProcessOnlySystem

M_PATTERNS = ("none", "scalar", "full", "mixed")
CONDITIONING = ("well", "ill-last-block")

# literal entries of the toy system; nothing here is generated
TOY_COUPLING = 120.0
TOY_STABLE_COUPLING = 0.9
TOY_DIAG = (14401.0, 14401.0, 1.0)
TOY_LAMBDA_MIN = 4.8e-9
TOY_FORWARD_PIVOTS = (14401.0, 14400.0, 4.8222e-9)
TOY_BACKWARD_PIVOTS = (1.0, 1.0, 1.0)


@dataclass
class Scenario:
    """A named problem with its seed and any expected quantities.

    ``expected`` maps a quantity name to ``(value, tag)`` where the tag says
    where the value comes from: ``published`` for numbers printed with the
    method's original presentation, ``trivial`` for values fixed by
    construction.
    """

    name: str
    seed: int = None
    model: LinearGaussianModel = None
    system: BlockTriSystem = None
    expected: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def block_system(self):
        if self.system is not None:
            return self.system
        if self.model is None:
            raise BadParameters(f"scenario {self.name!r} holds neither a model nor a system")
        return assemble_system(self.model)

    def process_system(self):
        if self.model is None:
            raise BadParameters(f"scenario {self.name!r} has no process structure")
        return ProcessOnlySystem.from_model(self.model)


def weakest_link_toy(stabilized=False):
    """Three scalar blocks where the last coupling ruins the conditioning.

    ``q_k = 1`` and couplings of 120 give diagonal ``[14401, 14401, 1]``.
    The stabilized variant replaces the (2,3)/(3,2) entries by 0.9 and keeps
    the diagonal.  The attached model reproduces the same matrix:
    ``G_2 = -120`` and ``G_3 = -120`` (or ``-0.9``), no measurements except,
    in the stabilized case, one at step 2 with information ``14399.19`` so
    that the second diagonal entry is unchanged.
    """
    c3 = TOY_STABLE_COUPLING if stabilized else TOY_COUPLING
    system = BlockTriSystem(np.array(TOY_DIAG), np.array([TOY_COUPLING, c3]), np.ones(3))
    H = [None, None, None]
    R = [None, None, None]
    z = [None, None, None]
    if stabilized:
        u2 = TOY_DIAG[1] - 1.0 - c3 ** 2
        H[1], R[1], z[1] = np.array([[1.0]]), np.array([[1.0 / u2]]), np.array([0.0])
    model = LinearGaussianModel(
        x0=np.ones(1), G=np.array([-TOY_COUPLING, -c3]), Q=np.ones(3), H=H, R=R, z=z,
        name="toy6-stabilized" if stabilized else "toy6",
    )
    if stabilized:
        expected = {"lambda_min": (1.0, "published")}
    else:
        expected = {
            "lambda_min": (TOY_LAMBDA_MIN, "published"),
            "d_forward": (list(TOY_FORWARD_PIVOTS), "published"),
            "d_backward": (list(TOY_BACKWARD_PIVOTS), "published"),
            "argmax_block": (3, "published"),
        }
    return Scenario(model.name, None, model, system, expected, {"stabilized": stabilized})


def _spd(rng, m, lo=0.5, hi=2.0):
    """Random SPD matrix with eigenvalues drawn from [lo, hi]."""
    if m == 0:
        return np.zeros((0, 0))
    V, _ = np.linalg.qr(rng.standard_normal((m, m)))
    w = rng.uniform(lo, hi, size=m)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def _contraction(rng, n, smax, rank_deficient=False):
    """Random n x n matrix with largest singular value ``smax``."""
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.sort(rng.uniform(0.2, 1.0, size=n))[::-1]
    s = s / s[0] * smax
    if rank_deficient:
        s[-1] = 0.0
    return (U * s) @ V.T


def _measurement_dims(rng, pattern, n, N):
    if pattern == "none":
        return [0] * N
    if pattern == "scalar":
        return [1] * N
    if pattern == "full":
        return [n] * N
    return [int(m) for m in rng.choice([0, 1, n], size=N)]


def random_model(seed, n=2, N=10, m_pattern="full", conditioning="well", g_max=0.9,
                 ill_scale=1e4, rank_deficient=False):
    """Random linear-Gaussian model with data simulated from the model itself.

    Covariances have eigenvalues in [0.5, 2].  Each ``G_k`` (k >= 2) has
    largest singular value drawn from ``[g_max / 2, g_max]``; with
    ``rank_deficient`` every other ``G_k`` loses its smallest singular value.
    ``m_pattern`` sets the measurement sizes: ``none`` (no data), ``scalar``
    (m = 1), ``full`` (m = n, full column rank) or ``mixed`` (drawn from
    {0, 1, n}).  ``ill-last-block`` stretches the leading singular value of
    ``G_N`` by ``ill_scale`` and drops the measurement at step N.  That drives
    the smallest eigenvalue of the normal equations towards zero along one
    direction while every other block stays tame.
    """
    if int(n) != n or n < 1 or int(N) != N or N < 1:
        raise BadParameters(f"n and N must be positive integers, got n={n!r}, N={N!r}")
    if m_pattern not in M_PATTERNS:
        raise BadParameters(f"m_pattern must be one of {M_PATTERNS}, got {m_pattern!r}")
    if conditioning not in CONDITIONING:
        raise BadParameters(f"conditioning must be one of {CONDITIONING}, got {conditioning!r}")
    if not g_max > 0 or not ill_scale > 0:
        raise BadParameters("g_max and ill_scale must be positive")
    n, N = int(n), int(N)
    rng = np.random.default_rng(seed)

    Q = np.array([_spd(rng, n) for _ in range(N)])
    G = np.empty((N, n, n))
    G[0] = np.eye(n)
    for k in range(1, N):
        smax = rng.uniform(0.5 * g_max, g_max)
        G[k] = _contraction(rng, n, smax, rank_deficient and k % 2 == 1)
    if conditioning == "ill-last-block" and N > 1:
        U, s, Vt = np.linalg.svd(G[-1])
        s[0] *= ill_scale
        G[-1] = (U * s) @ Vt

    dims = _measurement_dims(rng, m_pattern, n, N)
    if conditioning == "ill-last-block":
        dims[-1] = 0
    H, R = [], []
    for m in dims:
        if m == n:
            Hk = np.eye(n) + 0.3 * rng.standard_normal((n, n))
            # keep full column rank with a comfortable margin
            while np.linalg.svd(Hk, compute_uv=False)[-1] < 0.2:
                Hk = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        else:
            Hk = rng.standard_normal((m, n))
        H.append(Hk)
        R.append(_spd(rng, m))

    x0 = rng.standard_normal(n)
    x = x0
    z = []
    for k in range(N):
        x = G[k] @ x + np.linalg.cholesky(Q[k]) @ rng.standard_normal(n)
        m = dims[k]
        v = np.linalg.cholesky(R[k]) @ rng.standard_normal(m) if m else np.zeros(0)
        z.append(H[k] @ x + v)

    name = f"random-{conditioning}-{m_pattern}-n{n}-N{N}-s{seed}"
    model = LinearGaussianModel(x0, G, Q, H, R, z, name=name)
    params = dict(seed=seed, n=n, N=N, m_pattern=m_pattern, conditioning=conditioning,
                  g_max=g_max, ill_scale=ill_scale, rank_deficient=rank_deficient)
    return Scenario(name, seed, model, None, {}, params)


def random_system(seed, n=2, N=5, ell=1, coupling=1.0):
    """Random SPD block tridiagonal system without Kalman structure.

    Off-diagonal blocks are Gaussian times ``coupling``; each diagonal block
    is a random SPD matrix shifted by the norms of its two couplings, which
    makes the matrix block diagonally dominant and hence SPD.
    """
    if n < 1 or N < 1 or ell < 1:
        raise BadParameters("n, N and ell must be positive")
    rng = np.random.default_rng(seed)
    sub = coupling * rng.standard_normal((N - 1, n, n))
    norms = np.linalg.norm(sub, ord=2, axis=(1, 2)) if N > 1 else np.zeros(0)
    diag = np.empty((N, n, n))
    for k in range(N):
        shift = (norms[k - 1] if k > 0 else 0.0) + (norms[k] if k < N - 1 else 0.0)
        diag[k] = _spd(rng, n, 0.5, 2.0) + shift * np.eye(n)
    rhs = rng.standard_normal((N, n, ell))
    name = f"system-n{n}-N{N}-s{seed}"
    return Scenario(name, seed, None, BlockTriSystem(diag, sub, rhs), {}, dict(seed=seed, n=n, N=N, ell=ell))


def random_process_system(seed, n=2, N=5, g_scale=None, with_u=False):
    """Random ``g^T q^{-1} g`` structure for the spectral bounds.

    ``q_k`` are SPD with eigenvalues in [0.5, 2].  When ``g_scale`` is not
    given it is drawn from [0.1, 2], so that both informative and vacuous
    singular-value bounds show up.
    """
    rng = np.random.default_rng(seed)
    if g_scale is None:
        g_scale = rng.uniform(0.1, 2.0)
    q = np.array([_spd(rng, n) for _ in range(N)])
    g = g_scale * rng.standard_normal((N - 1, n, n)) / np.sqrt(n)
    u = None
    if with_u:
        u = np.array([_spd(rng, n, 0.0, 1.0) for _ in range(N)])
    return ProcessOnlySystem(q, g, u)


def model_corpus(size=100, base_seed=20240):
    """Seeded corpus of well-conditioned models.

    Cycles through n in {1, 2, 3}, N in {1, 2, 3, 10, 50} and the four
    measurement patterns; every fifth case has rank-deficient ``G_k``.
    """
    ns, Ns = (1, 2, 3), (1, 2, 3, 10, 50)
    out = []
    for i in range(size):
        out.append(random_model(
            base_seed + i,
            n=ns[i % 3],
            N=Ns[(i // 3) % 5],
            m_pattern=M_PATTERNS[i % 4],
            rank_deficient=(i % 5 == 4),
        ))
    return out


def ill_corpus(size=12, base_seed=90210):
    """Models whose last process block is scaled up (n in {2, 3}, N in {3, 10, 50})."""
    ns, Ns = (2, 3), (3, 10, 50)
    return [
        random_model(base_seed + i, n=ns[i % 2], N=Ns[(i // 2) % 3], m_pattern="full",
                     conditioning="ill-last-block")
        for i in range(size)
    ]


def spectral_corpus(size=200, base_seed=31337):
    """Seeded process-only systems, n in {1, 2, 3} and N in {2, 3, 5, 10}."""
    ns, Ns = (1, 2, 3), (2, 3, 5, 10)
    return [random_process_system(base_seed + i, n=ns[i % 3], N=Ns[(i // 3) % 4]) for i in range(size)]


def zero_coupling_model(n=2, N=5):
    """``G_k = 0`` and ``Q_k = I``, no measurements: the system is the identity."""
    G = np.zeros((N - 1, n, n))
    Q = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    none = [None] * N
    model = LinearGaussianModel(np.zeros(n), G, Q, none, none, none, name="zero-g")
    return Scenario("zero-g", None, model, None, {"bounds": ((1.0, 1.0), "trivial")}, dict(n=n, N=N))


PRESETS = {
    "toy6": lambda: weakest_link_toy(False),
    "toy6-stabilized": lambda: weakest_link_toy(True),
    "zero-g": zero_coupling_model,
    "well": lambda: random_model(7, n=2, N=10),
    "ill": lambda: random_model(7, n=2, N=10, conditioning="ill-last-block"),
}

PRESET_HELP = {
    "toy6": "3x3 scalar system with couplings 120; lambda_min ~ 4.8e-9",
    "toy6-stabilized": "same with the last coupling set to 0.9",
    "zero-g": "G_k = 0, Q_k = I, no data; every bound equals 1",
    "well": "random model, n=2, N=10, seed 7",
    "ill": "random model, n=2, N=10, seed 7, last block scaled up",
}


def preset(name):
    if name not in PRESETS:
        raise BadParameters(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[name]()
