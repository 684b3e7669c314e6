"""Cross-checks shared by the command line tools: solver agreement, trace
identities, pivot containment and the toy regression suite."""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import blocktri, kalman, spectral
from .errors import BlockSmoothError, MeasurementInfoSingular, SizeCapExceeded, VacuousBound
from .sim import TOY_BACKWARD_PIVOTS, TOY_FORWARD_PIVOTS, TOY_LAMBDA_MIN, weakest_link_toy

AGREE_TOL = 1e-8
EIG_SLACK = 1e-8


def system_kappa(sys):
    """Dense condition number when affordable, else ``None``."""
    try:
        A = blocktri.assemble_dense(sys)
    except SizeCapExceeded:
        return None
    w = np.linalg.eigvalsh(A) if A.shape[0] > spectral.JACOBI_MAX_ORDER else spectral.eigvals(A)
    return float(w[-1] / w[0]) if w[0] > 0 else float("inf")


def model_kappa(model, sys=None):
    """Dense condition number of the normal equations, or a blockwise bound above the cap."""
    sys = kalman.assemble_system(model) if sys is None else sys
    kappa = system_kappa(sys)
    if kappa is not None:
        return kappa
    pos = spectral.ProcessOnlySystem.from_model(model)
    lo, hi = spectral.norm_sandwich(pos)
    return hi / lo if lo > 0 else float("inf")


def rel_delta(a, b):
    a, b = np.asarray(a, dtype=float).reshape(-1), np.asarray(b, dtype=float).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def pivot_containment(sys, trace, dense=None):
    """Worst excursion of any pivot eigenvalue outside ``[lambda_min(A), lambda_max(A)]``.

    Returns ``(ok, worst_excursion, slack)``; excursions are measured in
    absolute units and compared with ``1e-8 * max(1, lambda_max(A))``.
    """
    A = blocktri.assemble_dense(sys) if dense is None else dense
    w = np.linalg.eigvalsh(A) if A.shape[0] > spectral.JACOBI_MAX_ORDER else spectral.eigvals(A)
    lo, hi = w[0], w[-1]
    slack = EIG_SLACK * max(1.0, hi)
    worst = 0.0
    for row in trace.block_spectra:
        worst = max(worst, lo - row[2], row[3] - hi)
    return worst <= slack, float(worst), float(slack)


@dataclass
class RunReport:
    scenario: str
    algorithm: str
    wall_time: float = 0.0
    residual_norm: float = None
    pivots: list = field(default_factory=list)
    deltas: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @property
    def passed(self):
        return all(self.checks.values())

    def text(self):
        lines = [f"scenario  {self.scenario}", f"algorithm {self.algorithm}"]
        if self.residual_norm is not None:
            lines.append(f"residual  {self.residual_norm!r}")
        lines.append(f"time      {self.wall_time:.6f} s")
        if self.pivots:
            lines.append(f"{'k':>5} {'direction':<10} {'lambda_min':>24} {'lambda_max':>24} {'cond':>24}")
            for p in self.pivots:
                lines.append(f"{p['k']:>5} {p['direction']:<10} {p['lambda_min']!r:>24} "
                             f"{p['lambda_max']!r:>24} {p['cond']!r:>24}")
        for name, value in self.deltas.items():
            lines.append(f"delta {name:<28} {value!r}")
        for name, ok in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'}  {name}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def run_solve(scenario, algorithm="fbt", parallel=False):
    sys = scenario.block_system()
    t0 = time.perf_counter()
    sol = blocktri.solve(sys, algorithm, parallel=parallel)
    elapsed = time.perf_counter() - t0
    pivots = [dict(k=k, direction=d, lambda_min=lo, lambda_max=hi, cond=c)
              for k, d, lo, hi, c in sol.trace.block_spectra]
    rep = RunReport(scenario.name, algorithm + (" (parallel)" if parallel else ""), elapsed,
                    sol.residual_norm, pivots)
    kappa = system_kappa(sys)
    if kappa is not None:
        bound = AGREE_TOL * kappa * float(np.linalg.norm(sys.rhs))
        rep.checks["residual"] = bool(sol.residual_norm <= bound)
    return sol, rep


def _max_cond(trace, stage):
    vals = [row[4] for row in trace.block_spectra if row[1] == stage]
    return float(max(vals)) if vals else None


def compare(scenario):
    """Run every solver and oracle on a model scenario and cross-check them."""
    rep = RunReport(scenario.name, "compare")
    t0 = time.perf_counter()
    if scenario.model is None:
        sys = scenario.block_system()
        results = {a: blocktri.solve(sys, a).e[:, :, 0] for a in blocktri.ALGORITHMS}
        results["hybrid-parallel"] = blocktri.hybrid_solve(sys, parallel=True).e[:, :, 0]
        kappa = system_kappa(sys)
        model = None
    else:
        model = scenario.model
        sys = kalman.assemble_system(model)
        results = {a: blocktri.solve(sys, a).e[:, :, 0] for a in blocktri.ALGORITHMS}
        results["hybrid-parallel"] = blocktri.hybrid_solve(sys, parallel=True).e[:, :, 0]
        results["rts"] = kalman.rts_smoother(model)[0]
        results["mayne-a"] = kalman.mayne_a_smoother(model)[0]
        results["mayne-fraser"] = kalman.mayne_fraser_smoother(model)[0]
        try:
            results["woodbury"] = kalman.woodbury_solve(model)[0]
        except MeasurementInfoSingular as err:
            rep.notes.append(f"woodbury skipped: {err}")
        kappa = model_kappa(model, sys)

    names = list(results)
    worst = 0.0
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            d = rel_delta(results[a], results[b])
            rep.deltas[f"{a}/{b}"] = d
            worst = max(worst, d)
    kappa = float("inf") if kappa is None else kappa
    rep.deltas["kappa"] = kappa
    rep.checks["agreement"] = bool(worst <= AGREE_TOL * kappa)
    rep.checks["parallel-determinism"] = bool(np.array_equal(results["hybrid"], results["hybrid-parallel"]))

    fbt = blocktri.fbt_solve(sys)
    bbt = blocktri.bbt_solve(sys)
    rep.deltas["max_cond_forward_pivot"] = _max_cond(fbt.trace, "forward")
    rep.deltas["max_cond_backward_pivot"] = _max_cond(bbt.trace, "backward")
    if model is not None:
        rep.checks["forward-trace-identities"] = kalman.rts_block_identities(model, raise_on_failure=False).passed
        rep.checks["backward-trace-identities"] = kalman.mayne_block_identities(model, raise_on_failure=False).passed
        bp = kalman.backward_pivot_report(model, bbt.trace)
        rep.checks["backward-pivot-psd"] = bp.psd_ok
        rep.checks["backward-pivot-kappa-bound"] = bp.kappa_ok
        rhs_norm = float(np.linalg.norm(sys.rhs))
        for name, x in results.items():
            g = np.linalg.norm(kalman.objective_gradient(model, x))
            rep.deltas[f"gradient/{name}"] = float(g / rhs_norm) if rhs_norm else float(g)
        # stationarity only means something when the system is not near singular
        if kappa <= 1e6:
            rep.checks["stationarity"] = all(
                rep.deltas[f"gradient/{name}"] <= 1e-6 for name in results)
    try:
        dense = blocktri.assemble_dense(sys)
    except SizeCapExceeded:
        rep.notes.append("pivot containment skipped: system above the dense cap")
    else:
        tf = blocktri.twofilter_solve(sys)
        hy = blocktri.hybrid_solve(sys)
        for name, tr in (("fbt", fbt.trace), ("bbt", bbt.trace), ("twofilter", tf.trace), ("hybrid", hy.trace)):
            rep.checks[f"pivot-containment/{name}"] = pivot_containment(sys, tr, dense)[0]
    rep.wall_time = time.perf_counter() - t0
    return rep


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def toy_checks():
    """Regression checks on the 3x3 weak-link system and its stabilized variant."""
    out = []
    toy = weakest_link_toy(False)
    A = blocktri.assemble_dense(toy.system)
    display = np.array([[14401, 120, 0], [120, 14401, 120], [0, 120, 1]], dtype=float)
    out.append(CheckResult("toy matrix", bool(np.array_equal(A, display)), "assembled matrix vs literal display"))

    w, V = spectral.sym_eig(A)
    err = abs(w[0] - TOY_LAMBDA_MIN) / TOY_LAMBDA_MIN
    out.append(CheckResult("toy lambda_min", err <= 0.05, f"lambda_min={float(w[0])!r} rel.err={err:.3g}"))

    df = blocktri.fbt_solve(toy.system).trace.d_forward[:, 0, 0]
    err = float(np.max(np.abs(df - TOY_FORWARD_PIVOTS) / np.array(TOY_FORWARD_PIVOTS)))
    out.append(CheckResult("toy forward pivots", err <= 1e-3, f"d_f={df.tolist()} max rel.err={err:.3g}"))

    db = blocktri.bbt_solve(toy.system).trace.d_backward[:, 0, 0]
    err = float(np.max(np.abs(db - TOY_BACKWARD_PIVOTS)))
    out.append(CheckResult("toy backward pivots", err <= 1e-10, f"d_b={db.tolist()}"))

    arg = spectral._argmax_block(V[:, 0], 1)
    out.append(CheckResult("toy eigenvector argmax", arg == 3, f"argmax block {arg}"))

    stab = weakest_link_toy(True)
    ws = spectral.eigvals(blocktri.assemble_dense(stab.system))
    out.append(CheckResult("stabilized lambda_min", abs(ws[0] - 1.0) <= 1e-8, f"lambda_min={float(ws[0])!r} (target 1)"))

    wl = spectral.weakest_link(-toy.model.G[1:])
    out.append(CheckResult("toy weakest-link flag", wl.flagged, f"bound={float(wl.bound)!r}"))
    return out


def theorem_checks(corpus):
    """Trace identities, agreement and pivot containment over a model corpus."""
    names = ("agreement", "forward-trace-identities", "backward-trace-identities",
             "backward-pivot-psd", "backward-pivot-kappa-bound")
    tallies = {name: [0, 0] for name in names}
    tallies["pivot-containment"] = [0, 0]
    for sc in corpus:
        rep = compare(sc)
        for name in names:
            if name in rep.checks:
                tallies[name][0] += bool(rep.checks[name])
                tallies[name][1] += 1
        cont = [ok for key, ok in rep.checks.items() if key.startswith("pivot-containment/")]
        if cont:
            tallies["pivot-containment"][0] += all(cont)
            tallies["pivot-containment"][1] += 1
    return [CheckResult(name, ok == total, f"{ok}/{total} scenarios") for name, (ok, total) in tallies.items()]


def bounds_checks(pos_corpus):
    ok_sandwich = ok_gram = ok_cond = 0
    n_cond = 0
    for pos in pos_corpus:
        w = spectral.eigvals(pos.system_matrix())
        lo, hi = spectral.eigenvalue_sandwich(pos)
        slack = EIG_SLACK * max(1.0, w[-1])
        ok_sandwich += bool(lo - slack <= w[0] and w[-1] <= hi + slack)
        wg = spectral.eigvals(pos.gram())
        glo, ghi = spectral.gram_eigenvalue_bounds(pos.g_blocks, pos.N)
        ok_gram += bool(glo - EIG_SLACK <= wg[0] and wg[-1] <= ghi * (1 + EIG_SLACK))
        try:
            cb = spectral.condition_bound(pos)
        except VacuousBound:
            continue
        n_cond += 1
        ok_cond += bool(cb * (1 + EIG_SLACK) >= w[-1] / w[0])
    total = len(pos_corpus)
    return [
        CheckResult("eigenvalue sandwich", ok_sandwich == total, f"{ok_sandwich}/{total}"),
        CheckResult("gram eigenvalue bounds", ok_gram == total, f"{ok_gram}/{total}"),
        CheckResult("condition bound", ok_cond == n_cond, f"{ok_cond}/{n_cond} finite cases"),
    ]


def paper_check(corpus_size=20, spectral_size=50):
    """Toy regression plus the theorem checks on small seeded corpora."""
    from .sim import ill_corpus, model_corpus, spectral_corpus

    results = toy_checks()
    results += theorem_checks(model_corpus(corpus_size))
    ill = ill_corpus(4)
    contrast = []
    for sc in ill:
        sys = kalman.assemble_system(sc.model)
        kf = _max_cond(blocktri.fbt_solve(sys).trace, "forward")
        bp = kalman.backward_pivot_report(sc.model)
        contrast.append(kf > 1e6 and bp.psd_ok and bp.kappa_ok)
    results.append(CheckResult("ill last block: forward pivots blow up, backward stay bounded",
                               all(contrast), f"{sum(contrast)}/{len(contrast)} scenarios"))
    results += bounds_checks(spectral_corpus(spectral_size))
    pq = []
    rng = np.random.default_rng(5)
    for _ in range(10):
        P, Q = rng.standard_normal((2, 3, 3))
        try:
            pq.append(kalman.pq_identity_check(P, Q))
        except BlockSmoothError:
            continue
    results.append(CheckResult("P/Q identity", all(pq), f"{sum(pq)}/{len(pq)} random pairs"))
    return results
