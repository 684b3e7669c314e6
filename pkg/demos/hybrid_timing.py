"""Wall time of the four solvers on a long random model (n=4, N=1e5)."""

import sys
import time

from blocksmooth import blocktri, kalman, sim


def main(N=100_000):
    model = sim.random_model(1111, n=4, N=N, m_pattern="full", g_max=0.4).model
    system = kalman.assemble_system(model)
    runs = [(a, False) for a in blocktri.ALGORITHMS] + [("twofilter", True), ("hybrid", True)]
    for algorithm, parallel in runs:
        t0 = time.perf_counter()
        sol = blocktri.solve(system, algorithm, parallel=parallel)
        dt = time.perf_counter() - t0
        tag = algorithm + (" (2 threads)" if parallel else "")
        print(f"{tag:22s} {dt:7.2f} s   residual {sol.residual_norm:.1e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100_000)
