"""A three-step system whose last block nearly decouples.

Forward elimination walks into a pivot of about 5e-9; backward elimination
never sees anything but 1.  Adding a measurement at the middle step and
shrinking the last coupling brings the smallest eigenvalue back near 1.
"""

from blocksmooth import blocktri, sim, spectral
from blocksmooth.blocktri import assemble_dense


def main():
    for stabilized in (False, True):
        toy = sim.weakest_link_toy(stabilized)
        sys = toy.system
        print("stabilized" if stabilized else "original")
        print("  lambda_min:", spectral.eigvals(assemble_dense(sys))[0])
        print("  forward pivots: ", blocktri.fbt_solve(sys).trace.d_forward[:, 0, 0])
        print("  backward pivots:", blocktri.bbt_solve(sys).trace.d_backward[:, 0, 0])
        wl = spectral.weakest_link(toy.process_system().g_blocks)
        print("  last-block bound:", wl.bound, "flagged" if wl.flagged else "", "peak block", wl.argmax_block)


if __name__ == "__main__":
    main()
