"""Every smoother lands on the same estimate, up to conditioning."""

from blocksmooth import checks, sim


def main():
    for name in ("well", "ill"):
        rep = checks.compare(sim.preset(name))
        print(rep.text())
        print()


if __name__ == "__main__":
    main()
