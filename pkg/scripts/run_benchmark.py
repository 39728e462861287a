"""Speed sweep over agent counts, printed in the SpeedReport table layout.

    python3 scripts/run_benchmark.py [--agents 2,6,10,20,100] [--decisions 10000] [--out bench.json]
"""
import argparse
import sys

from decoy.cli import run


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--agents", default="2,6,10,20,100")
    p.add_argument("--decisions", default="10000")
    p.add_argument("--seed", default="0")
    p.add_argument("--out", default=None)
    a = p.parse_args()
    argv = ["bench", "--agents", a.agents, "--decisions", a.decisions, "--seed", a.seed]
    if a.out:
        argv += ["--out", a.out]
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
