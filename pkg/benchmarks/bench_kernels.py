"""Compare the compiled kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--draws N] [--repeat K] [--sweeps S]
"""
import argparse

from tensorfmri.benchmark import format_table, run_benchmarks


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--draws", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--sweeps", type=int, default=20)
    args = parser.parse_args()
    print(format_table(run_benchmarks(draws=args.draws, repeat=args.repeat, sweeps=args.sweeps)))


if __name__ == "__main__":
    main()
