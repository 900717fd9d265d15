"""Shampoo and SOAP on the quadratic with eigendecompositions refreshed every f steps.

Learning rates are the f = 1 best-of-grid rates, so only f changes between runs.

    python scripts/precond_frequency.py --freqs 1 10 20 --seed 0
"""

import argparse
import sys

from whitenopt import experiments


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--freqs", type=int, nargs="+", default=[1, 10])
    args = parser.parse_args(argv)

    freqs = tuple(sorted(set([1, *args.freqs])))
    lrs = experiments.convergence_ordering(seed=args.seed).best_lr
    res = experiments.precondition_frequency(lrs, seed=args.seed, freqs=freqs)
    for kind in ("shampoo", "soap"):
        for f in freqs:
            key = (kind, f)
            print(
                f"{kind:<8} f={f:<3} lr={lrs[kind]:<6.3g} status={res.status[key]:<10} "
                f"objective={res.final_objective[key]:.8g} suboptimality={res.final_loss[key]:.3e} "
                f"gap vs f=1 {res.objective_gap(kind, f):.2e}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
