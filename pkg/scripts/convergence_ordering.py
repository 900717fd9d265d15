"""Steps to loss 1e-6 on the Kronecker quadratic for Adam, Shampoo and SOAP at best-of-grid lr.

    python scripts/convergence_ordering.py --seeds 0 1 2 --out ordering.csv
"""

import argparse
import csv
import sys

from whitenopt import experiments


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--workers", type=int, default=None, help="parallel runs per lr grid")
    parser.add_argument("--out", help="optional CSV of seed, optimizer, best lr, steps")
    args = parser.parse_args(argv)

    rows = []
    for seed in args.seeds:
        res = experiments.convergence_ordering(seed=seed, workers=args.workers)
        for kind in experiments.OPTIMIZERS:
            steps = res.steps[kind]
            rows.append((seed, kind, res.best_lr[kind], "never" if steps is None else steps))
            print(f"seed {seed}  {kind:<8} lr={res.best_lr[kind]:<8.3g} steps={rows[-1][3]}")
        print(f"seed {seed}  ordered={res.ordered}  shampoo/soap gap={res.shampoo_soap_gap:.1%}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "optimizer", "best_lr", "steps_to_1e-6"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
