"""Final validation cross-entropy of Adam, Shampoo and SOAP on the synthetic bigram LM.

    python scripts/loss_parity.py --seed 0
"""

import argparse
import sys

from whitenopt import experiments


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    res = experiments.loss_parity(seed=args.seed, workers=args.workers)
    for kind in experiments.OPTIMIZERS:
        print(f"{kind:<8} lr={res.best_lr[kind]:<8.3g} val={res.final_val[kind]:.5f}")
    print(f"entropy floor {res.entropy_floor:.5f}  spread {res.spread:.2%}  above floor: {res.above_floor}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
