"""Write one trace CSV per (optimizer, lr) on the quadratic or bigram task, for plotting elsewhere.

    python scripts/lr_curves.py --task quadratic --out curves/
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from whitenopt import experiments, harness


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--task", choices=["quadratic", "bigram"], default="quadratic")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    base = experiments.QUADRATIC if args.task == "quadratic" else experiments.BIGRAM
    # full curves, not early-stopped
    base = replace(base, seed=args.seed, stop_below=None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in experiments.OPTIMIZERS:
        res = harness.tune_lr(replace(base, opt_kind=kind))
        for lr, trace in res.by_lr.items():
            (out / f"{args.task}_{kind}_lr{lr:.3g}.csv").write_text(trace.to_csv())
        print(f"{kind:<8} best lr {res.best_lr:.3g}: final train loss {res.best.final_train_loss:.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
