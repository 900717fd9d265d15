"""Desk-scale optimizer comparisons shared by ``scripts/`` and the acceptance tests.

All three use per-optimizer best-of-grid learning rates over
``harness.DEFAULT_LR_GRID``. Hyperparameters other than the learning rate are
fixed here and identical across optimizers where they mean the same thing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from whitenopt import harness
from whitenopt.harness import ExperimentConfig, steps_to_threshold
from whitenopt.models import source_entropy

OPTIMIZERS = ("adam", "shampoo", "soap")

# Kronecker quadratic, full-batch gradients. The preconditioner EMA matches
# Adam's beta2; ridge_rel keeps an ill-conditioned early L, R from throwing
# the iterate far away on the first steps.
QUADRATIC = ExperimentConfig(
    model_kind="quadratic",
    m=4,
    n=4,
    condition=1e4,
    beta1=0.9,
    beta2=0.99,
    precond_freq=1,
    precond_beta=0.99,
    ridge_rel=1e-3,
    steps=3000,
    thresholds=(1e-6,),
    stop_below=1e-6,
    lr_grid=harness.DEFAULT_LR_GRID,
)

# Bigram LM on the synthetic Markov corpus. f = 10 keeps 21 runs of 5000
# steps inside two minutes on one core.
BIGRAM = ExperimentConfig(
    model_kind="bigram_lm",
    corpus_length=100_000,
    batch_size=32,
    beta1=0.9,
    beta2=0.999,
    precond_freq=10,
    precond_beta=0.95,
    ridge_rel=1e-3,
    steps=5000,
    eval_every=500,
    lr_grid=harness.DEFAULT_LR_GRID,
)


@dataclass
class OrderingResult:
    steps: dict[str, int | None]
    best_lr: dict[str, float]

    @property
    def shampoo_soap_gap(self) -> float:
        """``|steps_shampoo - steps_soap| / steps_soap``."""
        a, b = self.steps["shampoo"], self.steps["soap"]
        if a is None or b is None:
            return math.inf
        return abs(a - b) / b

    @property
    def ordered(self) -> bool:
        adam = self.steps["adam"]
        for k in ("shampoo", "soap"):
            if self.steps[k] is None:
                return False
            if adam is not None and self.steps[k] > adam:
                return False
        return True


def convergence_ordering(seed: int = 0, workers: int | None = None) -> OrderingResult:
    """Steps to reach loss 1e-6 on the Kronecker quadratic, each optimizer at its best lr."""
    steps, lrs = {}, {}
    for kind in OPTIMIZERS:
        res = harness.tune_lr(replace(QUADRATIC, opt_kind=kind, seed=seed), workers=workers)
        steps[kind] = steps_to_threshold(res.best, QUADRATIC.thresholds[0])
        lrs[kind] = res.best_lr
    return OrderingResult(steps, lrs)


@dataclass
class ParityResult:
    final_val: dict[str, float]
    best_lr: dict[str, float]
    entropy_floor: float

    @property
    def spread(self) -> float:
        """``(max - min) / min`` over the optimizers' final validation losses."""
        vals = list(self.final_val.values())
        return (max(vals) - min(vals)) / min(vals)

    @property
    def above_floor(self) -> bool:
        return all(v >= self.entropy_floor for v in self.final_val.values())


def loss_parity(seed: int = 0, workers: int | None = None) -> ParityResult:
    """Final validation cross-entropy on the bigram LM after 5000 steps."""
    final, lrs = {}, {}
    for kind in OPTIMIZERS:
        res = harness.tune_lr(replace(BIGRAM, opt_kind=kind, seed=seed), workers=workers)
        final[kind] = res.best.final_val_loss
        lrs[kind] = res.best_lr
    return ParityResult(final, lrs, source_entropy())


@dataclass
class FrequencyResult:
    # (optimizer, f) -> value
    final_loss: dict[tuple[str, int], float]
    final_objective: dict[tuple[str, int], float]
    status: dict[tuple[str, int], str]
    lr: dict[str, float]

    def objective_gap(self, kind: str, freq: int) -> float:
        """Relative gap of the final raw objective at ``freq`` against ``f = 1``."""
        base = self.final_objective[(kind, 1)]
        return abs(self.final_objective[(kind, freq)] - base) / abs(base)


def precondition_frequency(
    lrs: dict[str, float], seed: int = 0, freqs: tuple[int, ...] = (1, 10)
) -> FrequencyResult:
    """Shampoo and SOAP on the quadratic at each frequency, for the full step budget.

    ``lrs`` are the f = 1 best-of-grid rates (from :func:`convergence_ordering`)
    so only the frequency changes. There is no early stop: the last iterate
    after ``QUADRATIC.steps`` steps is compared. Both the reported loss
    (suboptimality) and the raw objective ``1/2 w^T A w - b^T w`` are recorded.
    """
    final, objective, status = {}, {}, {}
    for kind in ("shampoo", "soap"):
        for f in freqs:
            cfg = replace(QUADRATIC, opt_kind=kind, seed=seed, precond_freq=f, lr_grid=(), lr=lrs[kind], stop_below=None)
            model = harness.build_model(cfg)
            trace = harness.run_experiment(cfg, model=model)
            final[(kind, f)] = trace.final_train_loss
            objective[(kind, f)] = trace.final_train_loss + model.optimum_value
            status[(kind, f)] = trace.status
    return FrequencyResult(final, objective, status, dict(lrs))
