"""Seeded experiment runner: config parsing, training loop, traces, checkpoints, sweeps.

Record ``k`` of a trace is the evaluation at the iterate after ``k`` optimizer
steps; the update that produces iterate ``k + 1`` uses the gradient computed
for record ``k``. Training batches are a pure function of ``(seed, k)`` so a
resumed run draws exactly the batches a straight-through run would.
"""

from __future__ import annotations

import io
import itertools
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from whitenopt import models
from whitenopt.optim import AdamConfig, MatrixOptimizer, ShampooConfig, deserialize_state, serialize_state

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e12
# half-decade grid 1e-3 .. 1
DEFAULT_LR_GRID = tuple(float(10.0**e) for e in np.arange(-3.0, 0.01, 0.5))
CSV_HEADER = "step,train_loss,val_loss,grad_norm,elapsed_s"
MODEL_KINDS = ("quadratic", "linear_regression", "mlp2", "bigram_lm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str = "quadratic"
    m: int = 4
    n: int = 4
    condition: float = 1e4
    corpus_length: int = 100_000
    corpus_path: str | None = None
    batch_size: int = 32
    opt_kind: str = "adam"
    lr: float = 1e-3
    # non-empty: pick the best of these learning rates and ignore ``lr``
    lr_grid: tuple[float, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    precond_freq: int = 1
    precond_beta: float = 0.0
    ridge: float = 0.0
    ridge_rel: float = 0.0
    bias_correction: bool = True
    steps: int = 100
    eval_every: int = 1
    seed: int = 0
    thresholds: tuple[float, ...] = ()
    # end the run at the first record with train_loss <= stop_below
    stop_below: float | None = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {', '.join(MODEL_KINDS)}, got {self.model_kind!r}")
        for name in ("m", "n", "batch_size", "eval_every", "precond_freq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError(f"run.steps must be >= 0, got {self.steps}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"run.seed must fit in an unsigned 64-bit integer, got {self.seed}")
        if not self.condition >= 1:
            raise ConfigError(f"model.condition must be >= 1, got {self.condition}")
        if any(not lr > 0 for lr in self.lr_grid):
            raise ConfigError("every learning rate in the grid must be positive")
        if self.lr_grid:
            # lr is unused when tuning; pin it so equal grids give equal configs
            object.__setattr__(self, "lr", self.lr_grid[0])
        if any(not math.isfinite(t) for t in self.thresholds):
            raise ConfigError("thresholds must be finite")
        if self.stop_below is not None and not math.isfinite(self.stop_below):
            raise ConfigError("run.stop_below must be finite")
        # sub-config invariants
        try:
            self.optimizer()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def optimizer(self) -> MatrixOptimizer:
        adam = AdamConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon, bias_correction=self.bias_correction
        )
        shampoo = ShampooConfig(
            lr=self.lr,
            precondition_frequency=self.precond_freq,
            preconditioner_beta=self.precond_beta,
            ridge=self.ridge,
            ridge_rel=self.ridge_rel,
            momentum_beta=self.beta1,
            bias_correction=self.bias_correction,
        )
        return MatrixOptimizer(self.opt_kind, adam, shampoo)

    def to_text(self) -> str:
        """Canonical config text; parsing it gives back an equal config."""
        lines = []
        for key, attr in _KEYS.items():
            value = getattr(self, attr)
            if attr == "lr" and self.lr_grid:
                value = self.lr_grid
            if value is None or value == ():
                continue
            lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


# config key -> ExperimentConfig field
_KEYS = {
    "model.kind": "model_kind",
    "model.m": "m",
    "model.n": "n",
    "model.condition": "condition",
    "model.corpus_length": "corpus_length",
    "model.corpus": "corpus_path",
    "opt.kind": "opt_kind",
    "opt.lr": "lr",
    "opt.beta1": "beta1",
    "opt.beta2": "beta2",
    "opt.epsilon": "epsilon",
    "opt.precond_freq": "precond_freq",
    "opt.precond_beta": "precond_beta",
    "opt.ridge": "ridge",
    "opt.ridge_rel": "ridge_rel",
    "opt.bias_correction": "bias_correction",
    "run.steps": "steps",
    "run.eval_every": "eval_every",
    "run.seed": "seed",
    "run.batch_size": "batch_size",
    "run.thresholds": "thresholds",
    "run.stop_below": "stop_below",
}
# keys whose comma lists are a single value rather than a sweep axis
_LIST_VALUED = {"opt.lr", "run.thresholds"}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(key: str, raw: str):
    attr = _KEYS[key]
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[attr]
    try:
        if kind == "int":
            return int(raw)
        if kind in ("float", "float | None"):
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "str | None" or kind == "str":
            return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    raise AssertionError(f"unhandled field type {kind} for {key}")


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _split_list(key: str, raw: str) -> list[str]:
    items = [s.strip() for s in raw.split(",")]
    if any(not s for s in items):
        raise ConfigError(f"malformed list for {key}: {raw!r} (empty element)")
    return items


def _parse_lr(raw: str) -> dict:
    if raw.strip().lower() == "grid":
        return {"lr_grid": DEFAULT_LR_GRID}
    items = _split_list("opt.lr", raw)
    values = tuple(_parse_float("opt.lr", s) for s in items)
    if len(values) == 1:
        return {"lr": values[0], "lr_grid": ()}
    return {"lr_grid": values}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines into a dict of raw strings. ``#`` starts a comment."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        pairs[key] = value
    return pairs


def sweep_axes(pairs: dict[str, str]) -> dict[str, list[str]]:
    """Keys whose value is a comma list and that are not list-valued themselves."""
    return {k: _split_list(k, v) for k, v in pairs.items() if "," in v and k not in _LIST_VALUED}


def _config_from_pairs(pairs: dict[str, str], overrides: dict | None = None) -> ExperimentConfig:
    kwargs = {}
    for key, raw in pairs.items():
        if key == "opt.lr":
            kwargs.update(_parse_lr(raw))
        elif key == "run.thresholds":
            kwargs["thresholds"] = tuple(_parse_float(key, s) for s in _split_list(key, raw))
        else:
            kwargs[_KEYS[key]] = _parse_scalar(key, raw)
    kwargs.update(overrides or {})
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def expand_configs(pairs: dict[str, str], overrides: dict | None = None) -> list[tuple[str, ExperimentConfig]]:
    """Cartesian product over the sweep axes, in key order; ids label the axis values."""
    axes = sweep_axes(pairs)
    if not axes:
        return [("run", _config_from_pairs(pairs, overrides))]
    out = []
    for combo in itertools.product(*axes.values()):
        chosen = dict(pairs)
        chosen.update(zip(axes, combo))
        label = "_".join(f"{k.split('.', 1)[1]}={v}" for k, v in zip(axes, combo))
        out.append((label, _config_from_pairs(chosen, overrides)))
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """A single (non-sweep) config from a file."""
    path = Path(path)
    pairs = parse_config_text(path.read_text(), str(path))
    axes = sweep_axes(pairs)
    if axes:
        raise ConfigError(f"{path} has sweep axes ({', '.join(axes)}); use the sweep command")
    return _config_from_pairs(pairs, overrides)


# ---------------------------------------------------------------- traces


@dataclass(frozen=True)
class Record:
    step: int
    train_loss: float
    val_loss: float | None
    grad_norm: float
    elapsed_s: float | None = None


@dataclass
class LossTrace:
    records: list[Record] = field(default_factory=list)
    # completed | diverged | interrupted | stopped
    status: str = "completed"
    marker: str | None = None
    lr: float | None = None
    checkpoint: Checkpoint | None = None

    def append(self, rec: Record) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError(f"trace steps must increase: {rec.step} after {self.records[-1].step}")
        if not (math.isfinite(rec.train_loss) and (rec.val_loss is None or math.isfinite(rec.val_loss))):
            raise ValueError(f"non-finite loss at step {rec.step}")
        self.records.append(rec)

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final_train_loss(self) -> float:
        return self.records[-1].train_loss if self.records else math.nan

    @property
    def final_val_loss(self) -> float | None:
        for rec in reversed(self.records):
            if rec.val_loss is not None:
                return rec.val_loss
        return None

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for r in self.records:
            val = "" if r.val_loss is None else repr(r.val_loss)
            elapsed = "" if r.elapsed_s is None else f"{r.elapsed_s:.6f}"
            out.write(f"{r.step},{r.train_loss!r},{val},{r.grad_norm!r},{elapsed}\n")
        if self.marker:
            out.write(f"# {self.marker}\n")
        return out.getvalue()


def read_trace_csv(text: str) -> LossTrace:
    lines = text.splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a trace CSV (header mismatch)")
    trace = LossTrace()
    for line in lines[1:]:
        if line.startswith("#"):
            trace.marker = line[1:].strip()
            word = trace.marker.split()[0]
            trace.status = word if word in ("diverged", "interrupted", "stopped") else "completed"
            continue
        step, train, val, gnorm, elapsed = line.split(",")
        trace.append(
            Record(int(step), float(train), float(val) if val else None, float(gnorm), float(elapsed) if elapsed else None)
        )
    return trace


def steps_to_threshold(trace: LossTrace, threshold: float) -> int | None:
    """First recorded step with ``train_loss <= threshold``; ``None`` means never."""
    if not math.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    for rec in trace.records:
        if rec.train_loss <= threshold:
            return rec.step
    return None


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    """Everything needed to continue a run: the next record index, iterate, optimizer states, records so far."""

    config_text: str
    next_step: int
    params: list[np.ndarray]
    states: list
    records: list[Record]

    def to_bytes(self) -> bytes:
        arrays = {
            "config": np.frombuffer(self.config_text.encode(), dtype=np.uint8),
            "next_step": np.array(self.next_step, dtype=np.int64),
        }
        for i, (p, s) in enumerate(zip(self.params, self.states)):
            arrays[f"param_{i}"] = p
            arrays[f"state_{i}"] = np.frombuffer(serialize_state(s), dtype=np.uint8)
        rec = self.records
        arrays["rec_step"] = np.array([r.step for r in rec], dtype=np.int64)
        arrays["rec_train"] = np.array([r.train_loss for r in rec], dtype=np.float64)
        arrays["rec_val"] = np.array([math.nan if r.val_loss is None else r.val_loss for r in rec], dtype=np.float64)
        arrays["rec_gnorm"] = np.array([r.grad_norm for r in rec], dtype=np.float64)
        arrays["rec_elapsed"] = np.array([math.nan if r.elapsed_s is None else r.elapsed_s for r in rec])
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            count = sum(1 for k in z.files if k.startswith("param_"))
            params = [z[f"param_{i}"].copy() for i in range(count)]
            states = [deserialize_state(z[f"state_{i}"].tobytes()) for i in range(count)]
            records = [
                Record(
                    int(s),
                    float(t),
                    None if math.isnan(v) else float(v),
                    float(g),
                    None if math.isnan(e) else float(e),
                )
                for s, t, v, g, e in zip(z["rec_step"], z["rec_train"], z["rec_val"], z["rec_gnorm"], z["rec_elapsed"])
            ]
            return cls(z["config"].tobytes().decode(), int(z["next_step"]), params, states, records)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- running


def build_model(cfg: ExperimentConfig):
    if cfg.model_kind == "quadratic":
        return models.make_quadratic(cfg.m, cfg.n, cfg.condition, cfg.seed)
    if cfg.model_kind == "linear_regression":
        return models.make_linear_regression(cfg.n, cfg.m, cfg.seed, cfg.batch_size)
    if cfg.model_kind == "mlp2":
        return models.make_mlp2(cfg.seed, cfg.batch_size)
    text = models.read_corpus(cfg.corpus_path) if cfg.corpus_path else None
    return models.make_bigram_lm(cfg.seed, cfg.corpus_length, cfg.batch_size, text=text)


def _batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, step])


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def run_experiment(
    cfg: ExperimentConfig,
    *,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
    timing: bool = False,
    model=None,
    progress=None,
) -> LossTrace:
    """Train ``cfg.steps`` steps and return the trace (records 0..steps).

    ``stop_at`` ends the run after record ``stop_at`` with status ``stopped``
    and a checkpoint that ``resume`` continues from. A divergence (loss above
    1e12 or non-finite) truncates the trace with a marker; Ctrl-C does the
    same with status ``interrupted``. ``lr_grid`` is ignored here; see
    :func:`tune_lr`.
    """
    model = model if model is not None else build_model(cfg)
    opt = cfg.optimizer()
    config_text = cfg.to_text()
    if resume is not None:
        if resume.config_text != config_text:
            raise ConfigError("checkpoint was written by a different config")
        params = [p.copy() for p in resume.params]
        cursor = (resume.next_step, params, list(resume.states))
        trace = LossTrace(records=list(resume.records), lr=cfg.lr)
    else:
        params = model.init_params(_init_rng(cfg.seed))
        cursor = (0, params, [opt.init_state(p.shape) for p in params])
        trace = LossTrace(lr=cfg.lr)
    val_batch = model.validation_batch()
    start = time.perf_counter()

    def snapshot() -> Checkpoint:
        step, params, states = cursor
        records = [r for r in trace.records if r.step < step]
        return Checkpoint(config_text, step, [p.copy() for p in params], list(states), records)

    try:
        while cursor[0] <= cfg.steps:
            # cursor is replaced in one assignment so an interrupt never sees
            # an iterate that disagrees with its step index
            step, params, states = cursor
            batch = model.sample_batch(_batch_rng(cfg.seed, step))
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = model.loss_and_grads(params, batch)
            except models.NonFiniteError as exc:
                trace.status, trace.marker = "diverged", f"diverged at step {step}: {exc}"
                break
            grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if loss > DIVERGENCE_LOSS or not math.isfinite(grad_norm):
                trace.status = "diverged"
                trace.marker = f"diverged at step {step}: train_loss={loss:.6g} grad_norm={grad_norm:.6g}"
                break
            val = None
            if val_batch is not None and (step % cfg.eval_every == 0 or step == cfg.steps):
                val = model.loss_and_grads(params, val_batch)[0]
            elapsed = time.perf_counter() - start if timing else None
            trace.append(Record(step, loss, val, grad_norm, elapsed))
            if progress is not None:
                progress(step, loss)
            if step == cfg.steps:
                break
            if cfg.stop_below is not None and loss <= cfg.stop_below:
                trace.marker = f"reached train_loss <= {cfg.stop_below:g} at step {step}"
                break
            cursor = (step + 1, *_apply(opt, params, states, grads))
            if stop_at is not None and step >= stop_at:
                trace.status, trace.marker = "stopped", f"stopped after step {step}"
                trace.checkpoint = snapshot()
                return trace
    except KeyboardInterrupt:
        trace.checkpoint = snapshot()
        trace.records = list(trace.checkpoint.records)
        last = trace.records[-1].step if trace.records else -1
        trace.status, trace.marker = "interrupted", f"interrupted after step {last}"
    return trace


def _apply(opt: MatrixOptimizer, params, states, grads):
    new_params, new_states = [], []
    for p, s, g in zip(params, states, grads):
        p2, s2 = opt.step(s, p, g)
        new_params.append(p2)
        new_states.append(s2)
    return new_params, new_states


# ---------------------------------------------------------------- tuning and sweeps


def _final_loss(trace: LossTrace) -> float:
    val = trace.final_val_loss
    return val if val is not None else trace.final_train_loss


def rank_key(trace: LossTrace, thresholds: tuple[float, ...]) -> tuple:
    """Sort key for best-of-grid: finished runs first, then fewest steps to the first threshold, then final loss."""
    if trace.diverged or not trace.records:
        return (1, math.inf, math.inf)
    steps = steps_to_threshold(trace, thresholds[0]) if thresholds else None
    return (0, math.inf if steps is None else steps, _final_loss(trace))


def worker_count() -> int:
    raw = os.environ.get("WHITENOPT_THREADS", "")
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"WHITENOPT_THREADS must be an integer, got {raw!r}") from None
    if count < 1:
        raise ConfigError(f"WHITENOPT_THREADS must be >= 1, got {count}")
    return count


def _run_single(cfg: ExperimentConfig) -> LossTrace:
    return run_experiment(cfg)


def _map(fn, items: list, workers: int | None = None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass
class TuneResult:
    best_lr: float
    best: LossTrace
    by_lr: dict[float, LossTrace]


def tune_lr(cfg: ExperimentConfig, grid: tuple[float, ...] | None = None, workers: int | None = None) -> TuneResult:
    """Run every learning rate in the grid and keep the best by :func:`rank_key` (ties go to the smaller lr)."""
    grid = tuple(grid or cfg.lr_grid or DEFAULT_LR_GRID)
    runs = [replace(cfg, lr=lr, lr_grid=()) for lr in grid]
    traces = _map(_run_single, runs, workers)
    order = sorted(range(len(grid)), key=lambda i: (rank_key(traces[i], cfg.thresholds), grid[i]))
    best = order[0]
    return TuneResult(grid[best], traces[best], dict(zip(grid, traces)))


def run_config(cfg: ExperimentConfig, workers: int | None = None) -> LossTrace:
    """``run_experiment``, or best-of-grid when the config carries an lr grid."""
    if cfg.lr_grid:
        return tune_lr(cfg, workers=workers).best
    return run_experiment(cfg)


@dataclass
class SweepResult:
    config_id: str
    config: ExperimentConfig
    trace: LossTrace | None
    summary: dict
    error: str | None = None


def summarize(cfg: ExperimentConfig, trace: LossTrace) -> dict:
    out = {
        "status": trace.status,
        "lr": trace.lr,
        "final_train_loss": trace.final_train_loss,
        "final_val_loss": trace.final_val_loss,
    }
    for t in cfg.thresholds:
        out[f"steps_to_{t:g}"] = steps_to_threshold(trace, t)
    return out


def _sweep_one(item: tuple[str, ExperimentConfig]) -> SweepResult:
    config_id, cfg = item
    try:
        trace = run_config(cfg, workers=1)
    except Exception as exc:  # isolate per-config failures
        logger.error("config %s failed: %s", config_id, exc)
        return SweepResult(config_id, cfg, None, {"status": "error"}, f"{type(exc).__name__}: {exc}")
    return SweepResult(config_id, cfg, trace, summarize(cfg, trace))


def sweep(configs: list[tuple[str, ExperimentConfig]], workers: int | None = None) -> list[SweepResult]:
    """Run each config independently; a failing config is reported, not raised."""
    if not configs:
        raise ValueError("sweep needs at least one config")
    return _map(_sweep_one, list(configs), workers)


def summary_csv(results: list[SweepResult]) -> str:
    thresholds = sorted({t for r in results for t in r.config.thresholds})
    cols = ["config_id", "model", "optimizer", "precond_freq", "seed", "best_lr", "status", "final_train_loss", "final_val_loss"]
    cols += [f"steps_to_{t:g}" for t in thresholds]
    cols.append("error")
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for r in results:
        s = r.summary
        row = [
            r.config_id,
            r.config.model_kind,
            r.config.opt_kind,
            str(r.config.precond_freq),
            str(r.config.seed),
            "" if s.get("lr") is None else repr(s["lr"]),
            s.get("status", ""),
            "" if s.get("final_train_loss") is None else repr(s["final_train_loss"]),
            "" if s.get("final_val_loss") is None else repr(s["final_val_loss"]),
        ]
        for t in thresholds:
            v = s.get(f"steps_to_{t:g}")
            row.append("never" if r.trace is not None and v is None else "" if v is None else str(v))
        row.append(re.sub(r"[,\n]", ";", r.error or ""))
        out.write(",".join(row) + "\n")
    return out.getvalue()
