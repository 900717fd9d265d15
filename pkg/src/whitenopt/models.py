"""Tiny models with hand-written gradients.

A model object is an immutable description (data, targets, sizes); the
parameter list is owned by whoever trains it and passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from whitenopt.linalg import kron, sample_spd, unvec, vec

ALPHABET = " etaoinshrdlcu.#"
CATCH_ALL = "#"
VOCAB = len(ALPHABET)


class NonFiniteError(ValueError):
    pass


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"batch has {len(self.inputs)} inputs but {len(self.targets)} targets")


EMPTY_BATCH = Batch(np.zeros((0, 0)), np.zeros((0, 0)))


def _check_params(model, params) -> None:
    if len(params) != len(model.shapes):
        raise ValueError(f"{model.kind} expects {len(model.shapes)} parameters, got {len(params)}")
    for name, shape, p in zip(model.names, model.shapes, params):
        if np.shape(p) != shape:
            raise ValueError(f"parameter {name} has shape {np.shape(p)}, expected {shape}")


def _finite_loss(model, params, loss: float) -> float:
    if np.isfinite(loss):
        return float(loss)
    for name, p in zip(model.names, params):
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"non-finite loss: parameter {name} has non-finite entries")
    worst = max(range(len(params)), key=lambda k: float(np.abs(params[k]).max()))
    raise NonFiniteError(f"non-finite loss (largest parameter {model.names[worst]})")


# ---------------------------------------------------------------- quadratic


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``f(W) = 1/2 vec(W)^T A vec(W) - b^T vec(W)``, reported relative to its minimum.

    The constant offset ``f(W*)`` is subtracted so the loss is the
    suboptimality ``1/2 (w - w*)^T A (w - w*)`` and thresholds like 1e-6 mean
    something. The gradient is unaffected.
    """

    A: np.ndarray
    b: np.ndarray
    m: int
    n: int
    init_scale: float = 1.0
    factor_L: np.ndarray | None = None
    factor_R: np.ndarray | None = None
    kind: str = field(default="quadratic", init=False)

    @property
    def names(self):
        return ("W",)

    @property
    def shapes(self):
        return ((self.m, self.n),)

    @cached_property
    def _w_star(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)

    @property
    def minimizer(self) -> np.ndarray:
        return unvec(self._w_star, self.m, self.n)

    @property
    def optimum_value(self) -> float:
        """``f(W*) = -1/2 b^T A^{-1} b``, the offset between the raw objective and the reported loss."""
        return float(-0.5 * self.b @ self._w_star)

    def objective(self, params) -> float:
        """The raw ``1/2 w^T A w - b^T w`` without the offset."""
        _check_params(self, params)
        w = vec(params[0])
        return float(0.5 * w @ self.A @ w - self.b @ w)

    def init_params(self, rng) -> list[np.ndarray]:
        rng = np.random.default_rng(rng)
        return [self.init_scale * rng.standard_normal((self.m, self.n))]

    def sample_batch(self, rng) -> Batch:
        return EMPTY_BATCH

    def validation_batch(self) -> Batch | None:
        return None

    def loss_and_grads(self, params, batch: Batch | None = None):
        _check_params(self, params)
        w = vec(params[0])
        resid = w - self._w_star
        loss = 0.5 * resid @ self.A @ resid
        grad = self.A @ w - self.b
        return _finite_loss(self, params, loss), [unvec(grad, self.m, self.n)]


def make_quadratic(m: int, n: int, condition_number: float, seed, kronecker: bool = True) -> Quadratic:
    """Random quadratic with Hessian of the given condition number.

    With ``kronecker=True`` the Hessian is ``kron(R, L) / trace(L)`` and the
    condition number is split evenly between the two factors.
    """
    rng = np.random.default_rng(seed)
    if kronecker:
        per = float(np.sqrt(condition_number))
        L = sample_spd(m, rng, per)
        R = sample_spd(n, rng, per)
        A = kron(R, L) / np.trace(L)
        factor_L, factor_R = L, R
    else:
        A = sample_spd(m * n, rng, condition_number)
        factor_L = factor_R = None
    w_star = rng.standard_normal(m * n)
    b = A @ w_star
    return Quadratic(A, b, m, n, factor_L=factor_L, factor_R=factor_R)


# -------------------------------------------------------- linear regression


@dataclass(frozen=True, eq=False)
class LinearRegression:
    teacher_W: np.ndarray
    teacher_b: np.ndarray
    noise: float = 0.1
    batch_size: int = 32
    kind: str = field(default="linear_regression", init=False)

    @property
    def d_out(self) -> int:
        return self.teacher_W.shape[0]

    @property
    def d_in(self) -> int:
        return self.teacher_W.shape[1]

    @property
    def names(self):
        return ("W", "b")

    @property
    def shapes(self):
        return ((self.d_out, self.d_in), (self.d_out, 1))

    def init_params(self, rng) -> list[np.ndarray]:
        rng = np.random.default_rng(rng)
        return [rng.standard_normal((self.d_out, self.d_in)) / np.sqrt(self.d_in), np.zeros((self.d_out, 1))]

    def _draw(self, rng, size: int) -> Batch:
        x = rng.standard_normal((size, self.d_in))
        y = x @ self.teacher_W.T + self.teacher_b.T + self.noise * rng.standard_normal((size, self.d_out))
        return Batch(x, y)

    def sample_batch(self, rng) -> Batch:
        return self._draw(np.random.default_rng(rng), self.batch_size)

    def validation_batch(self) -> Batch:
        return self._draw(np.random.default_rng(0xA11CE), 1024)

    def loss_and_grads(self, params, batch: Batch):
        _check_params(self, params)
        W, b = params
        if batch.inputs.shape[1:] != (self.d_in,) or batch.targets.shape[1:] != (self.d_out,):
            raise ValueError(f"batch shapes {batch.inputs.shape}, {batch.targets.shape} do not fit the model")
        err = batch.inputs @ W.T + b.T - batch.targets
        count = err.size
        loss = float(np.sum(err * err) / count)
        d_err = 2.0 * err / count
        return _finite_loss(self, params, loss), [d_err.T @ batch.inputs, d_err.sum(axis=0)[:, None]]


def make_linear_regression(d_in: int, d_out: int, seed, batch_size: int = 32) -> LinearRegression:
    rng = np.random.default_rng(seed)
    return LinearRegression(rng.standard_normal((d_out, d_in)), rng.standard_normal((d_out, 1)), batch_size=batch_size)


# ------------------------------------------------------------------- mlp2


@dataclass(frozen=True, eq=False)
class MLP2:
    """``y = W2 tanh(W1 x + b1) + b2`` with mean squared error, fitted to a fixed teacher MLP."""

    teacher: tuple
    d_in: int = 8
    hidden: int = 16
    d_out: int = 4
    noise: float = 0.05
    batch_size: int = 32
    kind: str = field(default="mlp2", init=False)

    @property
    def names(self):
        return ("W1", "b1", "W2", "b2")

    @property
    def shapes(self):
        return ((self.hidden, self.d_in), (self.hidden, 1), (self.d_out, self.hidden), (self.d_out, 1))

    def init_params(self, rng) -> list[np.ndarray]:
        rng = np.random.default_rng(rng)
        return [
            rng.standard_normal((self.hidden, self.d_in)) / np.sqrt(self.d_in),
            np.zeros((self.hidden, 1)),
            rng.standard_normal((self.d_out, self.hidden)) / np.sqrt(self.hidden),
            np.zeros((self.d_out, 1)),
        ]

    @staticmethod
    def _forward(params, x):
        W1, b1, W2, b2 = params
        h = np.tanh(x @ W1.T + b1.T)
        return h, h @ W2.T + b2.T

    def _draw(self, rng, size: int) -> Batch:
        x = rng.standard_normal((size, self.d_in))
        _, y = self._forward(self.teacher, x)
        return Batch(x, y + self.noise * rng.standard_normal(y.shape))

    def sample_batch(self, rng) -> Batch:
        return self._draw(np.random.default_rng(rng), self.batch_size)

    def validation_batch(self) -> Batch:
        return self._draw(np.random.default_rng(0xB0B), 1024)

    def loss_and_grads(self, params, batch: Batch):
        _check_params(self, params)
        if batch.inputs.shape[1:] != (self.d_in,) or batch.targets.shape[1:] != (self.d_out,):
            raise ValueError(f"batch shapes {batch.inputs.shape}, {batch.targets.shape} do not fit the model")
        W1, b1, W2, b2 = params
        x = batch.inputs
        h, y = self._forward(params, x)
        err = y - batch.targets
        count = err.size
        loss = float(np.sum(err * err) / count)
        d_y = 2.0 * err / count
        g_W2 = d_y.T @ h
        g_b2 = d_y.sum(axis=0)[:, None]
        d_pre = (d_y @ W2) * (1.0 - h * h)
        g_W1 = d_pre.T @ x
        g_b1 = d_pre.sum(axis=0)[:, None]
        return _finite_loss(self, params, loss), [g_W1, g_b1, g_W2, g_b2]


def make_mlp2(seed, batch_size: int = 32) -> MLP2:
    rng = np.random.default_rng(seed)
    shell = MLP2(teacher=(), batch_size=batch_size)
    teacher = tuple(2.0 * p for p in shell.init_params(rng))
    teacher[1][:] = 0.5 * rng.standard_normal(teacher[1].shape)
    return MLP2(teacher=teacher, batch_size=batch_size)


# ------------------------------------------------------------- bigram LM


def transition_table() -> np.ndarray:
    """Fixed 16 x 16 Markov transition matrix used to generate synthetic text."""
    i = np.arange(VOCAB)[:, None]
    j = np.arange(VOCAB)[None, :]
    weights = np.exp(((5 * i + 3 * j * j + 7 * i * j) % 17) / 3.0)
    return weights / weights.sum(axis=1, keepdims=True)


def stationary_distribution(table: np.ndarray) -> np.ndarray:
    pi = np.full(table.shape[0], 1.0 / table.shape[0])
    for _ in range(10_000):
        nxt = pi @ table
        if np.abs(nxt - pi).max() < 1e-15:
            break
        pi = nxt
    return nxt / nxt.sum()


def source_entropy(table: np.ndarray | None = None) -> float:
    """Conditional entropy (nats/char) of the Markov source; the best achievable bigram loss."""
    table = transition_table() if table is None else table
    pi = stationary_distribution(table)
    return float(-np.sum(pi[:, None] * table * np.log(table)))


def make_bigram_corpus(seed, length: int) -> str:
    if length < 2:
        raise ValueError(f"corpus length must be >= 2, got {length}")
    table = transition_table()
    cdf = np.cumsum(table, axis=1)
    cdf[:, -1] = 1.0
    rng = np.random.default_rng(seed)
    draws = rng.random(length)
    state = int(np.searchsorted(np.cumsum(stationary_distribution(table)), draws[0], side="right"))
    state = min(state, VOCAB - 1)
    out = np.empty(length, dtype=np.int64)
    out[0] = state
    for t in range(1, length):
        state = int(np.searchsorted(cdf[state], draws[t], side="right"))
        out[t] = state
    return "".join(ALPHABET[k] for k in out)


def encode(text: str) -> np.ndarray:
    index = {c: k for k, c in enumerate(ALPHABET)}
    fallback = index[CATCH_ALL]
    return np.array([index.get(c, fallback) for c in text.lower()], dtype=np.int64)


def read_corpus(path) -> str:
    """Read a UTF-8 text file; characters outside the alphabet map to the catch-all symbol."""
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    return "".join(ALPHABET[k] for k in encode(text))


def split_corpus(text: str, train_fraction: float = 0.9) -> tuple[str, str]:
    cut = int(len(text) * train_fraction)
    return text[:cut], text[cut:]


@dataclass(frozen=True, eq=False)
class BigramLM:
    """Single V x V logit table; row = current symbol, column = next symbol."""

    train_ids: np.ndarray
    val_ids: np.ndarray
    batch_size: int = 32
    kind: str = field(default="bigram_lm", init=False)

    @property
    def names(self):
        return ("logits",)

    @property
    def shapes(self):
        return ((VOCAB, VOCAB),)

    def init_params(self, rng) -> list[np.ndarray]:
        return [np.zeros((VOCAB, VOCAB))]

    def sample_batch(self, rng) -> Batch:
        rng = np.random.default_rng(rng)
        pos = rng.integers(0, len(self.train_ids) - 1, self.batch_size)
        return Batch(self.train_ids[pos], self.train_ids[pos + 1])

    def validation_batch(self) -> Batch:
        return Batch(self.val_ids[:-1], self.val_ids[1:])

    def loss_and_grads(self, params, batch: Batch):
        _check_params(self, params)
        (table,) = params
        cur = np.asarray(batch.inputs, dtype=np.int64)
        nxt = np.asarray(batch.targets, dtype=np.int64)
        if cur.ndim != 1 or len(cur) == 0:
            raise ValueError("bigram batch must be a non-empty vector of symbol ids")
        rows = table[cur]
        shifted = rows - rows.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        log_p = shifted - log_z[:, None]
        count = len(cur)
        loss = float(-log_p[np.arange(count), nxt].mean())
        d_rows = np.exp(log_p)
        d_rows[np.arange(count), nxt] -= 1.0
        grad = np.zeros_like(table)
        np.add.at(grad, cur, d_rows / count)
        return _finite_loss(self, params, loss), [grad]


def make_bigram_lm(seed, length: int = 100_000, batch_size: int = 32, text: str | None = None) -> BigramLM:
    if text is None:
        text = make_bigram_corpus(seed, length)
    train, val = split_corpus(text)
    if len(train) < 2 or len(val) < 2:
        raise ValueError("corpus too short for a 90/10 split")
    return BigramLM(encode(train), encode(val), batch_size=batch_size)


# ------------------------------------------------------------- checking


def finite_diff_check(model, params, batch, h: float = 1e-5, probes: int = 10, rng=0) -> float:
    """Max relative error between central differences and analytic gradients on random coordinates.

    Each probe's error is ``|fd - analytic| / max(|fd|, |analytic|, 1e-8)``.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    rng = np.random.default_rng(rng)
    _, grads = model.loss_and_grads(params, batch)
    worst = 0.0
    for _ in range(probes):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        plus = [p.copy() for p in params]
        minus = [p.copy() for p in params]
        plus[k][idx] += h
        minus[k][idx] -= h
        fd = (model.loss_and_grads(plus, batch)[0] - model.loss_and_grads(minus, batch)[0]) / (2.0 * h)
        exact = grads[k][idx]
        worst = max(worst, abs(fd - exact) / max(abs(fd), abs(exact), 1e-8))
    return worst


GRAD_TOLERANCES = {"quadratic": 1e-9, "linear_regression": 1e-5, "mlp2": 1e-5, "bigram_lm": 1e-5}
# central differences are exact on a quadratic for any h, so a large h only removes roundoff
GRAD_STEPS = {"quadratic": 1e-1, "linear_regression": 1e-5, "mlp2": 1e-5, "bigram_lm": 1e-5}


def grad_check(seeds: int = 20, base_seed: int = 0) -> dict[str, float]:
    """Worst finite-difference error per model kind over ``seeds`` seeds."""
    worst = dict.fromkeys(GRAD_TOLERANCES, 0.0)
    for s in range(base_seed, base_seed + seeds):
        built = {
            "quadratic": make_quadratic(3, 4, 1e4, s),
            "linear_regression": make_linear_regression(5, 3, s),
            "mlp2": make_mlp2(s),
            "bigram_lm": make_bigram_lm(s, length=2000),
        }
        for kind, model in built.items():
            rng = np.random.default_rng([s, 3])
            params = model.init_params(rng)
            if kind == "bigram_lm":
                params = [rng.standard_normal(p.shape) for p in params]
            batch = model.sample_batch(rng)
            worst[kind] = max(worst[kind], finite_diff_check(model, params, batch, h=GRAD_STEPS[kind], rng=rng))
    return worst
