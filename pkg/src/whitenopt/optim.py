"""Adam, Shampoo and SOAP steppers for matrix-shaped parameters.

Each ``*_step`` function is pure: it takes a state, a config, the parameter
and its gradient, and returns ``(new_param, new_state)`` without touching its
inputs. Vector parameters should be passed as ``(n, 1)`` matrices.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from whitenopt.linalg import as_matrix, clamp_spectrum, eig_sym

logger = logging.getLogger(__name__)

MAGIC = b"WOPT"
FORMAT_VERSION = 1
TAG_ADAM, TAG_SHAMPOO, TAG_SOAP = 1, 2, 3


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    bias_correction: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.beta1 < 1:
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0 <= self.beta2 < 1:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class ShampooConfig:
    """Shampoo hyperparameters.

    ``preconditioner_beta`` is the EMA coefficient for L and R; 0 overwrites
    them with the current GG^T and G^TG every step. ``momentum_beta`` averages
    the gradient before preconditioning (unused by SOAP, whose momentum lives
    in the inner Adam). ``bias_correction`` divides both EMAs by
    ``1 - beta**t``; it is a no-op when the betas are 0. ``ridge_rel`` adds
    ``ridge_rel * lam_max`` on top of the absolute ``ridge`` before the inverse
    roots, which bounds how far directions barely seen in L or R get
    stretched (a single ill-conditioned early gradient otherwise throws the
    iterate far away).
    """

    lr: float = 1e-3
    precondition_frequency: int = 1
    preconditioner_beta: float = 0.0
    ridge: float = 0.0
    momentum_beta: float = 0.0
    bias_correction: bool = True
    ridge_rel: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not self.ridge_rel >= 0:
            raise ValueError(f"ridge_rel must be >= 0, got {self.ridge_rel}")
        if int(self.precondition_frequency) != self.precondition_frequency or self.precondition_frequency < 1:
            raise ValueError(f"precondition_frequency must be a positive integer, got {self.precondition_frequency}")
        if not 0 <= self.preconditioner_beta <= 1:
            raise ValueError(f"preconditioner_beta must be in [0, 1], got {self.preconditioner_beta}")
        if not self.ridge >= 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if not 0 <= self.momentum_beta < 1:
            raise ValueError(f"momentum_beta must be in [0, 1), got {self.momentum_beta}")


@dataclass
class AdamState:
    M: np.ndarray
    V: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, shape) -> AdamState:
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class ShampooState:
    L: np.ndarray
    R: np.ndarray
    inv_root_L: np.ndarray | None = None
    inv_root_R: np.ndarray | None = None
    # sqrt(trace(L)) frozen together with the inverse roots
    trace_scale: float | None = None
    # eigenbases of the last refresh; warm-start the next eigendecomposition
    basis_L: np.ndarray | None = None
    basis_R: np.ndarray | None = None
    M: np.ndarray | None = None
    step_count: int = 0
    skipped_steps: int = 0

    @classmethod
    def zeros(cls, shape) -> ShampooState:
        m, n = shape
        return cls(np.zeros((m, m)), np.zeros((n, n)))


@dataclass
class SoapState:
    L: np.ndarray
    R: np.ndarray
    Q_L: np.ndarray
    Q_R: np.ndarray
    inner: AdamState
    step_count: int = 0
    skipped_steps: int = 0

    @classmethod
    def zeros(cls, shape) -> SoapState:
        m, n = shape
        return cls(np.zeros((m, m)), np.zeros((n, n)), np.eye(m), np.eye(n), AdamState.zeros((m, n)))


def _check_grad(param, grad) -> tuple[np.ndarray, np.ndarray]:
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient contains non-finite entries")
    return param, grad


def _adam_moments(state: AdamState, cfg: AdamConfig, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """Advance the moments and return the normalised direction M_hat / (sqrt(V_hat) + eps)."""
    if state.M.shape != grad.shape or state.V.shape != grad.shape:
        raise ValueError(f"Adam state shape {state.M.shape} does not match gradient shape {grad.shape}")
    t = state.step_count + 1
    m = cfg.beta1 * state.M + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.V + (1.0 - cfg.beta2) * grad * grad
    m_hat, v_hat = m, v
    if cfg.bias_correction:
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
    denom = np.sqrt(v_hat) + cfg.epsilon
    # 0/0 only happens with epsilon=0 and an all-zero history; treat as no movement
    direction = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0)
    return direction, AdamState(m, v, t)


def adam_step(state: AdamState, cfg: AdamConfig, param, grad) -> tuple[np.ndarray, AdamState]:
    param, grad = _check_grad(param, grad)
    direction, new_state = _adam_moments(state, cfg, grad)
    return param - cfg.lr * direction, new_state


def _ema(old: np.ndarray, stat: np.ndarray, beta: float) -> np.ndarray:
    if beta == 0.0:
        return stat
    return beta * old + (1.0 - beta) * stat


def _is_refresh(step_count: int, freq: int) -> bool:
    # step_count is the 1-based index of the step being taken
    return (step_count - 1) % freq == 0


def _inverse_root(stat: np.ndarray, ridge: float, ridge_rel: float, guess) -> tuple[np.ndarray, np.ndarray]:
    lam, q = eig_sym(stat, guess=guess)
    ridge = ridge + ridge_rel * max(float(lam[0]), 0.0)
    root = (q * clamp_spectrum(lam, ridge) ** -0.5) @ q.T
    return 0.5 * (root + root.T), q


def shampoo_step(state: ShampooState, cfg: ShampooConfig, param, grad) -> tuple[np.ndarray, ShampooState]:
    """One Shampoo update ``W -= lr * sqrt(tr L) * L^{-1/2} G R^{-1/2}``."""
    param, grad = _check_grad(param, grad)
    if param.ndim != 2:
        raise ValueError(f"Shampoo needs a matrix parameter, got shape {param.shape}")
    m, n = param.shape
    if state.L.shape != (m, m) or state.R.shape != (n, n):
        raise ValueError(f"preconditioner shapes {state.L.shape}, {state.R.shape} do not fit gradient {grad.shape}")

    t = state.step_count + 1
    L = _ema(state.L, grad @ grad.T, cfg.preconditioner_beta)
    R = _ema(state.R, grad.T @ grad, cfg.preconditioner_beta)
    new = replace(state, L=L, R=R, step_count=t)

    if cfg.momentum_beta > 0:
        prev = state.M if state.M is not None else np.zeros_like(grad)
        new.M = cfg.momentum_beta * prev + (1.0 - cfg.momentum_beta) * grad
        g_m = new.M
        if cfg.bias_correction:
            g_m = g_m / (1.0 - cfg.momentum_beta**t)
    else:
        g_m = grad

    if _is_refresh(t, cfg.precondition_frequency) or state.inv_root_L is None:
        if cfg.bias_correction and 0 < cfg.preconditioner_beta < 1:
            correction = 1.0 - cfg.preconditioner_beta**t
            L, R = L / correction, R / correction
        tr = float(np.trace(L))
        if not tr > 0:
            logger.warning("shampoo step %d skipped: trace(L) = %g", t, tr)
            new.skipped_steps += 1
            return param.copy(), new
        new.inv_root_L, new.basis_L = _inverse_root(L, cfg.ridge, cfg.ridge_rel, state.basis_L)
        new.inv_root_R, new.basis_R = _inverse_root(R, cfg.ridge, cfg.ridge_rel, state.basis_R)
        new.trace_scale = math.sqrt(tr)

    update = new.trace_scale * (new.inv_root_L @ g_m @ new.inv_root_R)
    return param - cfg.lr * update, new


def soap_step(
    state: SoapState, shampoo_cfg: ShampooConfig, adam_cfg: AdamConfig, param, grad
) -> tuple[np.ndarray, SoapState]:
    """One SOAP update: Adam on ``Q_L^T G Q_R``, rotated back, scaled by ``shampoo_cfg.lr``.

    ``adam_cfg`` supplies beta1, beta2, epsilon and bias correction for the
    rotated-space moments; its ``lr`` is ignored. The moments are kept in the
    rotated space and are not re-rotated when the eigenbases refresh.
    """
    param, grad = _check_grad(param, grad)
    if param.ndim != 2:
        raise ValueError(f"SOAP needs a matrix parameter, got shape {param.shape}")
    m, n = param.shape
    if state.L.shape != (m, m) or state.R.shape != (n, n):
        raise ValueError(f"preconditioner shapes {state.L.shape}, {state.R.shape} do not fit gradient {grad.shape}")

    t = state.step_count + 1
    L = _ema(state.L, grad @ grad.T, shampoo_cfg.preconditioner_beta)
    R = _ema(state.R, grad.T @ grad, shampoo_cfg.preconditioner_beta)
    new = replace(state, L=L, R=R, step_count=t)
    if not float(np.trace(L)) > 0:
        logger.warning("soap step %d skipped: trace(L) = %g", t, float(np.trace(L)))
        new.skipped_steps += 1
        return param.copy(), new

    if _is_refresh(t, shampoo_cfg.precondition_frequency):
        # warm start from the previous basis after the first refresh
        warm = t > 1
        new.Q_L = eig_sym(L, guess=state.Q_L if warm else None).eigenvectors
        new.Q_R = eig_sym(R, guess=state.Q_R if warm else None).eigenvectors

    rotated = new.Q_L.T @ grad @ new.Q_R
    direction, new.inner = _adam_moments(state.inner, adam_cfg, rotated)
    update = new.Q_L @ direction @ new.Q_R.T
    return param - shampoo_cfg.lr * update, new


@dataclass
class MatrixOptimizer:
    """Per-parameter dispatch used by the training harness."""

    kind: str
    adam: AdamConfig = field(default_factory=AdamConfig)
    shampoo: ShampooConfig = field(default_factory=ShampooConfig)

    def __post_init__(self):
        if self.kind not in ("adam", "shampoo", "soap"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    def init_state(self, shape):
        if self.kind == "adam":
            return AdamState.zeros(shape)
        if self.kind == "shampoo":
            return ShampooState.zeros(shape)
        return SoapState.zeros(shape)

    def step(self, state, param, grad):
        if self.kind == "adam":
            return adam_step(state, self.adam, param, grad)
        if self.kind == "shampoo":
            return shampoo_step(state, self.shampoo, param, grad)
        return soap_step(state, self.shampoo, self.adam, param, grad)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   b"WOPT" | u8 version | u8 algorithm tag
#   per matrix: u32 rows | u32 cols | rows*cols f64, row-major
#   trailing u64 counters
#
# All integers and floats little-endian. A 0x0 matrix marks an absent value.
#   adam:    M, V                                         | step_count
#   shampoo: L, R, inv_root_L, inv_root_R, trace_scale (1x1),
#            basis_L, basis_R, M                          | step_count, skipped_steps
#   soap:    L, R, Q_L, Q_R, inner.M, inner.V             | step_count, inner.step_count, skipped_steps
# ---------------------------------------------------------------------------


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _pack_matrix(out: list, a) -> None:
    if a is None:
        out.append(struct.pack("<II", 0, 0))
        return
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    rows, cols = a.shape
    out.append(struct.pack("<II", rows, cols))
    out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, size: int, what: str) -> memoryview:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated input while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def matrix(self, what: str) -> np.ndarray | None:
        rows, cols = struct.unpack("<II", self.take(8, f"{what} header"))
        if rows == 0 and cols == 0:
            return None
        if rows == 0 or cols == 0:
            raise CheckpointError(f"degenerate shape {rows}x{cols} for {what}", self.pos - 8)
        payload = self.take(8 * rows * cols, f"{what} payload")
        return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def serialize_state(state) -> bytes:
    out: list[bytes] = []
    if isinstance(state, AdamState):
        out.append(MAGIC + bytes([FORMAT_VERSION, TAG_ADAM]))
        _pack_matrix(out, state.M)
        _pack_matrix(out, state.V)
        out.append(struct.pack("<Q", state.step_count))
    elif isinstance(state, ShampooState):
        out.append(MAGIC + bytes([FORMAT_VERSION, TAG_SHAMPOO]))
        for a in (state.L, state.R, state.inv_root_L, state.inv_root_R):
            _pack_matrix(out, a)
        _pack_matrix(out, None if state.trace_scale is None else np.array([[state.trace_scale]]))
        for a in (state.basis_L, state.basis_R, state.M):
            _pack_matrix(out, a)
        out.append(struct.pack("<QQ", state.step_count, state.skipped_steps))
    elif isinstance(state, SoapState):
        out.append(MAGIC + bytes([FORMAT_VERSION, TAG_SOAP]))
        for a in (state.L, state.R, state.Q_L, state.Q_R, state.inner.M, state.inner.V):
            _pack_matrix(out, a)
        out.append(struct.pack("<QQQ", state.step_count, state.inner.step_count, state.skipped_steps))
    else:
        raise TypeError(f"cannot serialize {type(state).__name__}")
    return b"".join(out)


def deserialize_state(data: bytes):
    r = _Reader(bytes(data))
    if bytes(r.take(4, "magic")) != MAGIC:
        raise CheckpointError("bad magic, not an optimizer checkpoint", 0)
    version, tag = r.take(2, "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})", 4)

    def required(what):
        a = r.matrix(what)
        if a is None:
            raise CheckpointError(f"missing required matrix {what}", r.pos - 8)
        return a

    if tag == TAG_ADAM:
        M, V = required("M"), required("V")
        state = AdamState(M, V, r.u64("step_count"))
    elif tag == TAG_SHAMPOO:
        L, R = required("L"), required("R")
        inv_L, inv_R, scale = r.matrix("inv_root_L"), r.matrix("inv_root_R"), r.matrix("trace_scale")
        basis_L, basis_R, M = r.matrix("basis_L"), r.matrix("basis_R"), r.matrix("M")
        state = ShampooState(
            L, R, inv_L, inv_R,
            None if scale is None else float(scale[0, 0]),
            basis_L, basis_R, M,
        )
        state.step_count = r.u64("step_count")
        state.skipped_steps = r.u64("skipped_steps")
    elif tag == TAG_SOAP:
        L, R, Q_L, Q_R = required("L"), required("R"), required("Q_L"), required("Q_R")
        M, V = required("inner.M"), required("inner.V")
        step = r.u64("step_count")
        inner = AdamState(M, V, r.u64("inner.step_count"))
        state = SoapState(L, R, Q_L, Q_R, inner, step, r.u64("skipped_steps"))
    else:
        raise CheckpointError(f"unknown algorithm tag {tag}", 5)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint", r.pos)
    return state
