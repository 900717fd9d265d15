"""Dense real linear algebra used by the optimizers.

Matrices are plain 2-D ``float64`` numpy arrays. Vectorisation is
column-stacking, so that ``kron(a, b) @ vec(g) == vec(b @ g @ a.T)`` holds
exactly.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-8
FLOOR_REL = 1e-12
PSD_TOL = 1e-8


class EigResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class ConvergenceError(ArithmeticError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (float64 or wider), raising ``ValueError`` otherwise."""
    arr = np.asarray(a)
    arr = arr.astype(np.result_type(arr.dtype, np.float64), copy=False)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _square(a, name: str) -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def kron(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    ra, ca = a.shape
    rb, cb = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(ra * rb, ca * cb)


def vec(g) -> np.ndarray:
    # element (i, j) lands at index j * rows + i
    return as_matrix(g, "g").reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v)
    v = v.astype(np.result_type(v.dtype, np.float64), copy=False)
    if v.ndim != 1 or v.size != rows * cols:
        raise ValueError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def trace(a) -> float:
    return float(np.trace(_square(a, "trace input")))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))


def sample_spd(dim: int, seed, condition_number: float = 10.0) -> np.ndarray:
    """Random SPD matrix ``Q diag(lam) Q^T`` with spectrum in ``[1, condition_number]``.

    The extreme eigenvalues are pinned to 1 and ``condition_number`` so the
    condition number is exact; interior ones are log-uniform.
    """
    if condition_number < 1:
        raise ValueError(f"condition_number must be >= 1, got {condition_number}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    expo = rng.uniform(0.0, 1.0, dim)
    if dim >= 2:
        expo[0], expo[1] = 0.0, 1.0
    lam = condition_number ** expo
    out = (q * lam) @ q.T
    return 0.5 * (out + out.T)


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Disjoint (p, q) pairings covering every off-diagonal pair once per sweep."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[k], players[size - 1 - k]) for k in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            ps, qs = zip(*pairs)
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return np.sqrt(np.sum(off * off))


def eig_sym(a, guess=None) -> EigResult:
    """Symmetric eigendecomposition by cyclic (round-robin ordered) Jacobi sweeps.

    Eigenvalues come back in descending order and each eigenvector has its
    largest-magnitude component positive. ``guess`` is an optional orthogonal
    matrix whose columns approximate the eigenvectors; the sweeps then start
    from ``guess.T @ a @ guess``, which typically needs one or two sweeps.
    """
    a = _square(a, "eig_sym input")
    n = a.shape[0]
    scale = np.sqrt(np.sum(a * a))
    if scale > 0 and np.sqrt(np.sum((a - a.T) ** 2)) > SYMMETRY_TOL * scale:
        raise ValueError("eig_sym input is not symmetric")
    work = 0.5 * (a + a.T)
    if guess is None:
        v = np.eye(n, dtype=work.dtype)
    else:
        v = _square(guess, "guess").astype(work.dtype)
        if v.shape != a.shape:
            raise ValueError(f"guess shape {v.shape} does not match input {a.shape}")
        work = v.T @ work @ v
        work = 0.5 * (work + work.T)

    tol = JACOBI_TOL * scale
    rounds = _round_robin(n)
    polished = False
    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_norm(work) <= tol:
            if polished:
                break
            # quadratic convergence: one more sweep takes the leftover coupling to roundoff,
            # which matters for eigenvectors of tiny eigenvalues
            polished = True
        for p, q in rounds:
            two_apq = 2.0 * work[p, q]
            if not two_apq.any():
                continue
            d = work[q, q] - work[p, p]
            # tan of the rotation angle; the denominator vanishes only when apq = 0 and d = 0
            den = np.abs(d) + np.hypot(d, two_apq)
            t = np.where(d >= 0, two_apq, -two_apq) / np.where(den > 0, den, 1.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # all pairs in a round are disjoint, so one orthogonal matrix applies them together
            rot = np.eye(n, dtype=work.dtype)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            work = rot.T @ work @ rot
            v = v @ rot
        work = 0.5 * (work + work.T)
    else:
        residual = _off_norm(work)
        if residual > tol:
            raise ConvergenceError(
                f"Jacobi failed to converge in {JACOBI_MAX_SWEEPS} sweeps, "
                f"off-diagonal residual {residual:.3e} > {tol:.3e}"
            )

    lam = np.diag(work).copy()
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[pivots, np.arange(n)] < 0, -1.0, 1.0)
    return EigResult(lam, v * signs)


def _power_eigenvalues(lam: np.ndarray, p: float, ridge: float | None, n: int) -> np.ndarray:
    if p == 0:
        return np.ones_like(lam)
    size = float(np.max(np.abs(lam))) if lam.size else 0.0
    is_int = float(p).is_integer()
    if p < 0:
        if ridge is None:
            ridge = 1e-10 * max(float(np.sum(lam)), 0.0) / n
        if ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {ridge}")
        if lam.size and lam[-1] < -PSD_TOL * size:
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lam[-1]:.3e})")
        lam = lam + ridge
        top = float(np.max(lam))
        if top <= 0:
            raise ValueError("cannot take a negative power of a zero matrix")
        lam = np.maximum(lam, FLOOR_REL * top)
    elif not is_int:
        if lam.size and lam[-1] < -PSD_TOL * size:
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lam[-1]:.3e})")
        lam = np.maximum(lam, 0.0)
    return lam**p


def mat_power_sym(a, p: float, ridge: float | None = None, guess=None) -> np.ndarray:
    """``Q diag(lam**p) Q^T`` for symmetric ``a``.

    For ``p < 0`` a ridge is added to the spectrum (default
    ``1e-10 * trace(a) / dim``; pass ``ridge=0.0`` for the exact power) and the
    result is clamped at ``1e-12 * lam_max`` before powering. Non-integer powers
    of indefinite input raise ``ValueError``.
    """
    a = _square(a, "mat_power_sym input")
    lam, q = eig_sym(a, guess=guess)
    powered = _power_eigenvalues(lam, p, ridge, a.shape[0])
    out = (q * powered) @ q.T
    return 0.5 * (out + out.T)


def clamp_spectrum(lam: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Apply the same ridge and floor used by ``mat_power_sym`` for negative powers."""
    lam = np.asarray(lam, dtype=np.float64) + ridge
    top = float(np.max(lam))
    if top <= 0:
        raise ValueError("spectrum has no positive eigenvalue")
    return np.maximum(lam, FLOOR_REL * top)
