"""Idealized optimizers on an analytic Gaussian gradient source.

Second moments are exact expectations over a zero-mean Gaussian with known
covariance ``sigma`` of ``vec(G)``; first-moment momentum is left out. When
``sigma`` factors as ``kron(R, L) / trace(L)`` the idealized SOAP and Shampoo
directions coincide, which is what the checks in :mod:`whitenopt.verify`
exercise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from whitenopt.linalg import as_matrix, clamp_spectrum, eig_sym, kron, mat_power_sym, unvec, vec

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GradientDistribution:
    m: int
    n: int
    sigma: np.ndarray
    factor_L: np.ndarray | None = None
    factor_R: np.ndarray | None = None

    def __post_init__(self):
        sigma = as_matrix(self.sigma, "sigma")
        dim = self.m * self.n
        if sigma.shape != (dim, dim):
            raise ValueError(f"sigma must be {dim}x{dim} for {self.m}x{self.n} gradients, got {sigma.shape}")
        norm = np.linalg.norm(sigma)
        if np.linalg.norm(sigma - sigma.T) > SYMMETRY_TOL * norm:
            raise ValueError("sigma is not symmetric")
        if (self.factor_L is None) != (self.factor_R is None):
            raise ValueError("factor_L and factor_R must be given together")
        if self.has_factors:
            rebuilt = kron(self.factor_R, self.factor_L) / np.trace(self.factor_L)
            if np.linalg.norm(sigma - rebuilt) > 1e-10 * norm:
                raise ValueError("sigma does not match kron(R, L) / trace(L)")
            # the Kronecker product is positive definite iff both factors are
            for name, (lam, _) in zip(("factor_L", "factor_R"), self.factor_eigs):
                if not lam[-1] > 0:
                    raise ValueError(f"{name} is not positive definite")
        elif not self.eig.eigenvalues[-1] > 0:
            raise ValueError(f"sigma is not positive definite (min eigenvalue {self.eig.eigenvalues[-1]:.3e})")

    @property
    def has_factors(self) -> bool:
        return self.factor_L is not None

    @cached_property
    def eig(self):
        return eig_sym(self.sigma)

    @cached_property
    def factor_eigs(self):
        return eig_sym(self.factor_L), eig_sym(self.factor_R)

    @cached_property
    def sqrt_sigma(self) -> np.ndarray:
        lam, q = self.eig
        return (q * np.sqrt(np.maximum(lam, 0.0))) @ q.T

    @cached_property
    def inv_sqrt_sigma(self) -> np.ndarray:
        return mat_power_sym(self.sigma, -0.5, ridge=0.0)


def _check_spd(a, name: str) -> np.ndarray:
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got {a.shape}")
    if np.linalg.norm(a - a.T) > SYMMETRY_TOL * np.linalg.norm(a):
        raise ValueError(f"{name} is not symmetric")
    if not eig_sym(a).eigenvalues[-1] > 0:
        raise ValueError(f"{name} is not positive definite")
    return 0.5 * (a + a.T)


def make_kron_distribution(L, R) -> GradientDistribution:
    """Gradient source whose whitening matrix is ``kron(R, L) / trace(L)``."""
    L = _check_spd(L, "L")
    R = _check_spd(R, "R")
    sigma = kron(R, L) / np.trace(L)
    return GradientDistribution(L.shape[0], R.shape[0], sigma, L, R)


def make_dense_distribution(sigma, m: int, n: int) -> GradientDistribution:
    sigma = as_matrix(sigma, "sigma")
    return GradientDistribution(m, n, 0.5 * (sigma + sigma.T))


def sample_gradients(dist: GradientDistribution, count: int, rng) -> np.ndarray:
    """``count`` draws of ``unvec(sigma^{1/2} z)``, stacked as ``(count, m, n)``."""
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((count, dist.m * dist.n))
    flat = z @ dist.sqrt_sigma.T
    # row-wise unvec (column stacking) of each sample
    return flat.reshape(count, dist.n, dist.m).transpose(0, 2, 1)


def sample_gradient(dist: GradientDistribution, rng) -> np.ndarray:
    return sample_gradients(dist, 1, rng)[0]


def _check_vector(dist: GradientDistribution, g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (dist.m * dist.n,):
        raise ValueError(f"expected a vector of length {dist.m * dist.n}, got shape {g.shape}")
    return g


def whiten(dist: GradientDistribution, g) -> np.ndarray:
    return dist.inv_sqrt_sigma @ _check_vector(dist, g)


def full_whitening_step(param, grad, dist: GradientDistribution, lr: float) -> np.ndarray:
    """``w <- w - lr * sigma^{-1/2} vec(G)`` with the dense mn x mn inverse root."""
    param = as_matrix(param, "param")
    grad = as_matrix(grad, "grad")
    if param.shape != (dist.m, dist.n) or grad.shape != param.shape:
        raise ValueError(f"param {param.shape} and grad {grad.shape} must both be {dist.m}x{dist.n}")
    return param - lr * unvec(whiten(dist, vec(grad)), dist.m, dist.n)


def _factors(dist: GradientDistribution) -> tuple[np.ndarray, np.ndarray]:
    if not dist.has_factors:
        raise ValueError("distribution has no Kronecker factors")
    return dist.factor_L, dist.factor_R


def idealized_shampoo_direction(dist: GradientDistribution, g) -> np.ndarray:
    """``-((R kron L) / tr L)^{-1/2} g`` through the factored roots ``L^{-1/2}``, ``R^{-1/2}``."""
    L, R = _factors(dist)
    G = unvec(_check_vector(dist, g), dist.m, dist.n)
    root_L = mat_power_sym(L, -0.5, ridge=0.0)
    root_R = mat_power_sym(R, -0.5, ridge=0.0)
    return -np.sqrt(np.trace(L)) * vec(root_L @ G @ root_R)


def rotated_second_moment(dist: GradientDistribution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenbases of the factors and the m x n grid of ``E[G'^2]`` for ``G' = Q_L^T G Q_R``.

    With a Kronecker covariance the rotated covariance is diagonal with
    entries ``lam_L[i] * lam_R[j] / tr L``.
    """
    L, _ = _factors(dist)
    (lam_L, Q_L), (lam_R, Q_R) = dist.factor_eigs
    second = np.outer(clamp_spectrum(lam_L), clamp_spectrum(lam_R)) / np.trace(L)
    return Q_L, Q_R, second


def idealized_soap_direction(dist: GradientDistribution, g) -> np.ndarray:
    """Rotate into the factor eigenbases, divide by the exact root second moment, rotate back."""
    Q_L, Q_R, second = rotated_second_moment(dist)
    G = unvec(_check_vector(dist, g), dist.m, dist.n)
    rotated = Q_L.T @ G @ Q_R
    normalized = rotated / np.sqrt(second)
    return -vec(Q_L @ normalized @ Q_R.T)


def idealized_adam_direction(dist: GradientDistribution, g) -> np.ndarray:
    return -_check_vector(dist, g) / np.sqrt(np.diag(dist.sigma))


def rotated_covariance(dist: GradientDistribution) -> np.ndarray:
    """``(Q_R kron Q_L)^T sigma (Q_R kron Q_L)``, formed densely."""
    Q_L, Q_R, _ = rotated_second_moment(dist)
    Q = kron(Q_R, Q_L)
    return Q.T @ dist.sigma @ Q


@dataclass(frozen=True)
class WhiteningReport:
    empirical_cov_error: float
    max_entry_error: float
    kron_approx_error: float
    sample_count: int


def kron_approx_error(dist: GradientDistribution, sample_count: int, seed) -> WhiteningReport:
    """Monte-Carlo check of the Kronecker construction and of gradient whitening.

    ``kron_approx_error`` is the relative Frobenius gap between
    ``kron(E[G^T G], E[G G^T]) / tr(E[G G^T])`` and the dense ``E[g g^T]``,
    both estimated from the same samples. ``empirical_cov_error`` is the RMS
    per-entry distance of the whitened sample covariance from the identity,
    ``max_entry_error`` its largest entry.
    """
    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    grads = sample_gradients(dist, sample_count, seed)
    left = np.einsum("kij,klj->il", grads, grads) / sample_count
    right = np.einsum("kji,kjl->il", grads, grads) / sample_count
    flat = grads.transpose(0, 2, 1).reshape(sample_count, -1)
    dense = flat.T @ flat / sample_count
    construction = kron(right, left) / np.trace(left)
    kron_gap = float(np.linalg.norm(construction - dense) / np.linalg.norm(dense))

    white = flat @ dist.inv_sqrt_sigma.T
    cov = white.T @ white / sample_count
    diff = cov - np.eye(dist.m * dist.n)
    return WhiteningReport(
        empirical_cov_error=float(np.sqrt(np.mean(diff * diff))),
        max_entry_error=float(np.max(np.abs(diff))),
        kron_approx_error=kron_gap,
        sample_count=sample_count,
    )
