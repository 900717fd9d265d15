"""Invariant suite behind ``whitenopt verify``.

Every check returns an :class:`InvariantResult` with the largest error seen
over its random cases. Each check draws from its own child of the master seed
so adding or resizing one check leaves the others' cases unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from whitenopt import idealized as ide
from whitenopt.linalg import kron, mat_power_sym, sample_spd, vec
from whitenopt.optim import ShampooConfig, ShampooState, shampoo_step

# dense double-precision inverse roots stay at ~1e-11 up to cond(sigma) = 1e6;
# past ~1e9 roundoff in the small-eigenvalue eigenvectors breaks 1e-9
DENSE_COND_CAP = 1e6
FACTOR_COND_MAX = 1e6
# even an exactly rounded sigma^{-1/2} leaves ~eps * cond(sigma) in sigma^{-1/2} sigma sigma^{-1/2}
IDENTITY_COND_CAP = 1e4


@dataclass(frozen=True)
class InvariantResult:
    name: str
    max_error: float
    tolerance: float
    lower: float | None = None

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.max_error):
            return False
        if self.lower is not None:
            return self.lower <= self.max_error <= self.tolerance
        return self.max_error <= self.tolerance

    def line(self) -> str:
        bound = f"<= {self.tolerance:.1e}" if self.lower is None else f"in [{self.lower:g}, {self.tolerance:g}]"
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name:<34} {self.max_error:.3e}  {bound:<14} {verdict}"


def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def _dims(rng, max_dim: int, low: int = 2) -> tuple[int, int]:
    m, n = rng.integers(low, max_dim + 1, size=2)
    return int(m), int(n)


def _seed(rng) -> int:
    return int(rng.integers(2**63))


def _kron_dist(rng, m: int, n: int, cond_L: float, cond_R: float) -> ide.GradientDistribution:
    L = sample_spd(m, _seed(rng), cond_L)
    R = sample_spd(n, _seed(rng), cond_R)
    # random overall scale so nothing relies on unit-sized factors
    L = L * 10.0 ** rng.uniform(-3, 3)
    R = R * 10.0 ** rng.uniform(-3, 3)
    return ide.make_kron_distribution(L, R)


def _stress_conds(rng, case: int) -> tuple[float, float]:
    """Independent factor condition numbers up to ``FACTOR_COND_MAX``, extremes first."""
    if case == 0:
        return FACTOR_COND_MAX, FACTOR_COND_MAX
    top = np.log10(FACTOR_COND_MAX)
    return 10.0 ** rng.uniform(0, top), 10.0 ** rng.uniform(0, top)


def _capped_conds(rng, case: int, cap: float = DENSE_COND_CAP) -> tuple[float, float]:
    """Factor condition numbers whose product is at most ``cap``, one-sided extremes first."""
    top = np.log10(cap)
    if case == 0:
        return cap, 1.0
    if case == 1:
        return 1.0, cap
    a = rng.uniform(0, top)
    b = rng.uniform(0, top - a)
    return (10.0**a, 10.0**b) if rng.random() < 0.5 else (10.0**b, 10.0**a)


def check_soap_equals_shampoo(cases: int = 200, max_dim: int = 5, seed=0) -> InvariantResult:
    """Idealized SOAP and Shampoo directions agree on Kronecker covariances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        m, n = _dims(rng, max_dim)
        dist = _kron_dist(rng, m, n, *_stress_conds(rng, case))
        g = rng.standard_normal(m * n)
        shampoo = ide.idealized_shampoo_direction(dist, g)
        soap = ide.idealized_soap_direction(dist, g)
        worst = max(worst, _rel(soap, shampoo))
    return InvariantResult("soap_equals_shampoo", worst, 1e-9)


def check_dense_oracle(cases: int = 200, max_dim: int = 5, seed=0) -> list[InvariantResult]:
    """Both idealized directions against ``-sigma^{-1/2} g`` from the dense matrix."""
    rng = np.random.default_rng(seed)
    worst_shampoo = worst_soap = 0.0
    for case in range(cases):
        m, n = _dims(rng, max_dim)
        dist = _kron_dist(rng, m, n, *_capped_conds(rng, case))
        g = rng.standard_normal(m * n)
        oracle = -mat_power_sym(dist.sigma, -0.5, ridge=0.0) @ g
        worst_shampoo = max(worst_shampoo, _rel(ide.idealized_shampoo_direction(dist, g), oracle))
        worst_soap = max(worst_soap, _rel(ide.idealized_soap_direction(dist, g), oracle))
    return [
        InvariantResult("shampoo_matches_dense_oracle", worst_shampoo, 1e-9),
        InvariantResult("soap_matches_dense_oracle", worst_soap, 1e-9),
    ]


def check_rotated_diagonal(cases: int = 200, max_dim: int = 5, seed=0) -> InvariantResult:
    """The factor eigenbases diagonalize a Kronecker covariance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        m, n = _dims(rng, max_dim)
        dist = _kron_dist(rng, m, n, *_stress_conds(rng, case))
        rot = ide.rotated_covariance(dist)
        off = rot - np.diag(np.diag(rot))
        worst = max(worst, float(np.linalg.norm(off) / np.linalg.norm(dist.sigma)))
    return InvariantResult("rotated_covariance_offdiag", worst, 1e-9)


def check_kron_vec(cases: int = 100, max_dim: int = 6, seed=0) -> InvariantResult:
    """``kron(A, B) vec(G) == vec(B G A^T)`` for rectangular A, B."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        p, q, r, s = rng.integers(1, max_dim + 1, size=4)
        A = rng.standard_normal((p, q))
        B = rng.standard_normal((r, s))
        G = rng.standard_normal((s, q))
        worst = max(worst, _rel(kron(A, B) @ vec(G), vec(B @ G @ A.T)))
    return InvariantResult("kron_vec_identity", worst, 1e-12)


def check_kron_power(cases: int = 100, max_dim: int = 6, seed=0) -> list[InvariantResult]:
    """``kron(A, B)^p == kron(A^p, B^p)`` for SPD A, B."""
    rng = np.random.default_rng(seed)
    powers = (0.5, -0.5, 2.0)
    worst = dict.fromkeys(powers, 0.0)
    for _ in range(cases):
        a, b = rng.integers(1, max_dim + 1, size=2)
        A = sample_spd(int(a), _seed(rng), 10.0 ** rng.uniform(0, 3))
        B = sample_spd(int(b), _seed(rng), 10.0 ** rng.uniform(0, 3))
        K = kron(A, B)
        for p in powers:
            lhs = mat_power_sym(K, p, ridge=0.0)
            rhs = kron(mat_power_sym(A, p, ridge=0.0), mat_power_sym(B, p, ridge=0.0))
            worst[p] = max(worst[p], _rel(lhs, rhs))
    return [InvariantResult(f"kron_power_identity_p={p:g}", worst[p], 1e-9) for p in powers]


def check_whitening_identity(cases: int = 200, max_dim: int = 5, seed=0) -> InvariantResult:
    """``sigma^{-1/2} sigma sigma^{-1/2} == I``, largest entry deviation."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        m, n = _dims(rng, max_dim)
        dist = _kron_dist(rng, m, n, *_capped_conds(rng, case, IDENTITY_COND_CAP))
        w = dist.inv_sqrt_sigma
        worst = max(worst, float(np.max(np.abs(w @ dist.sigma @ w - np.eye(m * n)))))
    return InvariantResult("whitening_identity", worst, 1e-10)


def check_whitening_monte_carlo(
    sample_count: int = 100_000, repeats: int = 4, seed=0
) -> list[InvariantResult]:
    """Whitened sample covariance of a 2x3 Kronecker source, at N and 4N samples.

    Reports the worst per-entry deviation from I at N, and the ratio of the
    mean RMS deviation at 4N to that at N (1/sqrt(N) scaling predicts 0.5).
    """
    rng = np.random.default_rng(seed)
    dist = _kron_dist(rng, 2, 3, 10.0, 10.0)
    worst_entry = 0.0
    small = large = 0.0
    for _ in range(repeats):
        at_n = ide.kron_approx_error(dist, sample_count, _seed(rng))
        at_4n = ide.kron_approx_error(dist, 4 * sample_count, _seed(rng))
        worst_entry = max(worst_entry, at_n.max_entry_error)
        small += at_n.empirical_cov_error
        large += at_4n.empirical_cov_error
    return [
        InvariantResult("whitened_cov_max_entry", worst_entry, 0.05),
        InvariantResult("whitened_cov_4x_sample_ratio", large / small, 0.8, lower=0.3),
    ]


def check_adam_equals_shampoo_diagonal(cases: int = 200, max_dim: int = 5, seed=0) -> InvariantResult:
    """With diagonal factors the Kronecker covariance is diagonal and Shampoo reduces to Adam."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        m, n = _dims(rng, max_dim)
        L = np.diag(10.0 ** rng.uniform(-3, 3, m))
        R = np.diag(10.0 ** rng.uniform(-3, 3, n))
        dist = ide.make_kron_distribution(L, R)
        g = rng.standard_normal(m * n)
        worst = max(worst, _rel(ide.idealized_adam_direction(dist, g), ide.idealized_shampoo_direction(dist, g)))
    return InvariantResult("adam_equals_shampoo_diagonal", worst, 1e-12)


def kron_inverse_root_apply_mp(G: np.ndarray, dps: int = 40) -> np.ndarray:
    """``-((R kron L) / tr L)^{-1/2} vec(G)`` with ``L = G G^T``, ``R = G^T G``, in high precision.

    The dense matrix is built and eigendecomposed with ``dps`` decimal digits,
    so the result is independent of the double-precision Jacobi solver. Null
    directions (rank-deficient L for non-square G) are dropped, which is the
    ridge -> 0 limit.
    """
    m, n = G.shape
    with mpmath.workdps(dps):
        g = mpmath.matrix(G.tolist())
        L = g * g.T
        R = g.T * g
        tr = sum(L[i, i] for i in range(m))
        H = mpmath.matrix(m * n, m * n)
        for a in range(n):
            for b in range(n):
                for i in range(m):
                    for j in range(m):
                        H[a * m + i, b * m + j] = R[a, b] * L[i, j] / tr
        lam, Q = mpmath.eigsy(H)
        v = mpmath.matrix(vec(G).tolist())
        coeff = Q.T * v
        cutoff = max(abs(x) for x in lam) * mpmath.mpf(10) ** (-(dps * 3) // 4)
        out = mpmath.matrix(m * n, 1)
        for k in range(m * n):
            if lam[k] > cutoff:
                out += Q[:, k] * (coeff[k] / mpmath.sqrt(lam[k]))
        return -np.array([float(x) for x in out])


def check_shampoo_kronecker_consistency(cases: int = 50, seed=0) -> InvariantResult:
    """One practical Shampoo step (fresh state, no EMA, no ridge) equals the dense Kronecker whitening step."""
    rng = np.random.default_rng(seed)
    cfg = ShampooConfig(lr=1.0)
    worst = 0.0
    for shape in ((3, 2), (4, 4)):
        for _ in range(cases):
            G = rng.standard_normal(shape)
            new_param, _ = shampoo_step(ShampooState.zeros(shape), cfg, np.zeros(shape), G)
            worst = max(worst, _rel(vec(new_param), kron_inverse_root_apply_mp(G)))
    return InvariantResult("shampoo_kronecker_consistency", worst, 1e-9)


def run_invariants(cases: int = 200, max_dim: int = 5, seed=0) -> list[InvariantResult]:
    """The full suite. ``cases`` and ``max_dim`` size the idealized-optimizer checks."""
    if cases < 1:
        raise ValueError(f"cases must be >= 1, got {cases}")
    if max_dim < 2:
        raise ValueError(f"max_dim must be >= 2, got {max_dim}")
    s = np.random.SeedSequence(seed).spawn(9)
    results = [check_soap_equals_shampoo(cases, max_dim, s[0])]
    results += check_dense_oracle(cases, max_dim, s[1])
    results.append(check_rotated_diagonal(cases, max_dim, s[2]))
    results.append(check_kron_vec(100, 6, s[3]))
    results += check_kron_power(100, 6, s[4])
    results.append(check_whitening_identity(cases, max_dim, s[5]))
    results += check_whitening_monte_carlo(seed=s[6])
    results.append(check_adam_equals_shampoo_diagonal(cases, max_dim, s[7]))
    results.append(check_shampoo_kronecker_consistency(50, s[8]))
    return results
