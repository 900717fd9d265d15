import numpy as np
import pytest

from whitenopt import idealized as ide
from whitenopt import verify
from whitenopt.linalg import vec
from whitenopt.verify import InvariantResult


def test_result_verdicts_and_line():
    ok = InvariantResult("x", 1e-12, 1e-9)
    assert ok.passed and ok.line().endswith("PASS")
    assert not InvariantResult("x", 1e-6, 1e-9).passed
    assert not InvariantResult("x", float("nan"), 1e-9).passed
    band = InvariantResult("ratio", 0.5, 0.8, lower=0.3)
    assert band.passed and "in [0.3, 0.8]" in band.line()
    assert not InvariantResult("ratio", 0.9, 0.8, lower=0.3).passed


def test_argument_checks():
    with pytest.raises(ValueError):
        verify.run_invariants(cases=0)
    with pytest.raises(ValueError):
        verify.run_invariants(max_dim=1)


def test_mp_oracle_against_svd_closed_form():
    # with L = G G^T, R = G^T G the dense step is -||G||_F U S^{-1} V^T (G = U S V^T, full column rank)
    G = np.random.default_rng(0).standard_normal((4, 4))
    u, sv, vt = np.linalg.svd(G)
    expected = -np.linalg.norm(G) * vec(u @ np.diag(1 / sv) @ vt)
    out = verify.kron_inverse_root_apply_mp(G)
    assert np.linalg.norm(out - expected) <= 1e-12 * np.linalg.norm(expected)


def test_mp_oracle_drops_null_directions():
    G = np.random.default_rng(1).standard_normal((3, 2))
    u, sv, vt = np.linalg.svd(G, full_matrices=False)
    expected = -np.linalg.norm(G) * vec(u @ np.diag(1 / sv) @ vt)
    out = verify.kron_inverse_root_apply_mp(G)
    assert np.linalg.norm(out - expected) <= 1e-12 * np.linalg.norm(expected)


def test_checks_have_teeth(monkeypatch):
    # a SOAP direction that ignores the rotation must fail the equivalence check
    def wrong(dist, g):
        _, _, second = ide.rotated_second_moment(dist)
        return -g / np.sqrt(vec(second))

    monkeypatch.setattr(ide, "idealized_soap_direction", wrong)
    result = verify.check_soap_equals_shampoo(cases=20, max_dim=4, seed=0)
    assert not result.passed


def test_kron_checks_pass_small():
    assert verify.check_kron_vec(cases=20, seed=1).passed
    assert all(r.passed for r in verify.check_kron_power(cases=20, seed=1))


def test_suite_is_deterministic():
    a = verify.check_dense_oracle(cases=10, seed=3)
    b = verify.check_dense_oracle(cases=10, seed=3)
    assert [r.max_error for r in a] == [r.max_error for r in b]
