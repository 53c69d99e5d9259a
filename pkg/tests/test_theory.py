from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from pmuattack.attacksim import gen_synthetic_lowrank, inject_unobservable
from pmuattack.errors import (
    BoundInapplicable,
    InvalidPsiC,
    RankDeficiencyAmbiguous,
    SeriesDivergent,
    SingularGram,
)
from pmuattack.experiments import ring_theory_point
from pmuattack.gridmodel import binary_regular_transform, build_ring_network, gaussian_transform
from pmuattack.theory import (
    IncoherenceStats,
    SigmaEstimate,
    build_certificate,
    compact_svd,
    compute_incoherence,
    gershgorin_sigma_bound,
    lambda_range,
    noisy_error_bounds,
    psi_c_admissible,
    sigma_exhaustive,
    sigma_greedy,
    verify_conditions,
)


def _unit_cols(A):
    return A / np.linalg.norm(A, axis=0)


def _incoherent_w(rng, p, n, k):
    while True:
        W = _unit_cols(rng.standard_normal((p, n)))
        mu = np.max(np.abs(W.T @ W - np.eye(n)))
        if k * mu < 1:
            return W, mu


def _brute_sigma(W, k):
    # straight enumeration of the smallest Gram eigenvalue over all supports up to size k
    best = 0.0
    for size in range(1, k + 1):
        for idx in itertools.combinations(range(W.shape[1]), size):
            Wi = W[:, idx]
            best = max(best, 1.0 / np.linalg.eigvalsh(Wi.conj().T @ Wi).min())
    return best


def _stats(epsilon, mu, sigma, k=1, n=10):
    return IncoherenceStats(epsilon=epsilon, mu=mu, rho=1.0, r=1, p=20, n=n,
                            sigma={k: SigmaEstimate(k, sigma, sigma, sigma, True)})


# -- incoherence -------------------------------------------------------------------


def test_sigma_one_is_one(rng):
    W = _unit_cols(rng.standard_normal((10, 6)) + 1j * rng.standard_normal((10, 6)))
    assert abs(sigma_exhaustive(W, 1) - 1) <= 1e-12


def test_orthonormal_columns(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((9, 4)))
    L = gen_synthetic_lowrank(6, 9, 2, 0)
    st = compute_incoherence(L, Q, ks=(1, 2, 3))
    assert st.mu <= 1e-12
    for k in (1, 2, 3):
        assert abs(st.sigma_k(k) - 1) <= 1e-12


def test_ring_n4_coherence():
    _, tm = build_ring_network(4)
    st = compute_incoherence(gen_synthetic_lowrank(5, tm.W.shape[0], 1, 0), tm.W, ks=(1,))
    assert abs(st.mu - 2 / math.sqrt(24)) <= 1e-12


def test_sigma_sandwich_8x4(rng):
    W, mu = _incoherent_w(rng, 8, 4, 2)
    ex = sigma_exhaustive(W, 2)
    assert sigma_greedy(W, 2) <= ex + 1e-12
    assert ex <= 1 / (1 - mu) + 1e-12
    assert ex == pytest.approx(_brute_sigma(W, 2), rel=1e-12)


def test_sigma_nondecreasing(rng):
    W = _unit_cols(rng.standard_normal((12, 7)))
    vals = [sigma_exhaustive(W, k) for k in range(1, 6)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


def test_gershgorin_values():
    assert gershgorin_sigma_bound(0.3, 1) == 1.0
    assert gershgorin_sigma_bound(0.1, 3) == pytest.approx(1.25, rel=1e-15)
    with pytest.raises(BoundInapplicable):
        gershgorin_sigma_bound(0.5, 2)


def test_gershgorin_dominates_sigma3():
    rng = np.random.default_rng(77)
    for _ in range(100):
        W, mu = _incoherent_w(rng, 40, 5, 3)
        assert sigma_exhaustive(W, 3) <= gershgorin_sigma_bound(mu, 3) + 1e-12


def test_large_n_falls_back_to_bounds(rng):
    tm = binary_regular_transform(100, 40, 2, rng)
    L = gen_synthetic_lowrank(10, 100, 1, rng)
    st = compute_incoherence(L, tm.W, ks=(5,))
    est = st.sigma[5]
    assert not est.exact and est.lower <= est.upper
    assert est.value == est.upper


def test_rank_ambiguity_detected():
    with pytest.raises(RankDeficiencyAmbiguous):
        compact_svd(np.diag([1.0, 1e-10, 0.0]))
    _, s, _ = compact_svd(np.diag([1.0, 1e-14, 0.0]))
    assert s.size == 1


def test_rho_and_epsilon_by_hand():
    # V spans e_1 in R^4, W columns are e_1 and (e_2 + e_3) / sqrt 2
    L = np.outer([1.0, 2.0], [1.0, 0, 0, 0])
    W = np.array([[1, 0], [0, 1], [0, 1], [0, 0]]) / np.array([1, math.sqrt(2)])
    st = compute_incoherence(L, W, ks=(1, 2))
    assert st.r == 1 and st.epsilon == pytest.approx(1.0) and st.rho == pytest.approx(4.0)
    assert st.mu == 0 and st.sigma_k(2) == pytest.approx(1.0)


def test_epsilon_decays_with_n():
    ns = [20, 40, 80, 160, 320]
    eps = []
    for n in ns:
        vals = []
        for seed in range(5):
            r = np.random.default_rng(seed)
            tm = binary_regular_transform(5 * n // 2, n, 2, r)
            L = gen_synthetic_lowrank(50, 5 * n // 2, 3, r)
            vals.append(compute_incoherence(L, tm.W, ks=()).epsilon)
        eps.append(np.mean(vals))
    slope = np.polyfit(np.log(ns), np.log(eps), 1)[0]
    assert slope <= -0.4


# -- regularisation range ------------------------------------------------------------


def test_pairing_condition_values():
    lhs = (2 - 0.125) * math.sqrt(0.125) / 0.875
    assert lhs == pytest.approx(0.7576, abs=1e-4)
    assert math.sqrt(5 / 3) == pytest.approx(1.2910, abs=1e-4)
    assert psi_c_admissible(0.125, 0.25)
    assert not psi_c_admissible(0.9, 0.1)
    with pytest.raises(InvalidPsiC):
        lambda_range(_stats(0.1, 0.01, 1.0), 0.9, 0.1, 1)


def test_lambda_range_hand_formula():
    st = _stats(0.01, 0.02, 1.1, k=2)
    lr = lambda_range(st, 0.125, 0.25, 2)
    a = 1 + 1 / (2 - 0.125)
    assert lr.lambda_min == pytest.approx(a * 0.01 / (1 - a * 2 * 1.1 * 0.02), rel=1e-14)
    assert lr.lambda_max == pytest.approx(math.sqrt(0.125 / 2.2), rel=1e-14)
    assert lr.lambda_min_noisy == pytest.approx(a * 0.01 / (0.5 - a * 2 * 1.1 * 0.02), rel=1e-14)
    assert lr.lambda_max_noisy == pytest.approx(0.5 * math.sqrt(0.125 / 2.2), rel=1e-14)
    assert lr.feasible


def test_zero_epsilon_always_feasible():
    lr = lambda_range(_stats(0.0, 0.05, 1.05, k=2), 0.125, 0.25, 2)
    assert lr.lambda_min == 0 and lr.lambda_max > 0 and lr.feasible


def test_negative_denominator_is_infeasible():
    lr = lambda_range(_stats(0.1, 0.2, 1.5, k=3), 0.125, 0.25, 3)
    assert math.isinf(lr.lambda_min) and not lr.feasible


def test_coherence_budget_enforced():
    lr = lambda_range(_stats(0.0, 0.2, 1.0, k=2), 0.125, 0.25, 2)
    assert not lr.coherence_ok and not lr.feasible


def test_noisy_range_nested(rng):
    for _ in range(20):
        W = _unit_cols(rng.standard_normal((30, 8)))
        st = compute_incoherence(gen_synthetic_lowrank(10, 30, 1, rng), W, ks=(1, 2))
        for k in (1, 2):
            lr = lambda_range(st, 0.125, 0.25, k)
            assert lr.lambda_min_noisy >= lr.lambda_min
            assert lr.lambda_max_noisy <= lr.lambda_max


def test_ring_reference_interval():
    row = ring_theory_point(192)
    assert row["feasible"]
    assert row["lambda_min"] <= row["lambda_min_ref"]
    assert row["lambda_max"] >= row["lambda_max_ref"]


# -- noisy bounds ----------------------------------------------------------------------


def test_noisy_bounds_zero_noise():
    assert noisy_error_bounds(_stats(0.1, 0.0, 1.0), 1.0, 1, 0.0, 10, 10, 1, 0.125) == (0.0, 0.0)


def test_noisy_bounds_dual_transcription():
    st = _stats(0.1, 0.0, 1.0, n=5)
    bL, bC = noisy_error_bounds(st, 1.0, 1, 1.0, 10, 10, 1, 0.125)
    assert bL == pytest.approx((2 - 1 / 8 + (1 + 15 / 8) * math.sqrt(13)) * (2 / (7 / 8)), rel=1e-14)
    # second transcription of the attack bound with mu = 0, sigma = 1
    q = 7 / 8
    assert bC == pytest.approx((1 + (2 + q) * math.sqrt(13)) * 2 / q, rel=1e-14)


def test_noisy_bounds_linear_in_eta():
    st = _stats(0.1, 0.03, 1.1, k=2, n=12)
    a = noisy_error_bounds(st, 0.7, 2, 0.3, 20, 15, 2, 0.125)
    b = noisy_error_bounds(st, 0.7, 2, 0.6, 20, 15, 2, 0.125)
    assert b[0] == pytest.approx(2 * a[0], rel=1e-14) and b[1] == pytest.approx(2 * a[1], rel=1e-14)


# -- dual certificate --------------------------------------------------------------------


def _paired_instance(seed=0):
    """t=12, p=8, n=4; each bus owns two channels and the data row space is nearly alternating."""
    W = np.zeros((8, 4))
    for j in range(4):
        W[2 * j, j] = W[2 * j + 1, j] = 1 / math.sqrt(2)
    rng = np.random.default_rng(seed)
    b = np.array([1, -1] * 4) / math.sqrt(8) + 0.02 * rng.standard_normal(8)
    L = np.outer(rng.standard_normal(12), b)
    return inject_unobservable(L, W, [0], seed=seed + 1), W


def _gauss_instance(seed):
    rng = np.random.default_rng(seed)
    W = gaussian_transform(8, 4, rng).W
    L = gen_synthetic_lowrank(12, 8, 1, rng)
    return inject_unobservable(L, W, [0], seed=seed + 1), W


def _recompute(report, W):
    Q, U, V = report.Q, report.U_bar, report.V_hat
    PU, PV = U @ U.conj().T, V @ V.conj().T
    I = np.eye(Q.shape[1])
    sup = list(report.support)
    off = [j for j in range(W.shape[1]) if j not in sup]
    QW = Q @ W.conj()
    a = np.linalg.norm(PU @ Q + Q @ PV - PU @ Q @ PV - U @ V.conj().T)
    b = np.linalg.norm((np.eye(Q.shape[0]) - PU) @ Q @ (I - PV), 2) + report.tail_bound
    c = np.abs(QW[:, sup] - report.lam * report.H_hat).max()
    d = np.linalg.norm(QW[:, off], axis=0).max() + report.tail_bound
    return a, b, c, d


def test_certificate_mid_range_passes():
    sc, W = _paired_instance()
    st = compute_incoherence(sc.L_bar, W, ks=(1,))
    lr = lambda_range(st, 0.125, 0.25, 1)
    assert lr.feasible
    lam = 0.5 * (lr.lambda_min + lr.lambda_max)
    rep = build_certificate(sc.L_bar, sc.C_bar, W, lam)
    v = verify_conditions(rep)
    assert v.valid and v.strict
    assert rep.h_residual <= 1e-8 and not rep.approximate
    assert rep.intersection_trivial


def test_margins_match_straight_line_recomputation():
    sc, W = _gauss_instance(0)
    rep = build_certificate(sc.L_bar, sc.C_bar, W, 0.6)
    a, b, c, d = _recompute(rep, W)
    v = verify_conditions(rep)
    qn = np.linalg.norm(rep.Q)
    assert v.margin_a == pytest.approx(1e-8 * qn - a, abs=1e-12)
    assert v.margin_b == pytest.approx(1 - b, abs=1e-12)
    assert v.margin_c == pytest.approx(1e-8 - c, abs=1e-12)
    assert v.margin_d == pytest.approx(0.6 - d, abs=1e-12)


def test_noisy_thresholds_are_tighter():
    sc, W = _gauss_instance(0)
    rep = build_certificate(sc.L_bar, sc.C_bar, W, 0.8)
    quiet, loud = verify_conditions(rep), verify_conditions(rep, noisy=True)
    assert quiet.valid and not loud.valid
    assert loud.margin_b < quiet.margin_b and loud.margin_d < quiet.margin_d


def test_large_lambda_breaks_some_instance():
    broken = 0
    for seed in range(5):
        sc, W = _gauss_instance(seed)
        v = verify_conditions(build_certificate(sc.L_bar, sc.C_bar, W, 3.0))
        broken += (v.margin_b < 0) or (v.margin_d < 0)
    assert broken >= 1


def test_psi_chain_bound():
    for seed in range(6):
        sc, W = _gauss_instance(seed)
        st = compute_incoherence(sc.L_bar, W, ks=(1,))
        for lam in (0.3, 0.6, 0.9):
            rep = build_certificate(sc.L_bar, sc.C_bar, W, lam)
            if rep.h_residual <= 1e-8:
                assert rep.psi <= lam**2 * 1 * st.sigma_k(1) + 1e-10


def test_orthogonal_case_collapses():
    W = np.eye(8)[:, :4]
    L = np.outer(np.arange(1.0, 7.0), [0, 0, 0, 0, 1, 1, -1, 1])
    C = np.zeros((6, 4))
    C[:, 0] = np.linspace(1, 2, 6)
    rep = build_certificate(L, C, W, 0.5, at="ground_truth")
    assert rep.psi <= 1e-15 and rep.error_a <= 1e-12
    assert rep.neumann_terms == 1
    assert rep.approximate


def test_empty_support_noted():
    L = gen_synthetic_lowrank(6, 8, 1, 0)
    W = _unit_cols(np.random.default_rng(0).standard_normal((8, 4)))
    rep = build_certificate(L, np.zeros((6, 4)), W, 0.9)
    assert "empty support" in rep.note
    np.testing.assert_allclose(rep.Q, rep.U_bar @ rep.V_hat.conj().T)
    assert verify_conditions(rep).b


def test_certificate_errors():
    w = np.array([1.0, 1, 0, 0]) / math.sqrt(2)
    W = np.column_stack([w, w, [0, 0, 1, 0]])
    C = np.zeros((3, 3))
    C[:, :2] = 1.0
    with pytest.raises(SingularGram):
        build_certificate(np.outer([1.0, 2, 3], [0, 0, 0, 1]), C, W, 0.5, at="ground_truth")
    C = np.zeros((3, 3))
    C[:, 2] = 1.0
    with pytest.raises(SeriesDivergent):
        build_certificate(np.outer([1.0, 2, 3], [0, 0, 1, 0]), C, W, 0.5, at="ground_truth")
