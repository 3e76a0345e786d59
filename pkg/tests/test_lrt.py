import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from rsslvs import ChannelParams, Location, Scenario, default_scenario
from rsslvs.channel import draw_observations, log_likelihood, mean_rss
from rsslvs.lrt import (
    D0,
    D1,
    ORACLE,
    WORST_CASE,
    DetectionStats,
    LrtVerifier,
    best_threshold,
    decide,
    decide_from_score,
    evaluate,
    h1_candidates,
    log_likelihood_ratio,
    scores,
    stats_csv,
    sweep_scores,
    sweep_threshold,
    worst_case_candidates,
)
from rsslvs.scenario import H0, H1, GroundTruthSample, distance, generate_dataset

# (claimed, h1 true) pairs used for the calibration checks
GEOMETRIES = [
    ((40.0, 60.0), (90.0, 60.0)),
    ((75.0, 75.0), (75.0, 130.0)),
    ((20.0, 120.0), (70.0, 100.0)),
]


def q_closed_form(log_ell, d, sigma):
    """(alpha, beta) for the Gaussian log-ratio test."""
    alpha = norm.sf(sigma * log_ell / d + d / (2 * sigma))
    beta = norm.sf(sigma * log_ell / d - d / (2 * sigma))
    return alpha, beta


def q_by_quadrature(log_ell, d, sigma):
    # integrate the log-ratio densities directly: N(-+m, s^2), m = d^2/2sigma^2, s = d/sigma
    m, s = d**2 / (2 * sigma**2), d / sigma
    pdf = lambda x, mu: math.exp(-0.5 * ((x - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    alpha = integrate.quad(pdf, log_ell, math.inf, args=(-m,), epsabs=1e-13)[0]
    beta = integrate.quad(pdf, log_ell, math.inf, args=(m,), epsabs=1e-13)[0]
    return alpha, beta


@pytest.fixture
def verifier(scenario, params):
    return LrtVerifier(params, scenario)


@pytest.mark.parametrize("log_ell", [-2.0, 0.0, 0.7, 3.0])
@pytest.mark.parametrize("d_over_sigma", [0.3, 1.0, 2.5, 6.0])
def test_q_form_matches_quadrature(log_ell, d_over_sigma):
    a1, b1 = q_closed_form(log_ell, d_over_sigma * 4.0, 4.0)
    a2, b2 = q_by_quadrature(log_ell, d_over_sigma * 4.0, 4.0)
    assert a1 == pytest.approx(a2, abs=1e-9)
    assert b1 == pytest.approx(b2, abs=1e-9)


def test_llr_at_h0_and_h1_means(verifier, scenario, params):
    c, t = GEOMETRIES[0]
    u, v = mean_rss(params, c, scenario.rsus), mean_rss(params, t, scenario.rsus)
    half = np.sum((u - v) ** 2) / (2 * params.sigma_t**2)
    assert log_likelihood_ratio(verifier, u, c, t) == pytest.approx(-half, rel=1e-12)
    assert log_likelihood_ratio(verifier, v, c, t) == pytest.approx(half, rel=1e-12)
    assert decide(verifier, u, c, t) == D0
    assert decide(verifier, v, c, t) == D1


def test_llr_composes_log_likelihoods(scenario):
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = ChannelParams(sigma_t=rng.uniform(0.5, 8.0), gamma=rng.uniform(1.5, 4.0))
        ver = LrtVerifier(p, scenario)
        c, t = rng.uniform(5, 145, 2), rng.uniform(5, 145, 2)
        u, v = mean_rss(p, c, scenario.rsus), mean_rss(p, t, scenario.rsus)
        y = u + rng.normal(0, p.sigma_t, 3)
        ref = log_likelihood(y, v, p.sigma_t) - log_likelihood(y, u, p.sigma_t)
        assert abs(log_likelihood_ratio(ver, y, c, t) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_tie_goes_to_d1():
    assert decide_from_score(0.0, 0.0) == D1
    assert decide_from_score(-1e-300, 0.0) == D0


def test_degenerate_thresholds(scenario, params):
    rng = np.random.default_rng(1)
    c, t = GEOMETRIES[1]
    y = draw_observations(params, np.tile(c, (500, 1)), scenario.rsus, rng)
    s = log_likelihood_ratio(LrtVerifier(params, scenario), y, c, t)
    assert np.all(decide_from_score(s, -1e9) == D1)
    assert np.all(decide_from_score(s, math.inf) == D0)


@settings(max_examples=50, deadline=None)
@given(score=st.floats(-50, 50), log_ell=st.floats(-5, 5), log_c=st.floats(-5, 5))
def test_log_linear_threshold_equivalence(score, log_ell, log_c):
    # scaling l by c is the same as shifting both score and log-threshold by ln c
    c = math.exp(log_c)
    ell = math.exp(log_ell)
    a = decide_from_score(score + math.log(c), math.log(ell * c))
    b = decide_from_score(score, math.log(ell))
    if abs(score - log_ell) > 1e-9:
        assert a == b


def test_verifier_rejects_bad_threshold(scenario, params):
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(ValueError):
            LrtVerifier(params, scenario, threshold=bad)
    with pytest.raises(ValueError):
        LrtVerifier(params, scenario, policy="psychic")


def test_stats_perfect_and_always_d1():
    labels = np.array([H0] * 5 + [H1] * 5)
    perfect = DetectionStats.from_decisions(labels, labels)
    assert (perfect.alpha, perfect.beta, perfect.total_error) == (0.0, 1.0, 0.0)
    always = DetectionStats.from_decisions(labels, np.ones(10, dtype=int))
    assert (always.alpha, always.beta, always.total_error) == (1.0, 1.0, 0.5)


def test_stats_single_class_rejected():
    with pytest.raises(ValueError):
        DetectionStats.from_decisions([H0, H0], [D0, D1])


def test_stats_total_error_from_counts():
    s = DetectionStats(40, 60, 7, 51, 0.3, 0.7)
    assert s.total_error == 0.3 * (7 / 40) + 0.7 * (1 - 51 / 60)


def test_stats_merge_is_exact():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 2, 1000)
    labels[:2] = [0, 1]
    dec = rng.integers(0, 2, 1000)
    whole = DetectionStats.from_decisions(labels, dec)
    parts = [DetectionStats.from_decisions(labels[i : i + 250], dec[i : i + 250]) for i in range(0, 1000, 250)]
    merged = parts[0]
    for p in parts[1:]:
        merged = merged.merge(p)
    assert merged == whole
    with pytest.raises(ValueError):
        whole.merge(DetectionStats(1, 1, 0, 0, 0.2, 0.8))


def _synthetic_pairs(scenario, params, c, t, n, rng):
    """n H0 samples at c and n H1 samples truly at t claiming c."""
    c, t = Location(*c), Location(*t)
    samples = [GroundTruthSample(c, c, H0)] * n + [GroundTruthSample(t, c, H1)] * n
    locs = np.array([c] * n + [t] * n)
    obs = draw_observations(params, locs, scenario.rsus, rng)
    cand = np.array([t] * (2 * n))
    return samples, obs, cand


def test_llr_h0_moments(scenario, params):
    rng = np.random.default_rng(7)
    ver = LrtVerifier(params, scenario)
    n = 100_000
    for c, t in GEOMETRIES:
        d = np.linalg.norm(mean_rss(params, c, scenario.rsus) - mean_rss(params, t, scenario.rsus))
        y = draw_observations(params, np.tile(c, (n, 1)), scenario.rsus, rng)
        s = log_likelihood_ratio(ver, y, c, t)
        mu, var = -(d**2) / (2 * params.sigma_t**2), d**2 / params.sigma_t**2
        assert abs(s.mean() - mu) < 3 * math.sqrt(var / n)
        # var of the sample variance for Gaussian data: 2 var^2 / (n-1)
        assert abs(s.var(ddof=1) - var) < 3 * math.sqrt(2 * var**2 / (n - 1))


def test_evaluate_matches_q_form(scenario, params):
    rng = np.random.default_rng(8)
    ver = LrtVerifier(params, scenario)
    n = 100_000
    for c, t in GEOMETRIES:
        samples, obs, cand = _synthetic_pairs(scenario, params, c, t, n, rng)
        st_ = evaluate(ver, samples, obs, cand)
        d = np.linalg.norm(mean_rss(params, c, scenario.rsus) - mean_rss(params, t, scenario.rsus))
        a, b = q_closed_form(0.0, d, params.sigma_t)
        assert abs(st_.alpha - a) < 3 * math.sqrt(a * (1 - a) / n)
        assert abs(st_.beta - b) < 3 * math.sqrt(b * (1 - b) / n)


def test_sweep_singleton_equals_evaluate(scenario, params, verifier):
    ds = generate_dataset(scenario, 400, np.random.default_rng(2))
    true = np.array([s.true_loc for s in ds])
    obs = draw_observations(params, true, scenario.rsus, np.random.default_rng(3))
    [(ell, st_)] = sweep_threshold(verifier, ds, obs, [1.0])
    assert ell == 1.0 and st_ == evaluate(verifier, ds, obs)


def test_sweep_roc_monotone(scenario, params, verifier):
    ds = generate_dataset(scenario, 2000, np.random.default_rng(4))
    true = np.array([s.true_loc for s in ds])
    obs = draw_observations(params, true, scenario.rsus, np.random.default_rng(5))
    rows = sweep_threshold(verifier, ds, obs, list(np.logspace(-4, 4, 60)))
    alpha = [r[1].alpha for r in rows]
    beta = [r[1].beta for r in rows]
    assert all(a >= b for a, b in zip(alpha, alpha[1:]))
    assert all(a >= b for a, b in zip(beta, beta[1:]))


def test_sweep_rejects_bad_thresholds():
    labels = np.array([0, 1])
    with pytest.raises(ValueError):
        sweep_scores(np.zeros(2), labels, [])
    with pytest.raises(ValueError):
        sweep_scores(np.zeros(2), labels, [1.0, 0.0])


def test_best_threshold_near_one(params):
    # D/sigma = 1: a 0.25 step in ln l changes xi by ~0.005, well above the MC noise here
    sc = Scenario(rsus=((0.0, 0.0),), area=((0.0, 0.0), (150.0, 150.0)))
    c = (40.0, 0.0)
    d_target = params.sigma_t
    # distance t such that |u - v| = sigma for the single RSU
    t = (40.0 * 10 ** (d_target / (10 * params.gamma)), 0.0)
    n = 200_000
    samples, obs, cand = _synthetic_pairs(sc, params, c, t, n, np.random.default_rng(9))
    ver = LrtVerifier(params, sc)
    grid = list(np.exp(np.arange(-2.0, 2.0001, 0.25)))
    ell, _ = best_threshold(sweep_threshold(ver, samples, obs, grid, cand))
    assert abs(math.log(ell)) <= 0.25 + 1e-12


def test_oracle_candidates(scenario, params):
    ds = generate_dataset(scenario, 200, np.random.default_rng(6))
    cand = h1_candidates(LrtVerifier(params, scenario, decoy_seed=3), ds)
    for s, v in zip(ds, cand):
        if s.label == H1:
            assert tuple(v) == tuple(s.true_loc)
        else:
            assert distance(v, s.claimed_loc) >= scenario.r
    again = h1_candidates(LrtVerifier(params, scenario, decoy_seed=3), ds)
    assert again.tobytes() == cand.tobytes()


def test_worst_case_candidates_on_circle(scenario, params):
    claims = np.array([[30.0, 40.0], [100.0, 120.0]])
    cand = worst_case_candidates(params, scenario.rsus, claims, 50.0)
    for c, v in zip(claims, cand):
        assert distance(v, c) >= 50.0
        assert distance(v, c) < 50.0 + 1e-6


def test_worst_case_policy_needs_no_truth(scenario, params):
    ds = generate_dataset(scenario, 100, np.random.default_rng(1))
    blind = [GroundTruthSample(s.claimed_loc, s.claimed_loc, s.label) for s in ds]
    ver = LrtVerifier(params, scenario, policy=WORST_CASE)
    obs = np.zeros((100, 3)) - 60.0
    assert scores(ver, ds, obs).tobytes() == scores(ver, blind, obs).tobytes()


def test_stats_csv_header(scenario, params, verifier):
    labels = np.array([0, 1, 0, 1])
    text = stats_csv(sweep_scores(np.array([-1.0, 1.0, 0.5, 2.0]), labels, [1.0, 2.0]))
    lines = text.splitlines()
    assert lines[0] == "ell,alpha,beta,total_error,n_h0,n_h1"
    assert len(lines) == 3
