import json

import numpy as np
import pytest
from scipy import integrate, stats

from ipwgee import JointObservationProbs, MissingnessModel, WorkingCorrelation, standardized_residuals
from ipwgee.errors import DesignError
from ipwgee.simulate import (FitSettings, SimDesign, bivariate_normal_cdf, generate, joint_observation_probs,
                             parse_config, run_monte_carlo, score_moments, true_response_covariance,
                             true_weighted_covariance)


def replicated_design(X_one, n, **kw):
    """Every cluster shares the covariate matrix ``X_one``: clusters are i.i.d. draws given X."""
    m, p = X_one.shape
    return SimDesign(n=n, m=m, family=kw.pop("family", "logit"), beta_true=kw.pop("beta_true"),
                     fixed_design=np.broadcast_to(X_one, (n, m, p)).copy(), **kw)


X3 = np.array([[1.0, -0.5], [1.0, 0.2], [1.0, 0.9]])


def test_same_seed_same_bytes():
    d = SimDesign(n=30, m=3, family="poisson", beta_true=(0.1, 0.3), gamma_true=(1.0, 0.5),
                  corr_true="one_dependent", rho=(0.3, 0.2), seed=99)
    a, b = generate(d, 4), generate(d, 4)
    for f in ("responses", "covariates", "observed"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert generate(d, 5).responses.tobytes() != a.responses.tobytes()


def test_summary_bytes_reproducible_and_order_free():
    d = SimDesign(n=40, m=3, family="logit", beta_true=(0.2, 0.5), gamma_true=(1.5, 0.5), seed=1)
    s1 = run_monte_carlo(d, 100, FitSettings("independence"))
    s2 = run_monte_carlo(d, 100, FitSettings("independence"))
    s3 = run_monte_carlo(d, 100, FitSettings("independence"), n_jobs=2)
    assert s1.to_json() == s2.to_json() == s3.to_json()


def test_summary_ranges_and_writers(tmp_path):
    d = SimDesign(n=40, m=3, family="identity", beta_true=(0.2, 0.5), seed=2)
    s = run_monte_carlo(d, 100, FitSettings("exchangeable"))
    assert np.all((s.coverage95 >= 0) & (s.coverage95 <= 1))
    assert np.all((s.ks_stats >= 0) & (s.ks_stats <= 1))
    assert s.nonconverged == 0 and not s.nonconverged_flag
    back = json.loads(s.to_json())
    assert back["K"] == 100 and len(back["bias"]) == 2
    s.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("coef,beta_true,bias")
    assert "K=100" in s.format_table()


def test_minimum_replications():
    d = SimDesign(n=10, m=2, family="identity", beta_true=(0.0, 1.0))
    with pytest.raises(ValueError):
        run_monte_carlo(d, 99)


def test_huge_intercept_gives_complete_indicators():
    d = SimDesign(n=50, m=4, family="logit", beta_true=(0.0, 0.0), gamma_true=(20.0, 0.0), seed=3)
    assert all(generate(d, k).observed.all() for k in range(20))


def test_bernoulli_zero_coefficients_mean_half():
    n, m, K = 200, 4, 25
    d = SimDesign(n=n, m=m, family="logit", beta_true=(0.0, 0.0), corr_true="exchangeable", rho=(0.4,), seed=4)
    mean = np.mean([generate(d, k).responses.mean() for k in range(K)])
    assert abs(mean - 0.5) < 4 / np.sqrt(n * m * K)


def test_poisson_marginal_mean_exact():
    d = replicated_design(X3, 20000, family="poisson", beta_true=(0.3, 0.8), corr_true="exchangeable",
                          rho=(0.5,), seed=5)
    Y = generate(d, 0).responses
    mu = np.exp(X3 @ np.array([0.3, 0.8]))
    z = (Y.mean(axis=0) - mu) / (Y.std(axis=0, ddof=1) / np.sqrt(Y.shape[0]))
    assert np.max(np.abs(z)) < 4


def test_invalid_designs():
    with pytest.raises(DesignError):
        SimDesign(n=10, m=3, family="logit", beta_true=(0.0, 1.0), corr_true="one_dependent", rho=(0.9, 0.9))
    with pytest.raises(DesignError):
        SimDesign(n=10, m=3, family="logit", beta_true=(0.0, 1.0), covariates=("intercept", "gamma(2)"))
    with pytest.raises(DesignError):
        SimDesign(n=10, m=3, family="logit", beta_true=(0.0, 1.0, 2.0))
    with pytest.raises(DesignError):
        SimDesign(n=10, m=3, family="logit", beta_true=(0.0, 1.0), indicator_law="pairwise_dependent", kappa=1.5)


def test_cluster_level_covariates_constant_within_cluster():
    d = SimDesign(n=30, m=4, family="identity", beta_true=(0, 1, 1),
                  covariates=("intercept", "uniform(-1,1)", "cluster_bernoulli(0.5)"), seed=6)
    X = generate(d, 0).covariates
    assert np.all(X[:, :, 2] == X[:, :1, 2])
    assert not np.all(X[:, :, 1] == X[:, :1, 1])


@pytest.mark.parametrize("h, k, rho", [(0.3, -0.5, 0.4), (0.0, 0.7, -0.3), (0.0, 0.0, 0.5),
                                       (-1.2, 0.0, 0.9), (1.0, 1.0, 0.0), (-2.0, -1.5, -0.7), (2.5, 0.4, 0.95)])
def test_bivariate_cdf_against_quadrature(h, k, rho):
    def density(r):
        s = 1 - r * r
        return np.exp(-(h * h - 2 * r * h * k + k * k) / (2 * s)) / (2 * np.pi * np.sqrt(s))

    ref = stats.norm.cdf(h) * stats.norm.cdf(k) + integrate.quad(density, 0.0, rho, epsabs=1e-14)[0]
    assert float(bivariate_normal_cdf(h, k, rho)) == pytest.approx(ref, abs=1e-12)


def _enumerate_pair(pi_j, pi_k, kappa):
    """The four outcome probabilities of (I_j, I_k) under the shared-uniform mixture."""
    shared = {(1, 1): min(pi_j, pi_k), (1, 0): max(0.0, pi_j - pi_k), (0, 1): max(0.0, pi_k - pi_j),
              (0, 0): 1 - max(pi_j, pi_k)}
    indep = {(a, b): (pi_j if a else 1 - pi_j) * (pi_k if b else 1 - pi_k) for a in (0, 1) for b in (0, 1)}
    return {key: kappa * shared[key] + (1 - kappa) * indep[key] for key in shared}


@pytest.mark.parametrize("pi_j, pi_k, kappa", [(0.7, 0.9, 0.4), (0.5, 0.5, 1.0), (0.95, 0.3, 0.0)])
def test_shared_factor_law_by_enumeration(pi_j, pi_k, kappa):
    probs = _enumerate_pair(pi_j, pi_k, kappa)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-15)
    assert probs[1, 1] + probs[1, 0] == pytest.approx(pi_j, abs=1e-15)
    q = JointObservationProbs.shared_factor([pi_j, pi_k], kappa).q
    assert q[0, 1] == pytest.approx(probs[1, 1], abs=1e-15)


def test_empirical_joint_indicator_frequency():
    n = 40000
    d = replicated_design(X3, n, beta_true=(0.0, 0.0), gamma_true=(1.0, 1.5),
                          indicator_law="pairwise_dependent", kappa=0.6, seed=7)
    obs = generate(d, 0).observed.astype(float)
    q = joint_observation_probs(d, X3[None])[0]
    emp = obs.T @ obs / n
    se = np.sqrt(q * (1 - q) / n)
    assert np.max(np.abs(emp - q) / se) < 5
    pi = MissingnessModel((1.0, 1.5)).probabilities(X3)[0]
    assert np.max(np.abs(q - np.outer(pi, pi))[~np.eye(3, dtype=bool)]) > 0.01


def test_binomial_response_covariance():
    n = 40000
    d = replicated_design(X3, n, beta_true=(0.2, 1.0), corr_true="exchangeable", rho=(0.5,), seed=8)
    Y = generate(d, 0).responses
    S = true_response_covariance(d, X3[None])[0]
    mu = 1 / (1 + np.exp(-(X3 @ np.array([0.2, 1.0]))))
    P = (Y - mu)[:, :, None] * (Y - mu)[:, None, :]
    z = (P.mean(axis=0) - S) / (P.std(axis=0, ddof=1) / np.sqrt(n))
    assert np.max(np.abs(z)) < 5


@pytest.mark.parametrize("law, kappa", [("independent", 0.0), ("pairwise_dependent", 0.5)])
@pytest.mark.parametrize("family", ["identity", "logit"])
def test_weighted_covariance_matches_simulation(law, kappa, family):
    n = 40000
    beta = np.array([0.2, 1.0])
    d = replicated_design(X3, n, family=family, beta_true=beta, gamma_true=(0.8, 1.0),
                          corr_true="exchangeable", rho=(0.5,), indicator_law=law, kappa=kappa, seed=9)
    ds = generate(d, 0)
    pi = d.missingness_model().probabilities(X3)[0]
    mu = d.link.mu(X3 @ beta)
    ystar = ds.responses * ds.observed / pi
    P = (ystar - mu)[:, :, None] * (ystar - mu)[:, None, :]
    S = true_weighted_covariance(d, X3[None])[0]
    z = (P.mean(axis=0) - S) / (P.std(axis=0, ddof=1) / np.sqrt(n))
    assert np.max(np.abs(z)) < 5


def test_weighted_response_mean_equals_original():
    n = 40000
    d = replicated_design(X3, n, family="poisson", beta_true=(0.1, 0.5), gamma_true=(0.5, 1.0),
                          corr_true="exchangeable", rho=(0.3,), seed=10)
    ds = generate(d, 0)
    pi = d.missingness_model().probabilities(X3)[0]
    diff = ds.responses * ds.observed / pi - ds.responses
    z = diff.mean(axis=0) / (diff.std(axis=0, ddof=1) / np.sqrt(n))
    assert np.max(np.abs(z)) < 4


def test_standardized_residual_second_moment():
    n = 40000
    beta = np.array([0.2, 1.0])
    d = replicated_design(X3, n, beta_true=beta, gamma_true=(0.8, 1.0), corr_true="exchangeable",
                          rho=(0.5,), seed=12)
    ds = generate(d, 0)
    r = standardized_residuals(ds, beta, d.missingness_model(), "logit")
    sq = r ** 2
    z = (sq.mean(axis=0) - 1) / (sq.std(axis=0, ddof=1) / np.sqrt(n))
    assert np.max(np.abs(z)) < 5


def test_score_moments_shapes():
    d = SimDesign(n=20, m=3, family="logit", beta_true=(0.0, 0.5), gamma_true=(1.0, 0.0), seed=13)
    g, M = score_moments(d, 5, WorkingCorrelation("exchangeable", [0.2]))
    assert g.shape == (5, 2) and M.shape == (5, 2, 2)
    np.testing.assert_allclose(M, M.transpose(0, 2, 1))
    g2, none = score_moments(d, 5, WorkingCorrelation(), with_meat=False)
    assert none is None


def test_poisson_covariance_unsupported():
    d = SimDesign(n=5, m=2, family="poisson", beta_true=(0.0, 0.5))
    with pytest.raises(DesignError):
        true_response_covariance(d, np.ones((5, 2, 2)))


def test_parse_config():
    text = """
    # design
    n = 120
    m = 3
    family = binomial
    beta = 0.2, -0.5, 1
    covariates = intercept, uniform(-1,1), cluster_bernoulli(0.3)
    gamma = 1.5, 0.5, 0
    corr = exchangeable(0.4)
    indicators = pairwise_dependent(0.25)
    seed = 17
    K = 150
    working = one-dependent
    pi_mode = true
    """
    design, settings, K = parse_config(text)
    assert (design.n, design.m, design.p, K) == (120, 3, 3, 150)
    assert design.family == "logit" and design.rho == (0.4,) and design.kappa == 0.25
    assert design.covariates[2] == "cluster_bernoulli(0.3)"
    assert settings.structure == "one-dependent" and settings.pi_mode == "true"
    with pytest.raises(DesignError):
        parse_config("n = 10\nm = 2\nbeta = 1\nbogus = 3")
    with pytest.raises(DesignError):
        parse_config("m = 2\nbeta = 1")
    with pytest.raises(DesignError):
        parse_config("n 10")
