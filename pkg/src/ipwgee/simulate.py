"""Data generation with known truth and Monte Carlo experiments.

Responses are drawn through a Gaussian copula: a latent ``N(0, R_latent)``
vector per cluster is pushed through the marginal quantile function, so the
marginal means are exactly ``mu(X_ij^T beta)`` while the realized response
correlation only approximates ``R_latent`` for discrete families.

Every replication draws from its own Philox stream keyed by
``(seed, replication)``; results do not depend on the order in which
replications are run.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .correlation import WorkingCorrelation, build_R
from .dataset import LongitudinalDataset
from .equation import WeightedGEE
from .errors import CorrelationInvalidError, DesignError, IPWGEEError
from .estimator import FitConfig, fit_workflow
from .links import get_family
from .missingness import JointObservationProbs, MissingnessModel, weighted_covariance

__all__ = [
    "SimDesign",
    "FitSettings",
    "MonteCarloSummary",
    "generate",
    "run_monte_carlo",
    "replication_rng",
    "bivariate_normal_cdf",
    "joint_observation_probs",
    "true_response_covariance",
    "true_weighted_covariance",
    "score_moments",
    "parse_config",
    "parse_mapping",
    "config_from_mapping",
    "load_config",
]

Z975 = 1.959963984540054
PI_FLOOR_TRUE = 1e-9
MIN_REPLICATIONS = 100


@dataclass(frozen=True)
class SimDesign:
    """Data-generating process.

    ``covariates`` lists one law per column: ``intercept``, ``uniform(a,b)``,
    ``bernoulli(q)``; prefix ``cluster_`` (e.g. ``cluster_bernoulli(0.5)``)
    for a covariate that is constant within a cluster.  ``fixed_design``, an
    ``(n, m, p)`` array, replaces random covariates when given.

    ``corr_true`` is ``independent``, ``exchangeable`` or ``one_dependent``
    with latent parameters ``rho``.  ``indicator_law`` is ``independent``
    (indicators conditionally independent given X) or ``pairwise_dependent``
    (with probability ``kappa`` the cluster's indicators share one uniform).
    ``gamma_true=None`` produces complete data.
    """

    n: int
    m: int
    family: str
    beta_true: tuple
    covariates: tuple = ("intercept", "uniform(-1,1)")
    gamma_true: tuple | None = None
    corr_true: str = "independent"
    rho: tuple = ()
    indicator_law: str = "independent"
    kappa: float = 0.0
    seed: int = 0
    fixed_design: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family).tag)
        object.__setattr__(self, "beta_true", tuple(float(b) for b in np.ravel(self.beta_true)))
        if self.gamma_true is not None:
            object.__setattr__(self, "gamma_true", tuple(float(g) for g in np.ravel(self.gamma_true)))
        object.__setattr__(self, "rho", tuple(float(r) for r in np.ravel(self.rho)))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.n < 1 or self.m < 1:
            raise DesignError("n and m must be positive")
        if self.fixed_design is not None:
            fd = np.asarray(self.fixed_design, dtype=float)
            if fd.shape != (self.n, self.m, self.p):
                raise DesignError(f"fixed_design must have shape {(self.n, self.m, self.p)}")
        else:
            for spec in self.covariates:
                _parse_covariate(spec)
        if len(self.beta_true) != self.p:
            raise DesignError(f"beta_true has {len(self.beta_true)} entries for p={self.p}")
        if self.gamma_true is not None and len(self.gamma_true) != self.p:
            raise DesignError(f"gamma_true has {len(self.gamma_true)} entries for p={self.p}")
        if self.indicator_law not in ("independent", "pairwise_dependent"):
            raise DesignError(f"unknown indicator_law {self.indicator_law!r}")
        if not 0.0 <= self.kappa <= 1.0:
            raise DesignError("kappa must lie in [0, 1]")
        self.latent_correlation()

    @property
    def p(self) -> int:
        if self.fixed_design is not None:
            return np.asarray(self.fixed_design).shape[2]
        return len(self.covariates)

    @property
    def link(self):
        return get_family(self.family)

    def latent_correlation(self) -> np.ndarray:
        name = {"independent": "independence", "independence": "independence"}.get(
            self.corr_true, self.corr_true
        )
        try:
            spec = WorkingCorrelation(name, self.rho if name != "independence" else ())
            R, _, _ = build_R(spec, self.m)
        except (ValueError, CorrelationInvalidError) as exc:
            raise DesignError(f"latent correlation invalid: {exc}") from exc
        return R

    def missingness_model(self) -> MissingnessModel:
        return MissingnessModel(self.gamma_true, PI_FLOOR_TRUE)

    def with_n(self, n: int) -> "SimDesign":
        return replace(self, n=n)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "p": self.p, "family": self.family,
            "beta_true": list(self.beta_true),
            "gamma_true": None if self.gamma_true is None else list(self.gamma_true),
            "covariates": list(self.covariates) if self.fixed_design is None else "fixed",
            "corr_true": self.corr_true, "rho": list(self.rho),
            "indicator_law": self.indicator_law, "kappa": self.kappa, "seed": self.seed,
        }


_COV_RE = re.compile(r"^(cluster_)?(intercept|uniform|bernoulli)(?:\(([^)]*)\))?$")


def _parse_covariate(spec: str):
    mt = _COV_RE.match(spec.replace(" ", ""))
    if mt is None:
        raise DesignError(f"cannot parse covariate law {spec!r}")
    per_cluster, kind, args = mt.group(1) is not None, mt.group(2), mt.group(3)
    params = [float(a) for a in args.split(",")] if args else []
    expected = {"intercept": 0, "uniform": 2, "bernoulli": 1}[kind]
    if len(params) != expected:
        raise DesignError(f"{kind} takes {expected} parameter(s): {spec!r}")
    if kind == "bernoulli" and not 0.0 <= params[0] <= 1.0:
        raise DesignError(f"bernoulli probability out of range: {spec!r}")
    return kind, params, per_cluster


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent counter-based stream for one replication."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.Philox(ss))


def _draw_covariates(design: SimDesign, rng) -> np.ndarray:
    if design.fixed_design is not None:
        return np.array(design.fixed_design, dtype=float)
    n, m = design.n, design.m
    cols = []
    for spec in design.covariates:
        kind, params, per_cluster = _parse_covariate(spec)
        shape = (n, 1) if per_cluster else (n, m)
        if kind == "intercept":
            col = np.ones(shape)
        elif kind == "uniform":
            col = rng.uniform(params[0], params[1], size=shape)
        else:
            col = (rng.uniform(size=shape) < params[0]).astype(float)
        cols.append(np.broadcast_to(col, (n, m)))
    return np.stack(cols, axis=-1)


def _draw_responses(design: SimDesign, mu: np.ndarray, latent: np.ndarray) -> np.ndarray:
    tag = design.family
    if tag == "identity":
        return mu + latent
    if tag == "logit":
        return (latent < special.ndtri(mu)).astype(float)
    u = special.ndtr(latent)
    return stats.poisson.ppf(u, mu)


def _draw_indicators(design: SimDesign, pi: np.ndarray, rng) -> np.ndarray:
    n, m = pi.shape
    u = rng.uniform(size=(n, m))
    if design.indicator_law == "pairwise_dependent":
        shared = rng.uniform(size=(n, 1)) < design.kappa
        common = rng.uniform(size=(n, 1))
        u = np.where(shared, common, u)
    return (u < pi).astype(np.int8)


def generate(design: SimDesign, replication: int = 0, rng=None) -> LongitudinalDataset:
    """Draw one dataset.

    Responses are kept at missing cells too (the estimator ignores them),
    which lets checks compare weighted and unweighted responses.
    """
    rng = replication_rng(design.seed, replication) if rng is None else rng
    X = _draw_covariates(design, rng)
    beta = np.asarray(design.beta_true)
    mu = design.link.mu(X @ beta)
    chol = np.linalg.cholesky(design.latent_correlation())
    latent = rng.standard_normal((design.n, design.m)) @ chol.T
    Y = _draw_responses(design, mu, latent)
    if design.gamma_true is None:
        observed = np.ones((design.n, design.m), dtype=np.int8)
    else:
        pi, _ = design.missingness_model().probabilities(X)
        observed = _draw_indicators(design, pi, rng)
    names = [f"x{k}" for k in range(design.p)]
    return LongitudinalDataset(Y, X, observed, covariate_names=names)


def bivariate_normal_cdf(h, k, rho):
    """``P(Z1 <= h, Z2 <= k)`` for standard normals with correlation ``rho``.

    Owen's T-function representation; vectorized, exact at ``h = 0`` or
    ``k = 0``.
    """
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, rho)))
    s = np.sqrt(1.0 - rho * rho)

    def slope(a, b):
        num = b - rho * a
        with np.errstate(divide="ignore", invalid="ignore"):
            out = num / (a * s)
        return np.where(a == 0, np.copysign(np.inf, num), out)

    both_zero = (h == 0) & (k == 0)
    hs = np.where(both_zero, 1.0, h)
    ks = np.where(both_zero, 1.0, k)
    delta = np.where((hs * ks > 0) | ((hs * ks == 0) & (hs + ks >= 0)), 0.0, 0.5)
    val = (
        0.5 * (special.ndtr(hs) + special.ndtr(ks))
        - special.owens_t(hs, slope(hs, ks))
        - special.owens_t(ks, slope(ks, hs))
        - delta
    )
    return np.where(both_zero, 0.25 + np.arcsin(rho) / (2 * np.pi), val)


def true_response_covariance(design: SimDesign, X) -> np.ndarray:
    """``Cov(Y_i | X_i)`` for every cluster, shape ``(n, m, m)``.

    Exact for the normal family; for the Bernoulli family from bivariate
    normal probabilities of the latent copula.  Poisson is not supported.
    """
    R = design.latent_correlation()
    mu = design.link.mu(np.asarray(X) @ np.asarray(design.beta_true))
    if design.family == "identity":
        return np.broadcast_to(R, mu.shape + (design.m,)).copy()
    if design.family == "logit":
        t = special.ndtri(mu)
        p11 = bivariate_normal_cdf(t[:, :, None], t[:, None, :], R[None])
        cov = p11 - mu[:, :, None] * mu[:, None, :]
        idx = np.arange(design.m)
        cov[:, idx, idx] = mu * (1.0 - mu)
        return cov
    raise DesignError("true response covariance is only available for normal and binomial families")


def joint_observation_probs(design: SimDesign, X) -> np.ndarray:
    """``q_jk`` for every cluster, shape ``(n, m, m)``."""
    pi, _ = design.missingness_model().probabilities(np.asarray(X))
    kappa = design.kappa if design.indicator_law == "pairwise_dependent" else 0.0
    return np.stack([JointObservationProbs.shared_factor(row, kappa).q for row in pi])


def true_weighted_covariance(design: SimDesign, X) -> np.ndarray:
    """``Sigma*_i``: covariance of the weighted responses given ``X_i``, ``(n, m, m)``."""
    X = np.asarray(X)
    mu = design.link.mu(X @ np.asarray(design.beta_true))
    sigma = true_response_covariance(design, X)
    if design.gamma_true is None:
        return sigma
    return weighted_covariance(mu, sigma, joint_observation_probs(design, X))


def score_moments(design: SimDesign, K: int, working: WorkingCorrelation, with_meat: bool = True):
    """Scores at the true coefficients with true probabilities over ``K`` datasets.

    Returns ``(scores, meats)`` with shapes ``(K, p)`` and ``(K, p, p)``;
    ``meats[k]`` is ``M*_n(beta_true)`` evaluated on replication ``k``'s
    covariates (``None`` when ``with_meat`` is false).
    """
    beta = np.asarray(design.beta_true)
    model = design.missingness_model()
    scores = np.empty((K, design.p))
    meats = np.empty((K, design.p, design.p)) if with_meat else None
    for k in range(K):
        ds = generate(design, k)
        eq = WeightedGEE.from_dataset(ds, model, working, design.family)
        scores[k] = eq.score(beta)
        if with_meat:
            meats[k] = eq.meat_expected(beta, true_weighted_covariance(design, ds.covariates))
    return scores, meats


@dataclass(frozen=True)
class FitSettings:
    """How each replication is fitted.

    ``pi_mode='estimated'`` fits the missingness model; ``'true'`` plugs in
    the generating probabilities.
    """

    structure: str = "exchangeable"
    pi_mode: str = "estimated"
    pi_floor: float = 0.01
    config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.pi_mode not in ("estimated", "true"):
            raise ValueError("pi_mode must be 'estimated' or 'true'")


@dataclass
class MonteCarloSummary:
    K: int
    beta_true: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    coverage95: np.ndarray
    ks_stats: np.ndarray
    score_mean_norm: float
    nonconverged: int
    coef_names: tuple = ()
    mean_std_error: np.ndarray | None = None
    estimates: np.ndarray | None = field(default=None, repr=False)
    std_errors: np.ndarray | None = field(default=None, repr=False)

    @property
    def nonconverged_flag(self) -> bool:
        return self.nonconverged > 0.05 * self.K

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "coef_names": list(self.coef_names),
            "beta_true": self.beta_true.tolist(),
            "bias": self.bias.tolist(),
            "rmse": self.rmse.tolist(),
            "mean_std_error": None if self.mean_std_error is None else self.mean_std_error.tolist(),
            "coverage95": self.coverage95.tolist(),
            "ks_stats": self.ks_stats.tolist(),
            "score_mean_norm": self.score_mean_norm,
            "nonconverged": self.nonconverged,
            "nonconverged_flag": self.nonconverged_flag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["coef", "beta_true", "bias", "rmse", "mean_std_error", "coverage95", "ks_stat"])
            for k, name in enumerate(self.coef_names):
                se = "" if self.mean_std_error is None else repr(float(self.mean_std_error[k]))
                w.writerow([name, repr(float(self.beta_true[k])), repr(float(self.bias[k])),
                            repr(float(self.rmse[k])), se, repr(float(self.coverage95[k])),
                            repr(float(self.ks_stats[k]))])

    def format_table(self) -> str:
        head = f"{'coef':<8} {'true':>9} {'bias':>9} {'rmse':>9} {'cover95':>8} {'KS':>7}"
        lines = [head, "-" * len(head)]
        for k, name in enumerate(self.coef_names):
            lines.append(
                f"{name:<8} {self.beta_true[k]:>9.4f} {self.bias[k]:>9.4f} {self.rmse[k]:>9.4f} "
                f"{self.coverage95[k]:>8.3f} {self.ks_stats[k]:>7.4f}"
            )
        lines.append(f"K={self.K}  nonconverged={self.nonconverged}"
                     + ("  (WARNING: more than 5% nonconverged)" if self.nonconverged_flag else ""))
        return "\n".join(lines)


def _replicate(args):
    design, settings, k = args
    p = design.p
    nan = np.full(p, np.nan)
    ds = generate(design, k)
    model = design.missingness_model() if settings.pi_mode == "true" else None
    try:
        fit = fit_workflow(ds, design.family, settings.structure, settings.pi_floor,
                           settings.config, model=model)
    except (IPWGEEError, ArithmeticError, RuntimeError, np.linalg.LinAlgError):
        return False, nan, nan, nan
    if not fit.converged:
        return False, nan, nan, nan
    eq = WeightedGEE.from_dataset(ds, fit.missingness_model, fit.correlation, design.family)
    g0 = eq.score(np.asarray(design.beta_true))
    return True, fit.beta_hat, np.sqrt(np.diag(fit.B_hat)), g0


def run_monte_carlo(design: SimDesign, K: int, settings: FitSettings | None = None,
                    n_jobs: int = 1) -> MonteCarloSummary:
    """Fit ``K`` simulated datasets and summarize bias, RMSE, coverage and normality.

    Non-converged replications are counted and excluded from the summary.
    ``score_mean_norm`` is the Euclidean norm of the replication mean of
    ``g_n(beta_true) / n`` under each replication's fitted weights and
    working correlation.
    """
    if K < MIN_REPLICATIONS:
        raise ValueError(f"K must be at least {MIN_REPLICATIONS}, got {K}")
    settings = settings or FitSettings()
    jobs = [(design, settings, k) for k in range(K)]
    if n_jobs == 1:
        results = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, K // (4 * n_jobs))))
    ok = np.array([r[0] for r in results])
    est = np.array([r[1] for r in results])
    se = np.array([r[2] for r in results])
    g0 = np.array([r[3] for r in results])
    beta = np.asarray(design.beta_true)
    good_est, good_se = est[ok], se[ok]
    if good_est.shape[0] == 0:
        raise RuntimeError("no replication converged")
    z = (good_est - beta) / good_se
    err = good_est - beta
    ks = np.array([stats.kstest(z[:, l], "norm").statistic for l in range(design.p)])
    return MonteCarloSummary(
        K=K,
        beta_true=beta,
        bias=err.mean(axis=0),
        rmse=np.sqrt((err ** 2).mean(axis=0)),
        coverage95=(np.abs(z) <= Z975).mean(axis=0),
        ks_stats=ks,
        score_mean_norm=float(np.linalg.norm(g0[ok].mean(axis=0)) / design.n),
        nonconverged=int((~ok).sum()),
        coef_names=tuple(f"x{k}" for k in range(design.p)),
        mean_std_error=good_se.mean(axis=0),
        estimates=est,
        std_errors=se,
    )


def _floats(value: str) -> tuple:
    return tuple(float(v) for v in value.replace("(", " ").replace(")", " ").replace(",", " ").split())


def _split_call(value: str):
    mt = re.match(r"^\s*([A-Za-z_\-]+)\s*(?:\((.*)\))?\s*$", value)
    if mt is None:
        raise DesignError(f"cannot parse {value!r}")
    return mt.group(1).replace("-", "_"), (_floats(mt.group(2)) if mt.group(2) else ())


def _split_covariates(value: str) -> tuple:
    out, depth, cur = [], 0, ""
    for ch in value:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return tuple(out)


def parse_config(text: str):
    """Parse a ``key=value`` design file.

    Returns ``(design, settings, K)``.  Recognized keys: ``n``, ``m``,
    ``family``, ``beta``, ``gamma`` (``none`` for complete data),
    ``covariates``, ``corr`` (e.g. ``exchangeable(0.5)``), ``indicators``
    (``independent`` or ``pairwise_dependent(0.4)``), ``seed``, ``K``,
    ``working``, ``pi_mode``, ``pi_floor``.  ``#`` starts a comment.
    """
    return config_from_mapping(parse_mapping(text))


def parse_mapping(text: str) -> dict:
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DesignError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        kv[key.lower()] = value
    return kv


def config_from_mapping(kv: dict):
    known = {"n", "m", "family", "beta", "gamma", "covariates", "corr", "indicators",
             "seed", "k", "working", "pi_mode", "pi_floor"}
    unknown = set(kv) - known
    if unknown:
        raise DesignError(f"unknown config keys: {sorted(unknown)}")
    try:
        corr_name, rho = _split_call(kv.get("corr", "independent"))
        law, law_args = _split_call(kv.get("indicators", "independent"))
        gamma = kv.get("gamma", "none")
        design = SimDesign(
            n=int(kv["n"]),
            m=int(kv["m"]),
            family=kv.get("family", "normal"),
            beta_true=_floats(kv["beta"]),
            covariates=_split_covariates(kv.get("covariates", "intercept,uniform(-1,1)")),
            gamma_true=None if gamma.lower() == "none" else _floats(gamma),
            corr_true=corr_name,
            rho=rho,
            indicator_law=law,
            kappa=law_args[0] if law_args else 0.0,
            seed=int(kv.get("seed", 0)),
        )
        settings = FitSettings(
            structure=kv.get("working", "exchangeable"),
            pi_mode=kv.get("pi_mode", "estimated"),
            pi_floor=float(kv.get("pi_floor", 0.01)),
        )
    except KeyError as exc:
        raise DesignError(f"missing required config key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise DesignError(str(exc)) from exc
    K = int(kv.get("k", 100))
    return design, settings, K


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
