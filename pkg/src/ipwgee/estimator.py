"""Root finding for the weighted estimating equation.

:func:`solve` runs damped Newton on ``g_n(beta) = 0`` with either the full
analytic Jacobian or the Fisher-type matrix ``H*_n``.  :func:`fit_workflow`
chains the missingness fit, the working-independence initial fit, the
moment estimate of the working correlation and the final fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import WorkingCorrelation, estimate_alpha, normalize_structure
from .equation import WeightedGEE, _check_pd
from .errors import CompleteDataSignal, DataError, SingularDesignError
from .inference import InferenceReport, _plug_in, sandwich, wald_report
from .links import get_family
from .missingness import DEFAULT_PI_FLOOR, MissingnessModel, fit_gamma

__all__ = [
    "FitConfig",
    "FitResult",
    "solve",
    "fit_independence",
    "fit_workflow",
    "newton_solve",
]

log = logging.getLogger(__name__)

JACOBIAN_MODES = ("analytic", "fisher")
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``tol_score=None`` means ``1e-8 * n * m``.  ``beta_init`` is
    ``"independence"``, ``"zeros"`` or a coefficient vector.
    """

    tol_score: float | None = None
    tol_step: float = 1e-10
    max_iter: int = 50
    jacobian_mode: str = "analytic"
    beta_init: object = "independence"
    max_halvings: int = 10
    small_sample: bool = False

    def __post_init__(self):
        if self.tol_score is not None and not self.tol_score > 0:
            raise ValueError("tol_score must be positive")
        if not self.tol_step > 0:
            raise ValueError("tol_step must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise ValueError(f"jacobian_mode must be one of {JACOBIAN_MODES}")

    def score_tolerance(self, n: int, m: int) -> float:
        return self.tol_score if self.tol_score is not None else 1e-8 * n * m


@dataclass
class FitResult:
    beta_hat: np.ndarray
    gamma_hat: np.ndarray | None
    alpha_hat: np.ndarray
    H_hat: np.ndarray
    M_hat: np.ndarray
    B_hat: np.ndarray
    iterations: int
    final_score_norm: float
    converged: bool
    clamp_activations: int
    structure: str = "independence"
    family: str = "identity"
    coef_names: tuple = ()
    beta_indep: np.ndarray | None = None
    pi_floor: float = DEFAULT_PI_FLOOR
    trace: list = field(default_factory=list)

    def report(self) -> InferenceReport:
        return wald_report(self.beta_hat, self.B_hat, self.coef_names)

    @property
    def missingness_model(self) -> MissingnessModel:
        return MissingnessModel(self.gamma_hat, self.pi_floor)

    @property
    def correlation(self) -> WorkingCorrelation:
        return WorkingCorrelation(self.structure, self.alpha_hat)

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "gamma_hat": None if self.gamma_hat is None else np.asarray(self.gamma_hat).tolist(),
            "alpha_hat": np.asarray(self.alpha_hat).tolist(),
            "beta_indep": None if self.beta_indep is None else self.beta_indep.tolist(),
            "H_hat": self.H_hat.tolist(),
            "M_hat": self.M_hat.tolist(),
            "B_hat": self.B_hat.tolist(),
            "iterations": self.iterations,
            "final_score_norm": self.final_score_norm,
            "converged": self.converged,
            "clamp_activations": self.clamp_activations,
            "pi_floor": self.pi_floor,
            "structure": self.structure,
            "family": self.family,
            "coef_names": list(self.coef_names),
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        """Inverse of :meth:`to_dict`; non-finite matrix entries may be ``None``."""

        def arr(v):
            return None if v is None else np.array(v, dtype=float)

        beta = arr(d["beta_hat"])
        blank = np.full((beta.size, beta.size), np.nan)
        return cls(
            beta_hat=beta,
            gamma_hat=arr(d.get("gamma_hat")),
            alpha_hat=np.asarray(d.get("alpha_hat", []), dtype=float),
            H_hat=arr(d.get("H_hat", blank)),
            M_hat=arr(d.get("M_hat", blank)),
            B_hat=arr(d.get("B_hat", blank)),
            iterations=int(d.get("iterations", 0)),
            final_score_norm=float(arr(d.get("final_score_norm", np.nan))),
            converged=bool(d["converged"]),
            clamp_activations=int(d.get("clamp_activations", 0)),
            structure=d.get("structure", "independence"),
            family=d.get("family", "identity"),
            coef_names=tuple(d.get("coef_names", ())),
            beta_indep=arr(d.get("beta_indep")),
            pi_floor=float(d.get("pi_floor", DEFAULT_PI_FLOOR)),
            trace=list(d.get("trace", [])),
        )


def newton_solve(score_fn, neg_jac_fn, fisher_fn, beta0, tol_score, config: FitConfig):
    """Damped Newton iteration ``beta <- beta + J(beta)^{-1} g(beta)``.

    ``J`` is ``neg_jac_fn`` in analytic mode (falling back to ``fisher_fn`` for
    a step whenever it is numerically singular) or ``fisher_fn`` in fisher
    mode.  Each step is halved up to ``config.max_halvings`` times until
    ``||g||_2`` decreases.

    Returns ``(beta, converged, iterations, sup_norm, trace)``.
    """
    beta = np.array(beta0, dtype=float)
    g = score_fn(beta)
    trace = []
    iterations = 0
    while True:
        sup = float(np.max(np.abs(g)))
        if not np.isfinite(sup):
            return beta, False, iterations, sup, trace
        if sup < tol_score:
            return beta, True, iterations, sup, trace
        if iterations >= config.max_iter:
            return beta, False, iterations, sup, trace

        mode = config.jacobian_mode
        step = None
        if mode == "analytic":
            J = neg_jac_fn(beta)
            if np.all(np.isfinite(J)) and np.linalg.cond(J) < SINGULAR_COND:
                step = np.linalg.solve(J, g)
            else:
                mode = "fisher_fallback"
        if step is None:
            H = fisher_fn(beta)
            try:
                L = np.linalg.cholesky(H)
            except np.linalg.LinAlgError as exc:
                raise SingularDesignError(
                    "H*_n is not positive definite at the current iterate"
                ) from exc
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))

        norm0 = np.linalg.norm(g)
        t = 1.0
        halvings = 0
        while True:
            cand = beta + t * step
            try:
                g_cand = score_fn(cand)
                ok = np.all(np.isfinite(g_cand))
            except ArithmeticError:
                ok = False
            if ok and np.linalg.norm(g_cand) < norm0:
                break
            if halvings >= config.max_halvings:
                break
            t *= 0.5
            halvings += 1
        if not ok:
            sup = float(np.max(np.abs(g)))
            trace.append({"iteration": iterations + 1, "mode": mode, "halvings": halvings,
                          "step_norm": 0.0, "score_norm": sup, "status": "non-finite step"})
            return beta, False, iterations, sup, trace
        iterations += 1
        rel_step = np.linalg.norm(cand - beta) / max(1.0, np.linalg.norm(beta))
        beta, g = cand, g_cand
        sup = float(np.max(np.abs(g)))
        trace.append({"iteration": iterations, "mode": mode, "halvings": halvings,
                      "step_norm": float(rel_step), "score_norm": sup})
        if rel_step < config.tol_step:
            # stalled: converged only if the score criterion also holds
            return beta, sup < tol_score, iterations, sup, trace


def _resolve_init(dataset, model, family, config):
    init = config.beta_init
    if isinstance(init, str):
        if init == "zeros":
            return np.zeros(dataset.p)
        if init in ("independence", "independence_fit"):
            try:
                return fit_independence(dataset, model, family, config)
            except (ArithmeticError, RuntimeError) as exc:
                log.warning("independence initializer failed (%s); starting from zeros", exc)
                return np.zeros(dataset.p)
        raise ValueError(f"unknown beta_init {init!r}")
    beta0 = np.asarray(init, dtype=float).reshape(-1)
    if beta0.size != dataset.p:
        raise ValueError(f"beta_init has length {beta0.size}, expected {dataset.p}")
    return beta0


def solve(dataset, config: FitConfig, model: MissingnessModel, corr: WorkingCorrelation,
          family, eq: WeightedGEE | None = None) -> FitResult:
    """Solve ``g_n(beta) = 0`` and attach the sandwich covariance.

    Non-convergence is reported through ``converged=False``, not raised.
    """
    family = get_family(family)
    if eq is None:
        eq = WeightedGEE.from_dataset(dataset, model, corr, family)
    tol = config.score_tolerance(dataset.n, dataset.m)
    beta0 = _resolve_init(dataset, model, family, config)
    _check_pd(eq.fisher(beta0))
    beta, converged, iters, sup, trace = newton_solve(
        eq.score, eq.neg_jacobian, eq.fisher, beta0, tol, config
    )
    H, M = _plug_in(eq, beta, config.small_sample)
    try:
        B = sandwich(H, M)
    except ArithmeticError:
        if converged:
            raise
        B = np.full_like(H, np.nan)
    return FitResult(
        beta_hat=beta,
        gamma_hat=model.gamma,
        alpha_hat=np.asarray(corr.alpha),
        H_hat=H,
        M_hat=M,
        B_hat=B,
        iterations=iters,
        final_score_norm=sup,
        converged=bool(converged),
        clamp_activations=eq.clamp_activations,
        structure=corr.structure,
        family=family.tag,
        coef_names=dataset.covariate_names,
        pi_floor=model.pi_floor,
        trace=trace,
    )


def fit_independence(dataset, model: MissingnessModel, family, config: FitConfig | None = None,
                     variance_weighted: bool = False) -> np.ndarray:
    """Working-independence fit with weighted responses.

    By default solves ``sum_ij X_ij (Y*_ij - mu(X_ij^T beta)) = 0``.  With
    ``variance_weighted=True`` it solves the weighted equation with
    ``R = I`` instead (weights ``mu' / sigma*_jj``); the two coincide when
    every probability is 1.

    Raises ``RuntimeError`` if Newton does not converge.
    """
    family = get_family(family)
    config = config or FitConfig()
    init_config = replace(config, beta_init="zeros")
    tol = init_config.score_tolerance(dataset.n, dataset.m)
    eq = WeightedGEE.from_dataset(dataset, model, WorkingCorrelation("independence"), family)
    if variance_weighted:
        score_fn, jac_fn, fisher_fn = eq.score, eq.neg_jacobian, eq.fisher
    else:
        X = eq.X

        def score_fn(beta):
            return np.einsum("nmp,nm->p", X, eq.y_star - family.mu(X @ beta))

        def fisher_fn(beta):
            w = family.mu_prime(X @ beta)
            return np.einsum("nmp,nm,nmq->pq", X, w, X, optimize=True)

        jac_fn = fisher_fn
    _check_pd(fisher_fn(np.zeros(dataset.p)), "working-independence information")
    beta, converged, iters, sup, _ = newton_solve(score_fn, jac_fn, fisher_fn,
                                                  np.zeros(dataset.p), tol, init_config)
    if not converged:
        raise RuntimeError(
            f"working-independence fit did not converge after {iters} iterations "
            f"(score sup-norm {sup:.3g})"
        )
    return beta


def fit_workflow(dataset, family, structure="exchangeable", pi_floor: float = DEFAULT_PI_FLOOR,
                 config: FitConfig | None = None, gamma_tol: float | None = None,
                 model: MissingnessModel | None = None) -> FitResult:
    """Missingness fit, independence fit, moment estimate of ``alpha``, final fit.

    Steps: fit ``gamma`` on the indicators (skipped when nothing is missing),
    form ``Y*``, solve the working-independence equation for ``beta_indep``,
    standardize residuals at ``beta_indep``, estimate ``alpha`` once, then
    solve the weighted equation with ``R(alpha_hat)`` starting from
    ``beta_indep``.  Passing ``model`` skips the missingness fit and uses
    those probabilities instead.
    """
    family = get_family(family)
    config = config or FitConfig()
    structure = normalize_structure(structure)
    if dataset.observed.sum() == 0:
        raise DataError("all responses missing")
    dataset.check_family(family)
    if model is None:
        try:
            gamma = fit_gamma(dataset, tol=gamma_tol)
            model = MissingnessModel(gamma, pi_floor)
        except CompleteDataSignal:
            model = MissingnessModel(None, pi_floor)
    beta_indep = fit_independence(dataset, model, family, config)
    if structure == "independence":
        alpha = np.zeros(0)
    else:
        eq0 = WeightedGEE.from_dataset(dataset, model, WorkingCorrelation("independence"), family)
        resid = eq0.workspace(beta_indep).std_residuals
        alpha = estimate_alpha(resid, structure, dataset.p)
    corr = WorkingCorrelation(structure, alpha)
    if isinstance(config.beta_init, str) and config.beta_init in ("independence", "independence_fit"):
        final_config = replace(config, beta_init=beta_indep)
    else:
        final_config = config
    result = solve(dataset, final_config, model, corr, family)
    result.beta_indep = beta_indep
    return result
