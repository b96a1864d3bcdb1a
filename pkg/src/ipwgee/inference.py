"""Sandwich covariance, standard errors and Wald tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .equation import WeightedGEE
from .errors import DegenerateVarianceError, SingularInformationError

__all__ = [
    "InferenceReport",
    "plug_in_matrices",
    "sandwich",
    "wald_report",
    "normal_two_sided_p",
]


@dataclass(frozen=True)
class InferenceReport:
    coef_names: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    z_stats: np.ndarray
    p_values: np.ndarray
    B_hat: np.ndarray

    def rows(self):
        for k, name in enumerate(self.coef_names):
            yield name, self.estimates[k], self.std_errors[k], self.z_stats[k], self.p_values[k]

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"name": name, "estimate": float(est), "std_error": float(se),
                 "z": float(z), "p_value": float(p)}
                for name, est, se, z, p in self.rows()
            ],
            "B_hat": self.B_hat.tolist(),
        }

    def format_table(self, title: str = "", digits: int = 3) -> str:
        """Aligned text table with estimate, s.e. and p-value columns."""
        width = max([len(str(n)) for n in self.coef_names] + [len(title), 9])
        head = f"{title:<{width}}  {'estimate':>10}  {'s.e.':>10}  {'p-value':>10}"
        lines = [head, "-" * len(head)]
        for name, est, se, _, p in self.rows():
            lines.append(
                f"{name:<{width}}  {est:>10.{digits}f}  {se:>10.{digits}f}  {p:>10.{digits}f}"
            )
        return "\n".join(lines)


def normal_two_sided_p(z):
    """``2 P(Z > |z|)`` for a standard normal ``Z``."""
    return 2.0 * special.ndtr(-np.abs(np.asarray(z, dtype=float)))


def plug_in_matrices(dataset, beta_hat, model, corr, family, small_sample: bool = False):
    """Plug-in ``(H_hat, M_hat)`` at ``beta_hat`` with estimated probabilities.

    ``M_hat`` replaces ``Sigma*_i`` by the outer product of the weighted
    residuals.  ``small_sample`` multiplies ``M_hat`` by ``n / (n - p)``.
    """
    eq = WeightedGEE.from_dataset(dataset, model, corr, family)
    H, M = _plug_in(eq, beta_hat, small_sample)
    evals = np.linalg.eigvalsh(H)
    if evals[0] <= 1e-12 * max(abs(evals[-1]), 1e-300):
        raise SingularInformationError(
            f"plug-in information matrix is singular (lambda_min = {evals[0]:.3g})"
        )
    return H, M


def _plug_in(eq: WeightedGEE, beta_hat, small_sample=False):
    ws = eq.workspace(beta_hat)
    H = eq.fisher(beta_hat, ws)
    M = eq.meat(beta_hat, ws)
    if small_sample:
        if eq.n <= eq.p:
            raise ValueError("small-sample correction needs n > p")
        M = M * (eq.n / (eq.n - eq.p))
    return H, M


def sandwich(H_hat, M_hat) -> np.ndarray:
    """``H^{-1} M H^{-1}``, symmetrized."""
    H_hat = np.asarray(H_hat, dtype=float)
    try:
        Hinv_M = np.linalg.solve(H_hat, np.asarray(M_hat, dtype=float))
        B = np.linalg.solve(H_hat, Hinv_M.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError("plug-in information matrix H_hat is singular") from exc
    if not np.all(np.isfinite(B)):
        raise SingularInformationError("plug-in information matrix H_hat is singular")
    return 0.5 * (B + B.T)


def wald_report(beta_hat, B_hat, names=None) -> InferenceReport:
    beta_hat = np.asarray(beta_hat, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    names = tuple(names) if names is not None else tuple(f"beta{k}" for k in range(beta_hat.size))
    var = np.diag(B_hat)
    bad = np.flatnonzero(~(var > 0))
    if bad.size:
        raise DegenerateVarianceError(
            f"non-positive sandwich variance for coefficient(s) {[names[k] for k in bad]}"
        )
    se = np.sqrt(var)
    z = beta_hat / se
    return InferenceReport(names, beta_hat, se, z, normal_two_sided_p(z), B_hat)
