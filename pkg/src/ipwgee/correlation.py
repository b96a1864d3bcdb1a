"""Working correlation matrices and moment estimators of their parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import CorrelationInvalidError, InsufficientClustersError
from .missingness import observation_probabilities, weighted_responses
from .workspace import compute_workspace

__all__ = [
    "WorkingCorrelation",
    "build_R",
    "standardized_residuals",
    "estimate_alpha",
    "normalize_structure",
]

STRUCTURES = ("independence", "one_dependent", "exchangeable", "fixed")


def normalize_structure(name: str) -> str:
    key = str(name).lower().replace("-", "_")
    aliases = {"independent": "independence", "1_dependent": "one_dependent"}
    key = aliases.get(key, key)
    if key not in STRUCTURES:
        raise ValueError(f"unknown correlation structure {name!r}; expected one of {STRUCTURES}")
    return key


@dataclass(frozen=True)
class WorkingCorrelation:
    """Structure tag plus parameters.

    ``alpha`` is empty for independence, a length ``m - 1`` vector for
    one-dependent, a scalar (length-1 vector) for exchangeable and the full
    ``m x m`` matrix for ``fixed``.
    """

    structure: str = "independence"
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "structure", normalize_structure(self.structure))
        a = np.array(self.alpha, dtype=float)
        if self.structure != "fixed":
            a = a.reshape(-1)
        if self.structure == "independence" and a.size:
            raise ValueError("independence structure takes no parameters")
        if self.structure == "exchangeable" and a.size != 1:
            raise ValueError("exchangeable structure takes exactly one parameter")
        if not np.all(np.isfinite(a)):
            raise ValueError("correlation parameters must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    def matrix(self, m: int) -> np.ndarray:
        """The ``m x m`` matrix ``R(alpha)`` without any validity check."""
        if self.structure == "independence":
            return np.eye(m)
        if self.structure == "exchangeable":
            a = float(self.alpha[0])
            return (1.0 - a) * np.eye(m) + a * np.ones((m, m))
        if self.structure == "one_dependent":
            if self.alpha.size != m - 1:
                raise ValueError(f"one-dependent structure needs {m - 1} parameters, got {self.alpha.size}")
            return np.eye(m) + np.diag(self.alpha, 1) + np.diag(self.alpha, -1)
        R = np.array(self.alpha, dtype=float)
        if R.shape != (m, m):
            raise ValueError(f"fixed correlation must be {m}x{m}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise CorrelationInvalidError("fixed correlation must be symmetric with unit diagonal")
        return R

    def to_dict(self) -> dict:
        return {"structure": self.structure, "alpha": np.asarray(self.alpha).tolist()}


def build_R(spec: WorkingCorrelation, m: int):
    """Return ``(R, R_inv, lambda_max(R_inv))``.

    Raises :class:`CorrelationInvalidError` (carrying ``lambda_min``) when
    ``R`` is not positive definite.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    R = spec.matrix(m)
    evals = np.linalg.eigvalsh(R)
    try:
        chol = linalg.cho_factor(R, lower=True)
    except linalg.LinAlgError:
        chol = None
    if chol is None or evals[0] <= 0:
        raise CorrelationInvalidError(
            f"{spec.structure} working correlation is not positive definite "
            f"(lambda_min = {evals[0]:.6g})",
            lambda_min=float(evals[0]),
        )
    R_inv = linalg.cho_solve(chol, np.eye(m))
    R_inv = 0.5 * (R_inv + R_inv.T)
    return R, R_inv, float(1.0 / evals[0])


def standardized_residuals(dataset, beta, model, family) -> np.ndarray:
    """``(Y*_ij - mu_ij(beta)) / sqrt(sigma*_jj(beta))`` for every cell."""
    pi, _ = observation_probabilities(dataset, model)
    y_star = weighted_responses(dataset, model, pi)
    ws = compute_workspace(dataset.covariates, beta, pi, y_star, family)
    return ws.std_residuals


def estimate_alpha(residuals, structure, p: int) -> np.ndarray:
    """Moment estimators of the working-correlation parameters.

    one-dependent: ``alpha_j = sum_i r_ij r_i,j+1 / (n - p)``;
    exchangeable: ``alpha = sum_i sum_{j<k} r_ij r_ik / (N - p)`` with
    ``N = n m (m - 1) / 2``.  Independence returns an empty vector.
    """
    r = np.asarray(residuals, dtype=float)
    n, m = r.shape
    structure = normalize_structure(structure)
    if structure == "independence":
        return np.zeros(0)
    if structure == "fixed":
        raise ValueError("fixed correlation has no moment estimator")
    if n <= p:
        raise InsufficientClustersError(f"need more clusters than parameters (n={n}, p={p})")
    cross = r.T @ r
    if structure == "one_dependent":
        return np.diagonal(cross, 1) / (n - p)
    if m < 2:
        raise ValueError("exchangeable estimator needs m >= 2")
    N = n * m * (m - 1) // 2
    return np.array([np.triu(cross, 1).sum() / (N - p)])
