"""Logistic model for the observation indicators and inverse-probability weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompleteDataSignal, DataError, SeparationError
from .links import LOGIT

__all__ = [
    "MissingnessModel",
    "JointObservationProbs",
    "fit_gamma",
    "pi_hat",
    "observation_probabilities",
    "weighted_responses",
    "weighted_covariance",
]

DEFAULT_PI_FLOOR = 0.01
SEPARATION_NORM = 50.0
SEPARATION_COND = 1e12


@dataclass(frozen=True)
class MissingnessModel:
    """``pi_ij = max(expit(X_ij^T gamma), pi_floor)``.

    ``gamma=None`` encodes complete data: every probability is exactly 1.
    """

    gamma: np.ndarray | None = None
    pi_floor: float = DEFAULT_PI_FLOOR

    def __post_init__(self):
        if not 0.0 < self.pi_floor < 1.0:
            raise ValueError(f"pi_floor must lie in (0, 1), got {self.pi_floor}")
        if self.gamma is not None:
            g = np.array(self.gamma, dtype=float).reshape(-1)
            if not np.all(np.isfinite(g)):
                raise ValueError("gamma must be finite")
            g.setflags(write=False)
            object.__setattr__(self, "gamma", g)

    @classmethod
    def complete(cls) -> "MissingnessModel":
        return cls(None)

    @property
    def is_complete(self) -> bool:
        return self.gamma is None

    def probabilities(self, X) -> tuple[np.ndarray, int]:
        """Return ``(pi, n_clamped)`` for covariates ``X`` of shape ``(..., p)``."""
        X = np.asarray(X, dtype=float)
        if self.gamma is None:
            return np.ones(X.shape[:-1]), 0
        raw = LOGIT.mu(X @ self.gamma)
        clamped = raw < self.pi_floor
        return np.where(clamped, self.pi_floor, raw), int(clamped.sum())


@dataclass(frozen=True)
class JointObservationProbs:
    """``q_jk = P(I_j = 1, I_k = 1 | X)`` for one cluster; diagonal holds ``pi``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("q must be square")
        if not np.allclose(q, q.T, atol=1e-14):
            raise ValueError("q must be symmetric")
        pi = np.diag(q)
        lo = np.maximum(0.0, pi[:, None] + pi[None, :] - 1.0)
        hi = np.minimum(pi[:, None], pi[None, :])
        if np.any(q < lo - 1e-14) or np.any(q > hi + 1e-14):
            raise ValueError("q violates the Frechet bounds")
        object.__setattr__(self, "q", q)

    @property
    def pi(self) -> np.ndarray:
        return np.diag(self.q).copy()

    @classmethod
    def independent(cls, pi) -> "JointObservationProbs":
        pi = np.asarray(pi, dtype=float)
        q = np.outer(pi, pi)
        np.fill_diagonal(q, pi)
        return cls(q)

    @classmethod
    def shared_factor(cls, pi, kappa: float) -> "JointObservationProbs":
        """Mixture law: with probability ``kappa`` all indicators share one uniform.

        ``q_jk = kappa * min(pi_j, pi_k) + (1 - kappa) * pi_j * pi_k`` for ``j != k``.
        """
        if not 0.0 <= kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        pi = np.asarray(pi, dtype=float)
        q = kappa * np.minimum.outer(pi, pi) + (1.0 - kappa) * np.outer(pi, pi)
        np.fill_diagonal(q, pi)
        return cls(q)


def pi_hat(model: MissingnessModel, x) -> float:
    """Observation probability for a single covariate vector."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("covariate vector must be finite")
    return float(model.probabilities(x)[0])


def observation_probabilities(dataset, model: MissingnessModel) -> tuple[np.ndarray, int]:
    """``(n, m)`` probabilities for ``dataset`` plus the number of clamped cells."""
    return model.probabilities(dataset.covariates)


def weighted_responses(dataset, model: MissingnessModel, pi=None) -> np.ndarray:
    """Inverse-probability weighted responses ``Y I / pi``; missing cells give 0."""
    if pi is None:
        pi, _ = observation_probabilities(dataset, model)
    return dataset.filled_responses() * dataset.observed / pi


def fit_gamma(dataset, tol: float | None = None, max_iter: int = 100) -> np.ndarray:
    """Solve the pooled logistic score equation for the observation indicators.

    Damped Newton from ``gamma = 0``: the step is halved (at most 30 times)
    until the score norm decreases.

    Raises
    ------
    CompleteDataSignal
        Every indicator equals 1; use ``pi = 1``.
    DataError
        Every indicator equals 0.
    SeparationError
        The iterates diverge or the Hessian becomes numerically singular.
    """
    X = dataset.covariates.reshape(-1, dataset.p)
    I = dataset.observed.reshape(-1).astype(float)
    if I.min() == 1.0:
        raise CompleteDataSignal("all responses observed; no missingness model to fit")
    if I.max() == 0.0:
        raise DataError("all responses missing")
    if tol is None:
        tol = 1e-8 * I.size

    def score(g):
        return X.T @ (I - LOGIT.mu(X @ g))

    gamma = np.zeros(dataset.p)
    s = score(gamma)
    for _ in range(max_iter):
        if np.max(np.abs(s)) < tol:
            return gamma
        w = LOGIT.mu_prime(X @ gamma)
        hess = X.T @ (w[:, None] * X)
        evals, evecs = np.linalg.eigh(hess)
        if evals[0] <= evals[-1] / SEPARATION_COND:
            raise SeparationError(
                "missingness fit: information matrix is singular "
                f"(condition > {SEPARATION_COND:.0e}); separation along {np.round(evecs[:, 0], 6).tolist()}",
                direction=evecs[:, 0],
            )
        step = np.linalg.solve(hess, s)
        norm0 = np.linalg.norm(s)
        t = 1.0
        for _ in range(30):
            cand = gamma + t * step
            s_cand = score(cand)
            if np.linalg.norm(s_cand) < norm0:
                break
            t *= 0.5
        gamma, s = cand, s_cand
        if np.linalg.norm(gamma) > SEPARATION_NORM:
            direction = gamma / np.linalg.norm(gamma)
            raise SeparationError(
                f"missingness fit diverged (|gamma| > {SEPARATION_NORM:g}); "
                f"separation along {np.round(direction, 6).tolist()}",
                direction=direction,
            )
    if np.max(np.abs(s)) < tol:
        return gamma
    raise SeparationError(
        f"missingness fit did not converge in {max_iter} iterations "
        f"(score sup-norm {np.max(np.abs(s)):.3g})",
        direction=gamma / max(np.linalg.norm(gamma), 1e-300),
    )


def weighted_covariance(mu, sigma, q) -> np.ndarray:
    """Conditional covariance of the weighted responses of one cluster.

    ``sigma*_jk = sigma_jk + (q_jk / (pi_j pi_k) - 1)(sigma_jk + mu_j mu_k)``
    where ``pi = diag(q)``, ``sigma`` is the covariance of the unweighted
    responses and ``mu`` their means.  Leading axes are treated as a stack
    of clusters.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = q.q if isinstance(q, JointObservationProbs) else np.asarray(q, dtype=float)
    pi = np.diagonal(q, axis1=-2, axis2=-1)
    return sigma + (q / _outer(pi) - 1.0) * (sigma + _outer(mu))


def _outer(v):
    return v[..., :, None] * v[..., None, :]
