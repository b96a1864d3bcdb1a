"""Per-cluster matrices of the weighted estimating equation at a given beta.

Every diagonal matrix is stored as its diagonal.  Arrays carry an arbitrary
leading shape: ``(m,)`` for a single cluster, ``(n, m)`` for a whole
dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError
from .links import get_family

__all__ = ["ClusterWorkspace", "build_workspace", "compute_workspace", "weighted_variance"]


@dataclass(frozen=True)
class ClusterWorkspace:
    """Quantities assembled at ``beta`` for one cluster or a stack of clusters.

    Attributes
    ----------
    eta : linear predictor ``X_ij^T beta``
    mu_vec : marginal means ``mu(eta)``
    A : ``mu'(eta)``, the model variance
    A_star : ``sigma*_jj``, variance of the weighted response
    F : ``A / sqrt(A_star)``
    D : ``diag(A) X``, shape ``(..., m, p)``
    eps_star : weighted residual ``Y* - mu``
    G1 : derivative factor of ``F`` along ``X_ij``
    G2 : derivative factor of ``A_star**-1/2`` along ``X_ij``
    """

    eta: np.ndarray
    mu_vec: np.ndarray
    A: np.ndarray
    A_star: np.ndarray
    F: np.ndarray
    D: np.ndarray
    eps_star: np.ndarray
    G1: np.ndarray
    G2: np.ndarray

    @property
    def inv_sqrt_A_star(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.A_star)

    @property
    def std_residuals(self) -> np.ndarray:
        """``(Y* - mu) / sqrt(sigma*_jj)``."""
        return self.eps_star / np.sqrt(self.A_star)


def weighted_variance(mu, mu1, pi):
    """``sigma*_jj = mu' + (1/pi - 1)(mu' + mu^2)``."""
    return mu1 + (1.0 / pi - 1.0) * (mu1 + mu * mu)


def compute_workspace(X, beta, pi, y_star, family) -> ClusterWorkspace:
    """Vectorized workspace over leading axes of ``X`` (shape ``(..., m, p)``)."""
    family = get_family(family)
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    eta = X @ beta
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        mu, mu1, mu2 = family.evaluate(eta)
        c = 1.0 / pi - 1.0
        a_star = mu1 + c * (mu1 + mu * mu)
    bad = ~np.isfinite(a_star) | (a_star <= 0)
    if bad.any():
        raise DegenerateVarianceError(
            f"weighted variance sigma*_jj must be positive and finite, got {a_star[bad].flat[0]:.3g} "
            f"at {int(bad.sum())} cell(s); check mu' > 0, 0 < pi <= 1 and the range of X beta"
        )
    root = np.sqrt(a_star)
    denom = 2.0 * a_star * root
    f = mu1 / root
    g1 = mu2 / root - (2.0 * c * mu * mu1 * mu1 + mu1 * mu2 / pi) / denom
    g2 = -(2.0 * c * mu * mu1 + mu2 / pi) / denom
    return ClusterWorkspace(
        eta=eta,
        mu_vec=mu,
        A=mu1,
        A_star=a_star,
        F=f,
        D=mu1[..., None] * X,
        eps_star=np.asarray(y_star, dtype=float) - mu,
        G1=g1,
        G2=g2,
    )


def build_workspace(dataset, cluster, beta, pi, family, y_star) -> ClusterWorkspace:
    """Workspace for one cluster of ``dataset``.

    ``pi`` and ``y_star`` are the cluster's ``m``-vectors of observation
    probabilities and weighted responses.
    """
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0) or np.any(pi > 1):
        raise DegenerateVarianceError("observation probabilities must lie in (0, 1]")
    return compute_workspace(dataset.covariates[cluster], beta, pi, y_star, family)
