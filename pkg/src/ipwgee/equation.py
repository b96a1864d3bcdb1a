"""The inverse-probability-weighted estimating function and its derivatives.

For cluster ``i`` with ``s_i = A*_i^{-1/2}`` the score contribution is
``X_i^T F_i R^{-1} s_i eps*_i``.  All clusters share one working correlation
``R``, so everything is evaluated with batched array operations over the
cluster axis; sums over clusters are taken in a fixed order, so results are
reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import WorkingCorrelation, build_R
from .errors import SingularDesignError
from .links import LinkFamily, get_family
from .missingness import MissingnessModel, observation_probabilities, weighted_responses
from .workspace import ClusterWorkspace, compute_workspace

__all__ = ["WeightedGEE", "score", "neg_jacobian", "fisher_matrix", "jacobian_terms"]


def _quad(left, R_inv, right):
    """``sum_i left_i^T R_inv right_i`` for stacks of ``(m, p)`` matrices."""
    return np.einsum("njp,jk,nkq->pq", left, R_inv, right, optimize=True)


@dataclass(frozen=True, eq=False)
class WeightedGEE:
    """Estimating equation bound to data, observation probabilities and ``R``.

    Build one with :meth:`from_dataset`; the direct constructor is for callers
    that already hold the arrays (the simulation harness supplies true
    probabilities this way).
    """

    X: np.ndarray  # (n, m, p)
    y_star: np.ndarray  # (n, m)
    pi: np.ndarray  # (n, m)
    R_inv: np.ndarray  # (m, m)
    family: LinkFamily
    clamp_activations: int = 0

    @classmethod
    def from_dataset(cls, dataset, model: MissingnessModel, corr: WorkingCorrelation, family):
        pi, clamped = observation_probabilities(dataset, model)
        y_star = weighted_responses(dataset, model, pi)
        _, R_inv, _ = build_R(corr, dataset.m)
        return cls(dataset.covariates, y_star, pi, R_inv, get_family(family), clamped)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def workspace(self, beta) -> ClusterWorkspace:
        return compute_workspace(self.X, beta, self.pi, self.y_star, self.family)

    def contributions(self, beta, ws=None) -> np.ndarray:
        """Per-cluster score vectors, shape ``(n, p)``."""
        ws = self.workspace(beta) if ws is None else ws
        r = (ws.eps_star * ws.inv_sqrt_A_star) @ self.R_inv
        return np.einsum("nmp,nm->np", self.X, ws.F * r)

    def score(self, beta, ws=None) -> np.ndarray:
        ws = self.workspace(beta) if ws is None else ws
        r = (ws.eps_star * ws.inv_sqrt_A_star) @ self.R_inv
        return np.einsum("nmp,nm->p", self.X, ws.F * r)

    def fisher(self, beta, ws=None) -> np.ndarray:
        """``H*_n(beta) = sum_i X_i^T F_i R^{-1} F_i X_i``."""
        ws = self.workspace(beta) if ws is None else ws
        FX = ws.F[..., None] * self.X
        H = _quad(FX, self.R_inv, FX)
        return 0.5 * (H + H.T)

    def _curvature_terms(self, ws, resid):
        """The two matrices linear in ``resid`` that enter the Jacobian.

        ``X^T diag[R^{-1} s resid] G1 X`` and ``X^T F R^{-1} diag[resid] G2 X``.
        """
        r = (resid * ws.inv_sqrt_A_star) @ self.R_inv
        t1 = np.einsum("nmp,nm,nmq->pq", self.X, r * ws.G1, self.X, optimize=True)
        FX = ws.F[..., None] * self.X
        t2 = _quad(FX, self.R_inv, (resid * ws.G2)[..., None] * self.X)
        return t1, t2

    def neg_jacobian(self, beta, ws=None) -> np.ndarray:
        """``-d g_n / d beta^T``; non-symmetric in general."""
        ws = self.workspace(beta) if ws is None else ws
        t1, t2 = self._curvature_terms(ws, ws.eps_star)
        return self.fisher(beta, ws) - t1 - t2

    def jacobian_terms(self, beta, beta0) -> dict:
        """Split ``-neg_jacobian(beta)`` around a reference point ``beta0``.

        Returns ``H_star``, ``B1``, ``B2``, ``E1``, ``E2`` with
        ``neg_jacobian = H_star - (B1 + B2) - (E1 + E2)``; the ``B`` terms carry
        ``mu(beta0) - mu(beta)`` and the ``E`` terms carry ``Y* - mu(beta0)``.
        """
        ws = self.workspace(beta)
        mu0 = self.family.mu(self.X @ np.asarray(beta0, dtype=float))
        B1, B2 = self._curvature_terms(ws, mu0 - ws.mu_vec)
        E1, E2 = self._curvature_terms(ws, self.y_star - mu0)
        return {"H_star": self.fisher(beta, ws), "B1": B1, "B2": B2, "E1": E1, "E2": E2}

    def meat(self, beta, ws=None) -> np.ndarray:
        """``sum_i u_i u_i^T`` over per-cluster score contributions ``u_i``."""
        u = self.contributions(beta, ws)
        M = u.T @ u
        return 0.5 * (M + M.T)

    def meat_expected(self, beta, sigma_star) -> np.ndarray:
        """``M*_n(beta) = sum_i D_i^T V*_i^{-1} Sigma*_i V*_i^{-1} D_i``.

        ``sigma_star`` is the stack ``(n, m, m)`` of true conditional
        covariances of the weighted responses.
        """
        ws = self.workspace(beta)
        s = ws.inv_sqrt_A_star
        inner = s[:, :, None] * np.asarray(sigma_star) * s[:, None, :]
        left = np.einsum("jk,nkp->njp", self.R_inv, ws.F[..., None] * self.X)
        M = np.einsum("njp,njk,nkq->pq", left, inner, left, optimize=True)
        return 0.5 * (M + M.T)


def _check_pd(H, what="H*_n"):
    evals = np.linalg.eigvalsh(H)
    if evals[0] <= 1e-12 * max(abs(evals[-1]), 1e-300):
        raise SingularDesignError(
            f"{what} is not positive definite (eigenvalues {evals[0]:.3g} .. {evals[-1]:.3g}); "
            "check the design for collinear columns"
        )


def score(dataset, beta, model, corr, family) -> np.ndarray:
    """``g_n(beta) = sum_i D_i^T V*_i^{-1} (Y*_i - mu_i(beta))``."""
    return WeightedGEE.from_dataset(dataset, model, corr, family).score(beta)


def neg_jacobian(dataset, beta, model, corr, family) -> np.ndarray:
    """Analytic ``-d g_n / d beta^T``."""
    return WeightedGEE.from_dataset(dataset, model, corr, family).neg_jacobian(beta)


def fisher_matrix(dataset, beta, model, corr, family) -> np.ndarray:
    """``H*_n(beta)``; raises :class:`SingularDesignError` if not positive definite."""
    H = WeightedGEE.from_dataset(dataset, model, corr, family).fisher(beta)
    _check_pd(H)
    return H


def jacobian_terms(dataset, beta, beta0, model, corr, family) -> dict:
    return WeightedGEE.from_dataset(dataset, model, corr, family).jacobian_terms(beta, beta0)
