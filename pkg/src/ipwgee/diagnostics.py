"""Plug-in versions of the quantities in the large-sample conditions.

None of these is a test; they let a user see whether, for example, the
smallest eigenvalue of the information matrix dominates the correlation
bound ``m * lambda_max(R^{-1})``, or whether any single observation carries
a large share of the information.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .correlation import build_R
from .equation import WeightedGEE
from .errors import NotConvergedError
from .links import get_family

__all__ = [
    "DiagnosticsReport",
    "compute_diagnostics",
    "diagnostics_trend",
    "write_trend_csv",
    "tau_n",
]

SINGULAR_MEAT = 1e-12

TREND_FIELDS = (
    "n", "iw_ratio", "gamma_star", "gamma0", "gamma_D", "c_n_hat",
    "lambda_tilde", "nd_proxy", "converged",
)


@dataclass(frozen=True)
class DiagnosticsReport:
    lambda_tilde: float
    tau_bound: float
    lambda_min_H: float
    iw_ratio: float
    c_n_hat: float
    gamma0: float
    gamma_star: float
    gamma_D: float
    pi_ratio: float
    rho_n: float
    k0: float | None
    k1: float
    max_abs_std_residual: float
    clamp_activations: int

    def to_dict(self) -> dict:
        out = asdict(self)
        out["c_n_infinite"] = math.isinf(self.c_n_hat)
        if out["c_n_infinite"]:
            out["c_n_hat"] = None
        return out


def tau_n(R, R_star) -> float:
    """``max_i lambda_max(R^{-1} R*_i)`` for a stack of true correlations ``R*_i``."""
    R_star = np.asarray(R_star, dtype=float)
    if R_star.ndim == 2:
        R_star = R_star[None]
    return float(max(linalg.eigh(Rs, R, eigvals_only=True)[-1] for Rs in R_star))


def compute_diagnostics(dataset, fit, model=None, corr=None, family=None) -> DiagnosticsReport:
    """Evaluate the diagnostics at a converged fit.

    ``model``, ``corr`` and ``family`` default to the ones stored in ``fit``.
    """
    if not fit.converged:
        raise NotConvergedError("diagnostics require a converged fit")
    model = fit.missingness_model if model is None else model
    corr = fit.correlation if corr is None else corr
    family = get_family(fit.family if family is None else family)

    R, R_inv, lam_tilde = build_R(corr, dataset.m)
    eq = WeightedGEE.from_dataset(dataset, model, corr, family)
    beta = fit.beta_hat
    ws = eq.workspace(beta)
    H = eq.fisher(beta, ws)
    M = eq.meat(beta, ws)

    tau_bound = dataset.m * lam_tilde
    h_evals = np.linalg.eigvalsh(H)
    # M is treated as singular relative to the scale of H, which shares its units
    c_n = math.inf
    if np.linalg.eigvalsh(M)[0] > SINGULAR_MEAT * h_evals[-1]:
        try:
            c_n = float(linalg.eigh(H, M, eigvals_only=True)[-1])
        except linalg.LinAlgError:
            pass

    L = np.linalg.cholesky(H)
    Z = np.linalg.solve(L, dataset.covariates.reshape(-1, dataset.p).T)
    gamma0 = float(np.max(np.sum(Z * Z, axis=0)))

    FX = ws.F[..., None] * dataset.covariates
    C = np.einsum("njp,jk,nkq->npq", FX, R_inv, FX, optimize=True)
    K = np.linalg.solve(L, np.linalg.solve(L, C).transpose(0, 2, 1))
    gamma_D = float(np.max(np.linalg.eigvalsh(0.5 * (K + K.transpose(0, 2, 1)))[:, -1]))

    r_evals = np.linalg.eigvalsh(R)
    mu, mu1, mu2 = ws.mu_vec, ws.A, family.mu_double_prime(ws.eta)
    k0 = None if family.tag == "identity" else float(np.max(mu1 / mu))
    return DiagnosticsReport(
        lambda_tilde=lam_tilde,
        tau_bound=tau_bound,
        lambda_min_H=float(h_evals[0]),
        iw_ratio=float(h_evals[0] / tau_bound),
        c_n_hat=c_n,
        gamma0=gamma0,
        gamma_star=tau_bound * gamma0,
        gamma_D=gamma_D,
        pi_ratio=float(r_evals[-1] / r_evals[0]),
        rho_n=float(np.max(1.0 / eq.pi)),
        k0=k0,
        k1=float(np.max(mu2 / mu1)),
        max_abs_std_residual=float(np.max(np.abs(ws.std_residuals))),
        clamp_activations=eq.clamp_activations,
    )


def diagnostics_trend(datasets, fit_fn, delta: float = 1.0) -> list[dict]:
    """Diagnostics over datasets of growing size.

    ``fit_fn(dataset)`` must return a :class:`FitResult`.  Each row carries
    ``iw_ratio``, ``gamma_star`` and ``nd_proxy = gamma_D * (c_n *
    lambda_tilde)^(1 + delta)``; ``delta`` is an illustrative probe value.
    """
    datasets = list(datasets)
    if len(datasets) < 3:
        raise ValueError("a trend needs at least three sample sizes")
    rows = []
    for ds in datasets:
        fit = fit_fn(ds)
        if not fit.converged:
            rows.append({"n": ds.n, "converged": False})
            continue
        d = compute_diagnostics(ds, fit)
        rows.append({
            "n": ds.n,
            "iw_ratio": d.iw_ratio,
            "gamma_star": d.gamma_star,
            "gamma0": d.gamma0,
            "gamma_D": d.gamma_D,
            "c_n_hat": d.c_n_hat,
            "lambda_tilde": d.lambda_tilde,
            "nd_proxy": d.gamma_D * (d.c_n_hat * d.lambda_tilde) ** (1.0 + delta),
            "converged": True,
        })
    return rows


def write_trend_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TREND_FIELDS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
