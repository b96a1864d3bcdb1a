"""Balanced longitudinal panel with missing responses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .links import LinkFamily, get_family

__all__ = ["LongitudinalDataset"]


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """``n`` clusters observed on ``m`` occasions with ``p`` covariates.

    Parameters
    ----------
    responses : (n, m) array
        Response values.  Entries where ``observed == 0`` are ignored and may
        be NaN.
    covariates : (n, m, p) array
        Covariate vectors ``X_ij``; always fully observed.
    observed : (n, m) array of {0, 1}
        Observation indicators ``I_ij``.
    cluster_ids : sequence, optional
        Labels for the clusters, defaults to ``0..n-1``.
    covariate_names : sequence of str, optional
        Column labels, defaults to ``x1..xp``.
    """

    responses: np.ndarray
    covariates: np.ndarray
    observed: np.ndarray
    cluster_ids: tuple = field(default=None)
    covariate_names: tuple = field(default=None)

    def __post_init__(self):
        y = np.array(self.responses, dtype=float)
        x = np.array(self.covariates, dtype=float)
        obs = np.asarray(self.observed)
        if x.ndim != 3:
            raise DataError(f"covariates must have shape (n, m, p), got {x.shape}")
        n, m, p = x.shape
        if n < 1 or m < 1 or p < 1:
            raise DataError(f"need n, m, p >= 1, got {(n, m, p)}")
        if y.shape != (n, m) or obs.shape != (n, m):
            raise DataError(
                f"responses {y.shape} and observed {obs.shape} must both be {(n, m)}"
            )
        if not np.all(np.isfinite(x)):
            raise DataError("covariates contain non-finite entries")
        if not np.all((obs == 0) | (obs == 1)):
            raise DataError("observed indicators must be 0 or 1")
        obs = obs.astype(np.int8)
        bad = (obs == 1) & ~np.isfinite(y)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(f"non-finite response at observed cell (cluster {i}, occasion {j})")
        for arr in (y, x, obs):
            arr.setflags(write=False)
        ids = tuple(range(n)) if self.cluster_ids is None else tuple(self.cluster_ids)
        if len(ids) != n:
            raise DataError(f"{len(ids)} cluster ids for {n} clusters")
        names = (
            tuple(f"x{k + 1}" for k in range(p))
            if self.covariate_names is None
            else tuple(str(s) for s in self.covariate_names)
        )
        if len(names) != p:
            raise DataError(f"{len(names)} covariate names for {p} covariates")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "cluster_ids", ids)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[2]

    @property
    def n_missing(self) -> int:
        return int(self.n * self.m - self.observed.sum())

    def filled_responses(self) -> np.ndarray:
        """Responses with missing cells replaced by 0 (safe for arithmetic)."""
        return np.where(self.observed == 1, self.responses, 0.0)

    def check_family(self, family: LinkFamily | str) -> None:
        """Raise :class:`DataError` if observed responses are outside the family's support."""
        family = get_family(family)
        yo = self.responses[self.observed == 1]
        if family.tag == "logit" and not np.all((yo == 0) | (yo == 1)):
            raise DataError("binomial family requires observed responses in {0, 1}")
        if family.tag == "log" and not np.all((yo >= 0) & (yo == np.round(yo))):
            raise DataError("poisson family requires non-negative integer responses")

    def subset(self, clusters) -> "LongitudinalDataset":
        """Return the dataset restricted to (or reordered by) ``clusters``."""
        idx = np.asarray(clusters)
        return LongitudinalDataset(
            self.responses[idx],
            self.covariates[idx],
            self.observed[idx],
            cluster_ids=[self.cluster_ids[i] for i in np.arange(self.n)[idx]],
            covariate_names=self.covariate_names,
        )

    def with_observed(self, observed) -> "LongitudinalDataset":
        return LongitudinalDataset(
            self.responses, self.covariates, observed,
            cluster_ids=self.cluster_ids, covariate_names=self.covariate_names,
        )

    def __repr__(self):
        return (
            f"LongitudinalDataset(n={self.n}, m={self.m}, p={self.p}, "
            f"missing={self.n_missing})"
        )
