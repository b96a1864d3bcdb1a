"""Mean functions mu(x) with their first two derivatives.

The three canonical GLM families used for marginal models with unit
dispersion: identity (normal), log (Poisson) and logit (Bernoulli).  In
each case the conditional variance equals ``mu'(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError

__all__ = ["LinkFamily", "IDENTITY", "LOG", "LOGIT", "get_family", "eval_link"]


def _identity(x):
    return np.asarray(x, dtype=float) + 0.0


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _expit(x):
    # sign-split evaluation: exp is only ever taken of a non-positive number
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _expit_prime(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return e / (1.0 + e) ** 2


def _expit_double_prime(x):
    # mu'' = mu' (1 - 2 mu) = -mu' tanh(x/2)
    x = np.asarray(x, dtype=float)
    return -_expit_prime(x) * np.tanh(0.5 * x)


@dataclass(frozen=True)
class LinkFamily:
    """A mean function and its derivatives.

    ``tag`` is one of ``identity``, ``log``, ``logit``; ``response`` names the
    matching response distribution (``normal``, ``poisson``, ``binomial``).
    All callables are vectorized over numpy arrays.
    """

    tag: str
    response: str
    mu: Callable[[np.ndarray], np.ndarray]
    mu_prime: Callable[[np.ndarray], np.ndarray]
    mu_double_prime: Callable[[np.ndarray], np.ndarray]

    def evaluate(self, x):
        """Return ``(mu, mu', mu'')`` at ``x`` (array or scalar)."""
        return self.mu(x), self.mu_prime(x), self.mu_double_prime(x)

    def __repr__(self):
        return f"LinkFamily({self.tag!r})"


IDENTITY = LinkFamily("identity", "normal", _identity, _ones, _zeros)
LOG = LinkFamily("log", "poisson", np.exp, np.exp, np.exp)
LOGIT = LinkFamily("logit", "binomial", _expit, _expit_prime, _expit_double_prime)

_REGISTRY = {
    "identity": IDENTITY,
    "normal": IDENTITY,
    "gaussian": IDENTITY,
    "log": LOG,
    "poisson": LOG,
    "logit": LOGIT,
    "binomial": LOGIT,
    "bernoulli": LOGIT,
}


def get_family(name) -> LinkFamily:
    """Look up a family by link tag or response-distribution name."""
    if isinstance(name, LinkFamily):
        return name
    try:
        return _REGISTRY[str(name).lower()]
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; expected one of {sorted(set(_REGISTRY))}"
        ) from None


def eval_link(family, x: float) -> tuple[float, float, float]:
    """Evaluate ``(mu(x), mu'(x), mu''(x))`` for a scalar ``x``."""
    family = get_family(family)
    x = float(x)
    if not np.isfinite(x):
        raise DomainError(f"link argument must be finite, got {x}")
    mu, mu1, mu2 = family.evaluate(x)
    return float(mu), float(mu1), float(mu2)
