import numpy as np
import pytest

from ipwgee import LongitudinalDataset, MissingnessModel, WorkingCorrelation, get_family
from ipwgee.correlation import build_R
from ipwgee.equation import WeightedGEE

FAMILIES = ("identity", "log", "logit")
STRUCTURES = ("independence", "one_dependent", "exchangeable")


def draw_responses(rng, family, eta):
    mu = get_family(family).mu(eta)
    if family == "identity":
        return mu + rng.standard_normal(mu.shape)
    if family == "logit":
        return (rng.uniform(size=mu.shape) < mu).astype(float)
    return rng.poisson(mu).astype(float)


def random_alpha(rng, structure, m):
    if structure == "independence":
        return ()
    if structure == "exchangeable":
        return (rng.uniform(-0.1, 0.6),)
    return tuple(rng.uniform(-0.3, 0.3, size=m - 1))


def random_dataset(rng, family="identity", n=12, m=4, p=3, missing=True):
    X = np.concatenate([np.ones((n, m, 1)), rng.uniform(-1, 1, size=(n, m, p - 1))], axis=2)
    beta = rng.uniform(-0.5, 0.5, size=p)
    Y = draw_responses(rng, family, X @ beta)
    obs = (rng.uniform(size=(n, m)) < 0.8).astype(int) if missing else np.ones((n, m), int)
    obs[0, 0] = 1
    return LongitudinalDataset(Y, X, obs), beta


def random_equation(rng, family, structure, n=None, m=None, p=None, pi_low=0.3):
    """Weighted equation with probabilities drawn directly from [pi_low, 1]."""
    n = n or int(rng.integers(3, 21))
    m = m or int(rng.integers(2, 7))
    p = p or int(rng.integers(1, 5))
    ds, beta = random_dataset(rng, family, n, m, p)
    pi = rng.uniform(pi_low, 1.0, size=(n, m))
    y_star = ds.filled_responses() * ds.observed / pi
    corr = WorkingCorrelation(structure, random_alpha(rng, structure, m))
    _, R_inv, _ = build_R(corr, m)
    return WeightedGEE(ds.covariates, y_star, pi, R_inv, get_family(family)), beta


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


@pytest.fixture
def complete_model():
    return MissingnessModel.complete()
