import numpy as np
import pytest

from ramu.cmdp import ModelMixture, TabularCMDP
from ramu.risk import DistortionSpec

SPECS = [
    DistortionSpec.expectation(),
    DistortionSpec.cvar(0.1),
    DistortionSpec.cvar(0.25),
    DistortionSpec.cvar(0.5),
    DistortionSpec.wang(0.25),
    DistortionSpec.wang(0.75),
    DistortionSpec.wang(1.5),
]


def random_cmdp(rng: np.random.Generator, nS: int, nA: int, gamma: float = 0.9, budget: float = 1.0, sparse: bool = False) -> TabularCMDP:
    p = rng.dirichlet(np.full(nS, 0.3 if sparse else 1.0), size=(nS, nA))
    return TabularCMDP(
        p=p,
        r=rng.uniform(0, 1, (nS, nA)),
        c=rng.uniform(0, 1, (nS, nA)),
        d0=rng.dirichlet(np.ones(nS)),
        gamma=gamma,
        budget=budget,
    )


def random_mixture(rng: np.random.Generator, nS: int, nA: int, max_support: int) -> ModelMixture:
    rows, probs = [], []
    for _ in range(nS):
        rr, pp = [], []
        for _ in range(nA):
            m = int(rng.integers(1, max_support + 1))
            rr.append(rng.dirichlet(np.full(nS, 0.5), size=m))
            pp.append(rng.dirichlet(np.ones(m)))
        rows.append(tuple(rr))
        probs.append(tuple(pp))
    return ModelMixture(tuple(rows), tuple(probs))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=SPECS, ids=str)
def spec(request):
    return request.param
