import json
from pathlib import Path

import numpy as np
import pytest

from ecselect.synthoracle import GroundTruthSpec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def var2_spec():
    """The standard seeded 3-channel VAR(2) fixture."""
    return GroundTruthSpec.from_json((FIXTURES / "standard_var2.json").read_text())


@pytest.fixture(scope="session")
def coupled_pair_spec():
    """Bivariate VAR(1) with a single directed coupling 0 -> 1."""
    coeffs = np.array([[[0.6, 0.0], [0.5, 0.4]]])
    return GroundTruthSpec(coeffs=coeffs, sigma=np.diag([1.0, 0.5]),
                           seed=23, fs=100.0)


def random_stable_model(seed, max_channels=6, max_order=5):
    """A random stable VarModel for property tests."""
    from ecselect.mvar import VarModel

    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, max_channels + 1))
    order = int(rng.integers(1, max_order + 1))
    spec = GroundTruthSpec.random_stable(K=K, order=order, spectral_radius=0.8,
                                         seed=seed, fs=100.0)
    scale = rng.uniform(0.5, 2.0, size=K)
    return VarModel(order=order, coeffs=spec.coeffs,
                    noise_cov=np.diag(scale), fs=100.0, n_obs=1000)
