import numpy as np
import pytest

from icpexplain.gpc import KernelSpec, SvgpModel, kernel_eval
from icpexplain.perturb import Vocabulary


def random_model(rng, d=3, nz=5, C=3, family="rbf", vocabulary=None) -> SvgpModel:
    """A model with random but valid parameters, no training involved."""
    vocabulary = vocabulary or Vocabulary([f"c{i}" for i in range(C)])
    kernel = KernelSpec(family, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
    Z = rng.normal(size=(nz, d))
    means = rng.normal(scale=2.0, size=(C, nz))
    chol = np.tril(rng.normal(scale=0.3, size=(C, nz, nz)))
    idx = np.arange(nz)
    chol[:, idx, idx] = np.abs(chol[:, idx, idx]) + 0.05
    return SvgpModel(vocabulary, kernel, nz, Z, means, chol, trained=True)


def prior_model(rng, d=2, nz=4, C=2, family="rbf") -> SvgpModel:
    m = random_model(rng, d, nz, C, family)
    Kzz = kernel_eval(m.kernel, m.inducing, m.inducing) + m.jitter * np.eye(nz)
    m.means = np.zeros((C, nz))
    m.chol = np.tile(np.linalg.cholesky(Kzz), (C, 1, 1))
    return m


def blobs(rng, n_per, centers, scale=1.0):
    X = np.vstack([rng.normal(c, scale, size=(n_per, len(c))) for c in centers])
    y = [f"c{k}" for k in range(len(centers)) for _ in range(n_per)]
    return X, y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
