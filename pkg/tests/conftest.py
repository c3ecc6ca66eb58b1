import numpy as np
import pytest

from lgpnet.gmm import Gmm


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def toy_gmm():
    """Two well-separated diagonal components in 3 dims."""
    return Gmm(
        weights=np.array([0.35, 0.65]),
        means=np.array([[0.0, 0.0, 0.0], [3.0, -2.0, 1.0]]),
        variances=np.array([[1.0, 0.5, 2.0], [0.8, 1.5, 1.0]]),
    )


def sample_gmm_frames(gmm: Gmm, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw frames from a diagonal GMM (test-side generator)."""
    which = rng.choice(gmm.order, size=n, p=gmm.weights)
    return gmm.means[which] + rng.normal(size=(n, gmm.dim)) * np.sqrt(gmm.variances[which])
