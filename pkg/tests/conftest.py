import numpy as np
import pytest

from hdgranger.var_core import VarModel, build_companion


def random_stable_model(rng: np.random.Generator, d: int, p: int, sigma_u=None) -> VarModel:
    """Draw a stable VarModel with entries scaled until rho < 0.95."""
    for _ in range(200):
        slopes = [rng.standard_normal((d, d)) * 0.4 / np.sqrt(d * p) for _ in range(p)]
        if sigma_u is None:
            b = rng.standard_normal((d, d)) / np.sqrt(d)
            sig = b @ b.T + 0.5 * np.eye(d)
        else:
            sig = sigma_u
        model = VarModel(slopes, sig)
        if build_companion(model).rho < 0.95:
            return model
        slopes = [a * 0.5 for a in slopes]
    raise RuntimeError("could not draw a stable model")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
