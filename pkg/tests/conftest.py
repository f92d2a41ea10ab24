import numpy as np
import pytest

from loh import model, synthetic


@pytest.fixture(scope="session")
def mixture():
    X, _ = synthetic.gaussian_mixture(3000, 16, 12, seed=7)
    return X


@pytest.fixture(scope="session")
def small_model(mixture):
    params = model.LohParams(d=16, K=8, m=4, k=16, kmeans_iters=20, seed=3)
    return model.train(mixture, params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_point(rng, id, m=8, K=16, k=16):
    return model.EncodedPoint(id, tuple(rng.integers(K, size=2)), tuple(rng.integers(k, size=m)))


# PASS/FAIL lines from the acceptance suite, repeated in the final report
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
