import numpy as np
import pytest

from nestcoh.rmt import (EnsembleSpec, build_h_lambda, normalize_center_spacing,
                         sample_gaussian_ensemble, stream_rng)


def make_instance(n, lam, seed=0):
    """Random (pair, V') with the package's sampling conventions."""
    rng = stream_rng(seed, 0)
    H0 = normalize_center_spacing(sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng))
    V = sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng)
    Vp = sample_gaussian_ensemble(EnsembleSpec("GUE", n), rng=rng)
    return build_h_lambda(H0, V, lam), Vp


@pytest.fixture
def instance():
    return make_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(name, ok, detail)`` records one acceptance line, then asserts ``ok``."""
    lines = request.config.stash[_CRITERIA_KEY]

    def report(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
