"""Shared fixtures. The benchmark simulation is cached in the pytest cache
directory because it takes about a minute."""

import pickle
import warnings

import numpy as np
import pytest

from nnmid.basis import benchmark_basis
from nnmid.excitation import MultisineSpec, generate_multisine
from nnmid.model import assemble_beam_model, main_beam_channels
from nnmid.modal import modal_model_from_fe
from nnmid.simulate import add_noise, decimate, newmark_integrate

BENCHMARK_SAMPLES = 655360
SHORT_SAMPLES = 32760
EXCITATION_SEED = 1
NOISE_SEED = 0
CACHE_VERSION = 1


def _simulate(fe, samples, periods=20):
    spec = MultisineSpec(5.0, 500.0, samples, 60000.0, 15.0, periods, seed=EXCITATION_SEED)
    sig = generate_multisine(spec)
    rec = newmark_integrate(fe, benchmark_basis(fe), sig.signal, 60000.0,
                            output_dofs=main_beam_channels(fe), periods=periods)
    return decimate(rec, 20)


def _cached(request, name, build):
    cache = request.config.cache.mkdir("nnmid")
    path = cache / f"{name}_v{CACHE_VERSION}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    value = build()
    with open(path, "wb") as fh:
        pickle.dump(value, fh)
    return value


@pytest.fixture(scope="session")
def fe():
    return assemble_beam_model()


@pytest.fixture(scope="session")
def tip_dof(fe):
    return fe.translation_dof(14)


@pytest.fixture(scope="session")
def true_modal(fe):
    return modal_model_from_fe(fe, benchmark_basis(fe), 3, dofs=main_beam_channels(fe),
                               labels=[f"node{n}" for n in range(1, 15)])


@pytest.fixture(scope="session")
def benchmark_clean(request, fe):
    return _cached(request, "benchmark_clean", lambda: _simulate(fe, BENCHMARK_SAMPLES))


@pytest.fixture(scope="session")
def benchmark_noisy(benchmark_clean):
    return add_noise(benchmark_clean, 0.01, "node14", seed=NOISE_SEED)


@pytest.fixture(scope="session")
def short_clean(request, fe):
    return _cached(request, "short_clean", lambda: _simulate(fe, SHORT_SAMPLES))


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=np.exceptions.ComplexWarning)
        yield


# Lines emitted by the acceptance module, repeated in the terminal summary so
# that they appear in the test log even when output is captured.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
