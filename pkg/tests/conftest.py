"""Shared fixtures: the 1D and Grushin benchmark problems used across the
suite, plus session-scoped solves that several tests interrogate."""

import warnings

import numpy as np
import pytest

from submfg.hjb import quadratic_model
from submfg.mfgcore import make_coupling, solve_ergodic_mfg
from submfg.torusgrid import TorusGrid
from submfg.vfields import euclidean, grushin


def cos_potential(x):
    return 0.5 * np.cos(2.0 * np.pi * x[:, 0])


def cos_sin_potential(x):
    return 0.5 * (np.cos(2.0 * np.pi * x[:, 0])
                  + np.sin(2.0 * np.pi * x[:, 1]))


@pytest.fixture(scope="session")
def t1_family():
    return euclidean(1)


@pytest.fixture(scope="session")
def grushin_family():
    return grushin()


@pytest.fixture(scope="session")
def t1_benchmark():
    """Quadratic control with a single-mode potential, smoothed coupling."""
    model = quadratic_model(1, potential=cos_potential, dim=1)
    coupling = make_coupling("smoothed_local", sigma=0.1)
    return model, coupling


@pytest.fixture(scope="session")
def grushin_benchmark():
    model = quadratic_model(2, potential=cos_sin_potential, dim=2)
    coupling = make_coupling("smoothed_local", sigma=0.1)
    return model, coupling


@pytest.fixture(scope="session")
def ergodic_t1_24(t1_benchmark, t1_family):
    """The 24-node long-run solve; shared because it costs a few seconds."""
    model, coupling = t1_benchmark
    with warnings.catch_warnings():
        # the growth-class warning is intentional and tested on its own
        warnings.simplefilter("ignore", UserWarning)
        return solve_ergodic_mfg(model, coupling, t1_family,
                                 TorusGrid(1, 24))


def rng_for(name: str) -> np.random.Generator:
    """Stable per-test stream so reruns see the same draws."""
    seed = int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little")
    return np.random.default_rng(seed % 2**32)
