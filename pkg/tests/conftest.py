"""Shared fixtures: the reference five-component signal and seeded generators"""
# Standard
import math
# Installed
import numpy as np
import pytest
# Local
from inharmonic_pitch.signals import (
    HarmonicModelParams,
    SinusoidSet,
    gaussian_bell_amplitudes,
    make_rng,
    snr_to_noise_var,
    string_model_frequencies,
)

OMEGA0 = math.pi / 10
N_COMPONENTS = 5
N_SAMPLES = 500


@pytest.fixture
def rng():
    return make_rng(20240611)


@pytest.fixture
def amplitudes():
    return gaussian_bell_amplitudes(N_COMPONENTS, 0.2)


@pytest.fixture
def phases():
    return make_rng(7).uniform(-np.pi, np.pi, N_COMPONENTS)


@pytest.fixture
def sigma2(amplitudes):
    """Noise variance at 10 dB SNR"""
    return snr_to_noise_var(amplitudes, 10.0)


@pytest.fixture
def harmonic_sinusoids(amplitudes, phases):
    return SinusoidSet(amplitudes, phases, np.arange(1, N_COMPONENTS + 1) * OMEGA0)


@pytest.fixture
def harmonic_params(amplitudes, phases):
    return HarmonicModelParams(OMEGA0, phases, amplitudes)


@pytest.fixture
def string_sinusoids(amplitudes, phases):
    """Stiff string with beta = 5e-4"""
    return SinusoidSet(amplitudes, phases, string_model_frequencies(OMEGA0, 5e-4, N_COMPONENTS))
