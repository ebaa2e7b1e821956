"""Tests for signal models, synthesis and least squares fits"""
# Standard
import math
# Installed
import numpy as np
import pytest
# Local
from inharmonic_pitch.errors import ConditioningError, SignalValueError
from inharmonic_pitch.signals import (
    ComplexSignal,
    HarmonicModelParams,
    SinusoidSet,
    StochasticPitchModel,
    add_noise,
    concentrated_residual,
    derive_seed,
    draw_inharmonicity,
    gaussian_bell_amplitudes,
    harmonic_hessian,
    harmonic_jacobian,
    harmonic_waveform,
    inharmonicity,
    ls_amp_phase,
    make_rng,
    periodogram,
    snr_to_noise_var,
    string_model_frequencies,
    synth_sinusoids,
)
from tests.conftest import N_COMPONENTS, N_SAMPLES, OMEGA0


def test_synthesis_is_linear_in_components():
    first = SinusoidSet([1.0, 0.5], [0.1, -2.0], [0.3, 0.9])
    second = SinusoidSet([0.7, 2.0], [1.5, 3.0], [0.5, 1.2])
    union = SinusoidSet([1.0, 0.7, 0.5, 2.0], [0.1, 1.5, -2.0, 3.0], [0.3, 0.5, 0.9, 1.2])
    combined = synth_sinusoids(first, 256) + synth_sinusoids(second, 256)
    np.testing.assert_allclose(synth_sinusoids(union, 256).samples, combined.samples, atol=1e-12)


def test_sinusoid_set_invariants():
    with pytest.raises(SignalValueError):
        SinusoidSet([1.0, 1.0], [0.0, 0.0], [0.5, 0.5])
    with pytest.raises(SignalValueError):
        SinusoidSet([1.0], [0.0], [math.pi])
    with pytest.raises(SignalValueError):
        SinusoidSet([-1.0], [0.0], [0.5])

    sinusoids = SinusoidSet([1.0, 0.0, 2.0], [4.0, 0.0, -1.0], [0.2, 0.4, 0.6])
    assert len(sinusoids) == 2
    np.testing.assert_allclose(sinusoids.frequencies, [0.2, 0.6])
    np.testing.assert_allclose(sinusoids.phases, [4.0 - 2 * math.pi, -1.0])


def test_signal_rejects_empty_and_non_finite():
    with pytest.raises(SignalValueError):
        ComplexSignal(np.array([], dtype=complex))
    with pytest.raises(SignalValueError):
        ComplexSignal(np.array([1.0, np.nan]))
    with pytest.raises(SignalValueError):
        synth_sinusoids(SinusoidSet([1.0], [0.0], [0.5]), 0)


def test_noise_is_reproducible_and_has_requested_variance():
    x = ComplexSignal(np.zeros(200_000, dtype=complex))
    first = add_noise(x, 0.3, 11)
    again = add_noise(x, 0.3, 11)
    other = add_noise(x, 0.3, 12)
    np.testing.assert_array_equal(first.samples, again.samples)
    assert not np.array_equal(first.samples, other.samples)
    assert first.mean_power == pytest.approx(0.3, rel=0.02)
    assert np.var(first.samples.real) == pytest.approx(0.15, rel=0.02)
    with pytest.raises(SignalValueError):
        add_noise(x, 0.0, 1)


def test_seed_sub_streams_are_independent_and_stable():
    first = make_rng(derive_seed(3, 1, 2)).random(4)
    np.testing.assert_array_equal(first, make_rng(derive_seed(3, 1, 2)).random(4))
    assert not np.array_equal(first, make_rng(derive_seed(3, 2, 1)).random(4))
    with pytest.raises(SignalValueError):
        make_rng(None)


def test_snr_to_noise_var():
    assert snr_to_noise_var(np.ones(5), 10.0) == pytest.approx(0.5)
    assert snr_to_noise_var([2.0], 0.0) == pytest.approx(4.0)
    with pytest.raises(SignalValueError):
        snr_to_noise_var(np.zeros(3), 10.0)


def test_gaussian_bell_amplitudes_peak_at_half_order():
    amplitudes = gaussian_bell_amplitudes(5, 0.2)
    np.testing.assert_allclose(amplitudes, np.exp(-0.2 * (np.arange(1, 6) - 2.5) ** 2))
    assert amplitudes[1] == pytest.approx(amplitudes[2])


def test_string_model_frequencies():
    np.testing.assert_allclose(string_model_frequencies(OMEGA0, 0.0, 5), np.arange(1, 6) * OMEGA0)
    stiff = string_model_frequencies(OMEGA0, 1e-3, 5)
    assert np.all(stiff > np.arange(1, 6) * OMEGA0)
    assert stiff[2] == pytest.approx(3 * OMEGA0 * math.sqrt(1 + 9e-3))
    np.testing.assert_allclose(inharmonicity(stiff, OMEGA0), stiff - np.arange(1, 6) * OMEGA0)
    with pytest.raises(SignalValueError):
        string_model_frequencies(0.7, 0.0, 5)


def test_least_squares_recovers_complex_amplitudes(harmonic_sinusoids):
    x = synth_sinusoids(harmonic_sinusoids, N_SAMPLES)
    coefficients = ls_amp_phase(x, harmonic_sinusoids.frequencies)
    np.testing.assert_allclose(coefficients, harmonic_sinusoids.complex_amplitudes, atol=1e-10)
    residual, fitted = concentrated_residual(x.samples, harmonic_sinusoids.frequencies)
    assert residual < 1e-20
    np.testing.assert_allclose(fitted, coefficients, atol=1e-12)


def test_least_squares_rejects_dependent_atoms():
    y = synth_sinusoids(SinusoidSet([1.0], [0.0], [0.5]), 64)
    with pytest.raises(ConditioningError) as caught:
        ls_amp_phase(y, [0.5, 0.5 + 1e-12])
    assert caught.value.rcond < 1e-10
    with pytest.raises(SignalValueError):
        ls_amp_phase(y, [0.5, 0.5])


def test_periodogram_peaks_at_bin_frequency():
    n = 64
    y = ComplexSignal(np.exp(1j * 2 * math.pi * 8 / n * np.arange(n)))
    spectrum = periodogram(y, n)
    assert spectrum.frequencies[np.argmax(spectrum.power)] == pytest.approx(2 * math.pi * 8 / n)
    assert spectrum.power.max() == pytest.approx(n)
    assert np.all(np.diff(spectrum.frequencies) > 0)


def test_harmonic_params_vector_folds_negative_amplitudes():
    params = HarmonicModelParams.from_vector(np.array([0.2, 0.1, 0.3, 1.0, -2.0]))
    np.testing.assert_allclose(params.amplitudes, [1.0, 2.0])
    assert params.phases[1] == pytest.approx(0.3 + math.pi)
    np.testing.assert_allclose(params.frequencies, [0.2, 0.4])
    with pytest.raises(SignalValueError):
        HarmonicModelParams(0.7, [0.0] * 5, [1.0] * 5)


def _random_params(rng, order):
    omega0 = rng.uniform(0.05, 0.9 * math.pi / order)
    return HarmonicModelParams(omega0, rng.uniform(-np.pi, np.pi, order), rng.uniform(0.5, 2.0, order))


def _central_difference(function, theta, column, step):
    shift = np.zeros_like(theta)
    shift[column] = step
    upper = function(HarmonicModelParams.from_vector(theta + shift))
    lower = function(HarmonicModelParams.from_vector(theta - shift))
    return (upper - lower) / (2 * step)


def test_harmonic_derivatives_match_finite_differences(rng):
    n = 32
    step = 1e-5
    for _ in range(100):
        params = _random_params(rng, 3)
        theta = params.as_vector()
        jacobian = harmonic_jacobian(params, n)
        hessian = harmonic_hessian(params, n)
        for column in range(theta.size):
            numeric = _central_difference(lambda p: harmonic_waveform(p, n), theta, column, step)
            np.testing.assert_allclose(jacobian[:, column], numeric, atol=1e-6 * max(1.0, np.abs(numeric).max()))
            numeric = _central_difference(lambda p: harmonic_jacobian(p, n), theta, column, step)
            np.testing.assert_allclose(hessian[:, :, column], numeric, atol=1e-6 * max(1.0, np.abs(numeric).max()))


def test_harmonic_hessian_is_symmetric(harmonic_params):
    hessian = harmonic_hessian(harmonic_params, 50)
    np.testing.assert_array_equal(hessian, np.swapaxes(hessian, 1, 2))


def test_stochastic_model_realization(amplitudes, phases):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-6, 0.1)
    delta = draw_inharmonicity(model, 5)
    np.testing.assert_array_equal(delta, draw_inharmonicity(model, 5))
    realized = model.realize(delta)
    np.testing.assert_allclose(realized.frequencies, np.arange(1, N_COMPONENTS + 1) * OMEGA0 + delta)
    harmonic = StochasticPitchModel(OMEGA0, amplitudes, phases, 0.0, 0.1)
    np.testing.assert_array_equal(draw_inharmonicity(harmonic, 5), np.zeros(N_COMPONENTS))
    with pytest.raises(SignalValueError):
        StochasticPitchModel(OMEGA0, amplitudes, phases, -1.0, 0.1)


def test_noise_is_circular():
    noise = add_noise(ComplexSignal(np.zeros(200_000, dtype=complex)), 0.3, 21).samples
    # E[e^2] vanishes for circular noise while E[|e|^2] = sigma2
    assert abs(np.mean(noise ** 2)) < 0.02 * 0.3
    assert np.mean(noise.real * noise.imag) == pytest.approx(0.0, abs=0.01 * 0.3)


def test_inharmonicity_draws_have_requested_variance(amplitudes, phases):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-4, 0.1)
    generator = make_rng(31)
    draws = np.concatenate([draw_inharmonicity(model, generator) for _ in range(20_000)])
    assert draws.size == 100_000
    assert np.mean(draws) == pytest.approx(0.0, abs=5 * math.sqrt(1e-4 / draws.size))
    assert np.var(draws) == pytest.approx(1e-4, rel=0.02)
