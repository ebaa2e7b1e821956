"""Tests for the performance bounds"""
# Standard
import math
# Installed
import numpy as np
import pytest
# Local
from inharmonic_pitch.bounds import (
    approximation_curves,
    chs_asymptotic_var,
    compute_bound_report,
    crlb_harmonic_asymptotic,
    crlb_unstructured,
    expected_misspecified_mse,
    harmonic_crlb,
    hcrlb,
    hybrid_fisher,
    lambda_matrix,
    mcrlb_asymptotic,
    mcrlb_exact,
    mse_misspecified,
    perturbation_premise,
    pseudo_true,
)
from inharmonic_pitch.errors import BoundComputationError, SignalValueError
from inharmonic_pitch.signals import HarmonicModelParams, SinusoidSet, StochasticPitchModel, make_rng, synth_sinusoids
from tests.conftest import N_COMPONENTS, N_SAMPLES, OMEGA0


def test_asymptotic_crlbs(amplitudes, sigma2):
    k = np.arange(1, N_COMPONENTS + 1)
    expected = 6 * sigma2 / (N_SAMPLES * (N_SAMPLES ** 2 - 1) * np.sum(k ** 2 * amplitudes ** 2))
    assert crlb_harmonic_asymptotic(amplitudes, N_SAMPLES, sigma2) == pytest.approx(expected)
    frequency, amplitude = crlb_unstructured(amplitudes, N_SAMPLES, sigma2)
    np.testing.assert_allclose(frequency, 6 * sigma2 / (N_SAMPLES * (N_SAMPLES ** 2 - 1) * amplitudes ** 2))
    np.testing.assert_allclose(amplitude, sigma2 / (2 * N_SAMPLES))
    with pytest.raises(SignalValueError):
        crlb_harmonic_asymptotic(amplitudes, 1, sigma2)


def test_exact_harmonic_crlb_approaches_asymptotic(harmonic_params, amplitudes, sigma2):
    exact = harmonic_crlb(harmonic_params, N_SAMPLES, sigma2)
    assert exact.omega0 == pytest.approx(crlb_harmonic_asymptotic(amplitudes, N_SAMPLES, sigma2), rel=1e-2)
    np.testing.assert_allclose(exact.diagonal[N_COMPONENTS + 1:], sigma2 / (2 * N_SAMPLES), rtol=1e-2)


def test_singular_fisher_information_is_rejected(phases, sigma2):
    silent = HarmonicModelParams(OMEGA0, phases, [1.0, 0.0, 1.0, 1.0, 1.0])
    with pytest.raises(BoundComputationError):
        harmonic_crlb(silent, N_SAMPLES, sigma2)


def test_pseudo_true_of_harmonic_signal_is_the_truth(harmonic_sinusoids, harmonic_params, sigma2):
    x = synth_sinusoids(harmonic_sinusoids, N_SAMPLES)
    pseudo = pseudo_true(x, N_COMPONENTS, sigma2)
    assert pseudo.theta0.omega0 == pytest.approx(OMEGA0, abs=1e-11)
    np.testing.assert_allclose(pseudo.theta0.amplitudes, harmonic_params.amplitudes, atol=1e-10)
    assert pseudo.fit_residual < 1e-20
    assert pseudo.sigma2_pseudo == pytest.approx(sigma2)
    assert not pseudo.ambiguous
    assert pseudo.stationarity < 1e-6


def test_pseudo_true_flags_near_ties_for_long_records():
    # Equal powers that no single fundamental fits together: each fundamental explaining one component costs
    # about the same once N resolves the mismatch of the other
    sinusoids = SinusoidSet([1.0, 1.0], [0.0, 0.0], [0.3, 0.62])
    pseudo = pseudo_true(synth_sinusoids(sinusoids, 3000), 2, 1.0)
    assert pseudo.ambiguous
    assert abs(pseudo.runner_up_omega0 - pseudo.theta0.omega0) > 1e-3


def test_mcrlb_reduces_to_crlb_without_inharmonicity(harmonic_sinusoids, harmonic_params, sigma2):
    x = synth_sinusoids(harmonic_sinusoids, N_SAMPLES)
    pseudo = pseudo_true(x, N_COMPONENTS, sigma2)
    misspecified = mcrlb_exact(pseudo, x, sigma2)
    exact = harmonic_crlb(pseudo.theta0, N_SAMPLES, sigma2)
    np.testing.assert_allclose(misspecified.covariance, exact.covariance, rtol=1e-8,
                               atol=1e-8 * np.abs(exact.covariance).max())
    asymptotic = mcrlb_asymptotic(harmonic_params, harmonic_sinusoids, sigma2, N_SAMPLES)
    assert asymptotic == pytest.approx(crlb_harmonic_asymptotic(harmonic_params.amplitudes, N_SAMPLES, sigma2),
                                       rel=1e-12)


def test_mcrlb_for_stiff_string(string_sinusoids, sigma2):
    x = synth_sinusoids(string_sinusoids, N_SAMPLES)
    pseudo = pseudo_true(x, N_COMPONENTS, sigma2)
    assert pseudo.fit_residual > 0
    assert pseudo.sigma2_pseudo > sigma2
    exact = mcrlb_exact(pseudo, x, sigma2)
    assert exact.omega0 > 0
    assert np.all(np.linalg.eigvalsh(exact.covariance) > -1e-12 * exact.omega0)
    asymptotic = mcrlb_asymptotic(pseudo.theta0, string_sinusoids, sigma2, N_SAMPLES)
    assert asymptotic == pytest.approx(exact.omega0, rel=0.1)


def test_mcrlb_asymptotic_warns_near_zero(amplitudes, phases, sigma2):
    omega0 = 0.05
    sinusoids = SinusoidSet(amplitudes, phases, np.arange(1, N_COMPONENTS + 1) * omega0)
    with pytest.warns(RuntimeWarning, match="within 10 bins"):
        mcrlb_asymptotic(HarmonicModelParams(omega0, phases, amplitudes), sinusoids, sigma2, 100)


def test_chs_variance(harmonic_sinusoids, string_sinusoids, amplitudes, sigma2):
    harmonic = chs_asymptotic_var(harmonic_sinusoids, N_SAMPLES, sigma2)
    assert harmonic == pytest.approx(crlb_harmonic_asymptotic(amplitudes, N_SAMPLES, sigma2), rel=1e-12)
    assert chs_asymptotic_var(string_sinusoids, N_SAMPLES, sigma2, OMEGA0) > harmonic


def test_chs_variance_warns_outside_perturbation_premise(amplitudes, phases, sigma2):
    frequencies = np.arange(1, N_COMPONENTS + 1) * OMEGA0 + np.array([0.0, 0.0, 0.05, 0.0, 0.0])
    assert not perturbation_premise(frequencies, OMEGA0)
    with pytest.warns(RuntimeWarning, match="small-perturbation"):
        chs_asymptotic_var(SinusoidSet(amplitudes, phases, frequencies), N_SAMPLES, sigma2, OMEGA0)


def test_lambda_matrix_is_symmetric_positive_semidefinite(amplitudes, phases):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-4, 0.1)
    term = lambda_matrix(model, 17)
    np.testing.assert_allclose(term, term.T, atol=1e-12)
    assert np.linalg.eigvalsh(term).min() > -1e-9 * np.abs(term).max()


def test_lambda_matrix_matches_sampled_gradients(amplitudes, phases, rng):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-3, 0.1)
    t = 10
    k = np.arange(1, N_COMPONENTS + 1)
    delta = rng.normal(0.0, math.sqrt(model.sigma2_delta), size=(200_000, N_COMPONENTS))
    components = amplitudes * np.exp(1j * (phases + (k * OMEGA0 + delta) * t))
    # d mu_t / d (omega0, phi, r, Delta) for every draw
    gradient = np.concatenate([
        np.sum(1j * k * t * components, axis=1, keepdims=True),
        1j * components,
        components / amplitudes,
        1j * t * components,
    ], axis=1)
    sampled = np.real(gradient.T @ gradient.conj()) / delta.shape[0]
    expected = lambda_matrix(model, t)
    np.testing.assert_allclose(expected, sampled, atol=0.01 * np.abs(expected).max())


def test_hybrid_fisher_matches_sampled_scores(phases):
    omega0, sigma2_delta, sigma2_noise = 0.4, 1e-4, 0.5
    amplitudes = np.array([1.0, 0.8, 0.5])
    model = StochasticPitchModel(omega0, amplitudes, phases[:3], sigma2_delta, sigma2_noise)
    n, batches, batch = 40, 4, 5000
    t = np.arange(n)
    k = np.arange(1, 4)
    generator = make_rng(8)
    total = np.zeros((10, 10))
    for _ in range(batches):
        delta = generator.normal(0.0, math.sqrt(sigma2_delta), size=(batch, 3))
        components = amplitudes * np.exp(
            1j * (phases[:3] + (k * omega0 + delta)[:, None, :] * t[None, :, None]))
        noise = math.sqrt(sigma2_noise / 2) * (generator.standard_normal((batch, n))
                                               + 1j * generator.standard_normal((batch, n)))
        # d mu_t / d (omega0, phi, r, Delta) for every draw
        gradient = np.concatenate([
            np.sum(1j * k * t[:, None] * components, axis=2, keepdims=True),
            1j * components,
            components / amplitudes,
            1j * t[:, None] * components,
        ], axis=2)
        score = 2 / sigma2_noise * np.real(np.einsum("dt,dtp->dp", noise.conj(), gradient))
        score[:, 7:] -= delta / sigma2_delta
        total += score.T @ score
    sampled = total / (batches * batch)
    expected = hybrid_fisher(model, n).matrix
    assert np.linalg.norm(sampled - expected) < 0.05 * np.linalg.norm(expected)


def test_hybrid_fisher_without_inharmonicity_is_harmonic_fisher(amplitudes, phases, sigma2):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 0.0, sigma2)
    fisher = hybrid_fisher(model, N_SAMPLES)
    assert fisher.deterministic_delta
    harmonic = harmonic_crlb(model.harmonic_params(), N_SAMPLES, sigma2)
    bound = hcrlb(model, N_SAMPLES)
    np.testing.assert_allclose(bound.covariance[:2 * N_COMPONENTS + 1, :2 * N_COMPONENTS + 1],
                               harmonic.covariance, rtol=1e-9, atol=1e-9 * np.abs(harmonic.covariance).max())
    assert bound.diagonal["delta_1"] == 0.0
    assert bound.omega1 == pytest.approx(bound.omega0)


def test_hcrlb_approaches_harmonic_crlb_for_vanishing_inharmonicity(amplitudes, phases):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-15, 1.0)
    harmonic = harmonic_crlb(model.harmonic_params(), N_SAMPLES, 1.0)
    assert hcrlb(model, N_SAMPLES).omega0 == pytest.approx(harmonic.omega0, rel=1e-6)


def test_hcrlb_grows_with_inharmonicity_variance(amplitudes, phases, sigma2):
    bounds = [hcrlb(StochasticPitchModel(OMEGA0, amplitudes, phases, v, sigma2), N_SAMPLES)
              for v in (1e-10, 1e-8, 1e-6, 1e-4)]
    omega0 = [b.omega0 for b in bounds]
    assert all(a < b for a, b in zip(omega0, omega0[1:]))
    assert all(b.omega1 > 0 for b in bounds)


def test_hcrlb_for_large_inharmonicity_is_prior_limited(amplitudes, phases, sigma2):
    sigma2_delta = 1e-3
    bound = hcrlb(StochasticPitchModel(OMEGA0, amplitudes, phases, sigma2_delta, sigma2), N_SAMPLES)
    k = np.arange(1, N_COMPONENTS + 1)
    assert bound.omega0 == pytest.approx(sigma2_delta / np.sum(k ** 2), rel=1e-2)
    assert bound.omega1 < bound.omega0
    assert bound.omega1 == pytest.approx(crlb_unstructured(amplitudes, N_SAMPLES, sigma2)[0][0], rel=0.1)


def test_misspecified_mse():
    assert mse_misspecified(1e-8, 0.31, 0.3) == pytest.approx(1e-8 + 1e-4)


def test_expected_misspecified_mse(amplitudes, phases, sigma2):
    model = StochasticPitchModel(OMEGA0, amplitudes, phases, 1e-7, sigma2)
    expected = expected_misspecified_mse(model, 200, draws=3, seed=1)
    assert expected.n_draws + expected.n_failed == 3
    assert set(expected.values) == {("mmle", "omega0"), ("mmle", "omega1"), ("chs", "omega0"), ("chs", "omega1")}
    assert all(v > 0 for v in expected.values.values())
    again = expected_misspecified_mse(model, 200, draws=3, seed=1)
    assert again.values == expected.values


def test_bound_report(harmonic_sinusoids, string_sinusoids, sigma2):
    harmonic = compute_bound_report(harmonic_sinusoids, N_SAMPLES, sigma2, nominal_omega0=OMEGA0)
    assert harmonic.mcrlb_exact == pytest.approx(harmonic.crlb_harmonic, rel=1e-8)
    assert harmonic.omega0_chs == pytest.approx(OMEGA0, rel=1e-12)
    assert harmonic.hcrlb_omega0 is None

    stiff = compute_bound_report(string_sinusoids, N_SAMPLES, sigma2, nominal_omega0=OMEGA0, sigma2_delta=1e-8)
    names = [name for name, _ in stiff.bound_items()]
    assert names[:5] == ["crlb_harmonic", "crlb_harmonic_asymptotic", "mcrlb_exact", "mcrlb_asymptotic",
                         "chs_asymptotic_var"]
    assert names[-2:] == ["hcrlb_omega0", "hcrlb_omega1"]
    assert f"crlb_unstructured_{N_COMPONENTS}" in names
    assert stiff.omega0_pseudo != stiff.omega0_chs


def test_approximation_curves_of_harmonic_signal(harmonic_sinusoids):
    omegas = np.linspace(OMEGA0 / 2, 3 * OMEGA0 / 2, 101)
    curves = approximation_curves(harmonic_sinusoids, N_SAMPLES, omegas)
    assert curves.l2_criterion.shape == curves.transport_cost.shape == omegas.shape
    assert np.argmin(curves.l2_criterion) == 50
    assert np.argmin(curves.transport_cost) == 50
    assert curves.transport_cost[50] == pytest.approx(0.0, abs=1e-20)
    assert curves.pseudo.theta0.omega0 == pytest.approx(OMEGA0, rel=1e-8)
    assert curves.closest.omega0 == pytest.approx(OMEGA0, rel=1e-12)
    np.testing.assert_allclose(curves.l2_spectrum.frequencies, harmonic_sinusoids.frequencies, rtol=1e-8)
    np.testing.assert_allclose(curves.l2_spectrum.powers, harmonic_sinusoids.amplitudes ** 2, rtol=1e-6)
    with pytest.raises(SignalValueError):
        approximation_curves(harmonic_sinusoids, N_SAMPLES, [0.0, OMEGA0])


def test_transport_cost_of_stiff_string_does_not_depend_on_record_length(string_sinusoids):
    omegas = np.linspace(0.9 * OMEGA0, 1.1 * OMEGA0, 21)
    short = approximation_curves(string_sinusoids, 100, omegas)
    long = approximation_curves(string_sinusoids, 1000, omegas)
    np.testing.assert_array_equal(short.transport_cost, long.transport_cost)
    assert not np.allclose(short.l2_criterion, long.l2_criterion)
