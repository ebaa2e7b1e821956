"""Signal models, synthesis, noise, the periodogram and the Fourier kernels shared by estimators and bounds

All signals are complex valued and indexed by t = 0, ..., N-1. Frequencies are in radians per sample.
Randomness always flows through an explicit seed so that every stochastic operation is a pure function of
its inputs and that seed.
"""
# Standard
from dataclasses import dataclass
import logging
import math
from typing import NamedTuple, Sequence, Tuple, Union
# Installed
import numpy as np
import scipy.linalg
# Local
from inharmonic_pitch.constants import RCOND_THRESHOLD
from inharmonic_pitch.errors import ConditioningError, SignalValueError

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, np.random.Generator]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Create a generator from a seed

    Integers and integer sequences are hashed through a SeedSequence, so (base_seed, sweep_index,
    trial_index) tuples give independent, reproducible streams. An existing Generator is passed through.

    Parameters
    ----------
    seed : SeedLike
        Integer, sequence of integers, SeedSequence or Generator.

    Returns
    -------
    : np.random.Generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if seed is None:
        raise SignalValueError("A seed is required; stochastic operations are deterministic per seed.")
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng(np.random.SeedSequence(int(seed)))
    return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))


def derive_seed(base_seed: int, *indices: int) -> np.random.SeedSequence:
    """Seed sequence for a sub-stream, e.g. derive_seed(base_seed, sweep_index, trial_index)"""
    return np.random.SeedSequence([int(base_seed), *[int(i) for i in indices]])


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap angles to [-pi, pi)"""
    return np.mod(np.asarray(phase, dtype=float) + np.pi, 2 * np.pi) - np.pi


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class SinusoidSet:
    """K components (amplitude, phase, frequency) of a sum of complex sinusoids

    Zero-amplitude components are dropped on construction and phases are wrapped to [-pi, pi).
    Frequencies must be strictly increasing and lie in [-pi, pi).
    """
    amplitudes: np.ndarray
    phases: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        frequencies = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if amplitudes.ndim != 1 or not (amplitudes.shape == phases.shape == frequencies.shape):
            raise SignalValueError("Amplitudes, phases and frequencies must be 1-D vectors of equal length.")
        if not (np.all(np.isfinite(amplitudes)) and np.all(np.isfinite(phases))
                and np.all(np.isfinite(frequencies))):
            raise SignalValueError("Sinusoid parameters must be finite.")
        if np.any(amplitudes < 0):
            raise SignalValueError("Amplitudes must be non-negative.")
        keep = amplitudes > 0
        amplitudes, phases, frequencies = amplitudes[keep], phases[keep], frequencies[keep]
        if np.any(frequencies < -np.pi) or np.any(frequencies >= np.pi):
            raise SignalValueError("Frequencies must lie in [-pi, pi).")
        if np.any(np.diff(frequencies) <= 0):
            raise SignalValueError("Frequencies must be strictly increasing.")
        object.__setattr__(self, "amplitudes", _frozen(amplitudes))
        object.__setattr__(self, "phases", _frozen(wrap_phase(phases)))
        object.__setattr__(self, "frequencies", _frozen(frequencies))

    def __len__(self) -> int:
        return len(self.frequencies)

    @property
    def complex_amplitudes(self) -> np.ndarray:
        """r_k exp(i phi_k)"""
        return self.amplitudes * np.exp(1j * self.phases)

    @property
    def total_power(self) -> float:
        """Sum of squared amplitudes"""
        return float(np.sum(self.amplitudes ** 2))


@dataclass(frozen=True)
class ComplexSignal:
    """Finite vector of complex samples y_0, ..., y_{N-1}"""
    samples: np.ndarray

    def __post_init__(self):
        samples = np.atleast_1d(np.asarray(self.samples, dtype=complex))
        if samples.ndim != 1 or samples.size < 1:
            raise SignalValueError("A signal is a non-empty 1-D vector of samples.")
        if not np.all(np.isfinite(samples)):
            raise SignalValueError("Signal samples must be finite.")
        object.__setattr__(self, "samples", _frozen(samples, dtype=complex))

    @property
    def n(self) -> int:
        """Number of samples N"""
        return self.samples.size

    def __len__(self) -> int:
        return self.n

    @property
    def mean_power(self) -> float:
        """(1/N) sum |y_t|^2"""
        return float(np.mean(np.abs(self.samples) ** 2))

    def __add__(self, other: "ComplexSignal") -> "ComplexSignal":
        if self.n != other.n:
            raise SignalValueError(f"Cannot add signals of length {self.n} and {other.n}.")
        return ComplexSignal(self.samples + other.samples)


@dataclass(frozen=True)
class HarmonicModelParams:
    """Parameters theta = (omega0, phi_1..L, r_1..L) of a perfectly harmonic waveform

    mu_t(theta) = sum_l r_l exp(i phi_l + i l omega0 t)
    """
    omega0: float
    phases: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if phases.ndim != 1 or phases.shape != amplitudes.shape or phases.size < 1:
            raise SignalValueError("Harmonic model needs L >= 1 phases and amplitudes.")
        if np.any(amplitudes < 0):
            raise SignalValueError("Harmonic amplitudes must be non-negative.")
        omega0 = float(self.omega0)
        if not 0 < omega0 < np.pi:
            raise SignalValueError(f"omega0 = {omega0} outside (0, pi).")
        if phases.size * omega0 >= np.pi:
            raise SignalValueError(f"Harmonic {phases.size} of omega0 = {omega0} is not below pi.")
        object.__setattr__(self, "omega0", omega0)
        object.__setattr__(self, "phases", _frozen(phases))
        object.__setattr__(self, "amplitudes", _frozen(amplitudes))

    @property
    def order(self) -> int:
        """Number of harmonics L"""
        return self.phases.size

    @property
    def harmonic_numbers(self) -> np.ndarray:
        return np.arange(1, self.order + 1)

    @property
    def frequencies(self) -> np.ndarray:
        return self.harmonic_numbers * self.omega0

    def as_vector(self) -> np.ndarray:
        """Stack theta as [omega0, phi_1..L, r_1..L]"""
        return np.concatenate(([self.omega0], self.phases, self.amplitudes))

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "HarmonicModelParams":
        """Inverse of as_vector. A negative amplitude is folded into a phase shift of pi."""
        theta = np.asarray(theta, dtype=float)
        order = (theta.size - 1) // 2
        phases = theta[1:order + 1].copy()
        amplitudes = theta[order + 1:].copy()
        negative = amplitudes < 0
        amplitudes[negative] *= -1
        phases[negative] += np.pi
        return cls(omega0=theta[0], phases=phases, amplitudes=amplitudes)

    @classmethod
    def from_complex_amplitudes(cls, omega0: float, coefficients: np.ndarray) -> "HarmonicModelParams":
        return cls(omega0=omega0, phases=np.angle(coefficients), amplitudes=np.abs(coefficients))

    def to_sinusoids(self) -> SinusoidSet:
        return SinusoidSet(self.amplitudes, self.phases, self.frequencies)


@dataclass(frozen=True)
class StochasticPitchModel:
    """Harmonic signal whose component frequencies k omega0 + Delta_k carry Gaussian inharmonicity

    Delta_k are independent N(0, sigma2_delta); the measurement noise has variance sigma2_noise.
    """
    omega0: float
    amplitudes: np.ndarray
    phases: np.ndarray
    sigma2_delta: float
    sigma2_noise: float

    def __post_init__(self):
        amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        if amplitudes.ndim != 1 or amplitudes.shape != phases.shape or amplitudes.size < 1:
            raise SignalValueError("Stochastic model needs K >= 1 amplitudes and phases.")
        if not 0 < self.omega0 or amplitudes.size * self.omega0 >= np.pi:
            raise SignalValueError("All harmonics k omega0, k <= K, must lie in (0, pi).")
        if not (math.isfinite(self.sigma2_delta) and self.sigma2_delta >= 0):
            raise SignalValueError("sigma2_delta must be finite and non-negative.")
        if not self.sigma2_noise > 0:
            raise SignalValueError("sigma2_noise must be positive.")
        object.__setattr__(self, "omega0", float(self.omega0))
        object.__setattr__(self, "amplitudes", _frozen(amplitudes))
        object.__setattr__(self, "phases", _frozen(phases))

    @property
    def n_components(self) -> int:
        return self.amplitudes.size

    @property
    def harmonic_numbers(self) -> np.ndarray:
        return np.arange(1, self.n_components + 1)

    def realize(self, delta: np.ndarray) -> SinusoidSet:
        """Sinusoids of one realization with inharmonicity delta"""
        delta = np.asarray(delta, dtype=float)
        return SinusoidSet(self.amplitudes, self.phases, self.harmonic_numbers * self.omega0 + delta)

    def harmonic_params(self) -> HarmonicModelParams:
        """The expected (Delta = 0) harmonic parameters"""
        return HarmonicModelParams(self.omega0, self.phases, self.amplitudes)


class Periodogram(NamedTuple):
    """Periodogram values on a uniform grid of frequencies in [-pi, pi)"""
    frequencies: np.ndarray
    power: np.ndarray


def gaussian_bell_amplitudes(n_components: int, rho: float) -> np.ndarray:
    """Amplitudes r_k = exp(-rho (k - K/2)^2), k = 1..K"""
    k = np.arange(1, n_components + 1)
    return np.exp(-rho * (k - n_components / 2) ** 2)


def inharmonicity(frequencies: np.ndarray, omega0: float) -> np.ndarray:
    """Delta_k = omega_k - k omega0"""
    frequencies = np.asarray(frequencies, dtype=float)
    return frequencies - np.arange(1, frequencies.size + 1) * omega0


def synth_sinusoids(sinusoids: SinusoidSet, n: int) -> ComplexSignal:
    """Synthesize x_t = sum_k r_k exp(i phi_k + i omega_k t), t = 0..N-1

    Parameters
    ----------
    sinusoids : SinusoidSet
        Components to sum.
    n : int
        Number of samples N >= 1.

    Returns
    -------
    : ComplexSignal
    """
    if n < 1:
        raise SignalValueError(f"Need at least one sample, got N = {n}.")
    return ComplexSignal(fourier_matrix(sinusoids.frequencies, n) @ sinusoids.complex_amplitudes)


def string_model_frequencies(omega0: float, beta: float, n_components: int) -> np.ndarray:
    """Stiff string frequencies omega_k = k omega0 sqrt(1 + k^2 beta), k = 1..K"""
    if n_components < 1:
        raise SignalValueError("Need at least one component.")
    if omega0 <= 0 or beta < 0:
        raise SignalValueError(f"String model needs omega0 > 0 and beta >= 0, got {omega0}, {beta}.")
    k = np.arange(1, n_components + 1)
    frequencies = k * omega0 * np.sqrt(1 + k ** 2 * beta)
    if frequencies[-1] >= np.pi:
        raise SignalValueError(f"String model pushes component {n_components} to {frequencies[-1]} >= pi.")
    return frequencies


def draw_inharmonicity(model: StochasticPitchModel, seed: SeedLike) -> np.ndarray:
    """Draw Delta_1..K independently from N(0, sigma2_delta)"""
    rng = make_rng(seed)
    if model.sigma2_delta == 0:
        return np.zeros(model.n_components)
    return rng.normal(0.0, math.sqrt(model.sigma2_delta), size=model.n_components)


def add_noise(x: ComplexSignal, sigma2: float, seed: SeedLike) -> ComplexSignal:
    """Add circularly symmetric white Gaussian noise of variance sigma2

    Real and imaginary parts each carry variance sigma2 / 2.
    """
    if not sigma2 > 0:
        raise SignalValueError(f"Noise variance must be positive, got {sigma2}.")
    rng = make_rng(seed)
    noise = rng.standard_normal((2, x.n))
    return ComplexSignal(x.samples + math.sqrt(sigma2 / 2) * (noise[0] + 1j * noise[1]))


def snr_to_noise_var(amplitudes: np.ndarray, snr_db: float) -> float:
    """Noise variance giving SNR = 10 log10(sum r_k^2 / sigma2)"""
    power = float(np.sum(np.asarray(amplitudes, dtype=float) ** 2))
    if power == 0:
        raise SignalValueError("SNR is undefined for a signal with all-zero amplitudes.")
    return power / 10 ** (snr_db / 10)


def fourier_matrix(frequencies: np.ndarray, n: int) -> np.ndarray:
    """Dictionary A(omega) with columns a(omega_k) = exp(i omega_k t), t = 0..N-1"""
    t = np.arange(n)
    return np.exp(1j * np.outer(t, np.asarray(frequencies, dtype=float)))


def _reciprocal_condition(gram: np.ndarray) -> float:
    singular_values = np.linalg.svd(gram, compute_uv=False)
    if singular_values[0] == 0:
        return 0.0
    return float(singular_values[-1] / singular_values[0])


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    rcond = _reciprocal_condition(gram)
    if rcond < RCOND_THRESHOLD:
        raise ConditioningError(
            f"Fourier atoms are numerically dependent (reciprocal condition number {rcond:.3e}).", rcond)
    return scipy.linalg.solve(gram, rhs, assume_a="her")


def ls_amp_phase(y: ComplexSignal, frequencies: np.ndarray) -> np.ndarray:
    """Least squares complex amplitudes (A^H A)^{-1} A^H y for atoms at the given frequencies

    The modulus of each returned coefficient is the amplitude estimate and its argument the phase.

    Parameters
    ----------
    y : ComplexSignal
        Observed samples.
    frequencies : np.ndarray
        Pairwise distinct frequencies, at most N of them.

    Returns
    -------
    : np.ndarray
        Complex amplitude per frequency.

    Raises
    ------
    ConditioningError
        If the reciprocal condition number of A^H A is below 1e-10.
    """
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if frequencies.size > y.n:
        raise SignalValueError(f"Cannot fit {frequencies.size} atoms to {y.n} samples.")
    if np.unique(frequencies).size != frequencies.size:
        raise SignalValueError("Fit frequencies must be pairwise distinct.")
    atoms = fourier_matrix(frequencies, y.n)
    return _solve_gram(atoms.conj().T @ atoms, atoms.conj().T @ y.samples)


def concentrated_residual(samples: np.ndarray, frequencies: np.ndarray) -> Tuple[float, np.ndarray]:
    """Residual power after projecting samples onto Fourier atoms

    Returns Sigma(omega) = (1/N) ||y - A (A^H A)^{-1} A^H y||^2 together with the fitted complex amplitudes.
    The residual is formed explicitly rather than as ||y||^2 - y^H P y to keep precision near zero.
    """
    atoms = fourier_matrix(frequencies, samples.size)
    coefficients = _solve_gram(atoms.conj().T @ atoms, atoms.conj().T @ samples)
    residual = samples - atoms @ coefficients
    return float(np.vdot(residual, residual).real / samples.size), coefficients


def periodogram(y: ComplexSignal, grid_size: int) -> Periodogram:
    """Periodogram |sum_t y_t exp(-i omega t)|^2 / N on the grid omega = 2 pi k / grid_size

    Returned frequencies are shifted to [-pi, pi) in increasing order.
    """
    if grid_size < y.n:
        raise SignalValueError(f"Periodogram grid ({grid_size}) must have at least N = {y.n} points.")
    power = np.abs(np.fft.fft(y.samples, n=grid_size)) ** 2 / y.n
    frequencies = 2 * np.pi * np.fft.fftfreq(grid_size)
    return Periodogram(np.fft.fftshift(frequencies), np.fft.fftshift(power))


def harmonic_waveform(params: HarmonicModelParams, n: int) -> np.ndarray:
    """mu_t(theta) for t = 0..N-1"""
    return _harmonic_atoms(params, n) @ params.amplitudes


def _harmonic_atoms(params: HarmonicModelParams, n: int) -> np.ndarray:
    t = np.arange(n)[:, None]
    return np.exp(1j * (params.phases[None, :] + params.harmonic_numbers[None, :] * params.omega0 * t))


def harmonic_jacobian(params: HarmonicModelParams, n: int) -> np.ndarray:
    """Complex gradient of mu_t with respect to theta = (omega0, phi_1..L, r_1..L)

    Returns
    -------
    : np.ndarray
        Shape (N, 2L + 1); row t holds d mu_t / d theta.
    """
    order = params.order
    atoms = _harmonic_atoms(params, n)
    t = np.arange(n)[:, None]
    ell = params.harmonic_numbers[None, :]
    r = params.amplitudes[None, :]
    jacobian = np.empty((n, 2 * order + 1), dtype=complex)
    jacobian[:, 0] = np.sum(1j * ell * t * r * atoms, axis=1)
    jacobian[:, 1:order + 1] = 1j * r * atoms
    jacobian[:, order + 1:] = atoms
    return jacobian


def harmonic_hessian(params: HarmonicModelParams, n: int) -> np.ndarray:
    """Complex Hessian of mu_t with respect to theta = (omega0, phi_1..L, r_1..L)

    Returns
    -------
    : np.ndarray
        Shape (N, 2L + 1, 2L + 1); slice t holds d^2 mu_t / d theta d theta^T.
    """
    order = params.order
    atoms = _harmonic_atoms(params, n)
    t = np.arange(n)[:, None]
    ell = params.harmonic_numbers[None, :]
    r = params.amplitudes[None, :]
    phi = np.arange(1, order + 1)
    amp = np.arange(order + 1, 2 * order + 1)
    hessian = np.zeros((n, 2 * order + 1, 2 * order + 1), dtype=complex)
    hessian[:, 0, 0] = -np.sum(ell ** 2 * t ** 2 * r * atoms, axis=1)
    hessian[:, 0, phi] = -ell * t * r * atoms
    hessian[:, 0, amp] = 1j * ell * t * atoms
    hessian[:, phi, 0] = hessian[:, 0, phi]
    hessian[:, amp, 0] = hessian[:, 0, amp]
    hessian[:, phi, phi] = -r * atoms
    hessian[:, phi, amp] = 1j * atoms
    hessian[:, amp, phi] = 1j * atoms
    return hessian
