"""Fundamental frequency estimators for (almost) harmonic signals

Five estimators are provided:

- `mmle_harmonic`: nonlinear least squares under the harmonic model, i.e. the misspecified MLE
- `anls`: approximate NLS, harmonic summation of the periodogram
- `unstructured_mle`: K unrelated sinusoids, frequencies by joint least squares
- `chs_plugin`: the closest harmonic spectrum of the unstructured estimates
- `ml_map_hybrid`: joint ML/MAP estimate under Gaussian inharmonicity

The one-dimensional searches evaluate their criterion on a uniform fundamental grid through a single
zero-padded FFT (harmonic l of grid point g sits in FFT bin l*g) and refine the best grid point with a
bounded scalar search. The K-dimensional searches start from periodogram peaks and refine with
Nelder-Mead.
"""
# Standard
from dataclasses import dataclass
import logging
import math
from typing import Callable, List, Optional, Tuple
# Installed
import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.signal
# Local
from inharmonic_pitch.constants import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    GRID_OVERSAMPLING,
    PERIODOGRAM_OVERSAMPLING,
    RCOND_THRESHOLD,
)
from inharmonic_pitch.errors import ConditioningError, EstimationError, SignalValueError
from inharmonic_pitch.omt import LineSpectrum, chs
from inharmonic_pitch.signals import (
    ComplexSignal,
    concentrated_residual,
    fourier_matrix,
    ls_amp_phase,
    periodogram,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    """Search settings shared by all estimators

    Parameters
    ----------
    grid_lower : Optional[float]
        Lowest fundamental on the coarse grid. Default 2 pi / N.
    grid_upper : Optional[float]
        Highest fundamental on the coarse grid. Default just below pi / L.
    grid_resolution : Optional[float]
        Coarse grid spacing in radians. Default pi / (10 L N). The grid is snapped to 2 pi / M for an integer M.
    tolerance : float
        Refinement tolerance in radians.
    max_iterations : int
        Iteration cap of the refinement searches.
    periodogram_size : Optional[int]
        FFT length used for peak-picking. Default: next power of two of 16 N.
    peak_separation : Optional[float]
        Minimum distance between picked peaks. Default: half of a coarse harmonic-summation fundamental.
    record_history : bool
        Keep the criterion value of every accepted iterate in the diagnostics.
    """
    grid_lower: Optional[float] = None
    grid_upper: Optional[float] = None
    grid_resolution: Optional[float] = None
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    periodogram_size: Optional[int] = None
    peak_separation: Optional[float] = None
    record_history: bool = False

    def __post_init__(self):
        if self.grid_resolution is not None and not self.grid_resolution > 0:
            raise SignalValueError("Grid resolution must be positive.")
        if not self.tolerance > 0:
            raise SignalValueError("Refinement tolerance must be positive.")
        if self.max_iterations < 1:
            raise SignalValueError("max_iterations must be at least 1.")
        if self.peak_separation is not None and not self.peak_separation > 0:
            raise SignalValueError("Peak separation must be positive.")

    def grid_fft_size(self, order: int, n: int) -> int:
        """FFT length M whose bin spacing 2 pi / M is the coarse grid spacing"""
        resolution = self.grid_resolution or math.pi / (GRID_OVERSAMPLING * order * n)
        return int(math.ceil(2 * math.pi / resolution))

    def fundamental_grid(self, order: int, n: int) -> Tuple[np.ndarray, int]:
        """Integer grid indices g and FFT length M of the coarse grid omega0 = 2 pi g / M"""
        fft_size = self.grid_fft_size(order, n)
        spacing = 2 * math.pi / fft_size
        lower = self.grid_lower if self.grid_lower is not None else 2 * math.pi / n
        if self.grid_upper is not None:
            if order * self.grid_upper >= math.pi:
                raise SignalValueError(
                    f"Upper grid bound {self.grid_upper} puts harmonic {order} at or above pi.")
            upper = self.grid_upper
        else:
            upper = math.pi / order
        indices = np.arange(max(1, math.ceil(lower / spacing)), math.floor(upper / spacing) + 1)
        indices = indices[order * indices * spacing < math.pi]
        if indices.size == 0:
            raise SignalValueError(f"Empty fundamental grid on [{lower}, {upper}].")
        return indices, fft_size

    def peak_fft_size(self, n: int) -> int:
        if self.periodogram_size is not None:
            return max(self.periodogram_size, n)
        return 1 << int(math.ceil(math.log2(PERIODOGRAM_OVERSAMPLING * n)))


@dataclass(frozen=True)
class Diagnostics:
    """Optimizer report attached to every estimate"""
    iterations: int
    criterion: float
    converged: bool
    message: str = ""
    history: Tuple[float, ...] = ()
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class EstimateResult:
    """Output of an estimator

    Components are reported per fitted frequency; delta_hat is only set by the ML/MAP estimator.
    """
    omega0_hat: float
    amplitudes: np.ndarray
    phases: np.ndarray
    frequencies: np.ndarray
    noise_var_hat: float
    diagnostics: Diagnostics
    delta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.omega0_hat < math.pi:
            raise EstimationError(f"Fundamental estimate {self.omega0_hat} outside (0, pi).", self.diagnostics)
        if not self.diagnostics.converged and not self.diagnostics.message:
            raise ValueError("Non-converged estimates must explain why in diagnostics.message.")


class _Tracker:
    """Wraps a criterion to count evaluations and remember accepted iterates"""

    def __init__(self, criterion: Callable[[np.ndarray], float], record: bool):
        self.criterion = criterion
        self.record = record
        self.evaluations = 0
        self.history: List[float] = []
        self._cache = {}

    def __call__(self, x) -> float:
        self.evaluations += 1
        value = self.criterion(x)
        if self.record:
            self._cache[np.asarray(x, dtype=float).tobytes()] = value
        return value

    def accept(self, x) -> None:
        """Nelder-Mead callback; x is the best vertex, always evaluated before"""
        if self.record:
            key = np.asarray(x, dtype=float).tobytes()
            self.history.append(self._cache[key] if key in self._cache else self.criterion(x))

    def accept_value(self, value: float) -> None:
        if self.record and (not self.history or value <= self.history[-1]):
            self.history.append(value)


def harmonic_fit(frequencies: np.ndarray) -> float:
    """Least squares fundamental of frequencies treated as harmonics 1..K: sum k omega_k / sum k^2"""
    frequencies = np.asarray(frequencies, dtype=float)
    k = np.arange(1, frequencies.size + 1)
    return float(np.dot(k, frequencies) / np.dot(k, k))


def _grid_spectra(y: ComplexSignal, order: int, cfg: SearchConfig):
    """DTFT values Y(l omega_g) for every grid fundamental omega_g and harmonic l"""
    indices, fft_size = cfg.fundamental_grid(order, y.n)
    spectrum = np.fft.fft(y.samples, n=fft_size)
    harmonics = np.arange(1, order + 1)
    values = spectrum[np.mod(np.outer(indices, harmonics), fft_size)]
    return indices * (2 * math.pi / fft_size), values, 2 * math.pi / fft_size


def _nls_grid_criterion(y: ComplexSignal, order: int, omegas: np.ndarray, projections: np.ndarray) -> np.ndarray:
    """(1/N) residual power of the harmonic projection at every grid fundamental

    The Gram matrix of harmonic atoms is Toeplitz with Dirichlet kernel entries, evaluated in closed form.
    """
    n = y.n
    gram = np.empty((omegas.size, order, order), dtype=complex)
    gram[:, np.arange(order), np.arange(order)] = n
    for lag in range(1, order):
        alpha = lag * omegas
        kernel = np.exp(1j * alpha * (n - 1) / 2) * np.sin(n * alpha / 2) / np.sin(alpha / 2)
        rows = np.arange(order - lag)
        # (A^H A)_{l, m} = sum_t exp(i (m - l) omega t)
        gram[:, rows, rows + lag] = kernel[:, None]
        gram[:, rows + lag, rows] = np.conj(kernel)[:, None]
    singular_values = np.linalg.svd(gram, compute_uv=False)
    rcond = singular_values[:, -1] / singular_values[:, 0]
    well_conditioned = rcond >= RCOND_THRESHOLD
    criterion = np.full(omegas.size, np.inf)
    if np.any(well_conditioned):
        solved = np.linalg.solve(gram[well_conditioned], projections[well_conditioned][..., None])[..., 0]
        explained = np.einsum("gl,gl->g", projections[well_conditioned].conj(), solved).real
        total = np.vdot(y.samples, y.samples).real
        criterion[well_conditioned] = np.maximum(total - explained, 0.0) / n
    return criterion


def nls_criterion(samples: np.ndarray, order: int, omega0: float) -> float:
    try:
        value, _ = concentrated_residual(samples, np.arange(1, order + 1) * omega0)
    except ConditioningError:
        return np.inf
    return value


def _harmonic_summation(samples: np.ndarray, order: int, omega0: float) -> float:
    atoms = fourier_matrix(np.arange(1, order + 1) * omega0, samples.size)
    return float(np.sum(np.abs(atoms.conj().T @ samples) ** 2))


def refine_scalar(criterion: Callable[[float], float], center: float, spacing: float,
                   order: int, cfg: SearchConfig) -> Tuple[float, float, Diagnostics]:
    """Bounded Brent search on [center - spacing, center + spacing]

    Brent's method is golden-section search that takes a parabolic step whenever the last three points
    admit one and falls back to a golden-section step otherwise. The bracket keeps it on the golden-section
    guarantee; on the smooth criteria near their minimum the parabolic steps converge faster.
    """
    tracker = _Tracker(criterion, cfg.record_history)
    start_value = tracker(center)
    tracker.accept_value(start_value)
    lower = max(center - spacing, spacing / 2)
    upper = min(center + spacing, math.pi / order * (1 - 1e-12))

    def tracked(omega):
        value = tracker(omega)
        tracker.accept_value(value)
        return value

    result = scipy.optimize.minimize_scalar(
        tracked, bounds=(lower, upper), method="bounded",
        options={"xatol": cfg.tolerance, "maxiter": cfg.max_iterations})
    omega, value = float(result.x), float(result.fun)
    if not value <= start_value:
        omega, value = center, start_value
    message = "" if result.success else str(result.message)
    diagnostics = Diagnostics(
        iterations=int(getattr(result, "nit", result.nfev)), criterion=value, converged=bool(result.success),
        message=message, history=tuple(tracker.history))
    return omega, value, diagnostics


def _harmonic_estimate(y: ComplexSignal, order: int, omega0: float, diagnostics: Diagnostics) -> EstimateResult:
    frequencies = np.arange(1, order + 1) * omega0
    try:
        residual, coefficients = concentrated_residual(y.samples, frequencies)
    except ConditioningError as err:
        raise EstimationError(f"Harmonic fit at omega0 = {omega0} is ill-conditioned.", diagnostics) from err
    return EstimateResult(
        omega0_hat=omega0, amplitudes=np.abs(coefficients), phases=np.angle(coefficients),
        frequencies=frequencies, noise_var_hat=residual, diagnostics=diagnostics)


def nls_grid(y: ComplexSignal, order: int, cfg: SearchConfig) -> Tuple[np.ndarray, np.ndarray, float]:
    """Harmonic NLS criterion on the coarse grid: (fundamentals, criterion values, grid spacing)"""
    omegas, projections, spacing = _grid_spectra(y, order, cfg)
    return omegas, _nls_grid_criterion(y, order, omegas, projections), spacing


def mmle_harmonic(y: ComplexSignal, order: int, cfg: Optional[SearchConfig] = None) -> EstimateResult:
    """Misspecified MLE of the fundamental under the harmonic model (nonlinear least squares)

    Parameters
    ----------
    y : ComplexSignal
        Observed samples.
    order : int
        Number of harmonics L.
    cfg : Optional[SearchConfig]
        Search settings; defaults apply when omitted.

    Returns
    -------
    : EstimateResult
        noise_var_hat is the residual power per sample at the estimate.
    """
    cfg = cfg or SearchConfig()
    omegas, criterion, spacing = nls_grid(y, order, cfg)
    if not np.any(np.isfinite(criterion)):
        raise EstimationError("No grid fundamental admits a well-conditioned harmonic projection.")
    best = int(np.argmin(criterion))
    samples = y.samples
    omega0, value, diagnostics = refine_scalar(
        lambda w: nls_criterion(samples, order, w), omegas[best], spacing, order, cfg)
    logger.debug(f"NLS fundamental {omega0:.12f} with residual power {value:.6e}")
    return _harmonic_estimate(y, order, omega0, diagnostics)


def anls(y: ComplexSignal, order: int, cfg: Optional[SearchConfig] = None) -> EstimateResult:
    """Approximate NLS: maximize the harmonic summation sum_l |Y(l omega0)|^2"""
    cfg = cfg or SearchConfig()
    omegas, projections, spacing = _grid_spectra(y, order, cfg)
    summation = np.sum(np.abs(projections) ** 2, axis=1)
    best = int(np.argmax(summation))
    samples = y.samples
    omega0, value, diagnostics = refine_scalar(
        lambda w: -_harmonic_summation(samples, order, w), omegas[best], spacing, order, cfg)
    logger.debug(f"ANLS fundamental {omega0:.12f} with harmonic summation {-value:.6e}")
    return _harmonic_estimate(y, order, omega0, diagnostics)


def pick_peaks(y: ComplexSignal, count: int, cfg: SearchConfig) -> np.ndarray:
    """Frequencies in (0, pi) of the `count` largest well-separated periodogram peaks, increasing

    Peaks closer than the separation are suppressed in favour of the larger one; equal heights are
    resolved toward the lower frequency.
    """
    spectrum = periodogram(y, cfg.peak_fft_size(y.n))
    positive = (spectrum.frequencies > 0) & (spectrum.frequencies < math.pi)
    frequencies, power = spectrum.frequencies[positive], spectrum.power[positive]
    bin_width = 2 * math.pi / cfg.peak_fft_size(y.n)
    separation = cfg.peak_separation
    if separation is None:
        omegas, projections, _ = _grid_spectra(y, count, cfg)
        separation = omegas[int(np.argmax(np.sum(np.abs(projections) ** 2, axis=1)))] / 2
    distance = max(1, int(math.floor(separation / bin_width)))
    peaks, _ = scipy.signal.find_peaks(power, distance=distance)
    if peaks.size < count:
        raise EstimationError(
            f"Only {peaks.size} resolvable periodogram peaks for {count} components.",
            Diagnostics(iterations=0, criterion=math.nan, converged=False,
                        message=f"{peaks.size} peaks separated by {separation:.3e} rad"))
    ranked = peaks[np.lexsort((frequencies[peaks], -power[peaks]))][:count]
    return np.sort(frequencies[ranked])


def _nelder_mead(criterion: Callable[[np.ndarray], float], start: np.ndarray, steps: np.ndarray,
                 cfg: SearchConfig) -> Tuple[np.ndarray, float, Diagnostics]:
    tracker = _Tracker(criterion, cfg.record_history)
    start_value = tracker(start)
    if not np.isfinite(start_value):
        raise EstimationError(
            "Initial point has an undefined criterion.",
            Diagnostics(iterations=0, criterion=start_value, converged=False, message="non-finite start"))
    tracker.accept(start)
    simplex = np.vstack([start, start + np.diag(steps)])
    result = scipy.optimize.minimize(
        tracker, start, method="Nelder-Mead", callback=tracker.accept,
        options={"initial_simplex": simplex, "xatol": cfg.tolerance,
                 "fatol": 1e-8 * max(abs(start_value), 1e-300), "maxiter": cfg.max_iterations,
                 "maxfev": 4 * cfg.max_iterations, "adaptive": start.size > 2})
    x, value = np.asarray(result.x, dtype=float), float(result.fun)
    if not value <= start_value:
        x, value = start, start_value
    message = "" if result.success else f"Nelder-Mead stopped: {result.message}"
    diagnostics = Diagnostics(
        iterations=int(result.nit), criterion=value, converged=bool(result.success),
        message=message, history=tuple(tracker.history))
    if not result.success:
        logger.warning(message)
    return x, value, diagnostics


def _residual_or_inf(samples: np.ndarray, frequencies: np.ndarray) -> float:
    if np.any(frequencies <= 0) or np.any(frequencies >= math.pi):
        return np.inf
    try:
        value, _ = concentrated_residual(samples, frequencies)
    except ConditioningError:
        return np.inf
    return value


def _sinusoid_estimate(y: ComplexSignal, frequencies: np.ndarray, omega0: float, noise_var: float,
                       diagnostics: Diagnostics, delta: Optional[np.ndarray] = None) -> EstimateResult:
    try:
        coefficients = ls_amp_phase(y, frequencies)
    except ConditioningError as err:
        raise EstimationError("Refined frequencies are numerically dependent.", diagnostics) from err
    return EstimateResult(
        omega0_hat=omega0, amplitudes=np.abs(coefficients), phases=np.angle(coefficients),
        frequencies=frequencies, noise_var_hat=noise_var, diagnostics=diagnostics, delta_hat=delta)


def unstructured_mle(y: ComplexSignal, n_components: int, cfg: Optional[SearchConfig] = None) -> EstimateResult:
    """MLE of K unrelated sinusoids

    Frequencies start at the K largest well-separated periodogram peaks and are refined jointly by
    Nelder-Mead on the projection residual. omega0_hat is the harmonic_fit of the frequencies.
    """
    if n_components < 1:
        raise SignalValueError("Need at least one component.")
    cfg = cfg or SearchConfig()
    start = pick_peaks(y, n_components, cfg)
    step = math.pi / cfg.peak_fft_size(y.n)
    samples = y.samples
    frequencies, value, diagnostics = _nelder_mead(
        lambda w: _residual_or_inf(samples, w), start, np.full(n_components, step), cfg)
    order = np.argsort(frequencies)
    frequencies = frequencies[order]
    return _sinusoid_estimate(y, frequencies, harmonic_fit(frequencies), value, diagnostics)


def chs_plugin(y: ComplexSignal, n_components: int, cfg: Optional[SearchConfig] = None) -> EstimateResult:
    """Closest harmonic spectrum fundamental of the unstructured MLE line spectrum"""
    unstructured = unstructured_mle(y, n_components, cfg)
    try:
        spectrum = LineSpectrum(unstructured.frequencies, unstructured.amplitudes ** 2)
    except SignalValueError as err:
        raise EstimationError(f"Unstructured estimate is not a line spectrum: {err}",
                              unstructured.diagnostics) from err
    closest = chs(spectrum)
    flags = unstructured.diagnostics.flags + (("chs-tie",) if closest.tie else ())
    diagnostics = Diagnostics(
        iterations=unstructured.diagnostics.iterations, criterion=closest.cost,
        converged=unstructured.diagnostics.converged, message=unstructured.diagnostics.message,
        history=unstructured.diagnostics.history, flags=flags)
    return EstimateResult(
        omega0_hat=closest.omega0, amplitudes=unstructured.amplitudes, phases=unstructured.phases,
        frequencies=unstructured.frequencies, noise_var_hat=unstructured.noise_var_hat,
        diagnostics=diagnostics)


def hybrid_criterion(samples: np.ndarray, frequencies: np.ndarray, sigma2_delta: float) -> float:
    """psi(omega) = -N log Sigma(omega) - nu(omega) / (2 sigma2_delta)"""
    residual = _residual_or_inf(samples, frequencies)
    if not np.isfinite(residual):
        return -np.inf
    k = np.arange(1, frequencies.size + 1)
    nu = float(np.sum((frequencies - k * harmonic_fit(frequencies)) ** 2))
    return -samples.size * math.log(max(residual, np.finfo(float).tiny)) - nu / (2 * sigma2_delta)


def ml_map_hybrid(y: ComplexSignal, n_components: int, sigma2_delta: float,
                  cfg: Optional[SearchConfig] = None) -> EstimateResult:
    """Hybrid ML/MAP estimate of the fundamental and inharmonicity

    psi is maximized over K frequencies written as omega = k omega0 + s B u, where B spans the
    complement of k = (1..K) and s = min(1, sqrt(sigma2_delta)). This is a linear bijection of the
    frequencies in which nu(omega) = s^2 ||u||^2 and both variance limits stay well scaled.

    Returns
    -------
    : EstimateResult
        omega0_hat = sum k omega_k / sum k^2, delta_hat = omega - k omega0_hat, noise_var_hat = Sigma(omega).
    """
    if not sigma2_delta > 0:
        raise SignalValueError("sigma2_delta must be positive; use mmle_harmonic for the harmonic limit.")
    cfg = cfg or SearchConfig()
    k = np.arange(1, n_components + 1, dtype=float)
    basis = scipy.linalg.null_space(k[None, :])
    scale = min(1.0, math.sqrt(sigma2_delta))
    samples = y.samples

    def frequencies_of(z: np.ndarray) -> np.ndarray:
        return k * z[0] + scale * (basis @ z[1:])

    def negative_psi(z: np.ndarray) -> float:
        return -hybrid_criterion(samples, frequencies_of(z), sigma2_delta)

    peaks = pick_peaks(y, n_components, cfg)
    omega0_start = harmonic_fit(peaks)
    candidates = [
        np.concatenate(([omega0_start], basis.T @ (peaks - k * omega0_start) / scale)),
        np.concatenate(([omega0_start], np.zeros(n_components - 1))),
    ]
    start = min(candidates, key=negative_psi)
    step = math.pi / cfg.peak_fft_size(y.n)
    steps = np.concatenate(([step / n_components], np.full(n_components - 1, min(step / scale, 1.0))))
    z, value, diagnostics = _nelder_mead(negative_psi, start, steps, cfg)
    diagnostics = Diagnostics(
        iterations=diagnostics.iterations, criterion=-value, converged=diagnostics.converged,
        message=diagnostics.message, history=tuple(-h for h in diagnostics.history))
    frequencies = frequencies_of(z)
    omega0 = harmonic_fit(frequencies)
    delta = frequencies - k * omega0
    noise_var = _residual_or_inf(samples, frequencies)
    return _sinusoid_estimate(y, frequencies, omega0, noise_var, diagnostics, delta=delta)
