"""Performance bounds for pitch estimation under the three pitch definitions

- harmonic model: the Cramer-Rao lower bound (exact and asymptotic) and the unstructured sinusoid CRLB
- best harmonic approximation: the pseudo-true parameter and the misspecified CRLB (MCRLB), exact and asymptotic
- closest harmonic spectrum: asymptotic variance of the plug-in estimator
- stochastic inharmonicity: the hybrid Fisher information and hybrid CRLB (HCRLB)
- the l2 and transport criteria as functions of the fundamental, for comparing both approximations

All Fisher-type matrices are inverted through a Jacobi-scaled Cholesky factorization and rejected with a
BoundComputationError when their scaled reciprocal condition number falls below 1e-15.
"""
# Standard
from dataclasses import dataclass
import logging
import math
from typing import Dict, List, Optional, Tuple
import warnings
# Installed
import numpy as np
import scipy.linalg
# Local
from inharmonic_pitch.constants import AMBIGUITY_RTOL, FISHER_RCOND_THRESHOLD, PSEUDO_TRUE_CANDIDATES
from inharmonic_pitch.errors import BoundComputationError, SignalValueError
from inharmonic_pitch.estimators import SearchConfig, nls_criterion, nls_grid, refine_scalar
from inharmonic_pitch.omt import ChsResult, LineSpectrum, chs, q_cost
from inharmonic_pitch.signals import (
    ComplexSignal,
    HarmonicModelParams,
    SeedLike,
    SinusoidSet,
    StochasticPitchModel,
    draw_inharmonicity,
    harmonic_hessian,
    harmonic_jacobian,
    harmonic_waveform,
    ls_amp_phase,
    make_rng,
    synth_sinusoids,
)

logger = logging.getLogger(__name__)

# Below this scaled reciprocal condition the Delta-parametrized hybrid Fisher matrix is not inverted directly
HYBRID_DIRECT_RCOND = 1e-10
STATIONARITY_WARNING = 1e-6
NEWTON_STEPS = 20


@dataclass(frozen=True)
class BoundMatrix:
    """Covariance bound over theta = (omega0, phi_1..L, r_1..L)"""
    covariance: np.ndarray

    @property
    def omega0(self) -> float:
        return float(self.covariance[0, 0])

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


@dataclass(frozen=True)
class PseudoTrueResult:
    """Best harmonic approximation of a noiseless signal in the l2 sense

    Attributes
    ----------
    theta0 : HarmonicModelParams
        Pseudo-true parameter.
    sigma2 : float
        Measurement noise variance used for sigma2_pseudo.
    sigma2_pseudo : float
        sigma2 plus the fit residual.
    fit_residual : float
        (1/N) sum_t |x_t - mu_t(theta0)|^2.
    ambiguous : bool
        A distinct local minimum costs at most 1% more than the global one.
    runner_up_omega0 : Optional[float]
        Fundamental of the best distinct local minimum.
    runner_up_cost : Optional[float]
        Its residual power.
    stationarity : float
        ||Re(J^H eps)|| / (||J||_F ||x||) at theta0.
    """
    theta0: HarmonicModelParams
    sigma2: float
    sigma2_pseudo: float
    fit_residual: float
    ambiguous: bool = False
    runner_up_omega0: Optional[float] = None
    runner_up_cost: Optional[float] = None
    stationarity: float = 0.0


@dataclass(frozen=True)
class HybridFisher:
    """Hybrid Fisher information over (omega0, phi_1..K, r_1..K, Delta_1..K)

    `data` is (2 / sigma2) sum_t Lambda^(t); `matrix` adds the prior precision 1 / sigma2_delta on the Delta block.
    With sigma2_delta = 0 the inharmonicity is deterministic and zero: its rows and columns are zero.
    """
    matrix: np.ndarray
    data: np.ndarray
    labels: Tuple[str, ...]
    sigma2_delta: float
    deterministic_delta: bool = False

    @property
    def n_components(self) -> int:
        return (self.matrix.shape[0] - 1) // 3

    def theta_block(self) -> np.ndarray:
        size = 2 * self.n_components + 1
        return self.matrix[:size, :size]

    def frequency_form(self) -> np.ndarray:
        """The same information over (omega0, phi, r, omega_1..K) with omega_k = k omega0 + Delta_k

        The data term does not depend on omega0 once the component frequencies are fixed, so omega0 is informed
        through the prior only. The matrix stays well scaled when sigma2_delta is large.
        """
        n_components = self.n_components
        k = np.arange(1, n_components + 1, dtype=float)
        converted = np.zeros_like(self.data)
        converted[1:, 1:] = self.data[1:, 1:]
        freq = slice(2 * n_components + 1, 3 * n_components + 1)
        precision = 1 / self.sigma2_delta
        converted[0, 0] += precision * np.dot(k, k)
        converted[0, freq] -= precision * k
        converted[freq, 0] -= precision * k
        converted[freq, freq] += precision * np.eye(n_components)
        return converted


@dataclass(frozen=True)
class HcrlbResult:
    """Hybrid CRLB: covariance over the hybrid parameter vector and the bound for omega_1 = omega0 + Delta_1"""
    covariance: np.ndarray
    labels: Tuple[str, ...]
    omega1: float

    @property
    def omega0(self) -> float:
        return float(self.covariance[0, 0])

    @property
    def diagonal(self) -> Dict[str, float]:
        return dict(zip(self.labels, np.diag(self.covariance).tolist()))


@dataclass(frozen=True)
class BoundReport:
    """Every bound that applies to a deterministic line spectrum observed in white noise"""
    n_samples: int
    sigma2: float
    omega0_pseudo: float
    omega0_chs: float
    crlb_harmonic: float
    crlb_harmonic_asymptotic: float
    crlb_unstructured: np.ndarray
    mcrlb_exact: float
    mcrlb_asymptotic: float
    chs_asymptotic_var: float
    hcrlb_omega0: Optional[float] = None
    hcrlb_omega1: Optional[float] = None
    ambiguous: bool = False

    def __post_init__(self):
        for name, value in self.bound_items():
            if not (math.isfinite(value) and value >= 0):
                raise BoundComputationError(f"Bound {name} = {value} is not a finite non-negative number.", math.nan)

    def bound_items(self) -> List[Tuple[str, float]]:
        """(name, value) pairs of every bound, one per unstructured component"""
        items = [
            ("crlb_harmonic", self.crlb_harmonic),
            ("crlb_harmonic_asymptotic", self.crlb_harmonic_asymptotic),
            ("mcrlb_exact", self.mcrlb_exact),
            ("mcrlb_asymptotic", self.mcrlb_asymptotic),
            ("chs_asymptotic_var", self.chs_asymptotic_var),
        ]
        items += [(f"crlb_unstructured_{k}", float(v)) for k, v in enumerate(self.crlb_unstructured, start=1)]
        if self.hcrlb_omega0 is not None:
            items += [("hcrlb_omega0", self.hcrlb_omega0), ("hcrlb_omega1", self.hcrlb_omega1)]
        return items


def _warn(message: str) -> None:
    logger.warning(message)
    warnings.warn(message, RuntimeWarning, stacklevel=3)


def _spd_inverse(matrix: np.ndarray, name: str) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix after symmetric diagonal (Jacobi) scaling

    Raises
    ------
    BoundComputationError
        If the scaled matrix is not positive definite or its reciprocal condition number is below 1e-15.
    """
    symmetric = (matrix + matrix.T) / 2
    diagonal = np.diag(symmetric)
    if np.any(diagonal <= 0) or not np.all(np.isfinite(symmetric)):
        raise BoundComputationError(f"{name} has a non-positive diagonal entry.", 0.0)
    scale = 1 / np.sqrt(diagonal)
    scaled = scale[:, None] * symmetric * scale[None, :]
    eigenvalues = np.linalg.eigvalsh(scaled)
    rcond = float(eigenvalues[0] / eigenvalues[-1])
    if rcond < FISHER_RCOND_THRESHOLD:
        raise BoundComputationError(f"{name} is singular (scaled reciprocal condition {rcond:.3e}).", rcond)
    try:
        factor = scipy.linalg.cho_factor(scaled)
    except np.linalg.LinAlgError as err:
        raise BoundComputationError(f"{name} is not positive definite.", rcond) from err
    inverse = scipy.linalg.cho_solve(factor, np.eye(scaled.shape[0]))
    inverse = scale[:, None] * inverse * scale[None, :]
    return (inverse + inverse.T) / 2


def _scaled_rcond(matrix: np.ndarray) -> float:
    diagonal = np.diag(matrix)
    if np.any(diagonal <= 0):
        return 0.0
    scale = 1 / np.sqrt(diagonal)
    eigenvalues = np.linalg.eigvalsh(scale[:, None] * matrix * scale[None, :])
    return float(eigenvalues[0] / eigenvalues[-1])


def _check_n(n: int) -> None:
    if n < 2:
        raise SignalValueError(f"Bounds need N >= 2 samples, got {n}.")


def crlb_harmonic_asymptotic(amplitudes: np.ndarray, n: int, sigma2: float) -> float:
    """Asymptotic harmonic-model CRLB of the fundamental: 6 sigma2 / (N (N^2 - 1) sum k^2 r_k^2)"""
    _check_n(n)
    amplitudes = np.asarray(amplitudes, dtype=float)
    k = np.arange(1, amplitudes.size + 1)
    return float(6 * sigma2 / (n * (n ** 2 - 1) * np.sum(k ** 2 * amplitudes ** 2)))


def crlb_unstructured(amplitudes: np.ndarray, n: int, sigma2: float) -> Tuple[np.ndarray, np.ndarray]:
    """Asymptotic CRLB of K unrelated sinusoids

    Returns
    -------
    : Tuple[np.ndarray, np.ndarray]
        Frequency variances 6 sigma2 / (N (N^2 - 1) r_k^2) and amplitude variances sigma2 / (2N).
    """
    _check_n(n)
    amplitudes = np.asarray(amplitudes, dtype=float)
    frequency = 6 * sigma2 / (n * (n ** 2 - 1) * amplitudes ** 2)
    return frequency, np.full(amplitudes.size, sigma2 / (2 * n))


def harmonic_fim(params: HarmonicModelParams, n: int, sigma2: float) -> np.ndarray:
    """Exact Fisher information (2 / sigma2) Re(J^H J) of the harmonic model"""
    jacobian = harmonic_jacobian(params, n)
    return 2 / sigma2 * np.real(jacobian.conj().T @ jacobian)


def harmonic_crlb(params: HarmonicModelParams, n: int, sigma2: float) -> BoundMatrix:
    """Exact (finite N) harmonic-model CRLB"""
    _check_n(n)
    return BoundMatrix(_spd_inverse(harmonic_fim(params, n, sigma2), "Harmonic Fisher information"))


def _grid_local_minima(criterion: np.ndarray) -> np.ndarray:
    left = np.concatenate(([np.inf], criterion[:-1]))
    right = np.concatenate((criterion[1:], [np.inf]))
    minima = np.flatnonzero(np.isfinite(criterion) & (criterion < left) & (criterion <= right))
    return minima[np.argsort(criterion[minima], kind="stable")]


def _newton_polish(samples: np.ndarray, params: HarmonicModelParams) -> HarmonicModelParams:
    """Newton steps on (1/N) ||x - mu(theta)||^2 over the full theta, accepting only decreasing steps"""
    n = samples.size

    def cost(p: HarmonicModelParams) -> float:
        residual = samples - harmonic_waveform(p, n)
        return float(np.vdot(residual, residual).real / n)

    current = cost(params)
    for _ in range(NEWTON_STEPS):
        residual = samples - harmonic_waveform(params, n)
        jacobian = harmonic_jacobian(params, n)
        gradient = -2 / n * np.real(jacobian.conj().T @ residual)
        hessian = 2 / n * (np.real(jacobian.conj().T @ jacobian)
                           - np.real(np.einsum("t,tij->ij", residual.conj(), harmonic_hessian(params, n))))
        try:
            step = scipy.linalg.solve(hessian, -gradient, assume_a="sym")
            candidate = HarmonicModelParams.from_vector(params.as_vector() + step)
        except (np.linalg.LinAlgError, SignalValueError):
            break
        value = cost(candidate)
        if not value < current:
            break
        params, current = candidate, value
    return params


def pseudo_true(x: ComplexSignal, order: int, sigma2: float, cfg: Optional[SearchConfig] = None) -> PseudoTrueResult:
    """Best harmonic approximation theta0 = argmin (1/N) sum_t |x_t - mu_t(theta)|^2 of a noiseless signal

    The lowest local minima of the concentrated criterion on the coarse fundamental grid are refined, the best
    one is polished by Newton steps over all of theta, and the runner-up is kept for the ambiguity check.

    Parameters
    ----------
    x : ComplexSignal
        Noiseless signal.
    order : int
        Harmonic model order L.
    sigma2 : float
        Measurement noise variance; sigma2_pseudo = sigma2 + fit residual.
    cfg : Optional[SearchConfig]
        Search settings of the fundamental grid.

    Returns
    -------
    : PseudoTrueResult
    """
    cfg = cfg or SearchConfig()
    samples = x.samples
    omegas, criterion, spacing = nls_grid(x, order, cfg)
    minima = _grid_local_minima(criterion)[:PSEUDO_TRUE_CANDIDATES]
    if minima.size == 0:
        raise BoundComputationError("The harmonic fit criterion has no finite grid value.", 0.0)
    refined = []
    for index in minima:
        omega, value, _ = refine_scalar(
            lambda w: nls_criterion(samples, order, w), omegas[index], spacing, order, cfg)
        refined.append((value, omega))
    refined.sort()
    best_value, best_omega = refined[0]
    others = [(v, w) for v, w in refined[1:] if abs(w - best_omega) > 2 * spacing]
    runner_up_cost, runner_up_omega = others[0] if others else (None, None)
    ambiguous = runner_up_cost is not None and runner_up_cost <= (1 + AMBIGUITY_RTOL) * best_value
    if ambiguous:
        logger.warning(f"Best harmonic approximation is ambiguous: residual {best_value:.6e} at {best_omega:.9f} "
                       f"and {runner_up_cost:.6e} at {runner_up_omega:.9f}.")

    start = HarmonicModelParams.from_complex_amplitudes(
        best_omega, ls_amp_phase(x, np.arange(1, order + 1) * best_omega))
    theta0 = _newton_polish(samples, start)
    residual = harmonic_waveform(theta0, x.n) - samples
    fit_residual = float(np.vdot(residual, residual).real / x.n)
    jacobian = harmonic_jacobian(theta0, x.n)
    scale = np.linalg.norm(jacobian) * np.linalg.norm(samples)
    stationarity = float(np.linalg.norm(np.real(jacobian.conj().T @ residual)) / scale) if scale > 0 else 0.0
    if stationarity > STATIONARITY_WARNING:
        logger.warning(f"Pseudo-true parameter is not stationary (relative gradient {stationarity:.3e}).")
    return PseudoTrueResult(
        theta0=theta0, sigma2=sigma2, sigma2_pseudo=sigma2 + fit_residual, fit_residual=fit_residual,
        ambiguous=ambiguous, runner_up_omega0=runner_up_omega, runner_up_cost=runner_up_cost,
        stationarity=stationarity)


def mcrlb_exact(pseudo: PseudoTrueResult, x: ComplexSignal, sigma2: float) -> BoundMatrix:
    """Misspecified CRLB A^{-1} F A^{-1} at the pseudo-true parameter

    F = (2 sigma2 / sigma2_pseudo^2) Re(J^H J), F~ = (2 / sigma2_pseudo) sum_t Re(conj(eps_t) H_t) and
    A = -(sigma2_pseudo / sigma2) F - F~, with eps = mu(theta0) - x and analytic J, H.
    """
    n = x.n
    _check_n(n)
    theta0 = pseudo.theta0
    jacobian = harmonic_jacobian(theta0, n)
    residual = harmonic_waveform(theta0, n) - x.samples
    sigma2_pseudo = sigma2 + float(np.vdot(residual, residual).real / n)
    gram = np.real(jacobian.conj().T @ jacobian)
    fisher = 2 * sigma2 / sigma2_pseudo ** 2 * gram
    curvature = 2 / sigma2_pseudo * np.real(np.einsum("t,tij->ij", residual.conj(), harmonic_hessian(theta0, n)))
    negative_a = sigma2_pseudo / sigma2 * fisher + curvature
    inverse = _spd_inverse(negative_a, "Misspecified information matrix A")
    covariance = inverse @ fisher @ inverse
    return BoundMatrix((covariance + covariance.T) / 2)


def mcrlb_asymptotic(theta0: HarmonicModelParams, true_sinusoids: SinusoidSet, sigma2: float, n: int) -> float:
    """Large-N MCRLB of the pseudo-true fundamental, sigma2 (C + E) / (C - E + Z + D)^2

    Harmonic k of theta0 is paired with component k of the true sinusoids.
    """
    _check_n(n)
    if theta0.order != len(true_sinusoids):
        raise SignalValueError("The asymptotic MCRLB pairs harmonic k with component k; orders must match.")
    if theta0.omega0 < 10 * 2 * math.pi / n:
        _warn(f"Pseudo-true fundamental {theta0.omega0:.4g} is within 10 bins of zero; "
              "the asymptotic MCRLB may be inaccurate.")
    k = theta0.harmonic_numbers.astype(float)
    r = theta0.amplitudes
    r_true = true_sinusoids.amplitudes
    t = np.arange(n, dtype=float)
    argument = (theta0.phases - true_sinusoids.phases)[:, None] \
        + (k * theta0.omega0 - true_sinusoids.frequencies)[:, None] * t[None, :]
    cos_t = np.cos(argument) @ t
    cos_t2 = np.cos(argument) @ t ** 2
    sin_t = np.sin(argument) @ t
    weight = np.sum(k ** 2 * r ** 2)
    c = n * (n ** 2 - 1) * weight / 6
    z = -2 * weight * n * (n - 1) * (2 * n - 1) / 6 + 2 * np.sum(k ** 2 * r * r_true * cos_t2)
    d = 2 * (n - 1) * (n * (n - 1) / 2 * weight - np.sum(k ** 2 * r * r_true * cos_t))
    e = 2 / n * np.sum(k ** 2 * r_true ** 2 * sin_t ** 2) \
        + 2 / n * np.sum(k ** 2 * (r_true * cos_t - r * n * (n - 1) / 2) ** 2)
    return float(sigma2 * (c + e) / (c - e + z + d) ** 2)


def perturbation_premise(frequencies: np.ndarray, nominal_omega0: float) -> bool:
    """max_k |omega_k - k omega0| < omega0 / (2K + 3)"""
    frequencies = np.asarray(frequencies, dtype=float)
    k = np.arange(1, frequencies.size + 1)
    return bool(np.max(np.abs(frequencies - k * nominal_omega0)) < nominal_omega0 / (2 * frequencies.size + 3))


def chs_asymptotic_var(true_sinusoids: SinusoidSet, n: int, sigma2: float,
                       nominal_omega0: Optional[float] = None) -> float:
    """Asymptotic variance of the CHS plug-in fundamental

    6 sigma2 / (N (N^2 - 1) S) + 2 sigma2 / (N S^4) sum_k k^2 r_k^2 (sum_l l r_l^2 (l omega_k - k omega_l))^2
    with S = sum k^2 r_k^2. The small-perturbation premise is checked against nominal_omega0, or against the
    harmonic fit of the frequencies when no nominal fundamental is given.
    """
    _check_n(n)
    r2 = true_sinusoids.amplitudes ** 2
    frequencies = true_sinusoids.frequencies
    k = np.arange(1, r2.size + 1, dtype=float)
    if nominal_omega0 is None:
        nominal_omega0 = float(np.dot(k, frequencies) / np.dot(k, k))
    if not perturbation_premise(frequencies, nominal_omega0):
        _warn("Inharmonicity exceeds the small-perturbation premise of the CHS variance formula.")
    weight = np.sum(k ** 2 * r2)
    # inner[k] = sum_l l r_l^2 (l omega_k - k omega_l)
    inner = np.sum((k * r2)[None, :] * (k[None, :] * frequencies[:, None] - k[:, None] * frequencies[None, :]), axis=1)
    first = 6 * sigma2 / (n * (n ** 2 - 1) * weight)
    second = 2 * sigma2 / (n * weight ** 4) * np.sum(k ** 2 * r2 * inner ** 2)
    return float(first + second)


def hybrid_labels(n_components: int) -> Tuple[str, ...]:
    names = ["omega0"]
    for prefix in ("phi", "r", "delta"):
        names += [f"{prefix}_{k}" for k in range(1, n_components + 1)]
    return tuple(names)


def _lambda_terms(model: StochasticPitchModel, times: np.ndarray) -> np.ndarray:
    """Lambda^(t) for every t in times; shape (T, 3K + 1, 3K + 1)"""
    times = np.asarray(times, dtype=float)
    n_components = model.n_components
    k = model.harmonic_numbers.astype(float)
    r = model.amplitudes
    phases = model.phases
    # G_kl = E exp(i (psi_k - psi_l)); off-diagonal terms are damped by E exp(i (Delta_k - Delta_l) t)
    angle = model.omega0 * (k[:, None] - k[None, :])[None, :, :] * times[:, None, None] \
        + (phases[:, None] - phases[None, :])[None, :, :]
    damping = np.exp(-model.sigma2_delta * times ** 2)
    coupling = damping[:, None, None] * np.exp(1j * angle)
    diagonal = np.arange(n_components)
    coupling[:, diagonal, diagonal] = 1.0
    real, imag = coupling.real, coupling.imag
    kr = k * r

    phi_phi = r[None, :, None] * r[None, None, :] * real
    r_r = real
    r_phi = imag * r[None, None, :]
    w_phi = times[:, None] * r[None, :] * (real @ kr)
    w_r = times[:, None] * (imag @ kr)
    w_w = times ** 2 * np.einsum("k,tkl,l->t", kr, real, kr)

    size = 3 * n_components + 1
    phi = slice(1, n_components + 1)
    amp = slice(n_components + 1, 2 * n_components + 1)
    delta = slice(2 * n_components + 1, size)
    lift = times[:, None, None]
    terms = np.zeros((times.size, size, size))
    terms[:, 0, 0] = w_w
    for block, row in ((phi, w_phi), (amp, w_r), (delta, times[:, None] * w_phi)):
        terms[:, 0, block] = row
        terms[:, block, 0] = row
    terms[:, phi, phi] = phi_phi
    terms[:, amp, amp] = r_r
    terms[:, amp, phi] = r_phi
    terms[:, phi, amp] = np.swapaxes(r_phi, 1, 2)
    terms[:, amp, delta] = lift * r_phi
    terms[:, delta, amp] = np.swapaxes(lift * r_phi, 1, 2)
    terms[:, phi, delta] = lift * phi_phi
    terms[:, delta, phi] = np.swapaxes(lift * phi_phi, 1, 2)
    terms[:, delta, delta] = lift ** 2 * phi_phi
    return terms


def lambda_matrix(model: StochasticPitchModel, t: int) -> np.ndarray:
    """Expected outer product of the real and imaginary gradients of mu_t over the hybrid parameters"""
    return _lambda_terms(model, np.array([t]))[0]


def hybrid_fisher(model: StochasticPitchModel, n: int) -> HybridFisher:
    """F = (2 / sigma2) sum_t Lambda^(t) + blockdiag(0, I / sigma2_delta)"""
    _check_n(n)
    data = 2 / model.sigma2_noise * np.sum(_lambda_terms(model, np.arange(n)), axis=0)
    labels = hybrid_labels(model.n_components)
    delta = slice(2 * model.n_components + 1, None)
    if model.sigma2_delta == 0:
        data[delta, :] = 0
        data[:, delta] = 0
        return HybridFisher(matrix=data, data=data, labels=labels, sigma2_delta=0.0, deterministic_delta=True)
    matrix = data.copy()
    matrix[delta, delta] += np.eye(model.n_components) / model.sigma2_delta
    return HybridFisher(matrix=matrix, data=data, labels=labels, sigma2_delta=model.sigma2_delta)


def hcrlb(model: StochasticPitchModel, n: int) -> HcrlbResult:
    """Hybrid CRLB of the fundamental, phases, amplitudes and inharmonicity, and of omega_1 = omega0 + Delta_1

    The omega_1 bound is inverted in the frequency parametrization (see `HybridFisher.frequency_form`), which is
    the same quadratic form as the (omega0, omega0), (Delta_1, Delta_1) and 2 (omega0, Delta_1) combination
    but stays conditioned for large sigma2_delta. The diagonal comes from the Delta parametrization unless that
    matrix is too poorly scaled, in which case it is mapped back from the frequency parametrization.
    With sigma2_delta = 0 the harmonic CRLB is returned and the Delta bounds are zero.
    """
    fisher = hybrid_fisher(model, n)
    n_components = model.n_components
    size = 3 * n_components + 1
    theta_size = 2 * n_components + 1
    if fisher.deterministic_delta:
        covariance = np.zeros((size, size))
        covariance[:theta_size, :theta_size] = _spd_inverse(fisher.theta_block(), "Harmonic Fisher information")
        return HcrlbResult(covariance=covariance, labels=fisher.labels, omega1=float(covariance[0, 0]))

    frequency_covariance = _spd_inverse(fisher.frequency_form(), "Hybrid Fisher information")
    omega1 = float(frequency_covariance[theta_size, theta_size])
    if _scaled_rcond(fisher.matrix) >= HYBRID_DIRECT_RCOND:
        covariance = _spd_inverse(fisher.matrix, "Hybrid Fisher information")
    else:
        # Delta_k = omega_k - k omega0
        transform = np.eye(size)
        transform[theta_size:, 0] = -model.harmonic_numbers
        covariance = transform @ frequency_covariance @ transform.T
    return HcrlbResult(covariance=(covariance + covariance.T) / 2, labels=fisher.labels, omega1=omega1)


def mse_misspecified(bound: float, pseudo_value: float, reference: float) -> float:
    """Theoretical MSE of an estimator of pseudo_value measured against reference: bound + squared bias"""
    return bound + (pseudo_value - reference) ** 2


@dataclass(frozen=True)
class ExpectedMse:
    """Theoretical MSEs averaged over draws of the inharmonicity

    Keys of `values` are (estimator family, target) with family "mmle" (MCRLB plus squared bias) or "chs"
    (CHS asymptotic variance plus squared bias) and target "omega0" or "omega1".
    """
    values: Dict[Tuple[str, str], float]
    n_draws: int
    n_failed: int


def expected_misspecified_mse(model: StochasticPitchModel, n: int, draws: int, seed: SeedLike,
                              cfg: Optional[SearchConfig] = None) -> ExpectedMse:
    """Average mse_misspecified over draws Delta ~ N(0, sigma2_delta I)

    For each draw the pseudo-true fundamental with its exact MCRLB, and the CHS fundamental with its asymptotic
    variance, are compared against omega0 and against omega_1 = omega0 + Delta_1.
    """
    rng = make_rng(seed)
    totals: Dict[Tuple[str, str], float] = {}
    used = 0
    failed = 0
    for _ in range(draws):
        delta = draw_inharmonicity(model, rng)
        try:
            sinusoids = model.realize(delta)
            x = synth_sinusoids(sinusoids, n)
            pseudo = pseudo_true(x, model.n_components, model.sigma2_noise, cfg)
            mcrlb = mcrlb_exact(pseudo, x, model.sigma2_noise).omega0
            closest = chs(LineSpectrum.from_sinusoids(sinusoids), nominal_omega0=model.omega0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                chs_var = chs_asymptotic_var(sinusoids, n, model.sigma2_noise, model.omega0)
        except (SignalValueError, BoundComputationError) as err:
            logger.info(f"Skipping inharmonicity draw: {err}")
            failed += 1
            continue
        references = {"omega0": model.omega0, "omega1": model.omega0 + float(delta[0])}
        for target, reference in references.items():
            for family, bound, value in (("mmle", mcrlb, pseudo.theta0.omega0), ("chs", chs_var, closest.omega0)):
                key = (family, target)
                totals[key] = totals.get(key, 0.0) + mse_misspecified(bound, value, reference)
        used += 1
    values = {key: total / used for key, total in totals.items()} if used else {}
    return ExpectedMse(values=values, n_draws=used, n_failed=failed)


def compute_bound_report(sinusoids: SinusoidSet, n: int, sigma2: float, nominal_omega0: Optional[float] = None,
                         sigma2_delta: Optional[float] = None, cfg: Optional[SearchConfig] = None) -> BoundReport:
    """All bounds for a deterministic line spectrum of K components observed over N samples

    The harmonic model order is K. The HCRLB entries are included when sigma2_delta and the nominal fundamental
    are given; the stochastic model then uses the amplitudes and phases of `sinusoids`.
    """
    x = synth_sinusoids(sinusoids, n)
    n_components = len(sinusoids)
    pseudo = pseudo_true(x, n_components, sigma2, cfg)
    closest = chs(LineSpectrum.from_sinusoids(sinusoids), nominal_omega0=nominal_omega0)
    hcrlb_omega0 = hcrlb_omega1 = None
    if sigma2_delta is not None and nominal_omega0 is not None:
        model = StochasticPitchModel(nominal_omega0, sinusoids.amplitudes, sinusoids.phases, sigma2_delta, sigma2)
        hybrid = hcrlb(model, n)
        hcrlb_omega0, hcrlb_omega1 = hybrid.omega0, hybrid.omega1
    return BoundReport(
        n_samples=n,
        sigma2=sigma2,
        omega0_pseudo=pseudo.theta0.omega0,
        omega0_chs=closest.omega0,
        crlb_harmonic=harmonic_crlb(pseudo.theta0, n, sigma2).omega0,
        crlb_harmonic_asymptotic=crlb_harmonic_asymptotic(sinusoids.amplitudes, n, sigma2),
        crlb_unstructured=crlb_unstructured(sinusoids.amplitudes, n, sigma2)[0],
        mcrlb_exact=mcrlb_exact(pseudo, x, sigma2).omega0,
        mcrlb_asymptotic=mcrlb_asymptotic(pseudo.theta0, sinusoids, sigma2, n),
        chs_asymptotic_var=chs_asymptotic_var(sinusoids, n, sigma2, nominal_omega0),
        hcrlb_omega0=hcrlb_omega0,
        hcrlb_omega1=hcrlb_omega1,
        ambiguous=pseudo.ambiguous,
    )


@dataclass(frozen=True)
class ApproximationCurves:
    """Costs of approximating a noiseless line spectrum by a harmonic one, as functions of the fundamental

    Attributes
    ----------
    omegas : np.ndarray
        Fundamentals the curves are evaluated at.
    l2_criterion : np.ndarray
        (1/N) ||x - P x||^2 for the projection P onto K harmonics; inf where the fit is ill-conditioned.
    transport_cost : np.ndarray
        q_L at the maximal harmonic order of the spectrum.
    spectrum : LineSpectrum
        The approximated spectrum.
    pseudo : PseudoTrueResult
        Minimizer of the l2 criterion; its harmonics carry power r_k^2 of the fitted amplitudes.
    closest : ChsResult
        Minimizer of q_L.
    """
    omegas: np.ndarray
    l2_criterion: np.ndarray
    transport_cost: np.ndarray
    spectrum: LineSpectrum
    pseudo: PseudoTrueResult
    closest: ChsResult

    @property
    def l2_spectrum(self) -> LineSpectrum:
        theta0 = self.pseudo.theta0
        occupied = theta0.amplitudes > 0
        return LineSpectrum(theta0.frequencies[occupied], theta0.amplitudes[occupied] ** 2)


def approximation_curves(sinusoids: SinusoidSet, n: int, omegas: np.ndarray,
                         cfg: Optional[SearchConfig] = None) -> ApproximationCurves:
    """Tabulate the l2 and transport criteria over `omegas` and locate both harmonic approximations

    The l2 criterion depends on N through the cross terms of the components; q_L does not.
    """
    _check_n(n)
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if omegas.ndim != 1 or omegas.size == 0 or np.any(omegas <= 0) or not np.all(np.isfinite(omegas)):
        raise SignalValueError("Criterion curves need a non-empty vector of positive fundamentals.")
    x = synth_sinusoids(sinusoids, n)
    order = len(sinusoids)
    spectrum = LineSpectrum.from_sinusoids(sinusoids)
    closest = chs(spectrum)
    l2 = np.array([nls_criterion(x.samples, order, omega) for omega in omegas])
    transport = np.array([q_cost(omega, spectrum, closest.order) for omega in omegas])
    return ApproximationCurves(
        omegas=omegas, l2_criterion=l2, transport_cost=transport, spectrum=spectrum,
        pseudo=pseudo_true(x, order, 0.0, cfg), closest=closest)
