"""Optimal mass transport definition of pitch

Line spectra carry mass 2 pi r^2 per atom. The cost of moving a line spectrum onto the best harmonic spectrum
with fundamental omega0 reduces to q_L(omega0) = 2 pi sum_k r_k^2 min_l (l omega0 - omega_k)^2, and the
closest harmonic spectrum (CHS) is the harmonic spectrum at the global minimizer of q_L.
"""
# Standard
from dataclasses import dataclass
import logging
import math
from typing import Callable, List, Optional, Tuple
# Installed
import numpy as np
import scipy.optimize
# Local
from inharmonic_pitch.constants import HARMONIC_ORDER_RTOL
from inharmonic_pitch.errors import SignalValueError, TransportError
from inharmonic_pitch.signals import SinusoidSet, _frozen

logger = logging.getLogger(__name__)

MASS_RTOL = 1e-9
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class LineSpectrum:
    """Atomic spectrum: power r_k^2 at frequency omega_k, transported as mass 2 pi r_k^2

    Parameters
    ----------
    frequencies : np.ndarray
        Strictly increasing positive frequencies.
    powers : np.ndarray
        Positive powers r_k^2, one per frequency.
    """
    frequencies: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        frequencies = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        powers = np.atleast_1d(np.asarray(self.powers, dtype=float))
        if frequencies.shape != powers.shape or frequencies.ndim != 1 or frequencies.size == 0:
            raise SignalValueError("A line spectrum needs matching non-empty frequency and power vectors.")
        if not np.all(np.isfinite(frequencies)) or np.any(frequencies <= 0):
            raise SignalValueError("Line spectrum frequencies must be positive.")
        if np.any(np.diff(frequencies) <= 0):
            raise SignalValueError("Line spectrum frequencies must be strictly increasing.")
        if not np.all(np.isfinite(powers)) or np.any(powers <= 0):
            raise SignalValueError("Line spectrum powers must be positive.")
        object.__setattr__(self, "frequencies", _frozen(frequencies))
        object.__setattr__(self, "powers", _frozen(powers))

    def __len__(self) -> int:
        return self.frequencies.size

    @property
    def masses(self) -> np.ndarray:
        return 2 * math.pi * self.powers

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @classmethod
    def from_sinusoids(cls, sinusoids: SinusoidSet) -> "LineSpectrum":
        """Line spectrum of a set of sinusoids with positive frequencies"""
        return cls(sinusoids.frequencies, sinusoids.amplitudes ** 2)


@dataclass(frozen=True)
class TransportPlan:
    """Sparse transport plan: entry i moves masses[i] from source atom sources[i] to target atom targets[i]"""
    sources: np.ndarray
    targets: np.ndarray
    masses: np.ndarray
    n_sources: int
    n_targets: int

    def matrix(self) -> np.ndarray:
        dense = np.zeros((self.n_sources, self.n_targets))
        np.add.at(dense, (self.sources, self.targets), self.masses)
        return dense

    @property
    def source_sums(self) -> np.ndarray:
        return np.bincount(self.sources, weights=self.masses, minlength=self.n_sources)

    @property
    def target_sums(self) -> np.ndarray:
        return np.bincount(self.targets, weights=self.masses, minlength=self.n_targets)


@dataclass(frozen=True)
class ChsResult:
    """Closest harmonic spectrum

    Attributes
    ----------
    omega0 : float
        Global minimizer of q_L.
    harmonic_powers : np.ndarray
        Power collected by each harmonic l = 1..L; sums to the input power.
    assignment : np.ndarray
        Harmonic number of every input atom.
    cost : float
        q_L(omega0).
    order : int
        L.
    tie : bool
        Another fundamental reaches the same cost; the smallest one is reported.
    local_minima : Tuple[float, ...]
        Every local minimizer of q_L, increasing.
    competing_minimum : Optional[float]
        A local minimizer other than omega0 inside the perturbation interval around a supplied nominal fundamental.
    """
    omega0: float
    harmonic_powers: np.ndarray
    assignment: np.ndarray
    cost: float
    order: int
    tie: bool = False
    local_minima: Tuple[float, ...] = ()
    competing_minimum: Optional[float] = None

    @property
    def assignment_sets(self) -> List[Tuple[int, ...]]:
        """Atom indices I_l assigned to each harmonic l = 1..L"""
        return [tuple(int(k) for k in np.flatnonzero(self.assignment == ell)) for ell in range(1, self.order + 1)]

    @property
    def spectrum(self) -> LineSpectrum:
        """The CHS as a line spectrum (empty harmonics omitted)"""
        occupied = self.harmonic_powers > 0
        harmonics = np.arange(1, self.order + 1)[occupied]
        return LineSpectrum(harmonics * self.omega0, self.harmonic_powers[occupied])


def minimum_gap(frequencies: np.ndarray) -> float:
    """d = min(omega_1, omega_{k+1} - omega_k)"""
    frequencies = np.asarray(frequencies, dtype=float)
    return float(min(frequencies[0], np.min(np.diff(frequencies), initial=np.inf)))


def maximal_harmonic_order(frequencies: np.ndarray) -> int:
    """Smallest l with l d >= omega_K, d the minimum gap including the distance from zero"""
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if frequencies.size == 0 or np.any(frequencies <= 0) or np.any(np.diff(frequencies) <= 0):
        raise SignalValueError("Maximal harmonic order needs strictly increasing positive frequencies.")
    ratio = frequencies[-1] / minimum_gap(frequencies)
    # Relative slack so that exact multiples of d are not pushed up by rounding
    return max(1, int(math.ceil(ratio * (1 - HARMONIC_ORDER_RTOL))))


def nearest_harmonics(omega0: float, frequencies: np.ndarray, order: int, prefer_larger: bool = False) -> np.ndarray:
    """Harmonic number in 1..L nearest to every frequency

    Midpoints go to the smaller harmonic unless prefer_larger is set.
    """
    frequencies = np.asarray(frequencies, dtype=float)
    lower = np.clip(np.floor(frequencies / omega0), 1, order).astype(int)
    upper = np.clip(lower + 1, 1, order)
    lower_cost = (lower * omega0 - frequencies) ** 2
    upper_cost = (upper * omega0 - frequencies) ** 2
    use_upper = upper_cost <= lower_cost if prefer_larger else upper_cost < lower_cost
    return np.where(use_upper, upper, lower)


def q_cost(omega0: float, spectrum: LineSpectrum, order: int) -> float:
    """Reduced transport cost 2 pi sum_k r_k^2 min_l (l omega0 - omega_k)^2"""
    if order < 1:
        raise SignalValueError("Harmonic order must be at least 1.")
    if not omega0 > 0:
        raise SignalValueError("Fundamental must be positive.")
    harmonics = nearest_harmonics(omega0, spectrum.frequencies, order)
    return float(np.sum(spectrum.masses * (harmonics * omega0 - spectrum.frequencies) ** 2))


def best_harmonic_spectrum(omega0: float, spectrum: LineSpectrum, order: int) -> LineSpectrum:
    """Harmonic spectrum with fundamental omega0 closest in transport cost: each atom moves to its nearest harmonic"""
    harmonics = nearest_harmonics(omega0, spectrum.frequencies, order)
    powers = np.bincount(harmonics - 1, weights=spectrum.powers, minlength=order)
    occupied = powers > 0
    return LineSpectrum(np.arange(1, order + 1)[occupied] * omega0, powers[occupied])


def _assignment_cells(frequencies: np.ndarray, order: int, upper: float) -> np.ndarray:
    """Sorted boundaries of the intervals of (0, upper] on which the nearest-harmonic assignment is constant"""
    ell = np.arange(1, order)
    switches = (frequencies[:, None] / (ell[None, :] + 0.5)).ravel()
    switches = switches[(switches > 0) & (switches < upper)]
    return np.unique(np.concatenate(([0.0], switches, [upper])))


def _prop_interval(spectrum: LineSpectrum, nominal_omega0: float) -> Tuple[float, float]:
    k = np.arange(1, len(spectrum) + 1)
    p = spectrum.powers
    radius = np.dot(p, k) / np.dot(p, k ** 2) * np.max(np.abs(spectrum.frequencies - k * nominal_omega0))
    return nominal_omega0 - radius, nominal_omega0 + radius


def chs(spectrum: LineSpectrum, order: Optional[int] = None, nominal_omega0: Optional[float] = None) -> ChsResult:
    """Closest harmonic spectrum of a line spectrum

    q_L is piecewise quadratic in omega0 with breakpoints omega_k / (l + 1/2). On every piece the assignment
    is fixed and the minimizer is sum p l omega / sum p l^2 clipped to the piece, so enumerating the pieces of
    (0, omega_K + d] finds the global minimum exactly.

    Parameters
    ----------
    spectrum : LineSpectrum
        Input line spectrum.
    order : Optional[int]
        Maximal harmonic order L. Defaults to `maximal_harmonic_order`.
    nominal_omega0 : Optional[float]
        Unperturbed fundamental. When given, a local minimizer other than the global one inside the
        perturbation interval around it is reported as `competing_minimum`.

    Returns
    -------
    : ChsResult
    """
    frequencies, powers = spectrum.frequencies, spectrum.powers
    if order is None:
        order = maximal_harmonic_order(frequencies)
    if order < 1:
        raise SignalValueError("Harmonic order must be at least 1.")
    gap = minimum_gap(frequencies)
    boundaries = _assignment_cells(frequencies, order, frequencies[-1] + gap)

    candidates = []
    local_minima = []
    for lower, upper in zip(boundaries[:-1], boundaries[1:]):
        harmonics = nearest_harmonics((lower + upper) / 2, frequencies, order)
        stationary = np.dot(powers * harmonics, frequencies) / np.dot(powers, harmonics ** 2)
        omega = float(np.clip(stationary, lower, upper))
        if omega <= 0:
            continue
        if lower < stationary < upper:
            local_minima.append(omega)
        candidates.append((q_cost(omega, spectrum, order), omega))

    best_cost = min(cost for cost, _ in candidates)
    tolerance = TIE_RTOL * max(best_cost, TIE_RTOL * spectrum.total_mass * frequencies[-1] ** 2)
    minimizers = sorted({omega for cost, omega in candidates if cost - best_cost <= tolerance})
    distinct = [minimizers[0]]
    for omega in minimizers[1:]:
        if omega - distinct[-1] > TIE_RTOL * omega:
            distinct.append(omega)
    omega0 = distinct[0]
    tie = len(distinct) > 1
    if tie:
        logger.warning(f"Closest harmonic spectrum is not unique: cost {best_cost:.6e} at {distinct}.")

    assignment = nearest_harmonics(omega0, frequencies, order, prefer_larger=True)
    harmonic_powers = np.bincount(assignment - 1, weights=powers, minlength=order)

    competing = None
    if nominal_omega0 is not None:
        low, high = _prop_interval(spectrum, nominal_omega0)
        inside = [w for w in local_minima if low <= w <= high and abs(w - omega0) > TIE_RTOL * omega0]
        if inside:
            competing = inside[0]
            logger.warning(f"Local minimum {competing:.12f} competes with the CHS fundamental {omega0:.12f}.")

    return ChsResult(
        omega0=omega0, harmonic_powers=_frozen(harmonic_powers), assignment=_frozen(assignment, dtype=int),
        cost=q_cost(omega0, spectrum, order), order=order, tie=tie,
        local_minima=tuple(sorted(set(local_minima))), competing_minimum=competing)


def _balanced_masses(phi0: LineSpectrum, phi1: LineSpectrum) -> Tuple[np.ndarray, np.ndarray]:
    m0, m1 = phi0.masses, phi1.masses
    total0, total1 = m0.sum(), m1.sum()
    if abs(total0 - total1) > MASS_RTOL * max(total0, total1):
        raise TransportError(f"Spectra carry different total mass: {total0:.12e} vs {total1:.12e}.")
    return m0, m1 * (total0 / total1)


def omt_distance(phi0: LineSpectrum, phi1: LineSpectrum) -> Tuple[float, TransportPlan]:
    """Optimal transport cost with ground cost (omega - omega')^2 and the optimal plan

    In one dimension with a convex ground cost the monotone (north-west corner) coupling is optimal. It is
    built from the merged cumulative masses of both spectra. Target masses are rescaled to the source total
    when the totals agree within 1e-9.

    Raises
    ------
    TransportError
        If the total masses differ by more than 1e-9 relative.
    """
    m0, m1 = _balanced_masses(phi0, phi1)
    cumulative0 = np.cumsum(m0)
    cumulative1 = np.cumsum(m1)
    cumulative1[-1] = cumulative0[-1]
    breakpoints = np.unique(np.concatenate(([0.0], cumulative0, cumulative1)))
    widths = np.diff(breakpoints)
    midpoints = breakpoints[:-1] + widths / 2
    sources = np.minimum(np.searchsorted(cumulative0, midpoints), m0.size - 1)
    targets = np.minimum(np.searchsorted(cumulative1, midpoints), m1.size - 1)
    keep = widths > 0
    plan = TransportPlan(
        sources=sources[keep], targets=targets[keep], masses=widths[keep],
        n_sources=m0.size, n_targets=m1.size)
    cost = float(np.sum(plan.masses * (phi0.frequencies[plan.sources] - phi1.frequencies[plan.targets]) ** 2))
    return cost, plan


def transport_lp(phi0: LineSpectrum, phi1: LineSpectrum,
                 ground_cost: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
                 ) -> Tuple[float, TransportPlan]:
    """Monge-Kantorovich problem solved as a linear program (HiGHS dual simplex)

    Used to check `omt_distance` and for ground costs other than the quadratic one. The simplex method ends on a
    vertex of the transportation polytope, so the plan is exact up to rounding.
    """
    m0, m1 = _balanced_masses(phi0, phi1)
    if ground_cost is None:
        ground_cost = lambda a, b: (a - b) ** 2  # noqa: E731
    costs = ground_cost(phi0.frequencies[:, None], phi1.frequencies[None, :])
    n0, n1 = m0.size, m1.size
    rows = np.kron(np.eye(n0), np.ones((1, n1)))
    columns = np.kron(np.ones((1, n0)), np.eye(n1))
    result = scipy.optimize.linprog(
        costs.ravel(), A_eq=np.vstack([rows, columns]), b_eq=np.concatenate([m0, m1]),
        bounds=(0, None), method="highs-ds")
    if not result.success:
        raise TransportError(f"Transport linear program failed: {result.message}")
    flat = np.asarray(result.x).reshape(n0, n1)
    sources, targets = np.nonzero(flat > 0)
    plan = TransportPlan(sources=sources, targets=targets, masses=flat[sources, targets], n_sources=n0, n_targets=n1)
    return float(result.fun), plan
