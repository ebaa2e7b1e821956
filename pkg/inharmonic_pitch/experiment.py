"""Seeded Monte Carlo studies of the pitch estimators against their theoretical references and bounds

A study sweeps one parameter (string stiffness beta, sample count N, inharmonicity variance sigma2_delta or SNR)
and runs a fixed number of independent trials per sweep point. Every trial draws its phases, inharmonicity and
noise from a generator seeded by (base_seed, sweep_index, trial_index), so results do not depend on how trials
are scheduled across worker processes.
"""
# Standard
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import logging
import math
from pathlib import Path
import time
import warnings
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union
# Installed
import numpy as np
import pandas as pd
from tqdm import tqdm
# Local
from inharmonic_pitch import bounds
from inharmonic_pitch.constants import (
    DEFAULT_N_COMPONENTS,
    DEFAULT_N_SAMPLES,
    DEFAULT_OMEGA0,
    DEFAULT_RHO,
    DEFAULT_SNR_DB,
    DEFAULT_TRIALS_DETERMINISTIC,
    DEFAULT_TRIALS_STOCHASTIC,
    SUMMARY_COLUMNS,
    TIMING_COLUMN,
    TRIAL_COLUMNS,
    AmplitudeRule,
    EstimatorName,
    PhaseRule,
    Scenario,
    Target,
)
from inharmonic_pitch.errors import BoundComputationError, ConditioningError, ConfigError, EstimationError, SignalValueError
from inharmonic_pitch.estimators import (
    EstimateResult,
    SearchConfig,
    anls,
    chs_plugin,
    harmonic_fit,
    ml_map_hybrid,
    mmle_harmonic,
    unstructured_mle,
)
from inharmonic_pitch.omt import LineSpectrum, chs
from inharmonic_pitch.signals import (
    SinusoidSet,
    StochasticPitchModel,
    add_noise,
    derive_seed,
    draw_inharmonicity,
    gaussian_bell_amplitudes,
    make_rng,
    snr_to_noise_var,
    string_model_frequencies,
    synth_sinusoids,
)

logger = logging.getLogger(__name__)

# Stream index reserved for phases shared by all trials (uniform-fixed rule)
FIXED_PHASE_STREAM = 2 ** 32 - 1

STOCHASTIC_SCENARIOS = (Scenario.STOCHASTIC_SIGMA_SWEEP,)

SCENARIO_DEFAULTS: Dict[Scenario, Dict[str, Any]] = {
    Scenario.STRING_BETA_SWEEP: {
        "trials": DEFAULT_TRIALS_DETERMINISTIC,
        "estimators": ["mmle", "anls", "chs"],
    },
    Scenario.STRING_N_SWEEP: {
        "trials": DEFAULT_TRIALS_DETERMINISTIC,
        "beta": 5e-4,
        "estimators": ["mmle", "anls", "chs"],
    },
    Scenario.STOCHASTIC_SIGMA_SWEEP: {
        "trials": DEFAULT_TRIALS_STOCHASTIC,
        "estimators": ["mlmap", "mmle", "anls", "chs"],
    },
    Scenario.SNR_SWEEP: {
        "trials": DEFAULT_TRIALS_DETERMINISTIC,
        "beta": 5e-4,
        "estimators": ["mmle", "anls", "unstructured", "chs"],
    },
}

COMMON_DEFAULTS: Dict[str, Any] = {
    "n_components": DEFAULT_N_COMPONENTS,
    "omega0": DEFAULT_OMEGA0,
    "amplitude_rule": AmplitudeRule.GAUSSIAN_BELL.value,
    "rho": DEFAULT_RHO,
    "amplitudes": None,
    "phase_rule": PhaseRule.UNIFORM_PER_TRIAL.value,
    "beta": 0.0,
    "sigma2_delta": 0.0,
    "n_samples": DEFAULT_N_SAMPLES,
    "snr_db": DEFAULT_SNR_DB,
    "base_seed": 0,
    "mlmap_sigma2_delta": None,
    "search": {},
    "output": None,
    "trials_output": None,
}

REQUIRED_KEYS = ("scenario", "sweep")


@dataclass(frozen=True)
class SweepPoint:
    """Signal settings at one sweep value"""
    beta: float
    n_samples: int
    sigma2_delta: float
    snr_db: float


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated Monte Carlo study configuration; see `load_experiment_config` for the JSON schema"""
    scenario: Scenario
    sweep: Tuple[float, ...]
    n_components: int = DEFAULT_N_COMPONENTS
    omega0: float = DEFAULT_OMEGA0
    amplitude_rule: AmplitudeRule = AmplitudeRule.GAUSSIAN_BELL
    rho: float = DEFAULT_RHO
    amplitudes: Optional[Tuple[float, ...]] = None
    phase_rule: PhaseRule = PhaseRule.UNIFORM_PER_TRIAL
    beta: float = 0.0
    sigma2_delta: float = 0.0
    n_samples: int = DEFAULT_N_SAMPLES
    snr_db: float = DEFAULT_SNR_DB
    trials: int = DEFAULT_TRIALS_DETERMINISTIC
    base_seed: int = 0
    estimators: Tuple[EstimatorName, ...] = (EstimatorName.MMLE, EstimatorName.ANLS, EstimatorName.CHS)
    mlmap_sigma2_delta: Optional[float] = None
    search: SearchConfig = field(default_factory=SearchConfig)
    output: Optional[str] = None
    trials_output: Optional[str] = None

    def __post_init__(self):
        if not self.sweep:
            raise ConfigError("The sweep grid is empty.")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}.")
        if self.n_components < 1:
            raise ConfigError(f"n_components must be at least 1, got {self.n_components}.")
        if not self.estimators:
            raise ConfigError("No estimators configured.")
        if self.amplitude_rule is AmplitudeRule.EXPLICIT:
            if self.amplitudes is None or len(self.amplitudes) != self.n_components:
                raise ConfigError(f"amplitude_rule 'explicit' needs {self.n_components} amplitudes.")
            if any(a <= 0 for a in self.amplitudes):
                raise ConfigError("Explicit amplitudes must be positive.")
        for index in range(len(self.sweep)):
            point = self.sweep_point(index)
            if point.n_samples < 2:
                raise ConfigError(f"Sweep point {index} has N = {point.n_samples} < 2 samples.")
            if point.sigma2_delta < 0:
                raise ConfigError(f"Sweep point {index} has a negative sigma2_delta.")
            if not self.is_stochastic:
                try:
                    string_model_frequencies(self.omega0, point.beta, self.n_components)
                except SignalValueError as err:
                    raise ConfigError(f"Sweep point {index}: {err}") from err
            elif self.n_components * self.omega0 >= math.pi or self.omega0 <= 0:
                raise ConfigError("All harmonics k omega0, k <= K, must lie in (0, pi).")
            if EstimatorName.MLMAP in self.estimators and not self.mlmap_variance(point) > 0:
                raise ConfigError(f"The ML/MAP estimator needs a positive sigma2_delta at sweep point {index}.")

    @property
    def is_stochastic(self) -> bool:
        return self.scenario in STOCHASTIC_SCENARIOS

    @property
    def targets(self) -> Tuple[Target, ...]:
        return (Target.OMEGA0, Target.OMEGA1) if self.is_stochastic else (Target.OMEGA0,)

    def sweep_point(self, index: int) -> SweepPoint:
        value = self.sweep[index]
        point = SweepPoint(beta=self.beta, n_samples=self.n_samples, sigma2_delta=self.sigma2_delta,
                           snr_db=self.snr_db)
        if self.scenario is Scenario.STRING_BETA_SWEEP:
            return SweepPoint(float(value), point.n_samples, point.sigma2_delta, point.snr_db)
        if self.scenario is Scenario.STRING_N_SWEEP:
            return SweepPoint(point.beta, int(value), point.sigma2_delta, point.snr_db)
        if self.scenario is Scenario.STOCHASTIC_SIGMA_SWEEP:
            return SweepPoint(point.beta, point.n_samples, float(value), point.snr_db)
        return SweepPoint(point.beta, point.n_samples, point.sigma2_delta, float(value))

    def mlmap_variance(self, point: SweepPoint) -> float:
        """Prior inharmonicity variance handed to the ML/MAP estimator"""
        return self.mlmap_sigma2_delta if self.mlmap_sigma2_delta is not None else point.sigma2_delta

    def base_amplitudes(self) -> np.ndarray:
        if self.amplitude_rule is AmplitudeRule.EXPLICIT:
            return np.asarray(self.amplitudes, dtype=float)
        if self.amplitude_rule is AmplitudeRule.UNIT:
            return np.ones(self.n_components)
        return gaussian_bell_amplitudes(self.n_components, self.rho)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible form accepted by `experiment_config_from_dict`"""
        data = asdict(self)
        data["scenario"] = self.scenario.value
        data["sweep"] = list(self.sweep)
        data["amplitude_rule"] = self.amplitude_rule.value
        data["phase_rule"] = self.phase_rule.value
        data["amplitudes"] = list(self.amplitudes) if self.amplitudes is not None else None
        data["estimators"] = [e.value for e in self.estimators]
        data["search"] = {k: v for k, v in asdict(self.search).items() if v is not None}
        return data


def _enum_value(enum_type, value, key: str):
    try:
        return enum_type(value)
    except ValueError:
        valid = ", ".join(repr(member.value) for member in enum_type)
        raise ConfigError(f"Unknown {key} {value!r}; expected one of {valid}.") from None


def experiment_config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a decoded JSON object

    Scenario defaults are merged under the user values, so any key may be overridden.

    Raises
    ------
    ConfigError
        On missing or unknown keys, unknown names and invalid values.
    """
    if not isinstance(data, dict):
        raise ConfigError("An experiment config must be a JSON object.")
    missing = [key for key in REQUIRED_KEYS if key not in data]
    if missing:
        raise ConfigError(f"Experiment config is missing required keys: {', '.join(missing)}.")
    scenario = _enum_value(Scenario, data["scenario"], "scenario")
    allowed = set(REQUIRED_KEYS) | set(COMMON_DEFAULTS) | {"trials", "estimators"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown experiment config keys: {', '.join(unknown)}.")
    merged = {**COMMON_DEFAULTS, **SCENARIO_DEFAULTS[scenario], **data}

    sweep = merged["sweep"]
    if not isinstance(sweep, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in sweep):
        raise ConfigError("sweep must be a list of numbers.")
    estimators = merged["estimators"]
    if not isinstance(estimators, list):
        raise ConfigError("estimators must be a list of estimator names.")
    search = merged["search"] or {}
    try:
        search_config = SearchConfig(**search)
    except (TypeError, SignalValueError) as err:
        raise ConfigError(f"Invalid search settings: {err}") from err
    amplitudes = merged["amplitudes"]
    try:
        return ExperimentConfig(
            scenario=scenario,
            sweep=tuple(float(v) for v in sweep),
            n_components=int(merged["n_components"]),
            omega0=float(merged["omega0"]),
            amplitude_rule=_enum_value(AmplitudeRule, merged["amplitude_rule"], "amplitude_rule"),
            rho=float(merged["rho"]),
            amplitudes=tuple(float(a) for a in amplitudes) if amplitudes is not None else None,
            phase_rule=_enum_value(PhaseRule, merged["phase_rule"], "phase_rule"),
            beta=float(merged["beta"]),
            sigma2_delta=float(merged["sigma2_delta"]),
            n_samples=int(merged["n_samples"]),
            snr_db=float(merged["snr_db"]),
            trials=int(merged["trials"]),
            base_seed=int(merged["base_seed"]),
            estimators=tuple(_enum_value(EstimatorName, name, "estimator") for name in estimators),
            mlmap_sigma2_delta=(float(merged["mlmap_sigma2_delta"])
                                if merged["mlmap_sigma2_delta"] is not None else None),
            search=search_config,
            output=merged["output"],
            trials_output=merged["trials_output"],
        )
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"Invalid experiment config value: {err}") from err


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read an experiment config from a JSON file

    Keys (all optional except scenario and sweep): scenario, sweep, n_components, omega0, amplitude_rule, rho,
    amplitudes, phase_rule, beta, sigma2_delta, n_samples, snr_db, trials, base_seed, estimators,
    mlmap_sigma2_delta, search, output, trials_output.
    """
    try:
        with open(path, encoding="utf-8") as config_file:
            data = json.load(config_file)
    except json.JSONDecodeError as err:
        raise ConfigError(f"Experiment config {path} is not valid JSON: {err}") from err
    return experiment_config_from_dict(data)


@dataclass(frozen=True)
class TrialRecord:
    """One estimator output in one trial, scored against one target

    squared_error is (estimate - reference)^2; failed records carry NaN estimates and are left out of moments.
    bound_value is the per-trial theoretical variance (or MSE) of the estimator for this target.
    """
    sweep_value: float
    sweep_index: int
    trial: int
    estimator: EstimatorName
    target: Target
    estimate: float
    reference: float
    squared_error: float
    converged: bool
    failed: bool
    wall_time: float
    bound_name: str = ""
    bound_value: float = math.nan

    @property
    def label(self) -> str:
        """Estimator column of the summary: name, or name@omega1 for the first-component target"""
        if self.target is Target.OMEGA0:
            return self.estimator.value
        return f"{self.estimator.value}@{self.target.value}"

    def to_row(self) -> Dict[str, Any]:
        return {
            "sweep_value": self.sweep_value, "sweep_index": self.sweep_index, "trial": self.trial,
            "estimator": self.estimator.value, "target": self.target.value, "estimate": self.estimate,
            "reference": self.reference, "squared_error": self.squared_error, "converged": self.converged,
            "failed": self.failed, TIMING_COLUMN: self.wall_time, "bound_name": self.bound_name,
            "bound_value": self.bound_value,
        }


@dataclass(frozen=True)
class _TrialSignal:
    """sinusoids is None when the inharmonicity draw leaves no valid line spectrum"""
    sinusoids: Optional[SinusoidSet]
    sigma2: float
    delta: Optional[np.ndarray]
    rejection: str = ""


def _trial_phases(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.phase_rule is PhaseRule.ZERO:
        return np.zeros(cfg.n_components)
    if cfg.phase_rule is PhaseRule.UNIFORM_FIXED:
        return make_rng(derive_seed(cfg.base_seed, FIXED_PHASE_STREAM)).uniform(-np.pi, np.pi, cfg.n_components)
    return rng.uniform(-np.pi, np.pi, cfg.n_components)


def _trial_signal(cfg: ExperimentConfig, point: SweepPoint, rng: np.random.Generator) -> _TrialSignal:
    """Draw phases and, for stochastic studies, inharmonicity; consumes rng in a fixed order"""
    amplitudes = cfg.base_amplitudes()
    phases = _trial_phases(cfg, rng)
    sigma2 = snr_to_noise_var(amplitudes, point.snr_db)
    if cfg.is_stochastic:
        model = StochasticPitchModel(cfg.omega0, amplitudes, phases, point.sigma2_delta, sigma2)
        delta = draw_inharmonicity(model, rng)
        try:
            return _TrialSignal(model.realize(delta), sigma2, delta)
        except SignalValueError as err:
            # Components crossed each other or left [-pi, pi)
            return _TrialSignal(None, sigma2, delta, rejection=str(err))
    frequencies = string_model_frequencies(cfg.omega0, point.beta, cfg.n_components)
    return _TrialSignal(SinusoidSet(amplitudes, phases, frequencies), sigma2, None)


def _estimate(name: EstimatorName, y, cfg: ExperimentConfig, point: SweepPoint) -> EstimateResult:
    if name is EstimatorName.MMLE:
        return mmle_harmonic(y, cfg.n_components, cfg.search)
    if name is EstimatorName.ANLS:
        return anls(y, cfg.n_components, cfg.search)
    if name is EstimatorName.UNSTRUCTURED:
        return unstructured_mle(y, cfg.n_components, cfg.search)
    if name is EstimatorName.CHS:
        return chs_plugin(y, cfg.n_components, cfg.search)
    return ml_map_hybrid(y, cfg.n_components, cfg.mlmap_variance(point), cfg.search)


def _harmonic_fit_variance(variances: np.ndarray) -> float:
    """Variance of sum k w_k / sum k^2 for independent w_k"""
    k = np.arange(1, variances.size + 1)
    return float(np.sum(k ** 2 * variances) / np.sum(k ** 2) ** 2)


def bound_name(cfg: ExperimentConfig, name: EstimatorName, target: Target) -> str:
    """Name of the theoretical bound an estimator is compared with for one target"""
    if name is EstimatorName.MLMAP:
        return f"hcrlb_{target.value}"
    if name is EstimatorName.UNSTRUCTURED:
        return "crlb_unstructured_1" if target is Target.OMEGA1 else "crlb_unstructured_fit"
    if cfg.is_stochastic:
        # Misspecified estimators are scored by their MSE, bias included
        return "chs_mse" if name is EstimatorName.CHS else "mcrlb_mse"
    return "chs_asymptotic_var" if name is EstimatorName.CHS else "mcrlb_exact"


class _References:
    """Per-trial theoretical references and bounds, computed lazily from the noiseless signal

    A reference or bound that cannot be computed is NaN; the failure is logged as a warning.
    """

    def __init__(self, cfg: ExperimentConfig, point: SweepPoint, signal: _TrialSignal, x):
        self.cfg = cfg
        self.x = x
        self.point = point
        self.signal = signal
        self._pseudo = None
        self._chs = None
        self._hcrlb = None

    def pseudo(self) -> Tuple[float, float]:
        """(pseudo-true fundamental, exact MCRLB)"""
        if self._pseudo is None:
            try:
                pseudo = bounds.pseudo_true(self.x, self.cfg.n_components, self.signal.sigma2, self.cfg.search)
            except BoundComputationError as err:
                logger.warning(f"Pseudo-true fundamental unavailable: {err}")
                self._pseudo = (math.nan, math.nan)
                return self._pseudo
            try:
                mcrlb = bounds.mcrlb_exact(pseudo, self.x, self.signal.sigma2).omega0
            except BoundComputationError as err:
                logger.warning(f"MCRLB unavailable: {err}")
                mcrlb = math.nan
            self._pseudo = (pseudo.theta0.omega0, mcrlb)
        return self._pseudo

    def closest(self) -> Tuple[float, float]:
        """(CHS fundamental, asymptotic CHS variance)"""
        if self._chs is None:
            sinusoids = self.signal.sinusoids
            try:
                closest = chs(LineSpectrum.from_sinusoids(sinusoids), nominal_omega0=self.cfg.omega0)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    variance = bounds.chs_asymptotic_var(sinusoids, self.point.n_samples, self.signal.sigma2,
                                                         self.cfg.omega0)
                self._chs = (closest.omega0, variance)
            except SignalValueError as err:
                # A negative component frequency has no line spectrum
                logger.warning(f"Closest harmonic spectrum unavailable: {err}")
                self._chs = (math.nan, math.nan)
        return self._chs

    def hybrid(self) -> Tuple[float, float]:
        """(HCRLB of omega0, HCRLB of omega_1)"""
        if self._hcrlb is None:
            sinusoids = self.signal.sinusoids
            model = StochasticPitchModel(self.cfg.omega0, sinusoids.amplitudes, sinusoids.phases,
                                         self.cfg.mlmap_variance(self.point), self.signal.sigma2)
            try:
                result = bounds.hcrlb(model, self.point.n_samples)
                self._hcrlb = (result.omega0, result.omega1)
            except BoundComputationError as err:
                logger.warning(f"HCRLB unavailable: {err}")
                self._hcrlb = (math.nan, math.nan)
        return self._hcrlb

    def unstructured(self) -> np.ndarray:
        return bounds.crlb_unstructured(self.signal.sinusoids.amplitudes, self.point.n_samples, self.signal.sigma2)[0]

    def deterministic(self, name: EstimatorName) -> Tuple[float, float]:
        """(reference, bound value) for the omega0 target of a deterministic study"""
        if name in (EstimatorName.MMLE, EstimatorName.ANLS):
            return self.pseudo()
        if name is EstimatorName.CHS:
            return self.closest()
        reference = harmonic_fit(self.signal.sinusoids.frequencies)
        if name is EstimatorName.UNSTRUCTURED:
            return reference, _harmonic_fit_variance(self.unstructured())
        return reference, self.hybrid()[0]

    def stochastic(self, name: EstimatorName, target: Target) -> Tuple[float, float]:
        """(reference, bound value) for a stochastic study; misspecified bounds include the bias"""
        reference = _stochastic_reference(self.cfg, self.signal, target)
        if name is EstimatorName.MLMAP:
            hcrlb_omega0, hcrlb_omega1 = self.hybrid()
            return reference, hcrlb_omega0 if target is Target.OMEGA0 else hcrlb_omega1
        if name in (EstimatorName.MMLE, EstimatorName.ANLS):
            omega0, mcrlb = self.pseudo()
            return reference, bounds.mse_misspecified(mcrlb, omega0, reference)
        if name is EstimatorName.CHS:
            omega0, variance = self.closest()
            return reference, bounds.mse_misspecified(variance, omega0, reference)
        if target is Target.OMEGA1:
            return reference, float(self.unstructured()[0])
        return reference, _harmonic_fit_variance(self.unstructured())


def _stochastic_reference(cfg: ExperimentConfig, signal: _TrialSignal, target: Target) -> float:
    return cfg.omega0 if target is Target.OMEGA0 else cfg.omega0 + float(signal.delta[0])


def _target_estimate(name: EstimatorName, target: Target, result: EstimateResult) -> float:
    """Harmonic-model estimators score their fundamental against omega_1 as well"""
    if target is Target.OMEGA1 and name in (EstimatorName.UNSTRUCTURED, EstimatorName.MLMAP):
        return float(result.frequencies[0])
    return result.omega0_hat


def _failed_draw_records(cfg: ExperimentConfig, signal: _TrialSignal, sweep_index: int,
                         trial: int) -> List[TrialRecord]:
    logger.info(f"Rejected inharmonicity draw at sweep point {sweep_index}, trial {trial}: {signal.rejection}")
    return [
        TrialRecord(
            sweep_value=cfg.sweep[sweep_index], sweep_index=sweep_index, trial=trial, estimator=name,
            target=target, estimate=math.nan, reference=_stochastic_reference(cfg, signal, target),
            squared_error=math.nan, converged=False, failed=True, wall_time=0.0,
            bound_name=bound_name(cfg, name, target), bound_value=math.nan)
        for name in cfg.estimators for target in cfg.targets
    ]


def run_trial(cfg: ExperimentConfig, sweep_index: int, trial: int) -> List[TrialRecord]:
    """Run every configured estimator on one seeded trial

    An inharmonicity draw whose components cross or leave [-pi, pi) yields failed records for every
    estimator; they count towards n_failed and are left out of the moments.
    """
    point = cfg.sweep_point(sweep_index)
    sweep_value = cfg.sweep[sweep_index]
    rng = make_rng(derive_seed(cfg.base_seed, sweep_index, trial))
    signal = _trial_signal(cfg, point, rng)
    if signal.sinusoids is None:
        return _failed_draw_records(cfg, signal, sweep_index, trial)
    x = synth_sinusoids(signal.sinusoids, point.n_samples)
    y = add_noise(x, signal.sigma2, rng)
    references = _References(cfg, point, signal, x)

    records = []
    for name in cfg.estimators:
        start = time.perf_counter()
        try:
            result = _estimate(name, y, cfg, point)
            failed = False
        except (EstimationError, ConditioningError) as err:
            logger.info(f"{name.value} failed at sweep point {sweep_index}, trial {trial}: {err}")
            result = None
            failed = True
        wall_time = time.perf_counter() - start
        for target in cfg.targets:
            if cfg.is_stochastic:
                reference, bound_value = references.stochastic(name, target)
            else:
                reference, bound_value = references.deterministic(name)
            estimate = math.nan if failed else _target_estimate(name, target, result)
            records.append(TrialRecord(
                sweep_value=sweep_value, sweep_index=sweep_index, trial=trial, estimator=name, target=target,
                estimate=estimate, reference=reference, squared_error=(estimate - reference) ** 2,
                converged=False if failed else result.diagnostics.converged, failed=failed, wall_time=wall_time,
                bound_name=bound_name(cfg, name, target), bound_value=bound_value))
    return records


def _run_trial_task(task: Tuple[ExperimentConfig, int, int]) -> List[TrialRecord]:
    return run_trial(*task)


def summarize(cfg: ExperimentConfig, records: Iterable[TrialRecord]) -> pd.DataFrame:
    """Per sweep point and estimator label: sample moments of the successful trials and the mean bound

    mse is the mean squared error, bias2 the squared mean error and variance the (ddof=0) variance of the
    error, so mse = bias2 + variance.
    """
    frame = pd.DataFrame([{**r.to_row(), "label": r.label} for r in records])
    rows = []
    for sweep_index, sweep_value in enumerate(cfg.sweep):
        for name in cfg.estimators:
            for target in cfg.targets:
                label = name.value if target is Target.OMEGA0 else f"{name.value}@{target.value}"
                group = frame[(frame["sweep_index"] == sweep_index) & (frame["label"] == label)]
                ok = group[~group["failed"] & group["reference"].notna()]
                errors = (ok["estimate"] - ok["reference"]).to_numpy()
                has_data = errors.size > 0
                rows.append({
                    "sweep_value": sweep_value,
                    "estimator": label,
                    "n_trials": int(len(group)),
                    "n_failed": int(group["failed"].sum()),
                    "mean_estimate": float(ok["estimate"].mean()) if has_data else math.nan,
                    "reference": float(ok["reference"].mean()) if has_data else math.nan,
                    "bias2": float(np.mean(errors) ** 2) if has_data else math.nan,
                    "variance": float(np.var(errors)) if has_data else math.nan,
                    "mse": float(ok["squared_error"].mean()) if has_data else math.nan,
                    "bound_name": group["bound_name"].iloc[0] if len(group) else "",
                    "bound_value": float(np.nanmean(group["bound_value"])) if group["bound_value"].notna().any()
                    else math.nan,
                })
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


@dataclass
class ExperimentResult:
    """Trial records in (sweep point, trial, estimator, target) order and the summary table"""
    records: List[TrialRecord]
    summary: pd.DataFrame

    def trials_frame(self, timing: bool = False) -> pd.DataFrame:
        """Per-trial table; `timing` appends the wall time of each estimator call"""
        columns = list(TRIAL_COLUMNS) + ([TIMING_COLUMN] if timing else [])
        return pd.DataFrame([r.to_row() for r in self.records], columns=columns)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, progress: bool = False) -> ExperimentResult:
    """Run all trials of a study and summarize them

    Parameters
    ----------
    cfg : ExperimentConfig
        Validated study configuration.
    threads : int
        Worker processes. With 1 the trials run in this process.
    progress : bool
        Show a progress bar on stderr.

    Returns
    -------
    : ExperimentResult
    """
    if threads < 1:
        raise ConfigError(f"threads must be at least 1, got {threads}.")
    tasks = [(cfg, s, t) for s in range(len(cfg.sweep)) for t in range(cfg.trials)]
    logger.info(f"Running {cfg.scenario.value}: {len(cfg.sweep)} sweep points x {cfg.trials} trials "
                f"with {threads} worker(s).")
    bar = dict(total=len(tasks), desc="Monte Carlo trials", unit="trial", disable=not progress)
    records: List[TrialRecord] = []

    def collect(trial_records: List[TrialRecord]) -> None:
        first = trial_records[0]
        if first.trial == 0:
            logger.info(f"Sweep point {first.sweep_index}: {cfg.scenario.value} value {first.sweep_value:g}.")
        records.extend(trial_records)

    if threads == 1:
        for task in tqdm(tasks, **bar):
            collect(_run_trial_task(task))
    else:
        chunksize = max(1, len(tasks) // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as executor:
            for trial_records in tqdm(executor.map(_run_trial_task, tasks, chunksize=chunksize), **bar):
                collect(trial_records)
    summary = summarize(cfg, records)
    failed = int(summary["n_failed"].sum())
    logger.info(f"Finished {len(tasks)} trials; {failed} estimator failures.")
    return ExperimentResult(records=records, summary=summary)


def write_csv(frame: pd.DataFrame, destination) -> None:
    """Write a table as UTF-8 CSV with a header row; floats keep full precision"""
    if isinstance(destination, (str, Path)):
        frame.to_csv(destination, index=False, float_format="%.17g", encoding="utf-8")
    else:
        frame.to_csv(destination, index=False, float_format="%.17g")

