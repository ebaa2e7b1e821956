"""Constant values used throughout the package."""
# Standard
from enum import Enum
import math

# ls_amp_phase rejects Fourier atom matrices below this reciprocal condition number
RCOND_THRESHOLD = 1e-10

# Bound matrices whose Jacobi-scaled reciprocal condition number falls below this are singular
FISHER_RCOND_THRESHOLD = 1e-15

# Refinement tolerance (radians) for the 1-D and K-dimensional searches
DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 20000

# Coarse fundamental grid spacing is pi / (GRID_OVERSAMPLING * L * N)
GRID_OVERSAMPLING = 10

# Periodogram length used for peak-picking is PERIODOGRAM_OVERSAMPLING * N (rounded up to a power of two)
PERIODOGRAM_OVERSAMPLING = 16

# Relative slack when testing l * d >= omega_K in the maximal harmonic order
HARMONIC_ORDER_RTOL = 1e-9

# Relative cost gap under which two local minima of the l2 criterion are ambiguous
AMBIGUITY_RTOL = 0.01

# Number of l2 criterion grid minima refined when locating the pseudo-true fundamental
PSEUDO_TRUE_CANDIDATES = 6

# Reference experiment signal
DEFAULT_OMEGA0 = math.pi / 10
DEFAULT_N_COMPONENTS = 5
DEFAULT_RHO = 0.2
DEFAULT_N_SAMPLES = 500
DEFAULT_SNR_DB = 10.0
DEFAULT_TRIALS_DETERMINISTIC = 2000
DEFAULT_TRIALS_STOCHASTIC = 1000


class Scenario(Enum):
    """Monte Carlo study scenarios and the parameter each one sweeps"""
    STRING_BETA_SWEEP = "string-beta-sweep"
    STRING_N_SWEEP = "string-N-sweep"
    STOCHASTIC_SIGMA_SWEEP = "stochastic-sigma-sweep"
    SNR_SWEEP = "snr-sweep"


class EstimatorName(Enum):
    """Valid estimator names for experiment configs and the CLI"""
    MMLE = "mmle"
    ANLS = "anls"
    UNSTRUCTURED = "unstructured"
    CHS = "chs"
    MLMAP = "mlmap"


class Target(Enum):
    """Quantities an estimator output is scored against"""
    OMEGA0 = "omega0"
    OMEGA1 = "omega1"


class AmplitudeRule(Enum):
    """Rules for the experiment component amplitudes"""
    GAUSSIAN_BELL = "gaussian-bell"
    UNIT = "unit"
    EXPLICIT = "explicit"


class PhaseRule(Enum):
    """Rules for the experiment initial phases"""
    UNIFORM_PER_TRIAL = "uniform-per-trial"
    UNIFORM_FIXED = "uniform-fixed"
    ZERO = "zero"


class CliEnv(Enum):
    """Valid environment variable names read by the command line interface"""
    CONSOLE_LOG_LEVEL = "INHARMONIC_PITCH_CONSOLE_LOG_LEVEL"


class ExitStatus(Enum):
    """Process exit codes of the command line interface"""
    SUCCESS = 0
    RUNTIME_FAILURE = 1
    USAGE_ERROR = 2


SUMMARY_COLUMNS = (
    "sweep_value",
    "estimator",
    "n_trials",
    "n_failed",
    "mean_estimate",
    "reference",
    "bias2",
    "variance",
    "mse",
    "bound_name",
    "bound_value",
)

TRIAL_COLUMNS = (
    "sweep_value",
    "sweep_index",
    "trial",
    "estimator",
    "target",
    "estimate",
    "reference",
    "squared_error",
    "converged",
    "failed",
    "bound_name",
    "bound_value",
)

# Per-trial wall time; kept out of the default trial table so repeated runs write identical files
TIMING_COLUMN = "wall_time"
