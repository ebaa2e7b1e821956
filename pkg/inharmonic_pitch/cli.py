"""Command line interface: synthesize signals, tabulate bounds and criteria, estimate pitch, run Monte Carlo studies

Every subcommand writes one CSV table to --out, or to stdout when --out is omitted or "-".
"""
# Standard
import argparse
import dataclasses
import logging
import math
import os
import sys
from typing import List, Optional, Sequence
# Installed
import numpy as np
import pandas as pd
# Local
from inharmonic_pitch.bounds import approximation_curves, compute_bound_report
from inharmonic_pitch.constants import (
    DEFAULT_N_COMPONENTS,
    DEFAULT_N_SAMPLES,
    DEFAULT_OMEGA0,
    DEFAULT_RHO,
    DEFAULT_SNR_DB,
    CliEnv,
    EstimatorName,
    ExitStatus,
    PhaseRule,
)
from inharmonic_pitch.errors import ConfigError, InharmonicPitchError, SignalValueError
from inharmonic_pitch.estimators import SearchConfig, anls, chs_plugin, ml_map_hybrid, mmle_harmonic, unstructured_mle
from inharmonic_pitch.experiment import load_experiment_config, run_experiment, write_csv
from inharmonic_pitch.signals import (
    ComplexSignal,
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

SIGNAL_COLUMNS = ("t", "real", "imag")


class _ArgumentParser(argparse.ArgumentParser):
    """Raises ConfigError instead of exiting so usage errors share the exit status mapping"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--components", type=int, default=DEFAULT_N_COMPONENTS, help="Number of components K")
    parser.add_argument("--omega0", type=float, default=DEFAULT_OMEGA0, help="Nominal fundamental in rad/sample")
    parser.add_argument("--beta", type=float, default=0.0, help="String stiffness of the string model")
    parser.add_argument("--sigma2-delta", type=float, default=None,
                        help="Inharmonicity variance of the stochastic model")
    parser.add_argument("--rho", type=float, default=DEFAULT_RHO, help="Decay of the Gaussian bell amplitudes")
    parser.add_argument("--amplitudes", type=float, nargs="+", default=None, help="Explicit amplitudes r_1..r_K")
    parser.add_argument("--phase-rule", choices=[r.value for r in PhaseRule], default=PhaseRule.ZERO.value,
                        help="Initial phases: zero or drawn uniformly on [-pi, pi) from --seed")
    parser.add_argument("--n-samples", type=int, default=DEFAULT_N_SAMPLES, help="Number of samples N")
    parser.add_argument("--snr-db", type=float, default=DEFAULT_SNR_DB, help="Signal to noise ratio in dB")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="inharmonic-pitch", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="Base seed (overrides a config's base_seed)")
    parser.add_argument("--threads", type=int, default=1, help="Worker processes for Monte Carlo trials")
    parser.add_argument("--out", default=None, help="Output CSV path; '-' or omitted writes to stdout")
    parser.add_argument("--log-level", default=None,
                        help=f"Logging level; defaults to ${CliEnv.CONSOLE_LOG_LEVEL.value} or INFO")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    synth = subparsers.add_parser("synth", help="Write a synthetic signal as t, real, imag columns")
    _add_model_arguments(synth)
    synth.add_argument("--noiseless", action="store_true", help="Do not add measurement noise")

    bounds = subparsers.add_parser("bounds", help="Write every applicable bound for a model")
    _add_model_arguments(bounds)

    costs = subparsers.add_parser(
        "costs", help="Write the l2 and transport criteria over a fundamental grid and both approximating spectra")
    _add_model_arguments(costs)
    costs.add_argument("--lower", type=float, default=None, help="Lowest fundamental; default omega0 / 2")
    costs.add_argument("--upper", type=float, default=None,
                       help="Highest fundamental; default 3 omega0 / 2, capped below pi / K")
    costs.add_argument("--points", type=int, default=2001, help="Number of grid fundamentals")

    estimate = subparsers.add_parser("estimate", help="Estimate the fundamental of a signal CSV")
    estimate.add_argument("input", help="Signal CSV with t, real, imag columns")
    estimate.add_argument("--estimator", required=True, choices=[e.value for e in EstimatorName])
    estimate.add_argument("--components", type=int, default=DEFAULT_N_COMPONENTS,
                          help="Model order L, or number of sinusoids K")
    estimate.add_argument("--sigma2-delta", type=float, default=None, help="Prior inharmonicity variance (mlmap)")

    mc = subparsers.add_parser("mc", help="Run a Monte Carlo study from a JSON config")
    mc.add_argument("config", help="Experiment config JSON file")
    mc.add_argument("--trials-out", default=None, help="Optional per-trial CSV path")
    mc.add_argument("--progress", action="store_true", help="Show a progress bar")
    mc.add_argument("--timing", action="store_true", help="Add the wall time of every estimator call to --trials-out")
    return parser


def _model_sinusoids(args: argparse.Namespace) -> SinusoidSet:
    """Sinusoids of the requested model; stochastic models draw their inharmonicity from --seed"""
    seed = args.seed or 0
    if args.amplitudes is not None:
        if len(args.amplitudes) != args.components:
            raise ConfigError(f"--amplitudes needs {args.components} values, got {len(args.amplitudes)}.")
        amplitudes = np.asarray(args.amplitudes, dtype=float)
    else:
        amplitudes = gaussian_bell_amplitudes(args.components, args.rho)
    if args.phase_rule == PhaseRule.ZERO.value:
        phases = np.zeros(args.components)
    else:
        phases = make_rng(derive_seed(seed, 0)).uniform(-np.pi, np.pi, args.components)
    try:
        if args.sigma2_delta is not None and args.command in ("synth", "costs"):
            model = StochasticPitchModel(args.omega0, amplitudes, phases, args.sigma2_delta,
                                         snr_to_noise_var(amplitudes, args.snr_db))
            return model.realize(draw_inharmonicity(model, derive_seed(seed, 1)))
        return SinusoidSet(amplitudes, phases, string_model_frequencies(args.omega0, args.beta, args.components))
    except SignalValueError as err:
        raise ConfigError(f"Invalid model: {err}") from err


def _open_output(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout
    return path


def run_synth(args: argparse.Namespace) -> pd.DataFrame:
    sinusoids = _model_sinusoids(args)
    signal = synth_sinusoids(sinusoids, args.n_samples)
    if not args.noiseless:
        sigma2 = snr_to_noise_var(sinusoids.amplitudes, args.snr_db)
        signal = add_noise(signal, sigma2, derive_seed(args.seed or 0, 2))
    return pd.DataFrame({"t": np.arange(signal.n), "real": signal.samples.real, "imag": signal.samples.imag})


def run_bounds(args: argparse.Namespace) -> pd.DataFrame:
    sinusoids = _model_sinusoids(args)
    sigma2 = snr_to_noise_var(sinusoids.amplitudes, args.snr_db)
    report = compute_bound_report(sinusoids, args.n_samples, sigma2, nominal_omega0=args.omega0,
                                  sigma2_delta=args.sigma2_delta)
    rows = [("omega0_pseudo", report.omega0_pseudo), ("omega0_chs", report.omega0_chs), ("sigma2", report.sigma2)]
    rows += report.bound_items()
    if report.ambiguous:
        logger.warning("The pseudo-true fundamental is ambiguous; MCRLB values refer to the lower residual.")
    return pd.DataFrame(rows, columns=["bound_name", "bound_value"])


def run_costs(args: argparse.Namespace) -> pd.DataFrame:
    """Long table with columns curve, omega, value

    Curves: l2_criterion and transport_cost over the grid, the minimizers l2_minimum and chs_minimum
    (value = criterion at the minimizer) and the line spectra signal_spectrum, l2_spectrum and chs_spectrum
    (value = power).
    """
    sinusoids = _model_sinusoids(args)
    if args.points < 2:
        raise ConfigError(f"--points must be at least 2, got {args.points}.")
    lower = args.lower if args.lower is not None else args.omega0 / 2
    upper = args.upper if args.upper is not None else min(1.5 * args.omega0, math.pi / args.components * (1 - 1e-9))
    if not 0 < lower < upper:
        raise ConfigError(f"Need 0 < --lower < --upper, got {lower} and {upper}.")
    curves = approximation_curves(sinusoids, args.n_samples, np.linspace(lower, upper, args.points))

    def block(name: str, omegas, values) -> pd.DataFrame:
        return pd.DataFrame({"curve": name, "omega": np.atleast_1d(omegas), "value": np.atleast_1d(values)})

    pseudo, closest = curves.pseudo, curves.closest
    return pd.concat([
        block("l2_criterion", curves.omegas, curves.l2_criterion),
        block("transport_cost", curves.omegas, curves.transport_cost),
        block("l2_minimum", pseudo.theta0.omega0, pseudo.fit_residual),
        block("chs_minimum", closest.omega0, closest.cost),
        block("signal_spectrum", curves.spectrum.frequencies, curves.spectrum.powers),
        block("l2_spectrum", curves.l2_spectrum.frequencies, curves.l2_spectrum.powers),
        block("chs_spectrum", closest.spectrum.frequencies, closest.spectrum.powers),
    ], ignore_index=True)


def read_signal(path: str) -> ComplexSignal:
    """Read a t, real, imag CSV as written by the synth subcommand"""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ConfigError(f"Signal file {path} is not a readable CSV: {err}") from err
    missing = [c for c in SIGNAL_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"Signal file {path} lacks columns: {', '.join(missing)}.")
    if not np.array_equal(frame["t"].to_numpy(), np.arange(len(frame))):
        raise ConfigError(f"Signal file {path} must list t = 0..N-1 in order.")
    return ComplexSignal(frame["real"].to_numpy(dtype=float) + 1j * frame["imag"].to_numpy(dtype=float))


def run_estimate(args: argparse.Namespace) -> pd.DataFrame:
    y = read_signal(args.input)
    name = EstimatorName(args.estimator)
    cfg = SearchConfig()
    if name is EstimatorName.MLMAP:
        if args.sigma2_delta is None:
            raise ConfigError("The mlmap estimator needs --sigma2-delta.")
        result = ml_map_hybrid(y, args.components, args.sigma2_delta, cfg)
    else:
        estimator = {EstimatorName.MMLE: mmle_harmonic, EstimatorName.ANLS: anls,
                     EstimatorName.UNSTRUCTURED: unstructured_mle, EstimatorName.CHS: chs_plugin}[name]
        result = estimator(y, args.components, cfg)
    diagnostics = result.diagnostics
    if not diagnostics.converged:
        logger.warning(f"{name.value} did not converge: {diagnostics.message}")
    delta = result.delta_hat if result.delta_hat is not None else np.full(result.frequencies.size, math.nan)
    return pd.DataFrame({
        "estimator": name.value,
        "omega0_hat": result.omega0_hat,
        "noise_var_hat": result.noise_var_hat,
        "converged": diagnostics.converged,
        "iterations": diagnostics.iterations,
        "component": np.arange(1, result.frequencies.size + 1),
        "frequency": result.frequencies,
        "amplitude": result.amplitudes,
        "phase": result.phases,
        "delta_hat": delta,
    })


def run_mc(args: argparse.Namespace) -> pd.DataFrame:
    cfg = load_experiment_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.out is not None:
        overrides["output"] = args.out
    if args.trials_out is not None:
        overrides["trials_output"] = args.trials_out
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    result = run_experiment(cfg, threads=args.threads, progress=args.progress)
    if cfg.trials_output:
        write_csv(result.trials_frame(timing=args.timing), cfg.trials_output)
        logger.info(f"Wrote {len(result.records)} trial records to {cfg.trials_output}.")
    args.out = cfg.output
    return result.summary


COMMANDS = {
    "synth": run_synth, "bounds": run_bounds, "costs": run_costs, "estimate": run_estimate, "mc": run_mc,
}


def _configure_logging(level: Optional[str]) -> None:
    level = (level or os.environ.get(CliEnv.CONSOLE_LOG_LEVEL.value) or "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"Unknown log level {level!r}.")
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the inharmonic-pitch console script

    Returns
    -------
    : int
        0 on success, 1 on a runtime failure, 2 on a usage or configuration error.
    """
    argv: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
        if args.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {args.threads}.")
        table = COMMANDS[args.command](args)
        write_csv(table, _open_output(args.out))
    except ConfigError as err:
        logging.basicConfig(stream=sys.stderr)
        logger.error(str(err))
        return ExitStatus.USAGE_ERROR.value
    except (InharmonicPitchError, OSError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        return ExitStatus.RUNTIME_FAILURE.value
    return ExitStatus.SUCCESS.value


if __name__ == "__main__":
    sys.exit(main())
