"""Tests for experiment configs and the seeded Monte Carlo harness"""
# Standard
import io
import json
# Installed
import numpy as np
import pandas as pd
import pytest
# Local
from inharmonic_pitch import bounds, experiment
from inharmonic_pitch.constants import (
    DEFAULT_TRIALS_STOCHASTIC,
    SUMMARY_COLUMNS,
    TIMING_COLUMN,
    TRIAL_COLUMNS,
    EstimatorName,
    PhaseRule,
    Scenario,
    Target,
)
from inharmonic_pitch.errors import BoundComputationError, ConfigError
from inharmonic_pitch.experiment import (
    experiment_config_from_dict,
    load_experiment_config,
    run_experiment,
    run_trial,
    summarize,
    write_csv,
)
from inharmonic_pitch.signals import snr_to_noise_var


def small_config(**overrides):
    data = {
        "scenario": "string-beta-sweep",
        "sweep": [0.0, 5e-4],
        "trials": 2,
        "n_samples": 200,
        "estimators": ["mmle", "chs"],
        "base_seed": 17,
    }
    return experiment_config_from_dict({**data, **overrides})


def test_scenario_defaults_are_merged_under_user_values():
    cfg = experiment_config_from_dict({"scenario": "stochastic-sigma-sweep", "sweep": [1e-6, 1e-5]})
    assert cfg.trials == DEFAULT_TRIALS_STOCHASTIC
    assert cfg.estimators[0] is EstimatorName.MLMAP
    assert cfg.targets == (Target.OMEGA0, Target.OMEGA1)
    assert cfg.sweep_point(1).sigma2_delta == pytest.approx(1e-5)

    cfg = experiment_config_from_dict({"scenario": "snr-sweep", "sweep": [0, 10], "beta": 1e-4})
    assert cfg.sweep_point(1).snr_db == 10.0
    assert cfg.sweep_point(1).beta == pytest.approx(1e-4)
    assert EstimatorName.UNSTRUCTURED in cfg.estimators
    assert cfg.targets == (Target.OMEGA0,)

    cfg = experiment_config_from_dict({"scenario": "string-N-sweep", "sweep": [100, 400]})
    assert cfg.sweep_point(0).n_samples == 100
    assert cfg.sweep_point(0).beta == pytest.approx(5e-4)


def test_config_round_trips_through_dict():
    cfg = small_config(phase_rule="uniform-fixed", search={"tolerance": 1e-9})
    again = experiment_config_from_dict(cfg.to_dict())
    assert again == cfg
    assert again.phase_rule is PhaseRule.UNIFORM_FIXED


@pytest.mark.parametrize("data, message", [
    ({"sweep": [0.0]}, "missing required keys"),
    ({"scenario": "string-beta-sweep"}, "missing required keys"),
    ({"scenario": "violin", "sweep": [0.0]}, "Unknown scenario"),
    ({"scenario": "string-beta-sweep", "sweep": [0.0], "estimators": ["yin"]}, "Unknown estimator"),
    ({"scenario": "string-beta-sweep", "sweep": [0.0], "colour": "red"}, "Unknown experiment config keys"),
    ({"scenario": "string-beta-sweep", "sweep": []}, "empty"),
    ({"scenario": "string-beta-sweep", "sweep": "0.0"}, "list of numbers"),
    ({"scenario": "string-beta-sweep", "sweep": [0.0], "trials": 0}, "trials"),
    ({"scenario": "string-beta-sweep", "sweep": [0.0], "amplitude_rule": "explicit"}, "explicit"),
    ({"scenario": "string-beta-sweep", "sweep": [0.0], "search": {"tolerance": -1.0}}, "search"),
    ({"scenario": "string-N-sweep", "sweep": [1]}, "< 2 samples"),
    ({"scenario": "string-beta-sweep", "sweep": [1.0]}, "Sweep point 0"),
    ({"scenario": "stochastic-sigma-sweep", "sweep": [0.0]}, "ML/MAP"),
])
def test_invalid_configs_are_rejected(data, message):
    with pytest.raises(ConfigError, match=message):
        experiment_config_from_dict(data)


def test_load_experiment_config(tmp_path):
    path = tmp_path / "study.json"
    path.write_text(json.dumps({"scenario": "snr-sweep", "sweep": [-5, 0, 5], "trials": 3}), encoding="utf-8")
    cfg = load_experiment_config(path)
    assert cfg.scenario is Scenario.SNR_SWEEP
    assert cfg.sweep == (-5.0, 0.0, 5.0)

    broken = tmp_path / "broken.json"
    broken.write_text("{scenario: ", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_experiment_config(broken)


def test_trial_records_cover_estimators_and_targets():
    cfg = small_config()
    records = run_trial(cfg, 1, 0)
    assert [r.estimator for r in records] == [EstimatorName.MMLE, EstimatorName.CHS]
    assert [r.bound_name for r in records] == ["mcrlb_exact", "chs_asymptotic_var"]
    assert all(r.sweep_value == 5e-4 and not r.failed for r in records)
    assert all(r.squared_error == pytest.approx((r.estimate - r.reference) ** 2) for r in records)
    assert all(r.bound_value > 0 for r in records)


def test_summary_moments():
    cfg = small_config()
    result = run_experiment(cfg)
    summary = result.summary
    assert list(summary.columns) == list(SUMMARY_COLUMNS)
    assert list(summary["estimator"]) == ["mmle", "chs", "mmle", "chs"]
    assert list(summary["n_trials"]) == [2, 2, 2, 2]
    assert summary["n_failed"].sum() == 0

    trials = result.trials_frame()
    assert list(trials.columns) == list(TRIAL_COLUMNS)
    assert len(trials) == len(cfg.sweep) * cfg.trials * len(cfg.estimators)
    for _, row in summary.iterrows():
        group = trials[(trials["sweep_value"] == row["sweep_value"]) & (trials["estimator"] == row["estimator"])]
        errors = group["estimate"] - group["reference"]
        assert row["mse"] == pytest.approx(np.mean(errors ** 2))
        assert row["bias2"] == pytest.approx(np.mean(errors) ** 2)
        assert row["mse"] == pytest.approx(row["bias2"] + row["variance"], rel=1e-9)
        assert row["bound_value"] == pytest.approx(group["bound_value"].mean())


def test_noiseless_harmonic_study_is_exact():
    cfg = small_config(sweep=[0.0], snr_db=300.0)
    summary = run_experiment(cfg).summary
    assert np.all(summary["mse"] < 1e-14)
    np.testing.assert_allclose(summary["reference"], cfg.omega0, rtol=1e-9)


def test_results_do_not_depend_on_worker_count():
    cfg = small_config()
    serial = run_experiment(cfg)
    again = run_experiment(cfg)
    parallel = run_experiment(cfg, threads=2)
    pd.testing.assert_frame_equal(serial.summary, again.summary)
    pd.testing.assert_frame_equal(serial.summary, parallel.summary)
    pd.testing.assert_frame_equal(serial.trials_frame(), parallel.trials_frame())


def test_seed_changes_the_draws():
    first = run_trial(small_config(), 0, 0)
    other = run_trial(small_config(base_seed=18), 0, 0)
    assert first[0].estimate != other[0].estimate


def test_fixed_phases_are_shared_by_trials():
    cfg = small_config(phase_rule="uniform-fixed", snr_db=300.0, sweep=[0.0])
    first = run_trial(cfg, 0, 0)
    second = run_trial(cfg, 0, 1)
    # Identical noiseless signals give identical references
    assert first[0].reference == second[0].reference
    assert first[0].bound_value == pytest.approx(second[0].bound_value)


def test_stochastic_study_scores_both_targets():
    cfg = experiment_config_from_dict({
        "scenario": "stochastic-sigma-sweep",
        "sweep": [1e-7],
        "trials": 2,
        "n_samples": 200,
        "estimators": ["mlmap", "mmle"],
        "base_seed": 3,
    })
    result = run_experiment(cfg)
    summary = result.summary
    assert list(summary["estimator"]) == ["mlmap", "mlmap@omega1", "mmle", "mmle@omega1"]
    assert list(summary["bound_name"]) == ["hcrlb_omega0", "hcrlb_omega1", "mcrlb_mse", "mcrlb_mse"]
    assert np.all(summary["bound_value"] > 0)
    trials = result.trials_frame()
    omega0_rows = trials[trials["target"] == "omega0"]
    np.testing.assert_allclose(omega0_rows["reference"], cfg.omega0)
    omega1_rows = trials[(trials["target"] == "omega1") & (trials["estimator"] == "mlmap")]
    assert not np.allclose(omega1_rows["reference"], cfg.omega0)


def test_run_experiment_rejects_bad_thread_count():
    with pytest.raises(ConfigError):
        run_experiment(small_config(), threads=0)


def test_write_csv_keeps_full_precision(tmp_path):
    frame = pd.DataFrame({"sweep_value": [0.1], "mse": [1.2345678901234567e-12]})
    path = tmp_path / "summary.csv"
    write_csv(frame, path)
    assert pd.read_csv(path, float_precision="round_trip")["mse"].iloc[0] == 1.2345678901234567e-12
    buffer = io.StringIO()
    write_csv(frame, buffer)
    assert buffer.getvalue().splitlines()[0] == "sweep_value,mse"


def test_trial_table_is_reproducible_without_timing():
    cfg = small_config()
    first, second = io.StringIO(), io.StringIO()
    write_csv(run_experiment(cfg).trials_frame(), first)
    write_csv(run_experiment(cfg, threads=2).trials_frame(), second)
    assert first.getvalue() == second.getvalue()
    assert TIMING_COLUMN not in first.getvalue().splitlines()[0].split(",")

    timed = run_experiment(cfg).trials_frame(timing=True)
    assert list(timed.columns) == list(TRIAL_COLUMNS) + [TIMING_COLUMN]
    assert np.all(timed[TIMING_COLUMN] >= 0)


def stochastic_config(**overrides):
    data = {
        "scenario": "stochastic-sigma-sweep",
        "sweep": [1e-7],
        "trials": 3,
        "n_samples": 200,
        "estimators": ["mlmap", "chs"],
        "base_seed": 5,
    }
    return experiment_config_from_dict({**data, **overrides})


def test_crossing_inharmonicity_draw_fails_the_trial(monkeypatch):
    cfg = stochastic_config()
    # Second component lands below the first
    crossing = np.array([0.0, -1.5 * cfg.omega0, 0.0, 0.0, 0.0])
    monkeypatch.setattr(experiment, "draw_inharmonicity", lambda model, rng: crossing)
    records = run_trial(cfg, 0, 1)
    assert len(records) == len(cfg.estimators) * len(cfg.targets)
    assert all(r.failed and not r.converged for r in records)
    assert all(np.isnan(r.estimate) and np.isnan(r.bound_value) for r in records)
    assert [r.bound_name for r in records] == ["hcrlb_omega0", "hcrlb_omega1", "chs_mse", "chs_mse"]
    assert {r.reference for r in records} == {cfg.omega0}

    summary = run_experiment(cfg).summary
    assert list(summary["n_failed"]) == [cfg.trials] * 4
    assert summary["mse"].isna().all()


def test_wide_inharmonicity_sweep_runs_to_completion():
    cfg = stochastic_config(sweep=[0.01], trials=40, estimators=["chs"], base_seed=0)
    result = run_experiment(cfg)
    summary = result.summary
    assert list(summary["estimator"]) == ["chs", "chs@omega1"]
    assert list(summary["n_trials"]) == [40, 40]
    # sigma_delta = 0.1 against omega0 = pi / 10: some draws cross, most do not
    assert 1 <= summary["n_failed"].iloc[0] < 40
    trials = result.trials_frame()
    failed = trials[trials["failed"]]
    assert failed["estimate"].isna().all()
    assert np.isfinite(summary["mse"]).all()


def test_unavailable_pseudo_true_leaves_the_trial_unscored(monkeypatch):
    def singular(*args, **kwargs):
        raise BoundComputationError("Fisher information of the harmonic model is singular.", 0.0)

    monkeypatch.setattr(bounds, "pseudo_true", singular)
    cfg = small_config()
    records = run_trial(cfg, 1, 0)
    mmle, closest = records
    assert not mmle.failed and np.isfinite(mmle.estimate)
    assert np.isnan(mmle.reference) and np.isnan(mmle.bound_value)
    assert np.isfinite(closest.reference) and closest.bound_value > 0

    summary = summarize(cfg, records)
    row = summary[(summary["sweep_value"] == 5e-4) & (summary["estimator"] == "mmle")].iloc[0]
    assert row["n_trials"] == 1 and row["n_failed"] == 0
    assert np.isnan(row["mse"])


@pytest.mark.slow
def test_mmle_variance_follows_mcrlb_for_stiff_string():
    cfg = experiment_config_from_dict({
        "scenario": "string-beta-sweep",
        "sweep": [5e-4],
        "trials": 200,
        "estimators": ["mmle"],
        "base_seed": 11,
    })
    row = run_experiment(cfg, threads=2).summary.iloc[0]
    assert row["n_failed"] == 0
    assert row["variance"] == pytest.approx(row["bound_value"], rel=0.3)
    assert row["bias2"] < 0.1 * row["variance"]


@pytest.mark.slow
def test_chs_error_follows_asymptotic_variance():
    cfg = experiment_config_from_dict({
        "scenario": "string-beta-sweep",
        "sweep": [5e-4, 1e-3],
        "trials": 500,
        "estimators": ["chs"],
        "base_seed": 23,
    })
    summary = run_experiment(cfg, threads=2).summary
    assert summary["n_failed"].sum() == 0
    ratio = summary["mse"] / summary["bound_value"]
    assert np.all((ratio > 0.8) & (ratio < 1.5))


@pytest.mark.slow
def test_stochastic_sweep_against_hybrid_and_unstructured_bounds():
    cfg = experiment_config_from_dict({
        "scenario": "stochastic-sigma-sweep",
        "sweep": [1e-8, 1e-7, 1e-6, 1e-5],
        "trials": 500,
        "estimators": ["mlmap", "mmle", "anls", "chs"],
        "base_seed": 29,
    })
    summary = run_experiment(cfg, threads=4).summary

    mlmap = summary[summary["estimator"].isin(["mlmap", "mlmap@omega1"])
                    & summary["sweep_value"].isin([1e-8, 1e-7])]
    ratio = mlmap["mse"] / mlmap["bound_value"]
    assert len(ratio) == 4
    assert np.all((ratio > 0.8) & (ratio < 1.5))

    # Harmonic-model estimators cannot follow omega_1 once the inharmonicity dominates the noise
    point = cfg.sweep_point(3)
    sigma2 = snr_to_noise_var(cfg.base_amplitudes(), point.snr_db)
    floor = bounds.crlb_unstructured(cfg.base_amplitudes(), point.n_samples, sigma2)[0][0]
    widest = summary[summary["sweep_value"] == 1e-5].set_index("estimator")
    for label in ("mmle@omega1", "anls@omega1", "chs@omega1"):
        assert widest.loc[label, "mse"] > floor
