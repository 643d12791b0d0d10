import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

from models.experiment import ExperimentConfig, MethodSpec, ResultTable
from models.toy_spec import PopulationSpec, ToySpec
from models.trial_set import SubjectRecord, TrialSet
from services import experiment_runner
from services.experiment_runner import (ExperimentError, PipelineResult, export_patterns, loso_select_params,
                                        run_pipeline, run_real_experiment, run_toy_experiment, train_filters)
from services.mt_csp import MtCspError
from services.report import emit_report, error_quantiles, permutation_matrix, summarize
from services.toy_generator import gen_population
from utils.database import save_dataset

from conftest import SMALL_SPEC, scatter_trial


@pytest.fixture
def recorded_calls(monkeypatch):
    """Replace run_pipeline with a stub scoring each point by `score(params)`"""
    calls = []

    def install(score):
        def fake(method, target, donors, params, m=3):
            calls.append((method, target.subject_id, [d.subject_id for d in donors], dict(params)))
            value = score(params)
            if isinstance(value, Exception):
                raise value
            return PipelineResult(value, value, None)
        monkeypatch.setattr(experiment_runner, "run_pipeline", fake)
        return calls
    return install


def test_covcsp_with_zero_lambda_equals_csp(small_population):
    records, _ = small_population
    plain = run_pipeline("csp", records[0], [], {}, m=2)
    shrunk = run_pipeline("covcsp", records[0], records[1:], {"lam": 0.0}, m=2)
    assert np.array_equal(plain.bank.filters, shrunk.bank.filters)
    assert plain.test_accuracy == shrunk.test_accuracy


@pytest.mark.parametrize("method", ["covcsp", "mtcsp", "sscsp", "ss+mtcsp", "sscsp-noise-only"])
def test_transfer_methods_need_donors(small_population, method):
    records, _ = small_population
    with pytest.raises(ValueError, match="donor"):
        train_filters(method, records[0], [records[0]], {"lam": 0.5, "l": 1, "nu": 1}, m=2)


def test_unknown_method_is_rejected(small_population):
    records, _ = small_population
    with pytest.raises(ValueError, match="unknown"):
        train_filters("ica", records[0], records[1:], {}, m=2)


def test_pipeline_accuracies_are_fractions(small_population):
    records, _ = small_population
    result = run_pipeline("sscsp", records[0], records[1:], {"l": 2, "nu": 2}, m=2)
    assert 0.0 <= result.test_accuracy <= 1.0
    assert result.train_accuracy >= 0.5


def test_selection_needs_three_subjects(small_population):
    records, _ = small_population
    method = MethodSpec("covcsp", ({"lam": 0.0}, {"lam": 0.5}))
    with pytest.raises(ValueError, match="at least 3"):
        loso_select_params(method, records[:2], "S1", m=2)


def test_single_point_grid_is_returned_as_is(small_population, recorded_calls):
    records, _ = small_population
    calls = recorded_calls(lambda p: 0.5)
    assert loso_select_params(MethodSpec("covcsp", ({"lam": 0.3},)), records, "S1", m=2) == {"lam": 0.3}
    assert calls == []


def test_selection_never_touches_the_target(small_population, recorded_calls):
    records, _ = small_population
    calls = recorded_calls(lambda p: 0.5)
    loso_select_params(MethodSpec("covcsp", ({"lam": 0.0}, {"lam": 0.5})), records, "S1", m=2)
    assert len(calls) == 2 * (len(records) - 1)
    for _, target, donors, _ in calls:
        assert target != "S1" and "S1" not in donors and target not in donors


def test_selection_prefers_best_mean_accuracy(small_population, recorded_calls):
    records, _ = small_population
    recorded_calls(lambda p: p["lam"])
    method = MethodSpec("covcsp", ({"lam": 0.1}, {"lam": 0.9}, {"lam": 0.5}))
    assert loso_select_params(method, records, "S2", m=2) == {"lam": 0.9}


def test_selection_ties_go_to_first_point(small_population, recorded_calls):
    records, _ = small_population
    recorded_calls(lambda p: 0.75)
    method = MethodSpec("covcsp", ({"lam": 0.2}, {"lam": 0.4}))
    assert loso_select_params(method, records, "S1", m=2) == {"lam": 0.2}


def test_selection_skips_failing_points(small_population, recorded_calls, caplog):
    records, _ = small_population
    recorded_calls(lambda p: MtCspError("diverged") if p["lambda1"] == 1 else 0.6)
    method = MethodSpec("mtcsp", ({"lambda1": 1, "lambda2": 1}, {"lambda1": 10, "lambda2": 1}))
    with caplog.at_level(logging.WARNING):
        assert loso_select_params(method, records, "S1", m=2) == {"lambda1": 10, "lambda2": 1}
    assert "Skipping" in caplog.text


def _single_shift_subject(subject_id):
    """Training and test differ along channel 2 only, so one direction carries all the change"""
    def session(diagonals):
        return TrialSet(np.stack([scatter_trial(d) for d in diagonals * 2]), [1, 2, 1, 2])
    return SubjectRecord(subject_id, session(([3, 1, 1, 1], [1, 1, 1, 3])),
                         session(([3, 5, 1, 1], [1, 5, 1, 3])))


def test_selection_skips_points_beyond_adaptive_directions(caplog):
    records = [_single_shift_subject(f"S{i}") for i in range(1, 5)]
    method = MethodSpec.from_definition("sscsp", {"l": [3], "nu": [1, 3],
                                                  "options": {"adaptive_l_threshold": 0.5}})
    with caplog.at_level(logging.WARNING):
        selected = loso_select_params(method, records, "S1", m=1)
    assert selected == {"adaptive_l_threshold": 0.5, "l": 3, "nu": 1}
    assert "Skipping" in caplog.text


def _channel_pair_subject(subject_id, channels, rng, n_channels=8, trials=30, samples=50):
    """Class 1 has variance 4 on channels[0], class 2 on channels[1]; everything else is white"""
    def session():
        labels = np.tile([1, 2], trials)
        scales = np.ones((3, n_channels))
        scales[1, channels[0]] = scales[2, channels[1]] = 2.0
        return TrialSet(np.stack([scales[c][:, None] * rng.standard_normal((n_channels, samples))
                                  for c in labels]), labels)
    return SubjectRecord(subject_id, session(), session())


def test_covcsp_selection_refuses_dissimilar_donors(rng):
    records = [_channel_pair_subject(f"S{i + 1}", (2 * i, 2 * i + 1), rng) for i in range(4)]
    method = MethodSpec("covcsp", ({"lam": 0.9}, {"lam": 0.0}))
    assert loso_select_params(method, records, "S1", m=1) == {"lam": 0.0}


def test_selection_fails_when_every_point_fails(small_population, recorded_calls):
    records, _ = small_population
    recorded_calls(lambda p: MtCspError("diverged"))
    method = MethodSpec("mtcsp", ({"lambda1": 1, "lambda2": 1}, {"lambda1": 10, "lambda2": 1}))
    with pytest.raises(ExperimentError, match="every grid point"):
        loso_select_params(method, records, "S1", m=2)


def test_infeasible_subspace_dimensions_are_dropped(small_population, recorded_calls):
    records, _ = small_population
    calls = recorded_calls(lambda p: 0.5)
    method = MethodSpec("sscsp", ({"l": 1, "nu": 1}, {"l": 1, "nu": 5}))
    assert loso_select_params(method, records, "S1", m=2) == {"l": 1, "nu": 1}
    assert calls == []


def test_combined_method_merges_separate_selections(small_population, recorded_calls):
    records, _ = small_population
    calls = recorded_calls(lambda p: 0.1 * p.get("l", 0) + 0.01 * p.get("lambda1", 0))
    method = MethodSpec.from_definition("ss+mtcsp", {"components": {
        "sscsp": {"l": [1, 2], "nu": [1]},
        "mtcsp": {"lambda1": [1, 10], "lambda2": [1]},
    }})
    selected = loso_select_params(method, records, "S1", m=2)
    assert selected == {"l": 2, "nu": 1, "lambda1": 10, "lambda2": 1}
    assert {name for name, *_ in calls} == {"sscsp", "mtcsp"}


def _toy_config(**overrides):
    values = dict(toy_spec=SMALL_SPEC, population=PopulationSpec(3, 0.0, "A", 0), scenarios=["A"],
                  eta_grid=[0.0], methods=[MethodSpec("csp")], m=2, repetitions=2)
    values.update(overrides)
    return ExperimentConfig(**values)


def test_toy_experiment_rows_and_determinism():
    messages = []
    first = run_toy_experiment(_toy_config(), progress=messages.append).to_frame()
    second = run_toy_experiment(_toy_config()).to_frame()
    assert len(first) == 2
    assert list(first["repetition"]) == [0, 1]
    assert set(first["perturb"]) == {"A"} and set(first["subject"]) == {"S1"}
    assert len(messages) == 2
    pd.testing.assert_frame_equal(first, second)


def test_toy_experiment_needs_population():
    with pytest.raises(ValueError):
        run_toy_experiment(ExperimentConfig(dataset="x", methods=[MethodSpec("csp")]))


def test_real_experiment_matches_in_memory_run(tmp_path, small_population):
    records, _ = small_population
    save_dataset(records, str(tmp_path))
    config = ExperimentConfig(dataset=str(tmp_path), methods=[MethodSpec("csp")], m=2)
    from_disk = run_real_experiment(config).to_frame()
    in_memory = run_real_experiment(config, records=records).to_frame()
    assert list(from_disk["subject"]) == ["S1", "S2", "S3", "S4"]
    pd.testing.assert_frame_equal(from_disk, in_memory)


def test_real_experiment_wraps_failures_with_context(small_population):
    records, _ = small_population
    config = ExperimentConfig(dataset="unused", methods=[MethodSpec("covcsp", ({"lam": 0.0}, {"lam": 0.5}))], m=2)
    with pytest.raises(ExperimentError) as info:
        run_real_experiment(config, records=records[:2])
    assert info.value.subject == "S1"
    assert info.value.method == "covcsp"


def test_real_experiment_reports_missing_dataset(tmp_path):
    config = ExperimentConfig(dataset=str(tmp_path / "missing"), methods=[MethodSpec("csp")])
    with pytest.raises(ExperimentError, match="cannot load"):
        run_real_experiment(config)


def test_export_patterns_long_format(small_population):
    records, _ = small_population
    frame = export_patterns(records, MethodSpec("csp"), m=2)
    assert list(frame.columns) == ["subject", "filter", "channel", "pattern", "eigenvalue"]
    assert len(frame) == len(records) * 4 * SMALL_SPEC.dim


def _table():
    table = ResultTable(toy=True)
    accuracies = {"csp": [0.70, 0.72, 0.65, 0.80], "sscsp": [0.75, 0.78, 0.70, 0.85]}
    for method, values in accuracies.items():
        for rep, acc in enumerate(values):
            table.add("S1", method, {}, 0.9, acc, rep, "A", 1.0)
    return table


def test_summary_statistics():
    summary = summarize(_table())
    assert summary.loc["csp", "mean"] == pytest.approx(np.mean([0.70, 0.72, 0.65, 0.80]))
    assert summary.loc["sscsp", "std"] == pytest.approx(np.std([0.75, 0.78, 0.70, 0.85], ddof=1))
    assert summary.loc["csp", "n"] == 4


def test_permutation_matrix():
    matrix = permutation_matrix(_table(), n_permutations=1024, seed=0)
    assert np.isnan(matrix.loc["csp", "csp"])
    assert matrix.loc["sscsp", "csp"] == pytest.approx(1 / 16)
    assert matrix.loc["csp", "sscsp"] == pytest.approx(1.0)


def test_error_quantiles():
    quantiles = error_quantiles(_table())
    assert list(quantiles.columns) == ["scenario", "eta", "method", "min", "q25", "median", "q75", "max"]
    row = quantiles[quantiles["method"] == "csp"].iloc[0]
    assert row["min"] == pytest.approx(0.20)
    assert row["max"] == pytest.approx(0.35)
    with pytest.raises(ValueError):
        error_quantiles(ResultTable())


def test_emit_report_files(tmp_path):
    paths = emit_report(_table(), str(tmp_path), n_permutations=1024)
    assert all(os.path.exists(p) for p in paths.values())
    with open(paths["summary"]) as f:
        summary = json.load(f)
    frame = pd.read_csv(paths["results"])
    assert summary["rows"] == len(frame) == 8
    csp = frame[frame["method"] == "csp"]["test_acc"]
    assert summary["methods"]["csp"]["mean"] == pytest.approx(csp.mean())
    assert summary["methods"]["csp"]["median"] == pytest.approx(csp.median())
    assert summary["p_values"]["sscsp"]["csp"] == pytest.approx(1 / 16)


def test_result_table_validation_and_round_trip(tmp_path):
    table = ResultTable()
    with pytest.raises(ValueError):
        table.add("S1", "csp", {}, 1.2, 0.5)
    table.add("S01", "covcsp", {"lam": 0.5}, 0.9, 0.8)
    path = str(tmp_path / "results.csv")
    table.to_csv(path)
    loaded = ResultTable.from_csv(path)
    assert not loaded.toy
    frame = loaded.to_frame()
    assert frame.loc[0, "subject"] == "S01"
    assert json.loads(frame.loc[0, "params"]) == {"lam": 0.5}


@pytest.mark.slow
def test_sscsp_selection_removes_shared_noise_on_common_b():
    method = MethodSpec.from_definition("sscsp", {"l": [5], "nu": [0, 2, 5]})
    chosen = []
    for seed in range(50):
        records, _ = gen_population(ToySpec(), PopulationSpec(5, 0.0, "A", seed))
        chosen.append(loso_select_params(method, records, "S1")["nu"])
    assert np.mean(np.asarray(chosen) >= 1) >= 0.8


@pytest.mark.slow
def test_noise_only_sscsp_matches_standard_sscsp_accuracy():
    params = {"l": 5, "nu": 5}
    accuracies = {"sscsp": [], "sscsp-noise-only": []}
    for seed in range(20):
        records, _ = gen_population(ToySpec(), PopulationSpec(5, 0.0, "A", seed))
        for name in accuracies:
            accuracies[name].append(run_pipeline(name, records[0], records[1:], params).test_accuracy)
    assert abs(np.mean(accuracies["sscsp"]) - np.mean(accuracies["sscsp-noise-only"])) <= 0.02
