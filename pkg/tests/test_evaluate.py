import numpy as np
import pytest

from powercast.evaluate import (
    LAYERS,
    SplitSpec,
    evaluate_model,
    run_split,
    write_plot_data,
    write_reports,
)
from powercast.exceptions import ConfigurationError
from powercast.pipeline import TwoLayerPowerModel


def test_split_spec_validation():
    SplitSpec((0, 100), (200, 300))
    with pytest.raises(ConfigurationError):
        SplitSpec((0, 300), (200, 400))
    with pytest.raises(ConfigurationError):
        SplitSpec((300, 100), (400, 500))


def test_noiseless_split_is_exact(clean_dataset, clean_trace):
    reports = run_split(clean_dataset, SplitSpec(clean_trace.train_window, clean_trace.test_window))
    assert [r.layer for r in reports] == list(LAYERS)
    for r in reports:
        assert r.nrmse <= 1e-6 and r.r_squared >= 1 - 1e-9
        assert r.n_points == 576


@pytest.fixture(scope="module")
def noisy_results(noisy_dataset, noisy_trace):
    model = TwoLayerPowerModel().fit(noisy_dataset, *noisy_trace.train_window)
    return evaluate_model(model, noisy_dataset, *noisy_trace.test_window)


def test_noisy_split_in_band(noisy_results):
    combined = noisy_results["combined"].report
    assert 0.015 <= combined.nrmse <= 0.05
    assert combined.r_squared >= 0.9


def test_combined_domain_within_step1(noisy_results):
    assert set(noisy_results["combined"].times) <= set(noisy_results["step1"].times)


def test_empty_test_window_is_config_error(clean_dataset, clean_trace):
    model = TwoLayerPowerModel().fit(clean_dataset, *clean_trace.train_window)
    with pytest.raises(ConfigurationError):
        evaluate_model(model, clean_dataset, 10, 20)
    with pytest.raises(ConfigurationError):
        TwoLayerPowerModel().fit(clean_dataset, 10, 20)


def test_report_files(tmp_path, noisy_results):
    write_reports([noisy_results[k].report for k in LAYERS], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "layer,nrmse,r2,pearson,n_points"
    assert [l.split(",")[0] for l in lines[1:]] == list(LAYERS)
    write_plot_data(noisy_results["step2"], tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "ts,measured,predicted" and len(rows) == 1 + noisy_results["step2"].report.n_points
