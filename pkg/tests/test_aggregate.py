import numpy as np
import pytest

from conftest import build, cpu, gpu, mic
from powercast.aggregate import (
    ComponentPowerSeries,
    Provenance,
    idle_power,
    idle_power_array,
    measured_component_series,
    predicted_component_series,
    read_series_csv,
    write_series_csv,
)
from powercast.exceptions import ConsistencyError
from powercast.ingest import AllocationSlice, JobRecord, job_power_series
from powercast.trace_core import TimeGrid


def test_all_nodes_down_is_zero():
    ds = build([], [], {}, 1000)
    np.testing.assert_array_equal(measured_component_series(ds).watts, 0.0)
    assert idle_power(0, ds) == 0.0


def test_measured_sum_single_node():
    ds = build([], [], {cpu(0, 0): 40, cpu(0, 1): 40, gpu(0, 0): 30, gpu(0, 1): 30}, 1000, n_nodes=1)
    np.testing.assert_array_equal(measured_component_series(ds).watts, 140.0)


def test_dropped_point_absent():
    jobs = [JobRecord("j", "u", "a", 0, 900)]
    ds = build(jobs, [AllocationSlice("j", 0, 8, 1)],
               {cpu(0, 0): 80, cpu(0, 1): 10, gpu(0, 0): [90, None, 90, 90], gpu(0, 1): 15}, 2000, n_nodes=1)
    assert 300 not in measured_component_series(ds).as_dict()
    pred = predicted_component_series(job_power_series(ds), ds)
    np.testing.assert_array_equal(pred.times, measured_component_series(ds).times)


def test_idle_power_single_gpu():
    jobs = [JobRecord("j", "u", "a", 0, 900)]
    ds = build(jobs, [AllocationSlice("j", 0, 16, 1)],
               {cpu(0, 0): 80, cpu(0, 1): 80, gpu(0, 0): 90, gpu(0, 1): 15}, 2000, n_nodes=1)
    assert idle_power(0, ds, {"CPU": 10, "GPU": 15, "MIC": 20}) == 15.0


def test_idle_power_fully_busy_is_zero():
    jobs = [JobRecord("j", "u", "a", 0, 900)]
    ds = build(jobs, [AllocationSlice("j", 0, 16, 2)],
               {cpu(0, 0): 80, cpu(0, 1): 80, gpu(0, 0): 90, gpu(0, 1): 90}, 2000, n_nodes=1)
    assert idle_power(300, ds) == 0.0


def test_idle_power_whole_idle_machine():
    comp = {}
    for n in range(64):
        comp[cpu(n, 0)] = 10
        comp[cpu(n, 1)] = 10
        comp[gpu(n, 0) if n < 32 else mic(n, 0)] = 20
    ds = build([], [], comp, 1000, n_nodes=64)
    want = 64 * 2 * 10 + 32 * 2 * 15 + 32 * 2 * 20
    assert idle_power(600, ds) == want


def test_eq2_arithmetic():
    jobs = [JobRecord("a", "u", "x", 0, 900), JobRecord("b", "u", "x", 0, 900)]
    allocs = [AllocationSlice("a", 0, 8), AllocationSlice("b", 0, 8, 1)]
    # GPU slot 1 is the only idle component; give it 10 W.
    ds = build(jobs, allocs, {cpu(0, 0): 50, cpu(0, 1): 50, gpu(0, 0): 80, gpu(0, 1): 10}, 1000, n_nodes=1)
    preds = {"a": {t: 70.0 for t in (0, 300, 600, 900)}, "b": {t: 30.0 for t in (0, 300, 600, 900)}}
    s = predicted_component_series(preds, ds, {"CPU": 10, "GPU": 10, "MIC": 10})
    np.testing.assert_array_equal(s.watts, 110.0)
    assert s.provenance is Provenance.PREDICTED


def test_no_jobs_equals_idle():
    ds = build([], [], {cpu(0, 0): 30, cpu(0, 1): 30}, 1000)
    s = predicted_component_series({}, ds)
    np.testing.assert_array_equal(s.watts, idle_power_array(ds))


def test_missing_prediction_is_error():
    jobs = [JobRecord("j", "u", "a", 0, 900)]
    ds = build(jobs, [AllocationSlice("j", 0, 8)], {cpu(0, 0): 30, cpu(0, 1): 30}, 1000, n_nodes=1)
    with pytest.raises(ConsistencyError):
        predicted_component_series({}, ds)
    with pytest.raises(ConsistencyError):
        predicted_component_series({"j": {0: 1.0, 300: 1.0}}, ds)


def test_additivity_removing_one_job(clean_dataset):
    ds = clean_dataset
    targets = job_power_series(ds)
    full = predicted_component_series(targets, ds)
    job_id = sorted(targets)[0]
    idx, watts = targets[job_id]
    reduced = dict(targets)
    reduced[job_id] = (idx, np.zeros_like(watts))
    less = predicted_component_series(reduced, ds)
    diff = full.watts - less.watts
    expect = np.zeros(len(ds.grid))
    expect[idx] = watts
    np.testing.assert_allclose(diff, expect[ds.valid], atol=1e-9)


def test_measured_targets_reproduce_measured_total(clean_dataset):
    # Idle components read exactly their idle value only without noise.
    ds = clean_dataset
    pred = predicted_component_series(job_power_series(ds), ds)
    meas = measured_component_series(ds)
    np.testing.assert_array_equal(pred.times, meas.times)
    np.testing.assert_allclose(pred.watts, meas.watts, rtol=1e-9)


def test_true_job_power_reproduces_generator_total(clean_dataset, clean_trace):
    pred = predicted_component_series(clean_trace.truth.job_power, clean_dataset)
    np.testing.assert_allclose(pred.watts, clean_trace.truth.component_total, rtol=1e-12)


def test_series_validation_and_csv(tmp_path):
    g = TimeGrid(0, 600, 300)
    with pytest.raises(ValueError):
        ComponentPowerSeries(g, np.array([0]), np.array([-1.0]), Provenance.MEASURED)
    s = ComponentPowerSeries(g, np.array([0, 300]), np.array([0.1, 1 / 3]), Provenance.MEASURED)
    write_series_csv(s, tmp_path / "s.csv")
    back = read_series_csv(tmp_path / "s.csv", g, Provenance.MEASURED)
    np.testing.assert_array_equal(back.watts, s.watts)
    assert s.between(100, 600).times.tolist() == [300]
