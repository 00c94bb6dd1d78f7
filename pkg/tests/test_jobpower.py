import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powercast.exceptions import ConfigurationError, ConsistencyError, ParseError, PreconditionError
from powercast.features import FeatureVector
from powercast.jobpower import (
    MAGIC,
    EnhancedAverageModel,
    TrainingPoint,
    UserModel,
    UserTrainingData,
    Variant,
    collect_training_data,
    eam_fit,
    eam_predict,
    fit_user_model,
    global_eam_fit,
    load_user_model,
    partition_training,
    predict_job_series,
    save_user_model,
    select_variant,
    svr_fit,
    svr_predict,
    tune_hyperparams,
)


def point(job, cores, gpus, mics, watts, at=0, code=0, colo=0):
    return TrainingPoint(FeatureVector(code, cores, gpus, mics, 1, colo, 0, 0), watts, job, at)


# -- variant gating ---------------------------------------------------------

@pytest.mark.parametrize("n_points,n_jobs,want", [
    (1000, 100, Variant.SVR), (999, 100, Variant.EAM), (1000, 99, Variant.EAM),
    (999, 500, Variant.EAM), (1, 1, Variant.EAM), (0, 0, Variant.GLOBAL_EAM),
])
def test_select_variant_boundaries(n_points, n_jobs, want):
    assert select_variant(n_points, n_jobs) is want


@settings(max_examples=500)
@given(st.integers(0, 5000), st.integers(0, 500))
def test_select_variant_is_threshold_predicate(n_points, n_jobs):
    v = select_variant(n_points, n_jobs)
    assert (v is Variant.SVR) == (n_points >= 1000 and n_jobs >= 100)
    assert (v is Variant.GLOBAL_EAM) == (n_points == 0 and not (n_points >= 1000 and n_jobs >= 100))


# -- EAM --------------------------------------------------------------------

def test_eam_predict_arithmetic():
    m = EnhancedAverageModel.from_rates(10, 50, 30)
    assert eam_predict(m, 2, 1, 0) == 70.0
    assert eam_predict(m, 0, 0, 0) == 0.0
    assert eam_predict(m, 8, 0, 2) == 140.0


def test_eam_single_job_uses_global_for_unseen_kinds():
    glob = EnhancedAverageModel.from_rates(9, 120, 80)
    m = eam_fit([[8, 0, 0]], [80.0], fallback=glob)
    assert m.p_cpu == 10.0 and m.p_gpu == 120.0 and m.p_mic == 80.0


def test_eam_consistent_system():
    assert eam_fit([[8, 0, 0], [4, 0, 0]], [80.0, 40.0]).p_cpu == pytest.approx(10.0, abs=1e-12)


def test_eam_empty_raises():
    with pytest.raises(PreconditionError):
        eam_fit(np.zeros((0, 3)), [])


def test_eam_recovers_rates_exactly():
    rng = np.random.default_rng(0)
    rates = np.array([7.3, 131.2, 96.4])
    counts = np.c_[rng.choice([8, 16, 24], 40), rng.integers(0, 3, 40), rng.integers(0, 3, 40)]
    m = eam_fit(counts, counts @ rates)
    np.testing.assert_allclose(m.coef_, rates, rtol=0, atol=1e-9)


@settings(max_examples=200)
@given(st.tuples(*[st.integers(0, 64)] * 3), st.tuples(*[st.integers(0, 64)] * 3))
def test_eam_predict_is_additive(a, b):
    m = EnhancedAverageModel.from_rates(10, 50, 30)
    s = tuple(x + y for x, y in zip(a, b))
    assert eam_predict(m, *s) == eam_predict(m, *a) + eam_predict(m, *b)


def test_global_eam():
    d = UserTrainingData.from_points("u", [point("j1", 8, 0, 0, 80), point("j2", 8, 1, 0, 180)])
    single = global_eam_fit([d])
    np.testing.assert_allclose(single.coef_, eam_fit(d.counts(), d.y).coef_)
    twice = global_eam_fit([d, d])
    np.testing.assert_allclose(twice.coef_, single.coef_, atol=1e-12)
    with pytest.raises(ConfigurationError):
        global_eam_fit([])


# -- partitioning -----------------------------------------------------------

def test_partition_training():
    pts = [point("a", 8, 0, 0, 1), point("b", 8, 0, 0, 2), point("c", 8, 0, 0, 3)]
    groups = partition_training(pts, {"a": "u1", "b": "u2", "c": "u1"})
    assert sorted(groups) == ["u1", "u2"]
    assert sorted(p.job_id for g in groups.values() for p in g) == ["a", "b", "c"]
    assert partition_training([], {}) == {}
    assert list(partition_training(pts, {"a": "u", "b": "u", "c": "u"})) == ["u"]
    with pytest.raises(ConsistencyError):
        partition_training(pts, {"a": "u1"})


# -- SVR variant -----------------------------------------------------------

def _svr_data(n=300, jobs=60, seed=0, colo_coef=1.5):
    rng = np.random.default_rng(seed)
    pts = []
    for k in range(n):
        cores = int(rng.choice([8, 16]))
        colo = int(rng.choice([0, 8, 16, 24]))
        pts.append(point(f"j{k % jobs}", cores, 0, 0, 10.0 * cores + colo_coef * colo, at=k * 300,
                         code=k % 2, colo=colo))
    return UserTrainingData.from_points("u", pts)


def test_svr_tracks_collocation():
    data = _svr_data()
    model = svr_fit(data, C=100.0, epsilon=0.5, gamma_scale=1.0)
    lo = svr_predict(model, FeatureVector(0, 16, 0, 0, 1, 0, 0, 0))
    hi = svr_predict(model, FeatureVector(0, 16, 0, 0, 1, 24, 0, 0))
    assert lo == pytest.approx(160.0, abs=3.0)
    assert hi == pytest.approx(196.0, abs=3.0)


def test_svr_prediction_clamped_at_zero():
    data = UserTrainingData.from_points("u", [point(f"j{i}", 8, 0, 0, 0.0, at=i) for i in range(10)])
    model = svr_fit(data, C=1.0, epsilon=0.5)
    model.svr.intercept_ = -3.0
    assert svr_predict(model, FeatureVector(0, 8, 0, 0, 1, 0, 0, 0)) == 0.0


def test_tune_single_candidate_and_ties():
    data = _svr_data(n=60, jobs=10)
    only = {"C": 1.0, "epsilon": 0.5, "gamma_scale": 1.0, "kernel": "rbf"}
    assert tune_hyperparams(data, [only]) == only
    same = [dict(only), dict(only, kernel="rbf")]
    assert tune_hyperparams(data, same) is not None
    assert tune_hyperparams(data, same) == same[0]


def test_tune_prefers_generating_kernel():
    rng = np.random.default_rng(5)
    pts = []
    for k in range(200):
        cores = int(rng.integers(1, 17))
        pts.append(point(f"j{k}", cores, 0, 0, 6.0 * cores + 20.0, at=k))
    data = UserTrainingData.from_points("u", pts)
    good = {"C": 100.0, "epsilon": 0.1, "kernel": "linear", "gamma_scale": 1.0}
    bad = {"C": 0.01, "epsilon": 0.1, "kernel": "rbf", "gamma_scale": 10.0}
    assert tune_hyperparams(data, [bad, good]) == good


def test_fit_user_model_gating(clean_dataset, clean_trace):
    data = collect_training_data(clean_dataset)
    glob = global_eam_fit(data.values())
    user, d = sorted(data.items())[0]
    assert fit_user_model(d, glob).variant is Variant.EAM
    assert fit_user_model(None, glob, user_id="nobody").variant is Variant.GLOBAL_EAM
    small = fit_user_model(d, glob, min_points=1, min_jobs=1,
                           candidates=[{"C": 10.0, "epsilon": 0.5, "gamma_scale": 1.0, "kernel": "rbf"}])
    assert small.variant is Variant.SVR


def test_predict_job_series_eam_constant(clean_dataset):
    ds = clean_dataset
    job = ds.jobs[0]
    m = UserModel(job.user_id, Variant.EAM, EnhancedAverageModel.from_rates(10, 50, 30))
    series = predict_job_series(m, job.job_id, ds)
    pl = ds.placements[job.job_id]
    assert sorted(series) == ds.times[pl.lo:pl.hi].tolist()
    assert len(set(series.values())) == 1
    assert next(iter(series.values())) == 10 * pl.cpu_cores + 50 * pl.gpus + 30 * pl.mics


# -- persistence ------------------------------------------------------------

def test_round_trip_is_bit_identical(tmp_path):
    data = _svr_data(n=120, jobs=30)
    model = fit_user_model(data, EnhancedAverageModel.from_rates(1, 1, 1), min_points=10, min_jobs=10,
                           candidates=[{"C": 10.0, "epsilon": 0.5, "gamma_scale": 1.0, "kernel": "rbf"}])
    path = tmp_path / "u.pwc"
    save_user_model(model, path)
    assert path.read_text().startswith(MAGIC + "\n")
    back = load_user_model(path)
    X = data.X[:50]
    assert back.variant is Variant.SVR
    np.testing.assert_array_equal(back.predict_rows(X), model.predict_rows(X))

    eam = UserModel("v", Variant.EAM, EnhancedAverageModel.from_rates(0.1, 1 / 3, 2 ** 0.5), 5, 2)
    save_user_model(eam, tmp_path / "v.pwc")
    back = load_user_model(tmp_path / "v.pwc")
    np.testing.assert_array_equal(back.model.coef_, eam.model.coef_)


def test_load_rejects_bad_header(tmp_path):
    p = tmp_path / "x.pwc"
    p.write_text("NOTAMODEL\n{}\n")
    with pytest.raises(ParseError):
        load_user_model(p)
    p.write_text(MAGIC + "\n{\"variant\": \"eam\"}\n")
    with pytest.raises(ParseError):
        load_user_model(p)
