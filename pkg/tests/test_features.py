import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build, cpu, gpu
from powercast.exceptions import PreconditionError
from powercast.features import (
    UNKNOWN,
    FeatureVector,
    JobFeatureEncoder,
    JobNameVocabulary,
    encode_job_name,
    extract_features,
    job_feature_rows,
)
from powercast.ingest import AllocationSlice, JobRecord


def test_sole_job_two_nodes():
    job = JobRecord("j", "u", "a", 0, 100)
    allocs = [AllocationSlice("j", 0, 8), AllocationSlice("j", 1, 8)]
    f = extract_features(job, allocs, [job], 50)
    assert (f.own_cpu_cores, f.own_nodes, f.colo_cpu_cores, f.colo_gpus, f.colo_mics) == (16, 2, 0, 0, 0)


def test_collocated_pair():
    a = JobRecord("a", "u", "x", 0, 100)
    b = JobRecord("b", "v", "y", 0, 100)
    allocs = [AllocationSlice("a", 1, 4), AllocationSlice("b", 1, 2, 1)]
    f = extract_features(a, allocs, [a, b], 10)
    assert (f.colo_cpu_cores, f.colo_gpus) == (2, 1)
    g = extract_features(b, allocs, [a, b], 10)
    assert (g.colo_cpu_cores, g.colo_gpus, g.own_gpus) == (4, 0, 1)


def test_inactive_job_raises():
    job = JobRecord("j", "u", "a", 0, 100)
    with pytest.raises(PreconditionError):
        extract_features(job, [AllocationSlice("j", 0, 8)], [job], 200)


def test_other_node_jobs_are_not_collocated():
    a = JobRecord("a", "u", "x", 0, 100)
    b = JobRecord("b", "u", "x", 0, 100)
    allocs = [AllocationSlice("a", 0, 4), AllocationSlice("b", 1, 8, 2)]
    f = extract_features(a, allocs, [a, b], 10)
    assert (f.colo_cpu_cores, f.colo_gpus) == (0, 0)


def test_job_name_codes():
    vocab = JobNameVocabulary()
    assert encode_job_name("u", "first", vocab, grow=True) == 0
    assert encode_job_name("u", "second", vocab, grow=True) == 1
    assert encode_job_name("u", "first", vocab, grow=True) == 0
    assert encode_job_name("v", "other", vocab, grow=True) == 0
    assert encode_job_name("u", "unseen", vocab) == UNKNOWN
    assert encode_job_name("v", "first", vocab) == UNKNOWN


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(1, 4), st.integers(0, 1)), min_size=2, max_size=6))
def test_colo_is_own_of_others_on_shared_nodes(spec):
    jobs = [JobRecord(f"j{i}", "u", "x", 0, 100) for i in range(len(spec))]
    allocs = [AllocationSlice(f"j{i}", node, cores, g) for i, (node, cores, g) in enumerate(spec)]
    for i, job in enumerate(jobs):
        f = extract_features(job, allocs, jobs, 50)
        node = spec[i][0]
        others = [(c, g) for k, (n, c, g) in enumerate(spec) if k != i and n == node]
        assert f.colo_cpu_cores == sum(c for c, _ in others)
        assert f.colo_gpus == sum(g for _, g in others)


def test_dataset_rows_match_record_extraction():
    jobs = [JobRecord("a", "u", "x", 0, 900), JobRecord("b", "v", "y", 300, 600),
            JobRecord("c", "v", "y", 0, 900)]
    allocs = [AllocationSlice("a", 0, 4, 1), AllocationSlice("b", 0, 8), AllocationSlice("b", 1, 8),
              AllocationSlice("c", 1, 2)]
    comp = {cpu(0, 0): 50, cpu(0, 1): 50, gpu(0, 0): 90, gpu(0, 1): 15, cpu(1, 0): 50, cpu(1, 1): 10}
    ds = build(jobs, allocs, comp, 3000)
    for job in jobs:
        idx, rows = job_feature_rows(ds, job.job_id)
        for k, row in zip(idx, rows):
            t = int(ds.times[k])
            active = [j for j in jobs if j.active_at(t)]
            f = extract_features(job, allocs, active, t)
            assert row.tolist() == f.as_row()[1:].tolist()


def test_encoder_standardizes_numeric_and_one_hots_names():
    X = np.array([[0, 8, 0, 0, 1, 0, 0, 0], [1, 16, 1, 0, 2, 8, 0, 0], [UNKNOWN, 24, 2, 0, 3, 16, 0, 0]],
                 dtype=float)
    enc = JobFeatureEncoder(n_names=2).fit(X)
    Z = enc.transform(X)
    assert Z.shape == (3, 3 + 7)
    np.testing.assert_array_equal(Z[:, :3], np.eye(3))
    np.testing.assert_allclose(Z[:, 3:].mean(axis=0), 0.0, atol=1e-12)
    # constant column (mics) is centred but not scaled
    np.testing.assert_array_equal(Z[:, 5], 0.0)
    assert enc.get_params() == {"n_names": 2}


def test_feature_vector_row():
    assert FeatureVector(3, 8, 1, 0, 1, 4, 0, 0).as_row().tolist() == [3, 8, 1, 0, 1, 4, 0, 0]
