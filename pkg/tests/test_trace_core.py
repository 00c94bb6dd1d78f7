import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powercast.exceptions import RangeError
from powercast.trace_core import (
    SYSTEM,
    ComponentId,
    ComponentKind,
    PowerSample,
    TimeGrid,
    align_to_grid,
    build_grid,
    nearest_in_window,
)


def test_build_grid_covers_interval():
    assert build_grid(0, 900, 300).points.tolist() == [0, 300, 600, 900]


def test_build_grid_end_excludes_next_step():
    assert build_grid(0, 299, 300).points.tolist() == [0]


@pytest.mark.parametrize("start,end,step", [(100, 100, 300), (200, 100, 300), (0, 900, 0)])
def test_build_grid_rejects_bad_range(start, end, step):
    with pytest.raises(RangeError):
        build_grid(start, end, step)


def test_grid_index_and_membership():
    g = TimeGrid(600, 1800, 300)
    assert g.index(1200) == 2
    assert 1500 in g and 1501 not in g and 2100 not in g
    with pytest.raises(KeyError):
        g.index(0)
    assert g.slice_between(700, 1500) == slice(1, 4)


def test_component_id_column_layout():
    assert ComponentId(3, ComponentKind.CPU, 1).column == 1
    assert ComponentId(3, ComponentKind.GPU, 0).column == 2
    assert ComponentId(3, ComponentKind.MIC, 1).column == 3
    with pytest.raises(ValueError):
        ComponentId(0, ComponentKind.CPU, 2)


def test_power_sample_rejects_negative_and_nan():
    with pytest.raises(ValueError):
        PowerSample(0, -1.0)
    with pytest.raises(ValueError):
        PowerSample(0, float("nan"))


def _align(stamps, t=1000):
    grid = TimeGrid(t, t + 300, 300)
    samples = [PowerSample(s, float(s), SYSTEM) for s in stamps]
    return align_to_grid(samples, grid)[t]


def test_exact_hit_chosen():
    assert _align([997, 1000, 1003]).at == 1000


def test_closer_later_sample_chosen():
    assert _align([997, 1002]).at == 1002


def test_outside_window_absent():
    assert _align([995, 1006]) is None


def test_window_bounds_inclusive():
    assert _align([996]).at == 996
    assert _align([1005]).at == 1005


def test_tie_goes_to_earlier_sample():
    assert _align([998, 1002]).at == 998


def test_unsorted_input_is_sorted_internally():
    assert _align([1004, 1001, 998]).at == 1001


def _brute(stamps, t):
    best = None
    for s in stamps:
        if t - 4 <= s <= t + 5:
            if best is None or abs(s - t) < abs(best - t) or (abs(s - t) == abs(best - t) and s < best):
                best = s
    return best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1200), min_size=0, max_size=40, unique=True))
def test_alignment_matches_brute_force(stamps):
    grid = TimeGrid(0, 1200, 300)
    got = align_to_grid([PowerSample(s, 1.0) for s in stamps], grid)
    for t in grid.points:
        want = _brute(stamps, int(t))
        sample = got[int(t)]
        assert (sample.at if sample else None) == want


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2000), min_size=1, max_size=60, unique=True))
def test_nearest_in_window_stays_in_window(stamps):
    times = np.sort(np.array(stamps))
    pts = np.arange(0, 2001, 100)
    idx = nearest_in_window(times, pts)
    for t, k in zip(pts, idx):
        if k >= 0:
            assert t - 4 <= times[k] <= t + 5
