import numpy as np
import pytest

from powercast.ingest import AllocationSlice, IdleTable, JobRecord, reconcile
from powercast.synth import GeneratorSpec, generate
from powercast.trace_core import ComponentId, ComponentKind, PowerSample, TimeGrid

IDLE = IdleTable({"CPU": 10.0, "GPU": 15.0, "MIC": 20.0})


def cpu(node, slot):
    return ComponentId(node, ComponentKind.CPU, slot)


def gpu(node, slot):
    return ComponentId(node, ComponentKind.GPU, slot)


def mic(node, slot):
    return ComponentId(node, ComponentKind.MIC, slot)


def readings(grid, values):
    """Samples stamped exactly on every grid point, ``values[cid] -> watts or list``."""
    out = []
    for cid, w in values.items():
        ws = w if isinstance(w, (list, tuple, np.ndarray)) else [w] * len(grid)
        out.extend(PowerSample(int(t), float(v), cid) for t, v in zip(grid.points, ws)
                   if v is not None)
    return out


def system(grid, watts):
    ws = watts if isinstance(watts, (list, tuple, np.ndarray)) else [watts] * len(grid)
    return [PowerSample(int(t), float(w)) for t, w in zip(grid.points, ws) if w is not None]


def build(jobs, allocs, comp, sysw, grid=None, n_nodes=2, idle=IDLE):
    grid = grid or TimeGrid(0, 900, 300)
    return reconcile(jobs, allocs, readings(grid, comp), system(grid, sysw), grid, idle, n_nodes)


@pytest.fixture
def grid4():
    return TimeGrid(0, 900, 300)


@pytest.fixture(scope="session")
def clean_trace():
    return generate(GeneratorSpec(nodes=16, days=7, users=10, noise_rel=0.0, seed=0))


@pytest.fixture(scope="session")
def clean_dataset(clean_trace):
    tr = clean_trace
    return reconcile(tr.jobs, tr.allocations, tr.component_samples(), tr.system_samples(),
                     tr.grid, tr.idle, tr.spec.nodes)


@pytest.fixture(scope="session")
def noisy_trace():
    return generate(GeneratorSpec(nodes=16, days=7, users=10, noise_rel=0.02, seed=0))


@pytest.fixture(scope="session")
def noisy_dataset(noisy_trace):
    tr = noisy_trace
    return reconcile(tr.jobs, tr.allocations, tr.component_samples(), tr.system_samples(),
                     tr.grid, tr.idle, tr.spec.nodes)


__all__ = ["IDLE", "build", "cpu", "gpu", "mic", "readings", "system",
           "AllocationSlice", "JobRecord"]


def fault_run(seed=0, magnitude=0.2, lead=2 * 3600, noise=0.02, inject=True):
    """Fit on the training window of a 16-node week, then monitor the test window.

    The outage, if injected, falls one day into the test window. Returns the
    trace and the alarm events.
    """
    from powercast.pipeline import TwoLayerPowerModel, monitor_fit
    from powercast.synth import inject_fault

    tr = generate(GeneratorSpec(nodes=16, days=7, users=10, noise_rel=noise, seed=seed))
    lo, hi = tr.test_window
    if inject:
        tr = inject_fault(tr, lo + 24 * 3600, lead, magnitude)
    ds = reconcile(tr.jobs, tr.allocations, tr.component_samples(), tr.system_samples(),
                   tr.grid, tr.idle, tr.spec.nodes)
    model = TwoLayerPowerModel().fit(ds, *tr.train_window)
    _, events = monitor_fit(model, ds, lo, hi)
    return tr, events


# -- acceptance reporting ---------------------------------------------------

_VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        _VERDICTS.append((mark.args[0], mark.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
