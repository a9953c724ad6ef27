"""Shared fixtures.  The expensive artifacts (full-length case traces, the
dispatch sweep) are session-scoped so the acceptance module and the unit
tests reuse one run; wall-clock times are collected for the runtime
checks."""

import time

import numpy as np
import pytest

from droope.network import solve_power_flow
from droope.scenario import load_scenario
from droope.smallsignal import dispatch_sweep
from droope.timedomain import release_dynamics, run_case


@pytest.fixture(scope="session")
def sim_timings():
    """Wall-clock seconds per case, filled as the trace fixtures build."""
    return {}


def _timed_run(name, sim_timings):
    t0 = time.perf_counter()
    trace = run_case(load_scenario(name))
    sim_timings[name] = time.perf_counter() - t0
    return trace


@pytest.fixture(scope="session")
def trace_case_a(sim_timings):
    return _timed_run("3bus-caseA", sim_timings)


@pytest.fixture(scope="session")
def trace_case_b(sim_timings):
    return _timed_run("3bus-caseB", sim_timings)


@pytest.fixture(scope="session")
def trace_case_c(sim_timings):
    return _timed_run("3bus-caseC", sim_timings)


@pytest.fixture(scope="session")
def trace_sharing(sim_timings):
    return _timed_run("3bus-sharing", sim_timings)


@pytest.fixture(scope="session")
def traces_9bus(sim_timings):
    return {name: _timed_run(name, sim_timings)
            for name in ("9bus-caseA", "9bus-caseB", "9bus-caseC")}


@pytest.fixture(scope="session")
def sweep_3bus():
    t0 = time.perf_counter()
    sweep = dispatch_sweep(load_scenario("3bus-caseA"))
    sweep.wall_seconds = time.perf_counter() - t0
    return sweep


@pytest.fixture(scope="session")
def case_a_equilibrium():
    """(dae, state) at the released case-A operating point."""
    scen = load_scenario("3bus-caseA")
    dae = scen.build_dae()
    pf = solve_power_flow(scen.network, scen.dispatch_map())
    return dae, release_dynamics(dae, pf)


def suffix_within(values: np.ndarray, target: float, tol: float) -> np.ndarray:
    """Boolean mask: value and every later value stay within tol of target."""
    inside = np.abs(np.asarray(values) - target) <= tol
    return np.minimum.accumulate(inside[::-1])[::-1]
