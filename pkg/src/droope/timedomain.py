"""Implicit time-domain simulation of the device/network DAE.

Integration is the trapezoidal rule with the algebraic constraints solved
simultaneously (a partitioned scheme is unreliable with constant-power
loads).  The Newton matrix is reused across steps and refreshed only when
convergence degrades; a failing step falls back to halving the internal
step size up to four times before aborting.  Events are applied at grid
boundaries only so traces are deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .devices import Gate, GfmDevice
from .errors import InitializationError, ScenarioError, StepError
from .network import PowerFlowSolution, solve_power_flow
from .system import (PowerSystemDae, SystemState, _fd_jacobian,
                     find_equilibrium, solve_network_algebraic)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    t: float
    kind: str                  # load_step | release_dynamics | gate_armed
    bus: int | None = None
    dp: float = 0.0            # system pu
    dq: float = 0.0
    device: str | None = None


@dataclass
class SimulationTrace:
    """Uniformly sampled per-device and per-bus series plus the event log."""
    t: np.ndarray
    dev_names: list[str]
    bus_ids: list[int]
    freq_hz: np.ndarray        # (n_samples, n_dev)
    p_dev: np.ndarray          # device-base pu
    p_sys: np.ndarray          # system-base pu
    v: np.ndarray              # (n_samples, n_bus)
    theta: np.ndarray
    events: list[Event]
    dt: float
    rocof_window: float = 0.1
    name: str = ""
    balance_residual: np.ndarray = field(default=None)
    final_state: "SystemState" = None

    def device_index(self, name: str) -> int:
        return self.dev_names.index(name)

    def device_frequency(self, name: str) -> np.ndarray:
        return self.freq_hz[:, self.device_index(name)]

    def device_power(self, name: str, base: str = "device") -> np.ndarray:
        col = self.device_index(name)
        return (self.p_dev if base == "device" else self.p_sys)[:, col]

    def first_event_time(self, kind: str = "load_step") -> float | None:
        for ev in self.events:
            if ev.kind == kind:
                return ev.t
        return None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.column_names()) + "\n")
            for i in range(len(self.t)):
                fh.write(",".join(repr(float(v)) for v in self.row(i)) + "\n")

    def column_names(self) -> list[str]:
        cols = ["t"]
        for name in self.dev_names:
            cols += [f"dev_{name}_f_hz", f"dev_{name}_p_pu_dev",
                     f"dev_{name}_p_pu_sys"]
        for b in self.bus_ids:
            cols += [f"bus_{b}_v", f"bus_{b}_theta"]
        return cols

    def row(self, i: int) -> list[float]:
        vals = [self.t[i]]
        for k in range(len(self.dev_names)):
            vals += [self.freq_hz[i, k], self.p_dev[i, k], self.p_sys[i, k]]
        for k in range(len(self.bus_ids)):
            vals += [self.v[i, k], self.theta[i, k]]
        return vals


class TrapezoidalStepper:
    """Simultaneous trapezoidal/Newton integrator with a reused Jacobian."""

    def __init__(self, dae: PowerSystemDae, dt: float, tol: float = 1e-9,
                 max_newton: int = 8):
        self.dae = dae
        self.dt = dt
        self.tol = tol
        self.max_newton = max_newton
        self._lu = None
        self._jac_dt = None
        self._stale = True

    def mark_stale(self) -> None:
        self._stale = True

    def _refresh_jacobian(self, x, y, dt) -> None:
        n_x = self.dae.n_x

        def shape(z):
            fx = self.dae.f(z[:n_x], z[n_x:])
            gx = self.dae.g(z[:n_x], z[n_x:])
            return np.concatenate([z[:n_x] - 0.5 * dt * fx, gx])

        z = np.concatenate([x, y])
        self._lu = lu_factor(_fd_jacobian(shape, z))
        self._jac_dt = dt
        self._stale = False

    def _advance(self, x0, y0, dt):
        """One trapezoidal step of size dt; returns (x1, y1) or None."""
        dae = self.dae
        n_x = dae.n_x
        f0 = dae.f(x0, y0)
        if self._lu is None or self._stale or self._jac_dt != dt:
            self._refresh_jacobian(x0, y0, dt)
        x1 = x0 + dt * f0
        y1 = y0.copy()
        rebuilt = False
        for it in range(2 * self.max_newton):
            res = np.concatenate([
                x1 - x0 - 0.5 * dt * (f0 + dae.f(x1, y1)),
                dae.g(x1, y1)])
            if np.max(np.abs(res)) < self.tol:
                if it > 4:
                    self._stale = True
                return x1, y1
            if it >= self.max_newton and not rebuilt:
                self._refresh_jacobian(x1, y1, dt)
                rebuilt = True
            step = lu_solve(self._lu, res)
            x1 = x1 - step[:n_x]
            y1 = y1 - step[n_x:]
        return None

    def step(self, state: SystemState) -> SystemState:
        """Advance one grid interval, halving the internal dt on failure."""
        x, y = state.x, state.y
        n_sub = 1
        for _ in range(5):
            ok = True
            xs, ys = x, y
            for _ in range(n_sub):
                out = self._advance(xs, ys, self.dt / n_sub)
                if out is None:
                    ok = False
                    break
                xs, ys = out
            if ok:
                if n_sub > 1:
                    self._stale = True
                return SystemState(xs, ys, state.t + self.dt)
            n_sub *= 2
            self._stale = True
        raise StepError(
            f"Newton failed at t={state.t:.6f}s even at dt/{n_sub // 2}",
            t=state.t)


def release_dynamics(dae: PowerSystemDae, pf: PowerFlowSolution) -> SystemState:
    """Turn a power-flow point into a consistent dynamic equilibrium.

    Every device back-solves its internal states and setpoints from the
    solved terminal voltage and injection, the algebraic variables are
    polished, and the start is verified stationary (all derivatives below
    1e-8).
    """
    net = dae.network
    n = net.n_bus
    x = np.empty(dae.n_x)
    y = np.empty(dae.n_y)
    y[:n] = pf.theta
    y[n:2 * n] = pf.v
    for k, dev in enumerate(dae.devices):
        b = dae.dev_bus[k]
        v_ph = pf.v[b] * np.exp(1j * pf.theta[b])
        s_dev = pf.injections[dev.bus] / dae.dev_ratio[k]
        off = dae.x_offsets[k]
        xs = dev.initialize(v_ph, s_dev)
        x[off:off + dev.n_states] = xs
        i_ph = np.conj(s_dev / v_ph)
        rot = i_ph * np.exp(-1j * (xs[0] - 0.5 * math.pi))
        y[2 * n + 2 * k] = rot.real
        y[2 * n + 2 * k + 1] = rot.imag
    y = solve_network_algebraic(dae, x, y, tol=1e-12)
    try:
        x, y = find_equilibrium(dae, x, y, tol=1e-10)
    except Exception as exc:
        raise InitializationError(f"equilibrium refinement failed: {exc}")
    fnorm = np.max(np.abs(dae.f(x, y)))
    if fnorm > 1e-8:
        raise InitializationError(
            f"release left a non-stationary start, max|dx/dt| = {fnorm:.3e}")
    return SystemState(x, y, 0.0)


def _grid_index(t: float, dt: float) -> int:
    k = round(t / dt)
    if abs(t - k * dt) > 1e-9:
        raise ScenarioError(f"event at t={t} does not fall on the {dt}s grid")
    return k


def run_case(scenario, events=None, t_end=None, dt=None) -> SimulationTrace:
    """Initialize from power flow, release dynamics and integrate events.

    ``scenario`` is a Scenario (see droope.scenario); ``events``, ``t_end``
    and ``dt`` default to the scenario's own definitions.
    """
    dae = scenario.build_dae()
    dt = scenario.sim.dt if dt is None else dt
    t_end = scenario.sim.t_end if t_end is None else t_end
    events = list(scenario.events) if events is None else list(events)

    pf = solve_power_flow(scenario.network, scenario.dispatch_map())
    state = release_dynamics(dae, pf)

    n_steps = int(round(t_end / dt))
    event_log: list[Event] = [Event(t=0.0, kind="release_dynamics")]
    pending: dict[int, list[Event]] = {}
    for ev in events:
        if ev.kind == "release_dynamics":
            continue  # release happens at t=0 regardless
        if ev.kind != "load_step":
            raise ScenarioError(f"unsupported scheduled event kind {ev.kind!r}")
        pending.setdefault(_grid_index(ev.t, dt), []).append(ev)

    n_dev, n_bus = len(dae.devices), dae.n_bus
    tr = SimulationTrace(
        t=np.arange(n_steps + 1) * dt,
        dev_names=[d.name for d in dae.devices],
        bus_ids=[b.id for b in dae.network.buses],
        freq_hz=np.empty((n_steps + 1, n_dev)),
        p_dev=np.empty((n_steps + 1, n_dev)),
        p_sys=np.empty((n_steps + 1, n_dev)),
        v=np.empty((n_steps + 1, n_bus)),
        theta=np.empty((n_steps + 1, n_bus)),
        events=event_log,
        dt=dt,
        rocof_window=scenario.sim.rocof_window,
        name=scenario.name,
        balance_residual=np.zeros(n_steps + 1),
    )

    log.info("simulating %s: %d devices, dt=%gs, t_end=%gs",
             scenario.name, n_dev, dt, t_end)
    stepper = TrapezoidalStepper(dae, dt)
    _record(tr, 0, dae, state)
    for k in range(n_steps):
        for ev in pending.get(k, ()):
            if ev.dp != 0.0 or ev.dq != 0.0:
                dae.apply_load_step(ev.bus, ev.dp, ev.dq)
                stepper.mark_stale()
            event_log.append(ev)
        state = stepper.step(state)
        _update_sharing(dae, state, dt, event_log)
        _record(tr, k + 1, dae, state)
    event_log.sort(key=lambda ev: ev.t)
    tr.final_state = state
    return tr


def _update_sharing(dae: PowerSystemDae, state: SystemState, dt: float,
                    event_log: list[Event]) -> None:
    theta, v, idq = dae.split_y(state.y)
    for k, dev in enumerate(dae.devices):
        if not isinstance(dev, GfmDevice) or dev.sharing is None:
            continue
        was = dev.sharing.gate
        b = dae.dev_bus[k]
        dev.update_power_sharing(dae.device_state(state.x, k), v[b], theta[b],
                                 idq[2 * k], idq[2 * k + 1], dt)
        if was is Gate.OPEN and dev.sharing.gate is Gate.CLOSED:
            event_log.append(
                Event(t=state.t, kind="gate_armed", device=dev.name))


def _record(tr: SimulationTrace, i: int, dae: PowerSystemDae,
            state: SystemState) -> None:
    tr.freq_hz[i] = dae.device_frequencies_hz(state.x)
    tr.p_dev[i], tr.p_sys[i] = dae.device_powers(state.x, state.y)
    theta, v, _ = dae.split_y(state.y)
    tr.v[i] = v
    tr.theta[i] = theta
    tr.balance_residual[i] = dae.power_balance_residual(state.x, state.y)
