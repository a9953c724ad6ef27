"""Differential-algebraic assembly of devices on a network.

The composed model is ``dx/dt = f(x, y)``, ``0 = g(x, y)`` with

* ``x``: concatenated device states (device pu, absolute angles measured
  in a frame rotating at the network base speed);
* ``y``: bus angles, bus voltage magnitudes, then one (i_d, i_q) pair per
  device in machine coordinates and device base.

The algebraic set is Kirchhoff current balance at every bus (system base)
plus each device's stator/coupling equations.  Constant-power loads enter
as current injections re-evaluated at the present voltage, so they are
satisfied exactly at any solved point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlgebraicSolveError
from .network import NetworkModel, build_admittance

_EPS_FD = 1e-7


@dataclass
class SystemState:
    """Dynamic states, algebraic variables and the simulation clock."""
    x: np.ndarray
    y: np.ndarray
    t: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.y.copy(), self.t)


class PowerSystemDae:
    """Devices + network bound into one differential-algebraic system."""

    def __init__(self, network: NetworkModel, devices, f_nominal_hz: float = 60.0):
        self.network = network
        self.devices = list(devices)
        self.f_nominal_hz = f_nominal_hz
        self.omega_frame = network.bases.base_rad_per_s

        ybus = build_admittance(network)
        self.ybus = ybus
        self._g = np.ascontiguousarray(ybus.real)
        self._b = np.ascontiguousarray(ybus.imag)

        n = network.n_bus
        self.n_bus = n
        self.p_load = np.zeros(n)
        self.q_load = np.zeros(n)
        for ld in network.loads:
            i = network.bus_index(ld.bus)
            self.p_load[i] += ld.p
            self.q_load[i] += ld.q

        self.dev_bus = [network.bus_index(d.bus) for d in self.devices]
        self.dev_ratio = [d.rating_mva / network.bases.system_mva
                          for d in self.devices]
        self.x_offsets = []
        off = 0
        for d in self.devices:
            self.x_offsets.append(off)
            off += d.n_states
        self.n_x = off
        self.n_y = 2 * n + 2 * len(self.devices)

        self.x_labels = [f"{d.name}.{sym}" for d in self.devices
                         for sym in d.state_symbols]
        self.y_labels = ([f"theta.{b.id}" for b in network.buses]
                         + [f"v.{b.id}" for b in network.buses]
                         + [f"{d.name}.{sym}" for d in self.devices
                            for sym in ("i_d", "i_q")])

    # -- load bookkeeping (events mutate these) --------------------------

    def set_load(self, bus_id: int, p: float, q: float) -> None:
        i = self.network.bus_index(bus_id)
        self.p_load[i] = p
        self.q_load[i] = q

    def apply_load_step(self, bus_id: int, dp: float, dq: float) -> None:
        i = self.network.bus_index(bus_id)
        self.p_load[i] += dp
        self.q_load[i] += dq

    # -- residuals --------------------------------------------------------

    def split_y(self, y):
        n = self.n_bus
        return y[:n], y[n:2 * n], y[2 * n:]

    def device_state(self, x, k: int):
        off = self.x_offsets[k]
        return x[off:off + self.devices[k].n_states]

    def f(self, x, y) -> np.ndarray:
        """Time derivatives of all device states."""
        theta, v, idq = self.split_y(y)
        out = np.empty(self.n_x)
        for k, dev in enumerate(self.devices):
            b = self.dev_bus[k]
            off = self.x_offsets[k]
            xs = x[off:off + dev.n_states]
            out[off:off + dev.n_states] = dev.derivatives(
                xs, v[b], theta[b], idq[2 * k], idq[2 * k + 1],
                self.omega_frame)
        return out

    def g(self, x, y) -> np.ndarray:
        """Algebraic residuals: bus current balance plus stator equations."""
        n = self.n_bus
        theta, v, idq = self.split_y(y)
        vc = v * np.cos(theta)
        vs = v * np.sin(theta)
        ire = -(self._g @ vc - self._b @ vs)
        iim = -(self._g @ vs + self._b @ vc)
        v2 = v * v
        ire -= (self.p_load * vc + self.q_load * vs) / v2
        iim -= (self.p_load * vs - self.q_load * vc) / v2
        res = np.empty(self.n_y)
        dev_rows = res[2 * n:]
        for k, dev in enumerate(self.devices):
            b = self.dev_bus[k]
            xs = self.device_state(x, k)
            i_d, i_q = idq[2 * k], idq[2 * k + 1]
            sd, cd = math.sin(xs[0]), math.cos(xs[0])
            c = self.dev_ratio[k]
            ire[b] += (i_d * sd + i_q * cd) * c
            iim[b] += (-i_d * cd + i_q * sd) * c
            dev_rows[2 * k], dev_rows[2 * k + 1] = dev.stator_residual(
                xs, v[b], theta[b], i_d, i_q)
        res[:n] = ire
        res[n:2 * n] = iim
        return res

    def full_residual(self, x, y) -> np.ndarray:
        return np.concatenate([self.f(x, y), self.g(x, y)])

    # -- observations -----------------------------------------------------

    def device_frequencies_hz(self, x) -> np.ndarray:
        omega_n = self.network.bases.base_rad_per_s
        return np.array([
            self.f_nominal_hz
            + dev.frequency_deviation(self.device_state(x, k), omega_n)
            / (2.0 * math.pi)
            for k, dev in enumerate(self.devices)])

    def terminal_powers(self, x, y) -> np.ndarray:
        """Instantaneous electrical power at each device terminal (device pu)."""
        theta, v, idq = self.split_y(y)
        p = np.empty(len(self.devices))
        for k, dev in enumerate(self.devices):
            b = self.dev_bus[k]
            xs = self.device_state(x, k)
            d = xs[0] - theta[b]
            p[k] = (v[b] * math.sin(d) * idq[2 * k]
                    + v[b] * math.cos(d) * idq[2 * k + 1])
        return p

    def device_powers(self, x, y):
        """Reported output power per device: (device pu, system pu).

        Synchronous machines report terminal electrical power; inverters
        report their filtered power measurement (see GfmDevice.output_power).
        """
        theta, v, idq = self.split_y(y)
        p_dev = np.empty(len(self.devices))
        for k, dev in enumerate(self.devices):
            b = self.dev_bus[k]
            p_dev[k] = dev.output_power(self.device_state(x, k), v[b],
                                        theta[b], idq[2 * k], idq[2 * k + 1])
        return p_dev, p_dev * np.array(self.dev_ratio)

    def power_balance_residual(self, x, y) -> float:
        """Generation minus load minus series losses (system pu)."""
        theta, v, idq = self.split_y(y)
        vph = v * np.exp(1j * theta)
        losses = float(np.sum((vph * np.conj(self.ybus @ vph)).real))
        p_sys = self.terminal_powers(x, y) * np.array(self.dev_ratio)
        return float(np.sum(p_sys) - np.sum(self.p_load) - losses)

    def initial_y_guess(self, x) -> np.ndarray:
        """Crude algebraic start: flat bus voltages, EMF-driven currents."""
        n = self.n_bus
        y = np.zeros(self.n_y)
        y[n:2 * n] = 1.0
        for k, dev in enumerate(self.devices):
            xs = self.device_state(x, k)
            e_d, e_q, delta, z = dev.emf_interface(xs)
            e_ph = complex(e_d, e_q) * np.exp(1j * (delta - 0.5 * math.pi))
            i_ph = (e_ph - 1.0) / z
            rot = i_ph * np.exp(-1j * (delta - 0.5 * math.pi))
            y[2 * n + 2 * k] = rot.real
            y[2 * n + 2 * k + 1] = rot.imag
        return y


def solve_network_algebraic(dae: PowerSystemDae, x, y0=None, tol: float = 1e-10,
                            max_iter: int = 30, t: float | None = None) -> np.ndarray:
    """Newton solve of the algebraic set for fixed dynamic states.

    Converges to a Kirchhoff residual below ``tol`` (infinity norm) or
    raises AlgebraicSolveError carrying the offending time.
    """
    y = dae.initial_y_guess(x) if y0 is None else y0.copy()
    res = dae.g(x, y)
    for _ in range(max_iter):
        if np.max(np.abs(res)) < tol:
            return y
        jac = _fd_jacobian(lambda yy: dae.g(x, yy), y, res)
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError as exc:
            raise AlgebraicSolveError(f"singular algebraic Jacobian: {exc}",
                                      t=t, residual=float(np.max(np.abs(res))))
        y -= step
        res = dae.g(x, y)
    raise AlgebraicSolveError(
        f"algebraic solve stalled at residual {np.max(np.abs(res)):.3e}",
        t=t, residual=float(np.max(np.abs(res))))


def find_equilibrium(dae: PowerSystemDae, x0, y0, tol: float = 1e-10,
                     max_iter: int = 25):
    """Polish (x, y) until the full DAE residual vanishes.

    The combined Jacobian is rank-deficient by one along the uniform
    angle-shift direction, so the Newton system is augmented with a gauge
    row pinning the first device angle at its start value; the solution
    manifold crosses that plane transversally, restoring a well-posed
    least-squares step.
    """
    z = np.concatenate([x0, y0])
    n_x = dae.n_x
    anchor_idx = dae.x_offsets[0]
    anchor = z[anchor_idx]

    def residual(z):
        return dae.full_residual(z[:n_x], z[n_x:])

    gauge_row = np.zeros(len(z))
    gauge_row[anchor_idx] = 1.0
    res = residual(z)
    for _ in range(max_iter):
        if np.max(np.abs(res)) < tol:
            return z[:n_x], z[n_x:]
        jac = _fd_jacobian(residual, z, res, central=True)
        aug = np.vstack([jac, gauge_row])
        rhs = np.concatenate([res, [z[anchor_idx] - anchor]])
        step, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
        z = z - step
        res = residual(z)
    raise AlgebraicSolveError(
        f"equilibrium refinement stalled at residual {np.max(np.abs(res)):.3e}")


def _fd_jacobian(fn, z, f0=None, central: bool = False) -> np.ndarray:
    """Finite-difference Jacobian of ``fn`` at ``z``."""
    if f0 is None:
        f0 = fn(z)
    jac = np.empty((len(f0), len(z)))
    for j in range(len(z)):
        h = _EPS_FD * max(1.0, abs(z[j]))
        zp = z.copy()
        zp[j] += h
        if central:
            zm = z.copy()
            zm[j] -= h
            jac[:, j] = (fn(zp) - fn(zm)) / (2.0 * h)
        else:
            jac[:, j] = (fn(zp) - f0) / h
    return jac
