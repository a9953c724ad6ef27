"""Dynamic device models and controllers.

Three device types are modelled, all in machine (device-MVA) per unit:

* a 9th-order synchronous generator: two-axis machine with flux decay,
  Type-1 rotating exciter with exponential saturation, first-order
  governor and no-reheat steam-chest turbine;
* a 2nd-order grid-forming inverter with the exponential frequency-power
  droop (constant internal voltage behind a coupling impedance);
* the same inverter with a conventional linear (static) droop.

A secondary power-sharing controller can be layered on the exponential
droop; it nudges the inverter frequency until the device settles on the
static-droop share of a disturbance.

Machine dq quantities map to the network frame through
``(F_d + jF_q) * exp(j*(delta - pi/2))``, so ``v_d = V sin(delta - theta)``
and ``v_q = V cos(delta - theta)`` at a terminal ``V`` at angle ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InitializationError, NumericError

OMEGA_B_DEFAULT = 377.0

SG_STATE_SYMBOLS = ("delta", "omega", "eq_p", "ed_p", "e_fd", "v_r", "r_f",
                    "p_m", "p_sv")
GFM_STATE_SYMBOLS = ("delta", "p_m")


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------

@dataclass
class SgParams:
    """Synchronous generator constants (machine pu, seconds)."""
    h: float = 3.01
    x_d: float = 1.3125
    x_d_p: float = 0.1813
    x_q: float = 1.2578
    x_q_p: float = 0.25
    t_do_p: float = 5.89
    t_qo_p: float = 0.6
    k_a: float = 20.0
    t_a: float = 0.2
    k_e: float = 1.0
    t_e: float = 0.314
    k_f: float = 0.063
    t_f: float = 0.35
    sat_gamma: float = 0.0039
    sat_epsilon: float = 1.555
    d_droop: float = 0.05
    # Governor/turbine lags are not part of the published machine set; these
    # no-reheat defaults are deliberate and overridable per scenario.
    t_sv: float = 0.2
    t_ch: float = 0.3
    r_s: float = 0.0
    rating_mva: float = 100.0
    omega_s: float = OMEGA_B_DEFAULT

    def __post_init__(self):
        for attr in ("h", "t_do_p", "t_qo_p", "t_a", "t_e", "t_f", "t_sv",
                     "t_ch", "d_droop"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"SgParams.{attr} must be > 0")
        if not 0 < self.x_d_p < self.x_d:
            raise ValueError("SgParams requires 0 < x_d_p < x_d")


@dataclass
class GfmDroopEParams:
    """Exponential-droop grid-forming inverter constants (device pu)."""
    alpha: float = 0.002       # pu frequency scalar
    beta: float = 3.0          # 1/pu power argument scale
    omega_b: float = OMEGA_B_DEFAULT
    t_fil: float = 0.0167
    p_set: float = 0.0         # dispatch, device pu
    omega_set: float = OMEGA_B_DEFAULT
    e_d: float = 0.0           # constant internal voltage, set at release
    e_q: float = 1.0
    x_gfm: float = 0.15
    r_gfm: float = 0.005
    rating_mva: float = 50.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.t_fil <= 0:
            raise ValueError("GfmDroopEParams requires alpha, beta, t_fil > 0")
        if not 0.0 <= self.p_set <= 1.0:
            raise ValueError("GfmDroopEParams.p_set must lie in [0, 1]")


@dataclass
class GfmStaticParams:
    """Linear-droop grid-forming inverter constants (device pu)."""
    droop: float = 0.05        # pu frequency per pu power; 0 is allowed
    omega_b: float = OMEGA_B_DEFAULT
    t_fil: float = 0.0167
    p_set: float = 0.0
    omega_set: float = OMEGA_B_DEFAULT
    e_d: float = 0.0
    e_q: float = 1.0
    x_gfm: float = 0.15
    r_gfm: float = 0.005
    rating_mva: float = 50.0

    def __post_init__(self):
        if self.droop < 0 or self.t_fil <= 0:
            raise ValueError("GfmStaticParams requires droop >= 0, t_fil > 0")


class Gate(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class PowerSharingState:
    """Secondary power-sharing controller state.

    The gate arms on the first update (capturing the pre-disturbance
    filtered power) and closes once the disturbance registers and the
    primary transient has died down; it then stays closed until an
    operator reset builds a fresh state.
    """
    omega_ps: float = 0.0
    gate: Gate = Gate.OPEN
    eps_p: float = 0.01        # pu power disturbance threshold
    eps_dp: float = 0.001      # pu power/s quiescence threshold
    k: float = 0.3             # integrator gain, 1/s
    d_static: float = 0.05     # droop share target
    p_ref: float | None = None  # pre-disturbance filtered power


# ---------------------------------------------------------------------------
# frequency-power laws
# ---------------------------------------------------------------------------

def droop_e_offset(p_set, p_m, alpha, beta, omega_b):
    """Exponential-droop frequency offset in rad/s.

    Returns ``omega_b * alpha * (exp(beta*p_set) - exp(beta*p_m))``: zero at
    the dispatch point and strictly decreasing in ``p_m``.  Accepts scalars
    or arrays.
    """
    return omega_b * alpha * (np.exp(beta * p_set) - np.exp(beta * p_m))


def static_droop_offset(p_set, p_m, droop, omega_b):
    """Linear-droop frequency offset in rad/s: ``omega_b*droop*(p_set-p_m)``."""
    return omega_b * droop * (p_set - p_m)


def droop_e_slope(p_m, alpha, beta):
    """Local droop value (pu frequency per pu power) of the exponential law."""
    return alpha * beta * np.exp(beta * p_m)


# ---------------------------------------------------------------------------
# frame helpers
# ---------------------------------------------------------------------------

def dq_to_network(f_d: float, f_q: float, delta: float) -> complex:
    """Rotate a machine dq phasor into the network frame."""
    return complex(f_d, f_q) * np.exp(1j * (delta - 0.5 * np.pi))


def network_to_dq(phasor: complex, delta: float) -> tuple[float, float]:
    """Project a network-frame phasor onto the machine dq axes."""
    rot = phasor * np.exp(-1j * (delta - 0.5 * np.pi))
    return rot.real, rot.imag


def terminal_dq(v_mag: float, theta: float, delta: float) -> tuple[float, float]:
    d = delta - theta
    return v_mag * math.sin(d), v_mag * math.cos(d)


# ---------------------------------------------------------------------------
# derivative functions
# ---------------------------------------------------------------------------

def sg_derivatives(state, v_mag, theta, i_d, i_q, params: SgParams,
                   p_set, v_ref, omega_frame=None):
    """Nine state derivatives of the synchronous generator.

    ``state`` is ordered (delta, omega, eq_p, ed_p, e_fd, v_r, r_f, p_m,
    p_sv).  ``omega_frame`` is the rotating-frame speed the angle is
    measured against (defaults to synchronous speed).  The swing equation
    carries no explicit damping term; damping emerges from the controls.
    """
    delta, omega, eq_p, ed_p, e_fd, v_r, r_f, p_m, p_sv = state
    pr = params
    if omega_frame is None:
        omega_frame = pr.omega_s
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    p_e = ed_p * i_d + eq_p * i_q + (pr.x_q_p - pr.x_d_p) * i_d * i_q
    s_e = pr.sat_gamma * math.exp(pr.sat_epsilon * e_fd)
    return np.array([
        omega - omega_frame,
        (pr.omega_s / (2.0 * pr.h)) * (p_m - p_e),
        (-eq_p - (pr.x_d - pr.x_d_p) * i_d + e_fd) / pr.t_do_p,
        (-ed_p + (pr.x_q - pr.x_q_p) * i_q) / pr.t_qo_p,
        (-(pr.k_e + s_e) * e_fd + v_r) / pr.t_e,
        (-v_r + pr.k_a * r_f - (pr.k_a * pr.k_f / pr.t_f) * e_fd
         + pr.k_a * (v_ref - v_mag)) / pr.t_a,
        (-r_f + (pr.k_f / pr.t_f) * e_fd) / pr.t_f,
        (-p_m + p_sv) / pr.t_ch,
        (-p_sv + p_set - (1.0 / pr.d_droop) * (omega / pr.omega_s - 1.0)) / pr.t_sv,
    ])


def gfm_droop_e_derivatives(state, v_mag, theta, i_d, i_q,
                            params: GfmDroopEParams, omega_ps=0.0,
                            omega_frame=None):
    """Two state derivatives (delta, p_m) of the exponential-droop inverter."""
    delta, p_m = state
    if omega_frame is None:
        omega_frame = params.omega_set
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    p_meas = v_d * i_d + v_q * i_q
    d_delta = (droop_e_offset(params.p_set, p_m, params.alpha, params.beta,
                              params.omega_b)
               + params.omega_set - omega_frame + omega_ps)
    return np.array([d_delta, (p_meas - p_m) / params.t_fil])


def gfm_static_droop_derivatives(state, v_mag, theta, i_d, i_q,
                                 params: GfmStaticParams, omega_ps=0.0,
                                 omega_frame=None):
    """Two state derivatives (delta, p_m) of the linear-droop inverter."""
    delta, p_m = state
    if omega_frame is None:
        omega_frame = params.omega_set
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    p_meas = v_d * i_d + v_q * i_q
    d_delta = (static_droop_offset(params.p_set, p_m, params.droop,
                                   params.omega_b)
               + params.omega_set - omega_frame + omega_ps)
    return np.array([d_delta, (p_meas - p_m) / params.t_fil])


def sg_stator_residual(state, v_mag, theta, i_d, i_q, params: SgParams):
    """Two-axis stator equations; zero when (V, theta, I) are consistent."""
    delta, eq_p, ed_p = state[0], state[2], state[3]
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    return (
        ed_p - v_d - params.r_s * i_d + params.x_q_p * i_q,
        eq_p - v_q - params.r_s * i_q - params.x_d_p * i_d,
    )


def gfm_stator_residual(state, v_mag, theta, i_d, i_q, params):
    """Constant-voltage-behind-impedance coupling equations."""
    delta = state[0]
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    return (
        params.e_d - v_d - params.r_gfm * i_d + params.x_gfm * i_q,
        params.e_q - v_q - params.r_gfm * i_q - params.x_gfm * i_d,
    )


def terminal_power(state, v_mag, theta, i_d, i_q):
    """Active power leaving the device terminal (device pu)."""
    delta = state[0]
    v_d, v_q = v_mag * math.sin(delta - theta), v_mag * math.cos(delta - theta)
    return v_d * i_d + v_q * i_q


def device_emf_interface(state, params):
    """Internal EMF and coupling impedance in machine coordinates.

    Returns ``(e_d, e_q, delta, z)``; the network-frame phasor is
    ``dq_to_network(e_d, e_q, delta)`` and ``z`` is the series impedance
    (device pu) between the EMF and the terminal.
    """
    if isinstance(params, SgParams):
        return (state[3], state[2], state[0],
                complex(params.r_s, params.x_d_p))
    return (params.e_d, params.e_q, state[0],
            complex(params.r_gfm, params.x_gfm))


# ---------------------------------------------------------------------------
# secondary power-sharing controller
# ---------------------------------------------------------------------------

def power_sharing_update(ps: PowerSharingState, p_set, p_m, dp_dt,
                         omega_delta, omega_b, dt):
    """Advance the power-sharing controller by one accepted step.

    ``omega_delta`` is the device's primary-droop frequency deviation in
    rad/s.  While the gate is open the offset stays frozen at zero; once
    the filtered power has moved more than ``eps_p`` from its
    pre-disturbance value and settled (``|dp_dt| < eps_dp``), the gate
    closes and the integrator drives the total frequency deviation onto the
    static-droop line.  Returns the new state and its rad/s contribution.
    """
    if ps.p_ref is None:
        ps = replace(ps, p_ref=p_m)
    gate = ps.gate
    if gate is Gate.OPEN:
        if abs(p_m - ps.p_ref) > ps.eps_p and abs(dp_dt) < ps.eps_dp:
            gate = Gate.CLOSED
    omega_ps = ps.omega_ps
    if gate is Gate.CLOSED:
        omega_5 = omega_b * ps.d_static * (p_set - p_m)
        omega_e = omega_5 - omega_delta - omega_ps
        omega_ps = omega_ps + dt * ps.k * omega_e
    if gate is not ps.gate or omega_ps != ps.omega_ps:
        ps = replace(ps, gate=gate, omega_ps=omega_ps)
    return ps, omega_ps


# ---------------------------------------------------------------------------
# equilibrium construction
# ---------------------------------------------------------------------------

def solve_field_voltage(v_r: float, params: SgParams, tol: float = 1e-12,
                        max_iter: int = 60) -> float:
    """Invert the field equation ``(K_E + gamma*exp(eps*E)) * E = V_R``.

    Scalar Newton iteration; the left side is strictly increasing for
    E > 0 so the root is unique.
    """
    e = max(v_r / (params.k_e + params.sat_gamma), 0.1)
    for _ in range(max_iter):
        s_e = params.sat_gamma * math.exp(params.sat_epsilon * e)
        f = (params.k_e + s_e) * e - v_r
        fp = params.k_e + s_e * (1.0 + params.sat_epsilon * e)
        step = f / fp
        e -= step
        if abs(step) < tol:
            return e
    raise NumericError(f"field-voltage inversion stalled at E_fd={e}")


def sg_init_from_terminal(v_ph: complex, s_dev: complex, params: SgParams):
    """Back-solve all nine SG states from the solved terminal condition.

    Returns ``(state, p_set, v_ref)`` such that every derivative vanishes
    at synchronous speed.
    """
    i_ph = np.conj(s_dev / v_ph)
    delta = float(np.angle(v_ph + complex(params.r_s, params.x_q) * i_ph))
    v_d, v_q = network_to_dq(v_ph, delta)
    i_d, i_q = network_to_dq(i_ph, delta)
    eq_p = v_q + params.r_s * i_q + params.x_d_p * i_d
    ed_p = v_d + params.r_s * i_d - params.x_q_p * i_q
    e_fd = eq_p + (params.x_d - params.x_d_p) * i_d
    if e_fd <= 0:
        raise InitializationError(f"needed field voltage {e_fd:.4f} <= 0")
    s_e = params.sat_gamma * math.exp(params.sat_epsilon * e_fd)
    v_r = (params.k_e + s_e) * e_fd
    r_f = (params.k_f / params.t_f) * e_fd
    v_ref = abs(v_ph) + v_r / params.k_a
    p_e = ed_p * i_d + eq_p * i_q + (params.x_q_p - params.x_d_p) * i_d * i_q
    state = np.array([delta, params.omega_s, eq_p, ed_p, e_fd, v_r, r_f,
                      p_e, p_e])
    return state, p_e, v_ref


def gfm_init_from_terminal(v_ph: complex, s_dev: complex, params):
    """Back-solve the inverter angle, filtered power and internal voltage.

    The constant internal EMF is aligned with the q axis (e_d = 0), so the
    device angle is the angle of the EMF phasor.  Returns
    ``(state, e_d, e_q)``.
    """
    i_ph = np.conj(s_dev / v_ph)
    e_ph = v_ph + complex(params.r_gfm, params.x_gfm) * i_ph
    delta = float(np.angle(e_ph))
    state = np.array([delta, float(s_dev.real)])
    return state, 0.0, float(np.abs(e_ph))


# ---------------------------------------------------------------------------
# device wrappers used by the DAE assembly
# ---------------------------------------------------------------------------

class SgDevice:
    """Synchronous generator bound to a network bus."""

    kind = "sg"
    n_states = 9
    state_symbols = SG_STATE_SYMBOLS

    def __init__(self, name: str, bus: int, params: SgParams):
        self.name = name
        self.bus = bus
        self.params = params
        self.p_set = 0.0
        self.v_ref = 1.0

    @property
    def rating_mva(self) -> float:
        return self.params.rating_mva

    def derivatives(self, xs, v_mag, theta, i_d, i_q, omega_frame):
        return sg_derivatives(xs, v_mag, theta, i_d, i_q, self.params,
                              self.p_set, self.v_ref, omega_frame)

    def stator_residual(self, xs, v_mag, theta, i_d, i_q):
        return sg_stator_residual(xs, v_mag, theta, i_d, i_q, self.params)

    def initialize(self, v_ph: complex, s_dev: complex) -> np.ndarray:
        state, p_set, v_ref = sg_init_from_terminal(v_ph, s_dev, self.params)
        self.p_set = p_set
        self.v_ref = v_ref
        return state

    def frequency_deviation(self, xs, omega_nominal: float) -> float:
        """Device frequency minus nominal, rad/s."""
        return xs[1] - omega_nominal

    def output_power(self, xs, v_mag, theta, i_d, i_q) -> float:
        """Electrical power at the machine terminal (device pu)."""
        return terminal_power(xs, v_mag, theta, i_d, i_q)

    def emf_interface(self, xs):
        return device_emf_interface(xs, self.params)


class GfmDevice:
    """Grid-forming inverter bound to a network bus.

    ``flavor`` selects the droop law ("droop_e" or "static").  An optional
    PowerSharingState enables the secondary controller; its current offset
    is mirrored in ``omega_ps`` for use inside the derivative evaluation.
    """

    n_states = 2
    state_symbols = GFM_STATE_SYMBOLS

    def __init__(self, name: str, bus: int, params, flavor: str = "droop_e",
                 sharing: PowerSharingState | None = None):
        if flavor not in ("droop_e", "static"):
            raise ValueError(f"unknown GFM flavor {flavor!r}")
        self.name = name
        self.bus = bus
        self.params = params
        self.flavor = flavor
        self.sharing = sharing
        self.omega_ps = 0.0

    @property
    def kind(self) -> str:
        return "gfm_" + self.flavor

    @property
    def rating_mva(self) -> float:
        return self.params.rating_mva

    @property
    def p_set(self) -> float:
        return self.params.p_set

    def droop_offset(self, p_m):
        if self.flavor == "droop_e":
            return droop_e_offset(self.params.p_set, p_m, self.params.alpha,
                                  self.params.beta, self.params.omega_b)
        return static_droop_offset(self.params.p_set, p_m, self.params.droop,
                                   self.params.omega_b)

    def derivatives(self, xs, v_mag, theta, i_d, i_q, omega_frame):
        fn = (gfm_droop_e_derivatives if self.flavor == "droop_e"
              else gfm_static_droop_derivatives)
        return fn(xs, v_mag, theta, i_d, i_q, self.params,
                  omega_ps=self.omega_ps, omega_frame=omega_frame)

    def stator_residual(self, xs, v_mag, theta, i_d, i_q):
        return gfm_stator_residual(xs, v_mag, theta, i_d, i_q, self.params)

    def initialize(self, v_ph: complex, s_dev: complex) -> np.ndarray:
        state, e_d, e_q = gfm_init_from_terminal(v_ph, s_dev, self.params)
        self.params.e_d = e_d
        self.params.e_q = e_q
        self.omega_ps = 0.0
        if self.sharing is not None:
            self.sharing = replace(self.sharing, omega_ps=0.0, gate=Gate.OPEN,
                                   p_ref=None)
        return state

    def frequency_deviation(self, xs, omega_nominal: float) -> float:
        return float(self.droop_offset(xs[1]) + self.params.omega_set
                     - omega_nominal + self.omega_ps)

    def output_power(self, xs, v_mag, theta, i_d, i_q) -> float:
        """Filtered power measurement (device pu).

        The raw algebraic terminal power can jump when the network topology
        or load changes discontinuously; the measurement filter state is the
        continuous observable the droop law acts on, matching the power a
        switching-level model would deliver through its output filter.
        """
        return float(xs[1])

    def update_power_sharing(self, xs, v_mag, theta, i_d, i_q, dt):
        """Per-step secondary controller update; no-op when disabled."""
        if self.sharing is None:
            return
        p_m = xs[1]
        p_meas = terminal_power(xs, v_mag, theta, i_d, i_q)
        dp_dt = (p_meas - p_m) / self.params.t_fil
        omega_delta = float(self.droop_offset(p_m))
        self.sharing, self.omega_ps = power_sharing_update(
            self.sharing, self.params.p_set, p_m, dp_dt, omega_delta,
            self.params.omega_b, dt)

    def emf_interface(self, xs):
        return device_emf_interface(xs, self.params)
