"""Reduced-order multi-machine frequency simulator.

Machines carry swing dynamics (rotor angle and speed per unit) behind
an internal coupling reactance; the transmission grid is the DC
power-flow network solved algebraically each step. Governors are
proportional droop with one first-order turbine lag plus a damping
term, both active only while governors are enabled. Grid-forming IBR
capacity responds with droop and virtual inertia through a filtered
internal frequency, hard-saturated at the plant's available power;
grid-following capacity holds its setpoint. Loads are constant.

Integration is fixed-step RK4 split into pre- and post-event segments.
The core works on scenario batches so dataset generation can run many
simulations in one vectorized pass; simulate() is the batch-of-one
wrapper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispatch import Dispatch
from .grid import Contingency, GridCase

# Machine internal coupling reactance, pu on the unit's rating base.
MACHINE_REACTANCE_PU = 0.15
# Machine damping, pu power (rating base) per pu frequency deviation.
# Part of the primary-response package: zeroed when governors are off.
MACHINE_DAMPING_PU = 2.0


class SimError(Exception):
    pass


class Unbalanced(SimError):
    """Dispatch injections do not match the load."""


class NumericalDivergence(SimError):
    def __init__(self, t: float):
        super().__init__(f"state diverged at t={t:.4f}s")
        self.t = t


class TooShort(SimError):
    """Trajectory shorter than the requested window."""


class EmptySystem(SimError):
    """No online machine to average over."""


class Empty(SimError):
    """Empty trajectory."""


@dataclass(frozen=True)
class SimConfig:
    """Integration settings and the event to apply.

    event may be None for an undisturbed run. governors_enabled and
    gfm_enabled exist so the bare swing response can be isolated and
    checked against its closed form.
    """

    event: Contingency | None
    dt_s: float = 0.001
    t_end_s: float = 20.0
    rocof_window_s: float = 0.167
    governors_enabled: bool = True
    gfm_enabled: bool = True

    def __post_init__(self):
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if self.dt_s > self.rocof_window_s / 10.0:
            raise ValueError("dt_s must be at most rocof_window_s/10")
        if self.event is not None and self.event.event_time_s >= self.t_end_s:
            raise ValueError("event_time must fall before t_end")


@dataclass
class SimState:
    """Device states at one instant; powers are pu on the system base."""

    time_s: float
    gen_ids: tuple[int, ...]
    rotor_angle_rad: np.ndarray
    rotor_freq_hz: np.ndarray
    mech_power_pu: np.ndarray
    gov_target_pu: np.ndarray
    ibr_ids: tuple[int, ...]
    gfm_power_pu: np.ndarray
    gfm_freq_hz: np.ndarray


@dataclass(frozen=True)
class FreqMetrics:
    worst_rocof_hz_per_s: float
    nadir_hz: float
    headroom_used_mw: dict[int, float]
    settled: bool


@dataclass
class SimResult:
    t_s: np.ndarray
    f_coi_hz: np.ndarray
    gen_ids: tuple[int, ...]
    f_gen_hz: np.ndarray           # (n_samples, n_gen)
    ibr_ids: tuple[int, ...]
    p_gfm_mw: np.ndarray           # (n_samples, n_ibr)
    metrics: FreqMetrics
    event_time_s: float | None


# ---------------------------------------------------------------------------
# trajectory metrics

def coi_frequency(freqs, inertias_mws) -> float:
    """Inertia-weighted mean frequency, inertias as H*S products."""
    f = np.asarray(freqs, dtype=float)
    h = np.asarray(inertias_mws, dtype=float)
    if f.size == 0:
        raise EmptySystem("no online machines")
    if np.any(h <= 0):
        raise SimError("inertias must be positive")
    return float(f @ h / h.sum())


def worst_rocof(t_s, f_hz, window_s: float) -> float:
    """Most negative windowed slope min_t (f(t+w) - f(t)) / w."""
    t = np.asarray(t_s, dtype=float)
    f = np.asarray(f_hz, dtype=float)
    if t.size < 2 or t[-1] - t[0] < window_s - 1e-12:
        raise TooShort("trajectory shorter than the RoCoF window")
    j = np.searchsorted(t, t + window_s - 1e-12)
    j = np.minimum(j, t.size - 1)
    valid = np.nonzero(t[j] - t >= window_s - 1e-9)[0]
    slopes = (f[j[valid]] - f[valid]) / (t[j[valid]] - t[valid])
    return float(slopes.min())


def frequency_nadir(f_hz) -> float:
    f = np.asarray(f_hz, dtype=float)
    if f.size == 0:
        raise Empty("empty trajectory")
    return float(f.min())


def gfm_headroom_used(t_s, p_mw, pre_event_mw: float,
                      event_time_s: float = 0.0) -> float:
    """Peak plant power rise over the pre-event output, floored at 0."""
    t = np.asarray(t_s, dtype=float)
    p = np.asarray(p_mw, dtype=float)
    if p.size == 0:
        raise Empty("empty trajectory")
    sel = t >= event_time_s - 1e-12
    if not sel.any():
        return 0.0
    return float(max(p[sel].max() - pre_event_mw, 0.0))


# ---------------------------------------------------------------------------
# batched core

class _Batch:
    """Precomputed arrays for one batch of same-topology scenarios.

    Scenario b has its own loads, setpoints, GFM split, and outage;
    all scenarios share bus/line topology, generator set, and timing.
    """

    def __init__(self, cases: list[GridCase], dispatches: list[Dispatch],
                 config: SimConfig, events: list[Contingency | None]):
        ref = cases[0]
        self.config = config
        B = len(cases)
        self.B = B
        base = ref.base_mva
        self.base_mva = base
        self.f0 = ref.base_freq_hz
        self.gen_ids = tuple(g.id for g in ref.gens)
        self.ibr_ids = tuple(p.id for p in ref.ibrs)
        bus_order = {b.id: k for k, b in enumerate(ref.buses)}
        nb = len(ref.buses)
        ng = len(ref.gens)
        ni = len(ref.ibrs)
        for c in cases:
            if (tuple(g.id for g in c.gens) != self.gen_ids
                    or tuple(p.id for p in c.ibrs) != self.ibr_ids
                    or len(c.buses) != nb):
                raise SimError("batch mixes incompatible cases")

        # network Laplacian from line reactances (system-base pu)
        L = np.zeros((nb, nb))
        for ln in ref.lines:
            i, j = bus_order[ln.from_bus], bus_order[ln.to_bus]
            y = 1.0 / ln.reactance_pu
            L[i, i] += y
            L[j, j] += y
            L[i, j] -= y
            L[j, i] -= y
        self.L = L

        g0 = ref.gens
        self.gen_bus = np.array([bus_order[g.bus] for g in g0])
        rating = np.array([g.rating_mva for g in g0])
        self.hs_mws = np.array([g.inertia_h_s * g.rating_mva for g in g0])
        self.x_g = MACHINE_REACTANCE_PU * base / rating
        self.M = 2.0 * self.hs_mws / (base * self.f0)  # pu-s^2 (times Hz)
        if config.governors_enabled:
            droop = np.array([g.governor_droop_pu for g in g0])
            self.gov_gain = (rating / base) / (self.f0 * droop)
            self.damp = MACHINE_DAMPING_PU * (rating / base) / self.f0
        else:
            self.gov_gain = np.zeros(ng)
            self.damp = np.zeros(ng)
        self.tt = np.array([g.turbine_time_const_s for g in g0])
        # unit limits are per-scenario: pinned units differ across a batch
        self.pmin = np.array([[g.p_min_mw for g in c.gens]
                              for c in cases]) / base
        self.pmax = np.array([[g.p_max_mw for g in c.gens]
                              for c in cases]) / base

        self.pset = np.zeros((B, ng))
        self.pfloor = np.zeros((B, ng))
        self.load = np.zeros((B, nb))
        self.p_gfm0 = np.zeros((B, ni))
        self.p_gfl0 = np.zeros((B, ni))
        self.gfm_cap = np.zeros((B, ni))   # responsive capacity, pu
        self.gfm_ceil = np.zeros((B, ni))  # saturation ceiling, pu
        self.p_avail = np.zeros((B, ni))
        for b, (case, dsp) in enumerate(zip(cases, dispatches)):
            for k, g in enumerate(case.gens):
                self.pset[b, k] = dsp.gen_mw.get(g.id, 0.0) / base
                # units dispatched under p_min (decommitted) keep their
                # setpoint as the valve floor so equilibrium is exact
                self.pfloor[b, k] = min(self.pmin[b, k],
                                        self.pset[b, k])
            for bus in case.buses:
                self.load[b, bus_order[bus.id]] = bus.load_mw / base
            for k, p in enumerate(case.ibrs):
                avail = p.p_available_max_mw / base
                gfm = dsp.gfm_mw(p.id) / base
                gfl = dsp.gfl_mw(p.id) / base
                a = dsp.alpha(p.id)
                self.p_gfm0[b, k] = gfm
                self.p_gfl0[b, k] = gfl
                self.p_avail[b, k] = avail
                self.gfm_ceil[b, k] = max(avail - gfl, 0.0)
                if config.gfm_enabled:
                    self.gfm_cap[b, k] = a * avail

        p0 = ref.ibrs
        self.gfm_droop = np.array([p.gfm_droop_pu for p in p0])
        self.gfm_h = np.array([p.gfm_virtual_inertia_s for p in p0])
        self.gfm_tau = np.array([p.gfm_response_time_const_s for p in p0])
        self.ibr_bus = np.array([bus_order[p.bus] for p in p0])

        # scatter matrices: device quantities summed onto their buses
        self.Sg = np.zeros((nb, ng))
        for k, bidx in enumerate(self.gen_bus):
            self.Sg[bidx, k] = 1.0
        self.Si = np.zeros((nb, ni))
        for k, bidx in enumerate(self.ibr_bus):
            self.Si[bidx, k] = 1.0

        # per-scenario pu mismatch for the balance precondition
        self.mismatch = (self.pset.sum(axis=1) + self.p_gfm0.sum(axis=1)
                         + self.p_gfl0.sum(axis=1) - self.load.sum(axis=1))

        self.event_gen = np.full(B, -1)
        self.event_time = math.inf
        times = set()
        for b, ev in enumerate(events):
            if ev is None:
                continue
            if ev.outaged_gen_id not in self.gen_ids:
                raise SimError(f"event references unknown gen "
                               f"{ev.outaged_gen_id}")
            self.event_gen[b] = self.gen_ids.index(ev.outaged_gen_id)
            times.add(ev.event_time_s)
        if len(times) > 1:
            raise SimError("batch mixes event times")
        if times:
            self.event_time = times.pop()

        self.nb, self.ng, self.ni = nb, ng, ni

    def inv_for(self, active: np.ndarray) -> np.ndarray:
        """(B, nb, nb) inverse of the machine-grounded network matrix."""
        B = self.B
        Baug = np.broadcast_to(self.L, (B, self.nb, self.nb)).copy()
        xinv = 1.0 / self.x_g
        for k in range(self.ng):
            Baug[:, self.gen_bus[k], self.gen_bus[k]] += active[:, k] * xinv[k]
        return np.linalg.inv(Baug)

    def equilibrium(self):
        """Initial states with every derivative exactly zero."""
        f0 = self.f0
        B, ng, ni = self.B, self.ng, self.ni
        active = np.ones((B, ng))
        Binv = self.inv_for(active)
        delta0 = np.zeros((B, ng))
        # bus injections with machines as given constants
        theta = self._net_theta(Binv, delta0, self.p_gfm0, active,
                                mech_direct=self.pset)
        delta = theta[:, self.gen_bus] + self.x_g * self.pset
        f = np.full((B, ng), f0)
        pm = self.pset.copy()
        fint = np.full((B, ni), f0)
        return delta, f, pm, fint, active

    def _net_theta(self, Binv, delta, p_gfm, active, mech_direct=None):
        """Solve bus angles. mech_direct treats machines as injections
        (used only at equilibrium setup where delta is unknown)."""
        inj = (p_gfm + self.p_gfl0) @ self.Si.T - self.load
        if mech_direct is not None:
            inj = inj + (mech_direct * active) @ self.Sg.T
            # plain DC flow: Laplacian is singular, ground one bus
            Lg = self.L.copy()
            Lg[0, 0] += 1.0
            return np.linalg.solve(Lg, inj.T).T
        inj = inj + (delta / self.x_g * active) @ self.Sg.T
        return np.einsum("bij,bj->bi", Binv, inj)

    def deriv(self, delta, f, pm, fint, active, Binv):
        f0 = self.f0
        w = self.hs_mws * active
        wsum = w.sum(axis=1)
        f_coi = (f * w).sum(axis=1) / wsum
        dfint = (f_coi[:, None] - fint) / self.gfm_tau
        p_gfm = self.gfm_power(fint, dfint)
        theta = self._net_theta(Binv, delta, p_gfm, active)
        pe = (delta - theta[:, self.gen_bus]) / self.x_g * active
        pcmd = np.clip(self.pset + self.gov_gain * (f0 - f),
                       self.pfloor, self.pmax)
        dpm = (pcmd - pm) / self.tt * active
        df = (pm - pe - self.damp * (f - f0)) / self.M * active
        ddelta = 2.0 * math.pi * (f - f0) * active
        return ddelta, df, dpm, dfint, p_gfm, f_coi

    def gfm_power(self, fint, dfint):
        f0 = self.f0
        resp = ((f0 - fint) / (f0 * self.gfm_droop)
                + (2.0 * self.gfm_h / f0) * (-dfint))
        cmd = self.p_gfm0 + self.gfm_cap * resp
        return np.clip(cmd, 0.0, self.gfm_ceil)


def _rk4_segment(batch: _Batch, state, active, Binv, t0, t1, dt,
                 record):
    """Integrate [t0, t1]; record(t, state fields, outputs) per step."""
    delta, f, pm, fint = state
    t = t0
    n_steps = max(int(round((t1 - t0) / dt)), 0)
    for k in range(n_steps):
        h = min(dt, t1 - t)
        if h <= 0.0:
            break
        d1 = batch.deriv(delta, f, pm, fint, active, Binv)
        record(t, delta, f, pm, fint, d1[4], d1[5])
        d2 = batch.deriv(delta + 0.5 * h * d1[0], f + 0.5 * h * d1[1],
                         pm + 0.5 * h * d1[2], fint + 0.5 * h * d1[3],
                         active, Binv)
        d3 = batch.deriv(delta + 0.5 * h * d2[0], f + 0.5 * h * d2[1],
                         pm + 0.5 * h * d2[2], fint + 0.5 * h * d2[3],
                         active, Binv)
        d4 = batch.deriv(delta + h * d3[0], f + h * d3[1],
                         pm + h * d3[2], fint + h * d3[3], active, Binv)
        c = h / 6.0
        delta = delta + c * (d1[0] + 2 * d2[0] + 2 * d3[0] + d4[0])
        f = f + c * (d1[1] + 2 * d2[1] + 2 * d3[1] + d4[1])
        pm = pm + c * (d1[2] + 2 * d2[2] + 2 * d3[2] + d4[2])
        fint = fint + c * (d1[3] + 2 * d2[3] + 2 * d3[3] + d4[3])
        t += h
    return (delta, f, pm, fint), t


def _run_batch(cases, dispatches, config, events, record_states=False):
    """Integrate a batch; returns (t, f_coi, per-scenario extras)."""
    batch = _Batch(cases, dispatches, config, events)
    B = batch.B
    bad = np.abs(batch.mismatch) > 1e-6
    if bad.any():
        b = int(np.nonzero(bad)[0][0])
        raise Unbalanced(
            f"scenario {b}: injections minus load = "
            f"{batch.mismatch[b]:.3e} pu exceeds 1e-6")

    dt = config.dt_s
    t_end = config.t_end_s
    t_ev = batch.event_time if math.isfinite(batch.event_time) else None

    n_total = int(round(t_end / dt)) + (2 if t_ev is not None else 1)
    ts = np.empty(n_total + 2)
    fcoi = np.empty((n_total + 2, B))
    fgen = np.empty((n_total + 2, batch.ng)) if record_states else None
    pgfm = np.empty((n_total + 2, batch.ni)) if record_states else None
    hroom = np.zeros((B, batch.ni))
    n_rec = 0

    def record(t, delta, f, pm, fint, p_gfm, f_coi):
        nonlocal n_rec
        ts[n_rec] = t
        fcoi[n_rec] = f_coi
        if record_states:
            fgen[n_rec] = f[0]
            pgfm[n_rec] = p_gfm[0]
        if t_ev is None or t >= t_ev - 1e-12:
            np.maximum(hroom, p_gfm - batch.p_gfm0, out=hroom)
        n_rec += 1

    delta, f, pm, fint, active = batch.equilibrium()
    Binv = batch.inv_for(active)
    state = (delta, f, pm, fint)
    if t_ev is not None:
        state, t_now = _rk4_segment(batch, state, active, Binv,
                                    0.0, t_ev, dt, record)
        # drop the outaged machine: its grounding, injection, and states
        # leave the model, the survivors' states carry over
        for b in range(B):
            k = batch.event_gen[b]
            if k >= 0:
                active[b, k] = 0.0
        Binv = batch.inv_for(active)
        state, t_now = _rk4_segment(batch, state, active, Binv,
                                    t_ev, t_end, dt, record)
    else:
        state, t_now = _rk4_segment(batch, state, active, Binv,
                                    0.0, t_end, dt, record)

    # closing sample at t_end
    d_end = batch.deriv(*state, active, Binv)
    record(t_now, *state, d_end[4], d_end[5])

    ts_out = ts[:n_rec]
    fcoi_out = fcoi[:n_rec]
    diverged = ~np.isfinite(fcoi_out).all(axis=0)
    extras = {
        "headroom_pu": hroom,
        "diverged": diverged,
        "state": state,
        "active": active,
        "batch": batch,
    }
    if record_states:
        extras["f_gen"] = fgen[:n_rec]
        extras["p_gfm"] = pgfm[:n_rec]
    return ts_out, fcoi_out, extras


def _metrics_from(ts, fcoi_b, headroom_pu_b, batch, config) -> FreqMetrics:
    wr = worst_rocof(ts, fcoi_b, config.rocof_window_s)
    nadir = frequency_nadir(fcoi_b)
    tail = ts >= ts[-1] - 1.0 - 1e-9
    ft = fcoi_b[tail]
    tt = ts[tail]
    rates = np.abs(np.diff(ft) / np.diff(tt))
    settled = bool(rates.size and rates.max() < 1e-3)
    hd = {pid: float(headroom_pu_b[k]) * batch.base_mva
          for k, pid in enumerate(batch.ibr_ids)}
    return FreqMetrics(worst_rocof_hz_per_s=wr, nadir_hz=nadir,
                       headroom_used_mw=hd, settled=settled)


def steady_state_init(case: GridCase, dispatch: Dispatch) -> SimState:
    """Equilibrium state for a balanced dispatch (all f at base)."""
    cfg = SimConfig(event=None, t_end_s=1.0)
    batch = _Batch([case], [dispatch], cfg, [None])
    if abs(batch.mismatch[0]) > 1e-6:
        raise Unbalanced(f"injections minus load = "
                         f"{batch.mismatch[0]:.3e} pu exceeds 1e-6")
    delta, f, pm, fint, active = batch.equilibrium()
    Binv = batch.inv_for(active)
    d = batch.deriv(delta, f, pm, fint, active, Binv)
    return SimState(time_s=0.0, gen_ids=batch.gen_ids,
                    rotor_angle_rad=delta[0].copy(),
                    rotor_freq_hz=f[0].copy(),
                    mech_power_pu=pm[0].copy(),
                    gov_target_pu=pm[0].copy(),
                    ibr_ids=batch.ibr_ids,
                    gfm_power_pu=d[4][0].copy(),
                    gfm_freq_hz=fint[0].copy())


def equilibrium_residual(case: GridCase, dispatch: Dispatch) -> float:
    """Largest state derivative magnitude at the initial state."""
    cfg = SimConfig(event=None, t_end_s=1.0)
    batch = _Batch([case], [dispatch], cfg, [None])
    if abs(batch.mismatch[0]) > 1e-6:
        raise Unbalanced("dispatch does not balance load")
    delta, f, pm, fint, active = batch.equilibrium()
    Binv = batch.inv_for(active)
    d = batch.deriv(delta, f, pm, fint, active, Binv)
    return float(max(np.abs(d[0]).max(), np.abs(d[1]).max(),
                     np.abs(d[2]).max(), np.abs(d[3]).max()))


def simulate(case: GridCase, dispatch: Dispatch,
             config: SimConfig) -> SimResult:
    """Run one scenario and compute its frequency metrics."""
    ev = config.event
    ts, fcoi, ex = _run_batch([case], [dispatch], config, [ev],
                              record_states=True)
    if ex["diverged"][0]:
        fin = np.isfinite(fcoi[:, 0])
        t_bad = ts[np.argmin(fin)] if not fin.all() else ts[-1]
        raise NumericalDivergence(float(t_bad))
    batch = ex["batch"]
    t_ev = ev.event_time_s if ev is not None else None
    m = _metrics_from(ts, fcoi[:, 0], ex["headroom_pu"][0], batch, config)
    return SimResult(t_s=ts.copy(), f_coi_hz=fcoi[:, 0].copy(),
                     gen_ids=batch.gen_ids, f_gen_hz=ex["f_gen"].copy(),
                     ibr_ids=batch.ibr_ids,
                     p_gfm_mw=ex["p_gfm"].copy() * batch.base_mva,
                     metrics=m, event_time_s=t_ev)


def simulate_many(cases: list[GridCase], dispatches: list[Dispatch],
                  config: SimConfig, events: list[Contingency | None],
                  chunk: int = 256) -> list[FreqMetrics | None]:
    """Batch variant for dataset generation; None marks divergence."""
    out: list[FreqMetrics | None] = []
    for lo in range(0, len(cases), chunk):
        hi = min(lo + chunk, len(cases))
        ts, fcoi, ex = _run_batch(cases[lo:hi], dispatches[lo:hi],
                                  config, events[lo:hi])
        batch = ex["batch"]
        for b in range(hi - lo):
            if ex["diverged"][b]:
                out.append(None)
                continue
            out.append(_metrics_from(ts, fcoi[:, b],
                                     ex["headroom_pu"][b], batch, config))
    return out


# ---------------------------------------------------------------------------
# trajectory export

def write_trajectory_csv(result: SimResult, path) -> None:
    cols = ["t_s", "f_coi_hz"]
    cols += [f"f_g_{gid}" for gid in result.gen_ids]
    cols += [f"p_gfm_{pid}" for pid in result.ibr_ids]
    data = np.column_stack([result.t_s, result.f_coi_hz,
                            result.f_gen_hz, result.p_gfm_mw])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def plot_trajectory(result: SimResult, path,
                    window_s: float = 0.167) -> None:
    """Two-panel SVG: COI frequency and its windowed slope."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    t = result.t_s
    f = result.f_coi_hz
    k = max(int(round(window_s / max(t[1] - t[0], 1e-9))), 1)
    slopes = (f[k:] - f[:-k]) / (t[k:] - t[:-k])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(t, f, lw=1.2)
    for gid, col in zip(result.gen_ids, result.f_gen_hz.T):
        ax1.plot(t, col, lw=0.6, alpha=0.5, label=f"gen {gid}")
    ax1.set_ylabel("frequency [Hz]")
    ax1.legend(loc="lower right", fontsize=7)
    ax2.plot(t[:-k], slopes, lw=1.0)
    ax2.set_ylabel(f"RoCoF over {window_s:.3f}s [Hz/s]")
    ax2.set_xlabel("time [s]")
    if result.event_time_s is not None:
        for ax in (ax1, ax2):
            ax.axvline(result.event_time_s, color="k", ls=":", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
