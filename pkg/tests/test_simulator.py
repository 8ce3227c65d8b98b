"""Frequency simulator: equilibrium, swing response, metrics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freqdispatch import bundled_case_path
from freqdispatch.dispatch import balanced_dispatch
from freqdispatch.grid import (
    Contingency,
    inertia_sum_pu,
    load_case,
    parse_case,
    serialize_case,
)
from freqdispatch.simulator import (
    Empty,
    EmptySystem,
    SimConfig,
    TooShort,
    Unbalanced,
    coi_frequency,
    equilibrium_residual,
    frequency_nadir,
    gfm_headroom_used,
    simulate,
    simulate_many,
    steady_state_init,
    worst_rocof,
    write_trajectory_csv,
    plot_trajectory,
)


@pytest.fixture(scope="module")
def case9():
    return load_case(bundled_case_path("wscc9_modified"))


def spread_dispatch(case, ibr_mw, alpha):
    """Exactly balanced dispatch with gens filled between their limits."""
    target = case.total_load_mw() - sum(ibr_mw.values())
    lo = sum(g.p_min_mw for g in case.gens)
    hi = sum(g.p_max_mw for g in case.gens)
    t = (target - lo) / (hi - lo)
    gen = {g.id: g.p_min_mw + t * (g.p_max_mw - g.p_min_mw)
           for g in case.gens}
    return balanced_dispatch(case, gen, ibr_mw, alpha)


@pytest.fixture(scope="module")
def dsp9(case9):
    return spread_dispatch(case9, {2: 100.0}, {2: 0.0})


@pytest.fixture(scope="module")
def event9():
    return Contingency(outaged_gen_id=11, event_time_s=1.0)


@pytest.fixture(scope="module")
def run_gov(case9, dsp9, event9):
    return simulate(case9, dsp9, SimConfig(event=event9, t_end_s=20.0))


# -- initialization ---------------------------------------------------------

def test_init_all_frequencies_at_base(case9, dsp9):
    st0 = steady_state_init(case9, dsp9)
    assert np.all(st0.rotor_freq_hz == case9.base_freq_hz)


def test_init_derivatives_vanish(case9, dsp9):
    assert equilibrium_residual(case9, dsp9) <= 1e-8


def test_short_dispatch_rejected(case9):
    gen = {g.id: g.p_min_mw for g in case9.gens}
    bad = balanced_dispatch(case9, gen, {2: 0.0}, {2: 0.0})
    with pytest.raises(Unbalanced):
        steady_state_init(case9, bad)


def test_no_event_zero_drift(case9, dsp9):
    r = simulate(case9, dsp9, SimConfig(event=None, t_end_s=20.0))
    assert np.abs(r.f_coi_hz - case9.base_freq_hz).max() < 1e-6
    assert r.metrics.worst_rocof_hz_per_s == pytest.approx(0.0, abs=1e-9)


# -- event response ---------------------------------------------------------

def test_zero_mw_outage_is_no_disturbance(case9):
    # unit 11 held at 0 MW; the others carry the load
    others = {12: 70.0, 13: 70.0, 31: 45.0, 32: 30.0}
    gen = {11: 0.0, **others}
    dsp = balanced_dispatch(case9, gen, {2: 100.0}, {2: 0.0})
    cfg = SimConfig(event=Contingency(outaged_gen_id=11, event_time_s=1.0),
                    t_end_s=5.0)
    r = simulate(case9, dsp, cfg)
    assert np.abs(r.f_coi_hz - 60.0).max() < 1e-9
    assert r.metrics.worst_rocof_hz_per_s == pytest.approx(0.0, abs=1e-9)
    assert r.metrics.nadir_hz == pytest.approx(60.0, abs=1e-9)


def test_governor_free_rocof_matches_swing_sum(case9, dsp9, event9):
    cfg = SimConfig(event=event9, t_end_s=4.0,
                    governors_enabled=False, gfm_enabled=False)
    r = simulate(case9, dsp9, cfg)
    dp_pu = dsp9.gen_mw[11] / case9.base_mva
    h_post = inertia_sum_pu(case9, exclude_gen_id=11)
    analytic = -case9.base_freq_hz * dp_pu / (2.0 * h_post)
    assert r.metrics.worst_rocof_hz_per_s == pytest.approx(analytic,
                                                           rel=0.02)


def test_inertia_doubling_halves_rocof(case9, dsp9, event9):
    doc = serialize_case(case9)
    for g in doc["gens"]:
        g["inertia_h_s"] *= 2.0
    case2 = parse_case(doc)
    cfg = SimConfig(event=event9, t_end_s=4.0,
                    governors_enabled=False, gfm_enabled=False)
    r1 = simulate(case9, dsp9, cfg)
    r2 = simulate(case2, dsp9, cfg)
    ratio = r1.metrics.worst_rocof_hz_per_s / r2.metrics.worst_rocof_hz_per_s
    assert ratio == pytest.approx(2.0, rel=0.02)


def test_gfm_response_bounded_by_headroom(case9, event9):
    dsp = spread_dispatch(case9, {2: 100.0}, {2: 0.9})
    cap = case9.ibr_by_id(2).p_available_max_mw - 100.0
    r = simulate(case9, dsp, SimConfig(event=event9, t_end_s=12.0))
    used = r.metrics.headroom_used_mw[2]
    assert 0.0 < used <= cap + 1e-6
    assert (r.p_gfm_mw[:, 0] + dsp.ibr_gfl_mw[2]).max() <= \
        case9.ibr_by_id(2).p_available_max_mw + 1e-6


def test_alpha_monotone_support(case9, event9):
    nadirs, rocofs = [], []
    for a in (0.5, 0.7, 0.9):
        dsp = spread_dispatch(case9, {2: 100.0}, {2: a})
        r = simulate(case9, dsp, SimConfig(event=event9, t_end_s=12.0))
        nadirs.append(r.metrics.nadir_hz)
        rocofs.append(abs(r.metrics.worst_rocof_hz_per_s))
    assert nadirs[0] <= nadirs[1] + 1e-9
    assert nadirs[1] <= nadirs[2] + 1e-9
    assert rocofs[0] >= rocofs[1] - 1e-9
    assert rocofs[1] >= rocofs[2] - 1e-9


def test_governors_settle_and_recover(run_gov):
    m = run_gov.metrics
    assert m.settled
    assert m.nadir_hz < 60.0
    assert m.worst_rocof_hz_per_s < 0.0


def test_trajectory_monotone_and_spans(run_gov):
    t = run_gov.t_s
    assert np.all(np.diff(t) > 0)
    assert t[0] == 0.0
    assert t[-1] == pytest.approx(20.0, abs=1e-9)


def test_pre_event_window_flat(run_gov):
    pre = run_gov.t_s < 1.0
    assert np.abs(run_gov.f_coi_hz[pre] - 60.0).max() <= 1e-6


def test_coi_between_extremes(run_gov):
    fmin = run_gov.f_gen_hz.min(axis=1)
    fmax = run_gov.f_gen_hz.max(axis=1)
    # post-event column of the outaged unit is frozen; COI covers the
    # online set, which the frozen value may straddle only at 60 Hz
    assert np.all(run_gov.f_coi_hz >= fmin - 1e-9)
    assert np.all(run_gov.f_coi_hz <= fmax + 1e-9)


def test_nadir_not_above_first_post_event_sample(run_gov):
    post = run_gov.t_s >= 1.0
    assert run_gov.metrics.nadir_hz <= run_gov.f_coi_hz[post][0] + 1e-12


def test_dt_convergence(case9, event9):
    dsp = spread_dispatch(case9, {2: 100.0}, {2: 0.7})
    ra = simulate(case9, dsp, SimConfig(event=event9, t_end_s=8.0,
                                        dt_s=0.001))
    rb = simulate(case9, dsp, SimConfig(event=event9, t_end_s=8.0,
                                        dt_s=0.0005))
    assert abs(ra.metrics.nadir_hz - rb.metrics.nadir_hz) < 1e-4


def test_batch_agrees_with_single(case9, event9):
    dsps = [spread_dispatch(case9, {2: 100.0}, {2: a})
            for a in (0.0, 0.5, 1.0)]
    cfg = SimConfig(event=event9, t_end_s=8.0)
    many = simulate_many([case9] * 3, dsps, cfg, [event9] * 3)
    for dsp, m in zip(dsps, many):
        one = simulate(case9, dsp, cfg).metrics
        assert m.worst_rocof_hz_per_s == pytest.approx(
            one.worst_rocof_hz_per_s, abs=1e-12)
        assert m.nadir_hz == pytest.approx(one.nadir_hz, abs=1e-12)


# -- metric functions -------------------------------------------------------

def test_coi_single_gen_identity():
    assert coi_frequency([59.7], [5.0 * 100.0]) == pytest.approx(59.7)


def test_coi_equal_inertia_mean():
    assert coi_frequency([59.8, 60.0], [5.0, 5.0]) == pytest.approx(59.9)


def test_coi_weighted():
    assert coi_frequency([60.0, 59.6], [2.0, 6.0]) == pytest.approx(59.7)


def test_coi_empty_system():
    with pytest.raises(EmptySystem):
        coi_frequency([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(55.0, 61.0), st.floats(0.1, 50.0)),
                min_size=1, max_size=8))
def test_coi_is_bounded_mean(pairs):
    f = [p[0] for p in pairs]
    h = [p[1] for p in pairs]
    coi = coi_frequency(f, h)
    assert min(f) - 1e-9 <= coi <= max(f) + 1e-9


def test_worst_rocof_constant_zero():
    t = np.linspace(0, 2, 2001)
    assert worst_rocof(t, np.full_like(t, 60.0), 0.167) == 0.0


def test_worst_rocof_linear_ramp():
    t = np.linspace(0, 2, 2001)
    assert worst_rocof(t, 60.0 - 1.0 * t, 0.167) == pytest.approx(-1.0)


def test_worst_rocof_step_drop():
    t = np.arange(0, 1.0 + 1e-12, 0.001)
    f = np.where(t < 0.1, 60.0 - t, 59.9)
    assert worst_rocof(t, f, 0.167) == pytest.approx(-0.1 / 0.167, rel=1e-2)


def test_worst_rocof_too_short():
    with pytest.raises(TooShort):
        worst_rocof([0.0, 0.05], [60.0, 60.0], 0.167)


def test_nadir_constant():
    assert frequency_nadir([60.0] * 5) == 60.0


def test_nadir_min_sample():
    assert frequency_nadir([60.0, 59.73, 59.9]) == pytest.approx(59.73)


def test_nadir_empty():
    with pytest.raises(Empty):
        frequency_nadir([])


def test_headroom_flat_gfl():
    t = np.linspace(0, 5, 100)
    assert gfm_headroom_used(t, np.full_like(t, 80.0), 80.0, 1.0) == 0.0


def test_headroom_peak():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    p = np.array([100.0, 100.0, 112.0, 105.0])
    assert gfm_headroom_used(t, p, 100.0, 1.0) == pytest.approx(12.0)


def test_headroom_empty():
    with pytest.raises(Empty):
        gfm_headroom_used([], [], 0.0, 0.0)


# -- config and export ------------------------------------------------------

def test_config_rejects_coarse_dt():
    with pytest.raises(ValueError):
        SimConfig(event=None, dt_s=0.05, rocof_window_s=0.167)


def test_config_rejects_late_event():
    with pytest.raises(ValueError):
        SimConfig(event=Contingency(outaged_gen_id=11, event_time_s=30.0),
                  t_end_s=20.0)


def test_trajectory_csv_round_trip(run_gov, tmp_path):
    p = tmp_path / "traj.csv"
    write_trajectory_csv(run_gov, p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[:2] == ["t_s", "f_coi_hz"]
    assert f"f_g_{run_gov.gen_ids[0]}" in header
    assert f"p_gfm_{run_gov.ibr_ids[0]}" in header
    data = np.genfromtxt(p, delimiter=",", skip_header=1)
    assert data.shape[0] == len(run_gov.t_s)
    assert np.allclose(data[:, 1], run_gov.f_coi_hz, atol=1e-9)


def test_trajectory_svg(run_gov, tmp_path):
    p = tmp_path / "traj.svg"
    plot_trajectory(run_gov, p)
    head = p.read_text()[:400]
    assert "<svg" in head
