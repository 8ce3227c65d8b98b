"""Dataset generation: stratified sampling, dispatch labeling, batch
equivalence, and the CSV round trip."""

import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from freqdispatch.dataset import (Dataset, DatasetError, FingerprintMismatch,
                                  InfeasibleScenario, NoOutageCandidates,
                                  Sample, ScenarioRanges, SchemaMismatch,
                                  UnsettledSimulation,
                                  default_restricted_levels, generate_dataset,
                                  generate_scenarios, label_scenario,
                                  read_dataset, write_dataset,
                                  _scenario_case, _scenario_dispatch)
from freqdispatch.features import SCHEMA_VERSION, feature_names, label_names
from freqdispatch.grid import load_case, parse_case
from freqdispatch.simulator import SimConfig

CASE9 = Path(__file__).resolve().parents[1] / "src" / "freqdispatch" \
    / "cases" / "wscc9_modified.json"
CASE39 = CASE9.with_name("ieee39_modified.json")


@pytest.fixture(scope="module")
def case9():
    return load_case(CASE9)


@pytest.fixture(scope="module")
def small_ds(case9):
    return generate_dataset(case9, ScenarioRanges(), n=12, seed=7)


# ---------------------------------------------------------------------------
# scenario sampling


def test_stratification_counts(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 60, seed=0)
    assert len(scens) == 60
    cells = Counter((s.restricted_gen_id, s.restricted_output_mw)
                    for s in scens)
    # 2 outage candidates x 3 levels
    assert len(cells) == 6
    assert set(cells.values()) == {10}


def test_remainder_spread(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 8, seed=0)
    cells = Counter((s.restricted_gen_id, s.restricted_output_mw)
                    for s in scens)
    assert sorted(cells.values()) == [1, 1, 1, 1, 2, 2]
    assert [s.id for s in scens] == list(range(8))


def test_draws_within_ranges(case9):
    r = ScenarioRanges(load_scale=(0.95, 1.05), ibr_scale=(0.8, 0.9),
                      gfm_alpha=(0.2, 0.6), ibr_utilization=(0.9, 1.0))
    for s in generate_scenarios(case9, r, 30, seed=3):
        assert 0.95 <= s.load_scale <= 1.05
        assert 0.8 <= s.ibr_scale <= 0.9
        assert 0.9 <= s.ibr_utilization <= 1.0
        for a in s.gfm_alpha.values():
            assert 0.2 <= a <= 0.6
        assert s.contingency.outaged_gen_id == s.restricted_gen_id


def test_scenario_determinism(case9):
    a = generate_scenarios(case9, ScenarioRanges(), 20, seed=5)
    b = generate_scenarios(case9, ScenarioRanges(), 20, seed=5)
    assert a == b
    c = generate_scenarios(case9, ScenarioRanges(), 20, seed=6)
    assert a != c


def test_default_levels_from_base_dispatch(case9):
    levels = default_restricted_levels(case9, ScenarioRanges())
    assert set(levels) == {11, 31}
    for gid, lv in levels.items():
        g = case9.gen_by_id(gid)
        assert len(lv) == 3
        for v in lv:
            assert g.p_min_mw - 1e-9 <= v <= g.p_max_mw + 1e-9
        # spread around the unit's base-case output
        assert lv[0] < lv[1] < lv[2]


def test_explicit_levels_override(case9):
    r = ScenarioRanges(restricted_gen_levels=(0.1, 0.5))
    levels = default_restricted_levels(case9, r)
    assert levels[11] == (10.0, 50.0)
    assert levels[31] == (10.0, 50.0)


def test_no_outage_candidates():
    doc = json.loads(CASE9.read_text())
    for g in doc["gens"]:
        g["outage_candidate"] = False
    case = parse_case(doc)
    with pytest.raises(NoOutageCandidates):
        generate_scenarios(case, ScenarioRanges(), 4, seed=0)


def test_bad_ranges_rejected():
    with pytest.raises(DatasetError):
        ScenarioRanges(load_scale=(1.1, 0.9))
    with pytest.raises(DatasetError):
        ScenarioRanges(gfm_alpha=(0.0, 1.5))
    with pytest.raises(DatasetError):
        ScenarioRanges(ibr_utilization=(-0.1, 1.0))
    with pytest.raises(DatasetError):
        ScenarioRanges(n_default_levels=0)


# ---------------------------------------------------------------------------
# labeling


def test_scenario_case_applies_pins(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 6, seed=1)
    s = scens[0]
    sc = _scenario_case(case9, s)
    g = sc.gen_by_id(s.restricted_gen_id)
    assert g.p_min_mw == g.p_max_mw == pytest.approx(s.restricted_output_mw)
    for b0, b1 in zip(case9.buses, sc.buses):
        assert b1.load_mw == pytest.approx(b0.load_mw * s.load_scale)
    for p0, p1 in zip(case9.ibrs, sc.ibrs):
        assert p1.p_available_max_mw == pytest.approx(
            p0.p_available_max_mw * s.ibr_scale)


def test_dispatch_respects_scenario(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 6, seed=1)
    s = scens[2]
    sc, disp = _scenario_dispatch(case9, s)
    assert disp.gen_mw[s.restricted_gen_id] == pytest.approx(
        s.restricted_output_mw, abs=1e-6)
    for p in sc.ibrs:
        assert disp.ibr_mw[p.id] == pytest.approx(
            s.ibr_utilization * p.p_available_max_mw, abs=1e-6)
        assert disp.alpha(p.id) == pytest.approx(s.gfm_alpha[p.id])
    assert disp.check(sc) == []


def test_label_scenario_sample_shape(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 6, seed=2)
    smp = label_scenario(case9, scens[0])
    nf = len(case9.gens) + 3 + 2 * len(case9.ibrs) + 2
    assert smp.features.shape == (nf,)
    assert smp.labels.shape == (2 * len(case9.ibrs) + 2,)
    # outage one-hot marks exactly the restricted unit
    names = feature_names(case9)
    hot = {n: v for n, v in zip(names, smp.features)
           if n.startswith("f_ctg_")}
    assert hot[f"f_ctg_{scens[0].restricted_gen_id}"] == 1.0
    assert sum(hot.values()) == 1.0


def test_labels_sane(case9, small_ds):
    assert len(small_ds) == 12
    lnames = list(small_ds.label_names)
    al = small_ds.labels[:, lnames.index("l_alpha_2")]
    hd = small_ds.labels[:, lnames.index("l_hdrm_2")]
    ro = small_ds.labels[:, lnames.index("l_rocof")]
    na = small_ds.labels[:, lnames.index("l_nadir")]
    assert np.all(ro < 0.0)          # generation loss always drops f
    assert np.all(na < 60.0)
    assert np.all(na > 55.0)
    assert np.all((al >= 0.0) & (al <= 1.0))
    assert np.all(hd >= 0.0)


def test_headroom_label_bounded_by_reserve(case9):
    scens = generate_scenarios(case9, ScenarioRanges(), 6, seed=4)
    for s in scens[:3]:
        sc, disp = _scenario_dispatch(case9, s)
        smp = label_scenario(case9, s)
        lnames = label_names(case9)
        hd = smp.labels[list(lnames).index("l_hdrm_2")] * sc.base_mva
        assert hd <= disp.ibr_headroom_mw[2] + 1e-6


def test_zero_alpha_means_zero_headroom(case9):
    r = ScenarioRanges(gfm_alpha=(0.0, 0.0))
    ds = generate_dataset(case9, r, n=4, seed=9)
    assert len(ds) == 4
    lnames = list(ds.label_names)
    assert np.all(ds.labels[:, lnames.index("l_hdrm_2")] == 0.0)
    assert np.all(ds.labels[:, lnames.index("l_alpha_2")] == 0.0)


def test_batch_matches_single(case9, small_ds):
    scens = generate_scenarios(case9, ScenarioRanges(), 12, seed=7)
    for i in (0, 5, 11):
        smp = label_scenario(case9, scens[i])
        got = small_ds.samples[i]
        assert got.scenario_id == smp.scenario_id == scens[i].id
        np.testing.assert_array_equal(got.features, smp.features)
        np.testing.assert_allclose(got.labels, smp.labels,
                                   rtol=0.0, atol=1e-12)


def test_dataset_determinism(case9, small_ds):
    again = generate_dataset(case9, ScenarioRanges(), n=12, seed=7)
    np.testing.assert_array_equal(small_ds.features, again.features)
    np.testing.assert_array_equal(small_ds.labels, again.labels)
    assert [s.scenario_id for s in small_ds.samples] \
        == [s.scenario_id for s in again.samples]


def test_infeasible_scenarios_dropped(case9):
    # forced overgeneration: load halved while the IBR must run at full
    # (scaled-up) availability, above what minimum unit outputs allow
    r = ScenarioRanges(load_scale=(0.5, 0.5), ibr_scale=(1.1, 1.1),
                       ibr_utilization=(1.0, 1.0))
    with pytest.raises(InfeasibleScenario):
        label_scenario(case9, generate_scenarios(case9, r, 6, seed=0)[0])
    ds = generate_dataset(case9, r, n=6, seed=0)
    assert len(ds) == 0


def test_unsettled_raises_and_dropped(case9):
    cfg = SimConfig(event=None, t_end_s=1.6)
    scens = generate_scenarios(case9, ScenarioRanges(), 6, seed=7)
    with pytest.raises(UnsettledSimulation):
        label_scenario(case9, scens[0], sim_config=cfg)
    ds = generate_dataset(case9, ScenarioRanges(), n=6, seed=7,
                          sim_config=cfg)
    assert len(ds) == 0


# ---------------------------------------------------------------------------
# persistence


def test_round_trip(case9, small_ds, tmp_path):
    p = tmp_path / "train.csv"
    write_dataset(small_ds, p, ranges=ScenarioRanges())
    back = read_dataset(p, case=case9)
    assert back.fingerprint == small_ds.fingerprint
    assert back.seed == small_ds.seed
    assert back.schema_version == SCHEMA_VERSION
    assert back.feature_names == small_ds.feature_names
    assert back.label_names == small_ds.label_names
    assert len(back) == len(small_ds)
    for a, b in zip(back.samples, small_ds.samples):
        assert a.scenario_id == b.scenario_id
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
    meta = json.loads((tmp_path / "train.meta.json").read_text())
    assert meta["ranges"]["load_scale"] == [0.9, 1.1]


def test_read_without_case_skips_fingerprint(small_ds, tmp_path):
    p = tmp_path / "d.csv"
    write_dataset(small_ds, p)
    back = read_dataset(p)
    assert len(back) == len(small_ds)


def test_fingerprint_mismatch(small_ds, tmp_path):
    p = tmp_path / "d.csv"
    write_dataset(small_ds, p)
    other = load_case(CASE39)
    with pytest.raises(FingerprintMismatch):
        read_dataset(p, case=other)


def test_schema_mismatches(case9, small_ds, tmp_path):
    p = tmp_path / "d.csv"
    write_dataset(small_ds, p)

    meta_p = tmp_path / "d.meta.json"
    meta = json.loads(meta_p.read_text())
    meta["schema_version"] = 99
    meta_p.write_text(json.dumps(meta))
    with pytest.raises(SchemaMismatch):
        read_dataset(p, case=case9)

    write_dataset(small_ds, p)  # restore
    lines = p.read_text().splitlines()
    lines[0] = lines[0].replace("l_rocof", "l_bogus")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaMismatch):
        read_dataset(p)

    missing = tmp_path / "nometa.csv"
    missing.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaMismatch):
        read_dataset(missing)


def test_trains_with_mlp(case9, small_ds):
    # dataset plugs straight into the trainer's duck-typed interface
    from freqdispatch.mlp import TrainConfig, forward, train
    net, rep = train(small_ds,
                     (len(small_ds.feature_names), 8,
                      len(small_ds.label_names)),
                     TrainConfig(epochs=30, batch_size=4, seed=0))
    assert rep.best_epoch >= 0
    out = forward(net, small_ds.features)
    assert out.shape == small_ds.labels.shape
