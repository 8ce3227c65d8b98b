"""Labeled dataset generation: stratified scenario sampling, dispatch
labeling through the economic model, and frequency labels from the
simulator.

A scenario varies load level, available IBR power, the output of one
outage-prone unit, the GFM/GFL allocation, and how much of the available
IBR power the dispatch actually uses (the rest is the headroom the GFM
can draw on during the transient). Labeling solves the economic dispatch
with the outage-prone unit and the IBR plants held at the scenario's
values, then trips the unit in the simulator and reads the metrics.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispatch import Dispatch, balanced_dispatch
from .features import (SCHEMA_VERSION, feature_names, feature_vector,
                       label_names, label_vector)
from .grid import Contingency, GridCase, case_fingerprint, pin_gen, scale_case
from .lp import solve_lp
from .opf import build_topf, extract_dispatch
from .simulator import SimConfig, simulate, simulate_many

log = logging.getLogger(__name__)


class DatasetError(Exception):
    pass


class NoOutageCandidates(DatasetError):
    pass


class InfeasibleScenario(DatasetError):
    """The pinned economic dispatch has no solution for this scenario."""


class UnsettledSimulation(DatasetError):
    """Trajectory did not reach a flat tail; the labels are untrustworthy."""


class SchemaMismatch(DatasetError):
    pass


class FingerprintMismatch(DatasetError):
    pass


@dataclass(frozen=True)
class ScenarioRanges:
    """Sampling ranges. Bounds are inclusive; lo == hi pins a value."""

    load_scale: tuple[float, float] = (0.9, 1.1)
    ibr_scale: tuple[float, float] = (0.9, 1.1)
    sg_setpoint_scale: tuple[float, float] = (0.75, 1.25)
    gfm_alpha: tuple[float, float] = (0.0, 1.0)
    ibr_utilization: tuple[float, float] = (0.75, 1.0)
    restricted_gen_levels: tuple[float, ...] = ()   # pu on base_mva
    n_default_levels: int = 3

    def __post_init__(self):
        for name in ("load_scale", "ibr_scale", "sg_setpoint_scale",
                     "gfm_alpha", "ibr_utilization"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise DatasetError(f"{name}: bad range [{lo}, {hi}]")
            if lo < 0:
                raise DatasetError(f"{name}: must be non-negative")
        if self.gfm_alpha[1] > 1.0:
            raise DatasetError("gfm_alpha range must stay within [0, 1]")
        if self.ibr_utilization[1] > 1.0:
            raise DatasetError("ibr_utilization range must stay within "
                               "[0, 1]")
        if self.n_default_levels < 1:
            raise DatasetError("need at least one restricted level")

    def to_json_dict(self) -> dict:
        return {"load_scale": list(self.load_scale),
                "ibr_scale": list(self.ibr_scale),
                "sg_setpoint_scale": list(self.sg_setpoint_scale),
                "gfm_alpha": list(self.gfm_alpha),
                "ibr_utilization": list(self.ibr_utilization),
                "restricted_gen_levels": list(self.restricted_gen_levels),
                "n_default_levels": self.n_default_levels}


@dataclass(frozen=True)
class Scenario:
    id: int
    load_scale: float
    ibr_scale: float
    ibr_utilization: float
    restricted_gen_id: int
    restricted_output_mw: float
    gfm_alpha: dict[int, float]
    contingency: Contingency


@dataclass(frozen=True)
class Sample:
    scenario_id: int
    features: np.ndarray
    labels: np.ndarray


@dataclass
class Dataset:
    fingerprint: str
    seed: int
    schema_version: int
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...]
    samples: list[Sample] = field(default_factory=list)

    @property
    def features(self) -> np.ndarray:
        return np.array([s.features for s in self.samples])

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.labels for s in self.samples])

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# scenario sampling


def default_restricted_levels(case: GridCase,
                              ranges: ScenarioRanges) -> dict[int, tuple]:
    """Per-candidate output levels in MW.

    Explicit restricted_gen_levels (pu on base_mva) apply to every
    candidate. Otherwise levels spread sg_setpoint_scale around the
    unit's own output in the unscaled economic dispatch, clamped to its
    limits."""
    cands = case.outage_candidates()
    if not cands:
        raise NoOutageCandidates("case declares no outage candidates")
    if ranges.restricted_gen_levels:
        fixed = tuple(lv * case.base_mva
                      for lv in ranges.restricted_gen_levels)
        return {g.id: fixed for g in cands}
    m = build_topf(case)
    s = solve_lp(m)
    if s.status != "Optimal":
        raise InfeasibleScenario("base case has no economic dispatch, "
                                 "cannot derive restricted levels")
    d = extract_dispatch(m, s, case)
    out = {}
    lo_s, hi_s = ranges.sg_setpoint_scale
    for g in cands:
        nominal = d.gen_mw[g.id]
        levels = np.linspace(lo_s * nominal, hi_s * nominal,
                             ranges.n_default_levels)
        levels = np.clip(levels, g.p_min_mw, g.p_max_mw)
        out[g.id] = tuple(float(v) for v in levels)
    return out


def generate_scenarios(case: GridCase, ranges: ScenarioRanges, n: int,
                       seed: int) -> list[Scenario]:
    """n scenarios, stratified over (outage candidate, restricted level)
    cells; every other quantity drawn uniformly inside its range."""
    if n < 1:
        raise DatasetError("n must be at least 1")
    levels = default_restricted_levels(case, ranges)
    cells = [(g.id, lv) for g in case.outage_candidates()
             for lv in levels[g.id]]
    rng = np.random.default_rng(seed)
    per_cell = n // len(cells)
    extra = n % len(cells)
    out: list[Scenario] = []
    sid = 0
    for k, (gid, lv) in enumerate(cells):
        count = per_cell + (1 if k < extra else 0)
        for _ in range(count):
            load_s = rng.uniform(*ranges.load_scale)
            ibr_s = rng.uniform(*ranges.ibr_scale)
            util = rng.uniform(*ranges.ibr_utilization)
            alpha = {p.id: float(rng.uniform(*ranges.gfm_alpha))
                     for p in case.ibrs}
            gen = case.gen_by_id(gid)
            pinned = float(np.clip(lv, gen.p_min_mw, gen.p_max_mw))
            out.append(Scenario(
                id=sid, load_scale=float(load_s), ibr_scale=float(ibr_s),
                ibr_utilization=float(util), restricted_gen_id=gid,
                restricted_output_mw=pinned, gfm_alpha=alpha,
                contingency=Contingency(outaged_gen_id=gid)))
            sid += 1
    return out


# ---------------------------------------------------------------------------
# labeling


def _scenario_case(case: GridCase, s: Scenario) -> GridCase:
    scaled = scale_case(case, load_scale=s.load_scale,
                        ibr_scale=s.ibr_scale)
    return pin_gen(scaled, s.restricted_gen_id, s.restricted_output_mw)


def _scenario_dispatch(case: GridCase, s: Scenario
                       ) -> tuple[GridCase, Dispatch]:
    """Solve the economic dispatch with the scenario's pins applied."""
    sc = _scenario_case(case, s)
    m = build_topf(sc)
    for p in sc.ibrs:
        val = s.ibr_utilization * p.p_available_max_mw
        m.set_bounds(m.var_index(f"pibr_{p.id}"), val, val)
    sol = solve_lp(m)
    if sol.status != "Optimal":
        raise InfeasibleScenario(f"scenario {s.id}: dispatch "
                                 f"{sol.status.lower()}")
    d = extract_dispatch(m, sol, sc)
    return sc, balanced_dispatch(sc, d.gen_mw, d.ibr_mw, s.gfm_alpha)


def label_scenario(case: GridCase, s: Scenario,
                   sim_config: SimConfig | None = None) -> Sample:
    """Features from the pinned dispatch, labels from one simulation."""
    sc, disp = _scenario_dispatch(case, s)
    cfg = sim_config or SimConfig(event=s.contingency)
    if cfg.event != s.contingency:
        cfg = dataclasses.replace(cfg, event=s.contingency)
    res = simulate(sc, disp, cfg)
    if not res.metrics.settled:
        raise UnsettledSimulation(f"scenario {s.id}: trajectory still "
                                  "moving at t_end")
    return Sample(scenario_id=s.id,
                  features=feature_vector(sc, disp,
                                          s.contingency.outaged_gen_id),
                  labels=label_vector(sc, disp, res.metrics))


def generate_dataset(case: GridCase, ranges: ScenarioRanges | None = None,
                     n: int = 2000, seed: int = 0,
                     sim_config: SimConfig | None = None,
                     max_workers: int = 4) -> Dataset:
    """Chain sampling, dispatch labeling, and batched simulation.

    Dispatch solves run on a bounded worker pool; results are assembled
    in scenario-id order, so the output is deterministic for a given
    (case, ranges, n, seed) and integration step. Infeasible and
    unsettled scenarios are logged and skipped."""
    ranges = ranges or ScenarioRanges()
    scenarios = generate_scenarios(case, ranges, n, seed)

    def prep(s: Scenario):
        try:
            return _scenario_dispatch(case, s)
        except InfeasibleScenario:
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        prepped = list(pool.map(prep, scenarios))

    kept: list[tuple[Scenario, GridCase, Dispatch]] = []
    n_infeasible = 0
    for s, pr in zip(scenarios, prepped):
        if pr is None:
            n_infeasible += 1
            log.info("scenario %d: infeasible dispatch, skipped", s.id)
            continue
        kept.append((s, pr[0], pr[1]))

    base_cfg = sim_config or SimConfig(event=None)
    cfg = dataclasses.replace(base_cfg, event=None)
    metrics = simulate_many([c for _, c, _ in kept],
                            [d for _, _, d in kept], cfg,
                            [s.contingency for s, _, _ in kept])

    ds = Dataset(fingerprint=case_fingerprint(case), seed=seed,
                 schema_version=SCHEMA_VERSION,
                 feature_names=feature_names(case),
                 label_names=label_names(case))
    n_unsettled = 0
    n_diverged = 0
    for (s, sc, disp), met in zip(kept, metrics):
        if met is None:
            n_diverged += 1
            log.info("scenario %d: simulation diverged, skipped", s.id)
            continue
        if not met.settled:
            n_unsettled += 1
            log.info("scenario %d: unsettled at t_end, skipped", s.id)
            continue
        ds.samples.append(Sample(
            scenario_id=s.id,
            features=feature_vector(sc, disp, s.contingency.outaged_gen_id),
            labels=label_vector(sc, disp, met)))
    if n_infeasible or n_unsettled or n_diverged:
        log.warning("dropped %d infeasible, %d unsettled, %d diverged of "
                    "%d scenarios", n_infeasible, n_unsettled, n_diverged,
                    len(scenarios))
    return ds


# ---------------------------------------------------------------------------
# persistence


def _meta_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_dataset(ds: Dataset, path,
                  ranges: ScenarioRanges | None = None) -> None:
    """CSV (one header row, full-precision values) plus a metadata JSON
    next to it."""
    path = Path(path)
    header = [*ds.feature_names, *ds.label_names]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for s in ds.samples:
            row = np.concatenate([s.features, s.labels])
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {"schema_version": ds.schema_version,
            "fingerprint": ds.fingerprint,
            "seed": ds.seed,
            "n_samples": len(ds.samples),
            "scenario_ids": [s.scenario_id for s in ds.samples],
            "feature_names": list(ds.feature_names),
            "label_names": list(ds.label_names)}
    if ranges is not None:
        meta["ranges"] = ranges.to_json_dict()
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def read_dataset(path, case: GridCase | None = None) -> Dataset:
    """Load a dataset; verify schema, header consistency, and (when a
    case is supplied) the fingerprint."""
    path = Path(path)
    try:
        with open(_meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise SchemaMismatch(f"no metadata file next to {path}")
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"schema version {meta.get('schema_version')}"
                             f" != supported {SCHEMA_VERSION}")
    if case is not None and case_fingerprint(case) != meta["fingerprint"]:
        raise FingerprintMismatch("dataset was generated from a different "
                                  "case")
    fnames = tuple(meta["feature_names"])
    lnames = tuple(meta["label_names"])
    if case is not None:
        if fnames != feature_names(case) or lnames != label_names(case):
            raise SchemaMismatch("dataset schema does not match the case")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != [*fnames, *lnames]:
            raise SchemaMismatch("CSV header does not match the metadata")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    nf = len(fnames)
    ids = meta.get("scenario_ids") or list(range(len(rows)))
    if len(ids) != len(rows):
        raise SchemaMismatch(f"metadata lists {len(ids)} samples, CSV has "
                             f"{len(rows)}")
    ds = Dataset(fingerprint=meta["fingerprint"], seed=meta["seed"],
                 schema_version=meta["schema_version"],
                 feature_names=fnames, label_names=lnames)
    for sid, row in zip(ids, rows):
        vals = np.array([float(v) for v in row])
        if vals.size != nf + len(lnames):
            raise SchemaMismatch("CSV row width does not match the header")
        ds.samples.append(Sample(scenario_id=sid, features=vals[:nf],
                                 labels=vals[nf:]))
    return ds
