"""Static grid data model: buses, lines, generators, inverter plants.

Cases are loaded from JSON files. All parameters are stored in the units
of the case file (MW, MVA, seconds, per-unit reactances on base_mva);
downstream modules convert to per-unit on base_mva for computation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace


class CaseError(Exception):
    """Base class for case handling errors."""


class ParseError(CaseError):
    """Case file is malformed (bad JSON, missing or unknown keys, bad types)."""


class ValidationError(CaseError):
    """Case violates a structural invariant. Carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownGen(CaseError):
    """Referenced generator id does not exist in the case."""


class NotOutageCandidate(CaseError):
    """Generator exists but is not flagged as an outage candidate."""


@dataclass(frozen=True)
class Bus:
    id: int
    load_mw: float = 0.0


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    reactance_pu: float
    thermal_limit_mw: float


@dataclass(frozen=True)
class SyncGen:
    """Synchronous generator.

    inertia_h_s is on the machine base (rating_mva); cost coefficients
    give the quadratic cost a*P^2 + b*P + c with P in MW.
    """

    id: int
    bus: int
    p_min_mw: float
    p_max_mw: float
    inertia_h_s: float
    rating_mva: float
    cost_a: float
    cost_b: float
    cost_c: float
    governor_droop_pu: float
    turbine_time_const_s: float
    outage_candidate: bool = False


@dataclass(frozen=True)
class InverterPlant:
    """Inverter plant at a bus, splittable into a GFM and a GFL share.

    p_available_max_mw is the MPPT capability ceiling. The GFM share
    responds to frequency through droop and virtual inertia filtered by
    a first-order loop with time constant gfm_response_time_const_s.
    """

    id: int
    bus: int
    p_available_max_mw: float
    gfm_droop_pu: float
    gfm_virtual_inertia_s: float
    gfm_response_time_const_s: float


@dataclass(frozen=True)
class Contingency:
    """Sudden outage of one synchronous generator at event_time_s."""

    outaged_gen_id: int
    event_time_s: float = 1.0


@dataclass(frozen=True)
class GridCase:
    """Immutable grid case. Collections are tuples; safe to share."""

    base_mva: float
    base_freq_hz: float
    slack_bus: int
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    gens: tuple[SyncGen, ...]
    ibrs: tuple[InverterPlant, ...]
    name: str = ""

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def gen_by_id(self, gen_id: int) -> SyncGen:
        for g in self.gens:
            if g.id == gen_id:
                return g
        raise UnknownGen(f"no generator with id {gen_id!r}")

    def ibr_by_id(self, ibr_id: int) -> InverterPlant:
        for p in self.ibrs:
            if p.id == ibr_id:
                return p
        raise CaseError(f"no inverter plant with id {ibr_id!r}")

    def load_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.load_mw > 0.0]

    def outage_candidates(self) -> list[SyncGen]:
        return [g for g in self.gens if g.outage_candidate]

    def total_load_mw(self) -> float:
        return sum(b.load_mw for b in self.buses)


_TOP_KEYS = {"base_mva", "base_freq_hz", "slack_bus", "buses", "lines",
             "gens", "ibrs", "name"}
_REQUIRED_TOP = {"base_mva", "buses", "lines", "gens", "ibrs"}


def _build(cls, obj: dict, what: str):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(obj, dict):
        raise ParseError(f"{what}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"{what}: unknown keys {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ParseError(f"{what}: {exc}") from exc


def parse_case(doc: dict) -> GridCase:
    """Build a GridCase from a parsed JSON document and validate it."""
    if not isinstance(doc, dict):
        raise ParseError("case document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ParseError(f"case: unknown top-level keys {sorted(unknown)}")
    missing = _REQUIRED_TOP - set(doc)
    if missing:
        raise ParseError(f"case: missing top-level keys {sorted(missing)}")

    buses = tuple(_build(Bus, o, f"buses[{i}]")
                  for i, o in enumerate(doc["buses"]))
    lines = tuple(_build(Line, o, f"lines[{i}]")
                  for i, o in enumerate(doc["lines"]))
    gens = tuple(_build(SyncGen, o, f"gens[{i}]")
                 for i, o in enumerate(doc["gens"]))
    ibrs = tuple(_build(InverterPlant, o, f"ibrs[{i}]")
                 for i, o in enumerate(doc["ibrs"]))

    slack = doc.get("slack_bus")
    if slack is None:
        # default: lowest-id bus that hosts a synchronous generator
        gen_buses = sorted(g.bus for g in gens)
        if not gen_buses:
            raise ParseError("case: no slack_bus given and no gens to infer it")
        slack = gen_buses[0]

    case = GridCase(
        base_mva=float(doc["base_mva"]),
        base_freq_hz=float(doc.get("base_freq_hz", 60.0)),
        slack_bus=int(slack),
        buses=buses,
        lines=lines,
        gens=gens,
        ibrs=ibrs,
        name=str(doc.get("name", "")),
    )
    violations = validate_case(case)
    if violations:
        raise ValidationError(violations)
    return case


def load_case(path) -> GridCase:
    """Load and validate a case file.

    Raises ParseError for malformed files and ValidationError (carrying
    the violation list) when an invariant fails.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return parse_case(doc)


def serialize_case(case: GridCase) -> dict:
    """Inverse of parse_case: a plain dict that parses back equal."""

    def row(obj):
        return {f.name: getattr(obj, f.name) for f in fields(obj)}

    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "base_freq_hz": case.base_freq_hz,
        "slack_bus": case.slack_bus,
        "buses": [row(b) for b in case.buses],
        "lines": [row(l) for l in case.lines],
        "gens": [row(g) for g in case.gens],
        "ibrs": [row(p) for p in case.ibrs],
    }


def dump_case(case: GridCase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(serialize_case(case), fh, indent=1)
        fh.write("\n")


def case_fingerprint(case: GridCase) -> str:
    """Stable hash of the case content, used to tie datasets to cases."""
    blob = json.dumps(serialize_case(case), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def validate_case(case: GridCase) -> list[str]:
    """Check every structural invariant; violations are data, not errors."""
    v: list[str] = []
    bus_ids = [b.id for b in case.buses]
    bus_set = set(bus_ids)
    if len(bus_set) != len(bus_ids):
        dupes = sorted({i for i in bus_ids if bus_ids.count(i) > 1})
        v.append(f"buses: duplicate ids {dupes}")
    for b in case.buses:
        if not (b.load_mw >= 0.0 and b.load_mw == b.load_mw):
            v.append(f"bus {b.id}: load must be finite and non-negative")

    for ln in case.lines:
        if ln.from_bus == ln.to_bus:
            v.append(f"line {ln.id}: endpoints match (bus {ln.from_bus})")
        if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
            v.append(f"line {ln.id}: endpoint bus missing")
        if not ln.reactance_pu > 0.0:
            v.append(f"line {ln.id}: reactance must be > 0")
        if not ln.thermal_limit_mw > 0.0:
            v.append(f"line {ln.id}: thermal limit must be > 0")

    gen_ids = [g.id for g in case.gens]
    if len(set(gen_ids)) != len(gen_ids):
        v.append("gens: duplicate ids")
    for g in case.gens:
        if g.bus not in bus_set:
            v.append(f"gen {g.id}: bus {g.bus} missing")
        if not (0.0 <= g.p_min_mw <= g.p_max_mw <= g.rating_mva):
            v.append(f"gen {g.id}: need 0 <= p_min <= p_max <= rating")
        if not g.inertia_h_s > 0.0:
            v.append(f"gen {g.id}: inertia must be > 0")
        if not g.governor_droop_pu > 0.0:
            v.append(f"gen {g.id}: governor droop must be > 0")
        if not g.turbine_time_const_s > 0.0:
            v.append(f"gen {g.id}: turbine time constant must be > 0")

    ibr_ids = [p.id for p in case.ibrs]
    if len(set(ibr_ids)) != len(ibr_ids):
        v.append("ibrs: duplicate ids")
    ibr_buses = [p.bus for p in case.ibrs]
    for bus in sorted(set(ibr_buses)):
        if ibr_buses.count(bus) > 1:
            v.append(f"ibrs: more than one plant at bus {bus}")
    for p in case.ibrs:
        if p.bus not in bus_set:
            v.append(f"ibr {p.id}: bus {p.bus} missing")
        if not p.p_available_max_mw >= 0.0:
            v.append(f"ibr {p.id}: p_available_max must be >= 0")
        if not p.gfm_droop_pu > 0.0:
            v.append(f"ibr {p.id}: gfm droop must be > 0")
        if not p.gfm_virtual_inertia_s >= 0.0:
            v.append(f"ibr {p.id}: gfm virtual inertia must be >= 0")
        if not p.gfm_response_time_const_s > 0.0:
            v.append(f"ibr {p.id}: gfm response time constant must be > 0")

    if case.slack_bus not in bus_set:
        v.append(f"slack bus {case.slack_bus} missing")
    if not case.base_mva > 0.0:
        v.append("base_mva must be > 0")
    if not case.base_freq_hz > 0.0:
        v.append("base_freq_hz must be > 0")

    # connectivity: every bus reachable from the first via lines
    if case.buses:
        adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
        for ln in case.lines:
            if ln.from_bus in adj and ln.to_bus in adj:
                adj[ln.from_bus].append(ln.to_bus)
                adj[ln.to_bus].append(ln.from_bus)
        seen = {case.buses[0].id}
        stack = [case.buses[0].id]
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        unreachable = sorted(bus_set - seen)
        if unreachable:
            v.append(f"connectivity: buses {unreachable} unreachable")

    cap = (sum(g.p_max_mw for g in case.gens)
           + sum(p.p_available_max_mw for p in case.ibrs))
    if cap < case.total_load_mw() - 1e-9:
        v.append(f"insolvable: capacity {cap:.1f} MW < load "
                 f"{case.total_load_mw():.1f} MW")
    return v


def apply_contingency(case: GridCase, c: Contingency | int) -> GridCase:
    """Return the case with the outaged generator removed.

    Accepts a Contingency or a bare generator id.
    """
    gid = c.outaged_gen_id if isinstance(c, Contingency) else c
    gen = case.gen_by_id(gid)
    if not gen.outage_candidate:
        raise NotOutageCandidate(
            f"gen {gen.id} is not flagged as an outage candidate")
    remaining = tuple(g for g in case.gens if g.id != gen.id)
    return replace(case, gens=remaining)


def inertia_sum_pu(case: GridCase, exclude_gen_id: int | None = None) -> float:
    """System inertia Sigma H_g * rating_g / base_mva in seconds.

    With exclude_gen_id set, that unit's inertia is left out, which is
    the post-outage system inertia.
    """
    total = 0.0
    for g in case.gens:
        if exclude_gen_id is not None and g.id == exclude_gen_id:
            continue
        total += g.inertia_h_s * g.rating_mva / case.base_mva
    return total


def scale_case(case: GridCase, load_scale: float = 1.0,
               ibr_scale: float = 1.0) -> GridCase:
    """Scale every bus load and every plant's available power ceiling."""
    buses = tuple(replace(b, load_mw=b.load_mw * load_scale)
                  for b in case.buses)
    ibrs = tuple(replace(p, p_available_max_mw=p.p_available_max_mw * ibr_scale)
                 for p in case.ibrs)
    return replace(case, buses=buses, ibrs=ibrs)


def pin_gen(case: GridCase, gen_id: int, p_mw: float) -> GridCase:
    """Fix one generator's output by collapsing its limits to p_mw."""
    gen = case.gen_by_id(gen_id)
    p = min(max(p_mw, 0.0), gen.rating_mva)
    gens = tuple(replace(g, p_min_mw=p, p_max_mw=p) if g.id == gen_id else g
                 for g in case.gens)
    return replace(case, gens=gens)
