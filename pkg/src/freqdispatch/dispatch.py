"""Dispatch record shared by the OPF builders and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

from .grid import GridCase


@dataclass(frozen=True)
class Dispatch:
    """A dispatch point: unit outputs plus solution metadata.

    Power values are MW at the case's base. ibr_gfm_mw + ibr_gfl_mw
    must equal ibr_mw per plant; alpha is the GFM share of the plant
    output and of its converter capacity.
    """

    gen_mw: dict[int, float]
    ibr_mw: dict[int, float]
    ibr_gfm_mw: dict[int, float] = field(default_factory=dict)
    ibr_gfl_mw: dict[int, float] = field(default_factory=dict)
    ibr_alpha: dict[int, float] = field(default_factory=dict)
    ibr_headroom_mw: dict[int, float] = field(default_factory=dict)
    bus_angle_rad: dict[int, float] = field(default_factory=dict)
    line_flow_mw: dict[int, float] = field(default_factory=dict)
    predicted_rocof: float | None = None
    predicted_nadir: float | None = None
    total_cost: float | None = None
    solve_time_s: float = 0.0

    def plant_mw(self, ibr_id: int) -> float:
        return self.ibr_mw[ibr_id]

    def gfm_mw(self, ibr_id: int) -> float:
        if ibr_id in self.ibr_gfm_mw:
            return self.ibr_gfm_mw[ibr_id]
        a = self.ibr_alpha.get(ibr_id, 0.0)
        return a * self.ibr_mw[ibr_id]

    def gfl_mw(self, ibr_id: int) -> float:
        return self.ibr_mw[ibr_id] - self.gfm_mw(ibr_id)

    def alpha(self, ibr_id: int) -> float:
        if ibr_id in self.ibr_alpha:
            return self.ibr_alpha[ibr_id]
        p = self.ibr_mw.get(ibr_id, 0.0)
        return self.ibr_gfm_mw.get(ibr_id, 0.0) / p if p > 1e-12 else 0.0

    def total_injection_mw(self) -> float:
        return sum(self.gen_mw.values()) + sum(self.ibr_mw.values())

    def check(self, case: GridCase, tol_mw: float = 1e-4) -> list[str]:
        """Internal-consistency violations, empty when clean."""
        out = []
        for i in self.ibr_mw:
            split = self.gfm_mw(i) + self.gfl_mw(i)
            if abs(split - self.ibr_mw[i]) > tol_mw:
                out.append(f"ibr {i}: gfm+gfl={split} != total "
                           f"{self.ibr_mw[i]}")
            a = self.alpha(i)
            if not -1e-9 <= a <= 1 + 1e-9:
                out.append(f"ibr {i}: alpha {a} outside [0,1]")
            plant = case.ibr_by_id(i)
            used = self.ibr_mw[i] + self.ibr_headroom_mw.get(i, 0.0)
            if used > plant.p_available_max_mw + 1e-6 + tol_mw:
                out.append(f"ibr {i}: output+headroom {used} exceeds "
                           f"available {plant.p_available_max_mw}")
        return out

    def to_json_dict(self) -> dict:
        return {
            "gen_mw": {str(k): v for k, v in self.gen_mw.items()},
            "ibr_mw": {str(k): v for k, v in self.ibr_mw.items()},
            "ibr_gfm_mw": {str(k): v for k, v in self.ibr_gfm_mw.items()},
            "ibr_gfl_mw": {str(k): v for k, v in self.ibr_gfl_mw.items()},
            "ibr_alpha": {str(k): v for k, v in self.ibr_alpha.items()},
            "ibr_headroom_mw": {str(k): v
                                for k, v in self.ibr_headroom_mw.items()},
            "bus_angle_rad": {str(k): v
                              for k, v in self.bus_angle_rad.items()},
            "line_flow_mw": {str(k): v
                             for k, v in self.line_flow_mw.items()},
            "predicted_rocof": self.predicted_rocof,
            "predicted_nadir": self.predicted_nadir,
            "total_cost": self.total_cost,
            "solve_time_s": self.solve_time_s,
        }


def balanced_dispatch(case: GridCase, gen_mw: dict[int, float],
                      ibr_mw: dict[int, float],
                      ibr_alpha: dict[int, float] | None = None) -> Dispatch:
    """Assemble a Dispatch with the GFM/GFL split derived from alpha."""
    alpha = dict(ibr_alpha or {})
    gfm = {}
    gfl = {}
    hd = {}
    for p in case.ibrs:
        a = alpha.get(p.id, 0.0)
        out = ibr_mw.get(p.id, 0.0)
        gfm[p.id] = a * out
        gfl[p.id] = (1.0 - a) * out
        hd[p.id] = max(p.p_available_max_mw - out, 0.0)
        alpha.setdefault(p.id, a)
    return Dispatch(gen_mw=dict(gen_mw), ibr_mw=dict(ibr_mw),
                    ibr_gfm_mw=gfm, ibr_gfl_mw=gfl, ibr_alpha=alpha,
                    ibr_headroom_mw=hd)


def dispatch_from_json_dict(doc: dict) -> Dispatch:
    """Inverse of to_json_dict. Accepts the bare dispatch mapping or a
    solver export that nests it under "dispatch"."""
    if "dispatch" in doc and "gen_mw" not in doc:
        doc = doc["dispatch"]

    def ik(key):
        return {int(k): float(v) for k, v in (doc.get(key) or {}).items()}

    return Dispatch(gen_mw=ik("gen_mw"), ibr_mw=ik("ibr_mw"),
                    ibr_gfm_mw=ik("ibr_gfm_mw"), ibr_gfl_mw=ik("ibr_gfl_mw"),
                    ibr_alpha=ik("ibr_alpha"),
                    ibr_headroom_mw=ik("ibr_headroom_mw"),
                    bus_angle_rad=ik("bus_angle_rad"),
                    line_flow_mw=ik("line_flow_mw"),
                    predicted_rocof=doc.get("predicted_rocof"),
                    predicted_nadir=doc.get("predicted_nadir"),
                    total_cost=doc.get("total_cost"),
                    solve_time_s=doc.get("solve_time_s", 0.0))
