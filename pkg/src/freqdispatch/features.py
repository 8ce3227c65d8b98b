"""Canonical feature/label schema shared by dataset generation and the
dispatch models that embed a trained predictor.

Feature vector, in order: per-SG output pu (case gen order), per-load-bus
load pu (bus order), per-IBR GFM output pu, per-IBR GFL output pu (plant
order), contingency one-hot over outage candidates. All powers are pu on
the case's base_mva. Labels: per-IBR GFM allocation share, per-IBR
transient headroom use pu, worst RoCoF Hz/s, frequency nadir Hz.
"""

from __future__ import annotations

import numpy as np

from .dispatch import Dispatch
from .grid import GridCase
from .simulator import FreqMetrics

SCHEMA_VERSION = 1


def feature_names(case: GridCase) -> tuple[str, ...]:
    names = [f"f_pg_{g.id}" for g in case.gens]
    names += [f"f_load_{b.id}" for b in case.load_buses()]
    names += [f"f_pgfm_{p.id}" for p in case.ibrs]
    names += [f"f_pgfl_{p.id}" for p in case.ibrs]
    names += [f"f_ctg_{g.id}" for g in case.outage_candidates()]
    return tuple(names)


def label_names(case: GridCase) -> tuple[str, ...]:
    names = [f"l_alpha_{p.id}" for p in case.ibrs]
    names += [f"l_hdrm_{p.id}" for p in case.ibrs]
    names += ["l_rocof", "l_nadir"]
    return tuple(names)


def feature_vector(case: GridCase, d: Dispatch,
                   outaged_gen_id: int) -> np.ndarray:
    """Features for one operating point. Loads come from the case itself."""
    base = case.base_mva
    vals = [d.gen_mw[g.id] / base for g in case.gens]
    vals += [b.load_mw / base for b in case.load_buses()]
    vals += [d.gfm_mw(p.id) / base for p in case.ibrs]
    vals += [d.gfl_mw(p.id) / base for p in case.ibrs]
    vals += [1.0 if g.id == outaged_gen_id else 0.0
             for g in case.outage_candidates()]
    return np.array(vals)


def label_vector(case: GridCase, d: Dispatch,
                 metrics: FreqMetrics) -> np.ndarray:
    base = case.base_mva
    vals = [d.alpha(p.id) for p in case.ibrs]
    vals += [metrics.headroom_used_mw[p.id] / base for p in case.ibrs]
    vals += [metrics.worst_rocof_hz_per_s, metrics.nadir_hz]
    return np.array(vals)
