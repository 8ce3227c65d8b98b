"""Dispatch model builders and solvers.

Three models share one DC network core:

- build_topf: economic dispatch, no frequency awareness.
- build_lfcopf: adds a linear RoCoF cap on the outage-prone unit derived
  from the uniform swing model. No nadir constraint.
- build_dlfcopf: embeds a trained predictor as linear/mixed-integer rows
  and constrains its RoCoF/nadir outputs, couples predicted headroom to
  the IBR setpoint, and splits each plant into GFM/GFL shares through a
  McCormick envelope of P_gfm = P_ibr * alpha.

ReLU encodings: BPWL (exact, one binary per unstable neuron), CTAR
(triangle relaxation), PCTAR (triangle + penalty), PCAR (half-space +
penalty, no interval bounds needed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispatch import Dispatch
from .features import feature_names, label_names
from .grid import Contingency, GridCase, inertia_sum_pu
from .lp import (INF, OptModel, Solution, pwl_quadratic, solve_lp,
                 solve_milp, variable_ranges)
from .mlp import MlpNet, NeuronBounds, interval_bounds

ENCODINGS = ("BPWL", "CTAR", "PCTAR", "PCAR")

# wired model variables may overhang the bound box by this much (units of
# the feature) before the embedding refuses to use the bounds
BOX_TOL = 1e-9


class OpfError(Exception):
    pass


class NotOptimal(OpfError):
    """Dispatch extraction needs an Optimal kernel solution."""


class UnsoundBounds(OpfError):
    """A wired input can leave the box the neuron bounds were built on."""


class FeatureMismatch(OpfError):
    """Predictor schema does not match the case."""


@dataclass(frozen=True)
class FreqLimits:
    """Frequency security limits. -inf disables a limit."""

    rocof_limit_hz_per_s: float = -0.5
    nadir_limit_hz: float = 59.5

    def __post_init__(self):
        if not self.rocof_limit_hz_per_s < 0:
            raise OpfError("rocof limit must be negative (Hz/s, a drop)")

    @classmethod
    def disabled(cls) -> "FreqLimits":
        return cls(rocof_limit_hz_per_s=-INF, nadir_limit_hz=-INF)

    @property
    def rocof_enabled(self) -> bool:
        return self.rocof_limit_hz_per_s > -INF

    @property
    def nadir_enabled(self) -> bool:
        return self.nadir_limit_hz > -INF


@dataclass(frozen=True)
class EncodingChoice:
    kind: str = "BPWL"
    penalty_coefficient: float = 5000.0

    def __post_init__(self):
        if self.kind not in ENCODINGS:
            raise OpfError(f"unknown encoding {self.kind!r}; "
                           f"expected one of {ENCODINGS}")
        if self.penalty_coefficient < 0:
            raise OpfError("penalty coefficient must be >= 0")
        if self.kind in ("PCTAR", "PCAR") and self.penalty_coefficient == 0:
            raise OpfError(f"{self.kind} needs a positive penalty")

    @property
    def penalized(self) -> bool:
        return self.kind in ("PCTAR", "PCAR")


# ---------------------------------------------------------------------------
# T-OPF core


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise OpfError(msg)


def build_topf(case: GridCase, n_segments: int = 10) -> OptModel:
    """Economic DC dispatch. Cost is the piecewise-linear over-estimate of
    each unit's quadratic cost; meta carries the worst-case chord error."""
    _require(n_segments >= 1, "need at least one cost segment")
    m = OptModel(f"topf[{case.name}]" if case.name else "topf")
    base = case.base_mva

    theta = {}
    for b in case.buses:
        theta[b.id] = m.add_var(f"theta_{b.id}")
    m.set_bounds(theta[case.slack_bus], 0.0, 0.0)

    flow = {}
    for ln in case.lines:
        j = m.add_var(f"flow_{ln.id}", -ln.thermal_limit_mw,
                      ln.thermal_limit_mw)
        flow[ln.id] = j
        k = base / ln.reactance_pu
        m.add_constr({j: 1.0, theta[ln.from_bus]: -k, theta[ln.to_bus]: k},
                     "=", 0.0, name=f"def_flow_{ln.id}")

    pwl_err = 0.0
    for g in case.gens:
        j = m.add_var(f"pg_{g.id}", g.p_min_mw, g.p_max_mw)
        if g.p_max_mw - g.p_min_mw <= 1e-12:
            # pinned unit: cost is a constant, no segments to build
            p = g.p_min_mw
            m.obj_const += g.cost_a * p * p + g.cost_b * p + g.cost_c
            continue
        m.add_pwl_cost(j, pwl_quadratic(g.cost_a, g.cost_b, g.cost_c,
                                        g.p_min_mw, g.p_max_mw, n_segments))
        width = (g.p_max_mw - g.p_min_mw) / n_segments
        pwl_err += g.cost_a * width * width / 4.0

    for p in case.ibrs:
        m.add_var(f"pibr_{p.id}", 0.0, p.p_available_max_mw)

    for b in case.buses:
        coefs: dict[int, float] = {}
        for g in case.gens:
            if g.bus == b.id:
                coefs[m.var_index(f"pg_{g.id}")] = 1.0
        for p in case.ibrs:
            if p.bus == b.id:
                coefs[m.var_index(f"pibr_{p.id}")] = 1.0
        for ln in case.lines:
            if ln.from_bus == b.id:
                coefs[flow[ln.id]] = coefs.get(flow[ln.id], 0.0) - 1.0
            if ln.to_bus == b.id:
                coefs[flow[ln.id]] = coefs.get(flow[ln.id], 0.0) + 1.0
        m.add_constr(coefs, "=", b.load_mw, name=f"bal_{b.id}")

    m.meta = {"kind": "topf", "n_segments": n_segments,
              "pwl_cost_error_bound": pwl_err}
    return m


def rocof_cap_mw(case: GridCase, c: Contingency, limits: FreqLimits,
                 include_outaged_inertia: bool = False) -> float:
    """Largest loss the uniform swing model allows under the RoCoF limit."""
    excl = None if include_outaged_inertia else c.outaged_gen_id
    h_mw_s = inertia_sum_pu(case, exclude_gen_id=excl) * case.base_mva
    return -limits.rocof_limit_hz_per_s * 2.0 * h_mw_s / case.base_freq_hz


def uniform_rocof_estimate(case: GridCase, c: Contingency, p_otg_mw: float,
                           include_outaged_inertia: bool = False) -> float:
    """COI RoCoF of the uniform swing model right after losing p_otg_mw."""
    excl = None if include_outaged_inertia else c.outaged_gen_id
    h_mw_s = inertia_sum_pu(case, exclude_gen_id=excl) * case.base_mva
    return -case.base_freq_hz * p_otg_mw / (2.0 * h_mw_s)


def build_lfcopf(case: GridCase, c: Contingency, limits: FreqLimits,
                 include_outaged_inertia: bool = False,
                 n_segments: int = 10) -> OptModel:
    """T-OPF plus the uniform-model RoCoF cap on the outaged unit's output.
    Deliberately carries no nadir constraint."""
    case.gen_by_id(c.outaged_gen_id)  # raises UnknownGen
    m = build_topf(case, n_segments)
    if limits.rocof_enabled:
        cap = rocof_cap_mw(case, c, limits, include_outaged_inertia)
        m.add_constr({m.var_index(f"pg_{c.outaged_gen_id}"): 1.0},
                     "<=", cap, name="rocof_cap")
    m.meta.update({"kind": "lfcopf", "contingency": c, "limits": limits,
                   "include_outaged_inertia": include_outaged_inertia})
    return m


# ---------------------------------------------------------------------------
# predictor embedding


@dataclass
class Embedding:
    """Handles into the rows/variables a network embedding created."""

    zhat_idx: list[np.ndarray]
    z_idx: list[np.ndarray]
    bin_idx: list[np.ndarray]          # empty arrays unless BPWL
    out_idx: dict[str, int]            # label name -> output variable
    penalty_obj: dict[int, float]      # z variable -> objective coefficient
    unstable: list[np.ndarray]         # bool mask per hidden layer
    enc: EncodingChoice

    def outputs(self, s: Solution) -> dict[str, float]:
        return {name: s.value(j) for name, j in self.out_idx.items()}

    def relu_violation(self, s: Solution) -> float:
        """max |z - relu(zhat)| over hidden neurons; 0 for linear nets."""
        worst = 0.0
        for zh, z in zip(self.zhat_idx, self.z_idx):
            if zh.size == 0:
                continue
            zhat = np.array([s.value(j) for j in zh])
            zval = np.array([s.value(j) for j in z])
            worst = max(worst, float(np.abs(zval - np.maximum(zhat, 0.0))
                                     .max()))
        return worst

    def n_binaries(self) -> int:
        return sum(b.size for b in self.bin_idx)


def _folded_layers(net: MlpNet) -> list[tuple[np.ndarray, np.ndarray]]:
    """Copy the layers with input normalization folded into the first and
    output de-normalization folded into the last."""
    layers = [(w.copy(), b.copy()) for w, b in zip(net.weights, net.biases)]
    w0, b0 = layers[0]
    inv = 1.0 / net.in_norm.std
    layers[0] = (w0 * inv[None, :], b0 - w0 @ (net.in_norm.mean * inv))
    wl, bl = layers[-1]
    std, mean = net.out_norm.std, net.out_norm.mean
    layers[-1] = (wl * std[:, None], bl * std + mean)
    return layers


def _check_wiring(m: OptModel, wiring: list, bounds: NeuronBounds) -> None:
    if len(wiring) != bounds.input_lo.size:
        raise FeatureMismatch(f"wiring covers {len(wiring)} features, "
                              f"bounds box has {bounds.input_lo.size}")
    for i, spec in enumerate(wiring):
        lo_i = bounds.input_lo[i] - BOX_TOL
        hi_i = bounds.input_hi[i] + BOX_TOL
        if spec[0] == "const":
            v = spec[1]
            if not lo_i <= v <= hi_i:
                raise UnsoundBounds(f"feature {i}: constant {v} outside "
                                    f"bound box [{bounds.input_lo[i]}, "
                                    f"{bounds.input_hi[i]}]")
        elif spec[0] == "var":
            _, j, scale, offset = spec
            if scale == 0.0:
                raise FeatureMismatch(f"feature {i}: zero wiring scale")
            v = m.vars[j]
            ends = sorted([scale * v.lb + offset, scale * v.ub + offset])
            if ends[0] < lo_i or ends[1] > hi_i:
                raise UnsoundBounds(
                    f"feature {i}: variable {v.name!r} spans "
                    f"[{ends[0]}, {ends[1]}], outside bound box "
                    f"[{bounds.input_lo[i]}, {bounds.input_hi[i]}]")
        else:
            raise FeatureMismatch(f"feature {i}: bad wiring entry {spec!r}")


def embed_network(m: OptModel, net: MlpNet, bounds: NeuronBounds,
                  enc: EncodingChoice, wiring: list,
                  prefix: str = "nn") -> Embedding:
    """Add the network as rows of m and return handles to its pieces.

    wiring: one entry per feature, either ("const", value) or
    ("var", var_index, scale, offset) meaning feature = scale*x + offset.
    Bounds must have been computed for a box that contains every wired
    input's reachable range (checked; UnsoundBounds otherwise).
    """
    _check_wiring(m, wiring, bounds)
    layers = _folded_layers(net)
    n_hidden = len(layers) - 1
    if len(bounds.lower) != n_hidden:
        raise FeatureMismatch(f"bounds describe {len(bounds.lower)} hidden "
                              f"layers, net has {n_hidden}")

    # previous-layer activations as (var terms, constant) affine pairs
    prev: list[tuple[dict[int, float], float]] = []
    for spec in wiring:
        if spec[0] == "const":
            prev.append(({}, spec[1]))
        else:
            _, j, scale, offset = spec
            prev.append(({j: scale}, offset))

    emb = Embedding(zhat_idx=[], z_idx=[], bin_idx=[], out_idx={},
                    penalty_obj={}, unstable=[], enc=enc)
    c_h = enc.penalty_coefficient

    for layer in range(n_hidden):
        w, bvec = layers[layer]
        hl = bounds.lower[layer]
        hu = bounds.upper[layer]
        zh_ids = np.empty(w.shape[0], dtype=int)
        z_ids = np.empty(w.shape[0], dtype=int)
        b_ids = []
        unstable = np.zeros(w.shape[0], dtype=bool)
        for mi in range(w.shape[0]):
            l_i, u_i = float(hl[mi]), float(hu[mi])
            if enc.kind == "PCAR":
                zh = m.add_var(f"{prefix}_zhat_{layer}_{mi}")
            else:
                zh = m.add_var(f"{prefix}_zhat_{layer}_{mi}", l_i, u_i)
            coefs = {zh: 1.0}
            rhs = float(bvec[mi])
            for i, (terms, const) in enumerate(prev):
                rhs += w[mi, i] * const
                for j, sc in terms.items():
                    coefs[j] = coefs.get(j, 0.0) - w[mi, i] * sc
            m.add_constr(coefs, "=", rhs, name=f"{prefix}_aff_{layer}_{mi}")

            if enc.kind == "PCAR":
                z = m.add_var(f"{prefix}_z_{layer}_{mi}", 0.0, INF)
                m.add_constr({z: 1.0, zh: -1.0}, ">=", 0.0,
                             name=f"{prefix}_ge_{layer}_{mi}")
                m.add_obj(z, c_h)
                emb.penalty_obj[z] = c_h
                zh_ids[mi], z_ids[mi] = zh, z
                unstable[mi] = True  # every neuron penalized alike
                continue

            stable_off = u_i <= 0.0
            stable_on = l_i >= 0.0 and not stable_off
            z = m.add_var(f"{prefix}_z_{layer}_{mi}", 0.0, max(0.0, u_i))
            zh_ids[mi], z_ids[mi] = zh, z

            if enc.kind == "BPWL":
                bv = m.add_var(f"{prefix}_b_{layer}_{mi}", binary=True)
                if stable_off:
                    m.set_bounds(bv, 0.0, 0.0)
                elif stable_on:
                    m.set_bounds(bv, 1.0, 1.0)
                b_ids.append(bv)
                m.add_constr({z: 1.0, zh: -1.0, bv: -l_i}, "<=", -l_i,
                             name=f"{prefix}_up_{layer}_{mi}")
                m.add_constr({z: 1.0, zh: -1.0}, ">=", 0.0,
                             name=f"{prefix}_ge_{layer}_{mi}")
                m.add_constr({z: 1.0, bv: -u_i}, "<=", 0.0,
                             name=f"{prefix}_cap_{layer}_{mi}")
                unstable[mi] = not (stable_off or stable_on)
                continue

            # CTAR / PCTAR
            if stable_off:
                m.set_bounds(z, 0.0, 0.0)
            elif stable_on:
                m.add_constr({z: 1.0, zh: -1.0}, "=", 0.0,
                             name=f"{prefix}_pin_{layer}_{mi}")
            else:
                unstable[mi] = True
                m.add_constr({z: 1.0, zh: -1.0}, ">=", 0.0,
                             name=f"{prefix}_ge_{layer}_{mi}")
                m.add_constr({z: (u_i - l_i), zh: -u_i}, "<=", -u_i * l_i,
                             name=f"{prefix}_tri_{layer}_{mi}")
                if enc.kind == "PCTAR":
                    m.add_obj(z, c_h)
                    emb.penalty_obj[z] = c_h

        emb.zhat_idx.append(zh_ids)
        emb.z_idx.append(z_ids)
        emb.bin_idx.append(np.array(b_ids, dtype=int))
        emb.unstable.append(unstable)
        prev = [({int(z_ids[mi]): 1.0}, 0.0) for mi in range(w.shape[0])]

    w, bvec = layers[-1]
    names = (net.label_names if net.label_names
             else tuple(f"y{k}" for k in range(w.shape[0])))
    for k in range(w.shape[0]):
        y = m.add_var(f"{prefix}_out_{names[k]}")
        coefs = {y: 1.0}
        rhs = float(bvec[k])
        for i, (terms, const) in enumerate(prev):
            rhs += w[k, i] * const
            for j, sc in terms.items():
                coefs[j] = coefs.get(j, 0.0) - w[k, i] * sc
        m.add_constr(coefs, "=", rhs, name=f"{prefix}_out_{k}")
        emb.out_idx[names[k]] = y
    return emb


# ---------------------------------------------------------------------------
# DL-FCOPF


def _operating_box(case: GridCase, c: Contingency):
    """Reachable raw-feature intervals for this case and contingency.
    Loads and the one-hot are points; dispatch features span their limits."""
    base = case.base_mva
    lo, hi = [], []
    for g in case.gens:
        lo.append(g.p_min_mw / base)
        hi.append(g.p_max_mw / base)
    for b in case.load_buses():
        lo.append(b.load_mw / base)
        hi.append(b.load_mw / base)
    for _ in range(2):  # gfm then gfl blocks
        for p in case.ibrs:
            lo.append(0.0)
            hi.append(p.p_available_max_mw / base)
    for g in case.outage_candidates():
        flag = 1.0 if g.id == c.outaged_gen_id else 0.0
        lo.append(flag)
        hi.append(flag)
    return np.array(lo), np.array(hi)


def _assemble_dlfcopf(case: GridCase, c: Contingency, net: MlpNet,
                      limits: FreqLimits, enc: EncodingChoice,
                      n_segments: int,
                      boxes: dict[int, tuple[float, float]],
                      bounds: NeuronBounds) -> OptModel:
    m = build_topf(case, n_segments)
    base = case.base_mva
    for p in case.ibrs:
        pm = p.p_available_max_mw
        gfm = m.add_var(f"pgfm_{p.id}", 0.0, pm)
        gfl = m.add_var(f"pgfl_{p.id}", 0.0, pm)
        m.add_constr({gfm: 1.0, gfl: 1.0,
                      m.var_index(f"pibr_{p.id}"): -1.0},
                     "=", 0.0, name=f"split_{p.id}")

    wiring: list = []
    for g in case.gens:
        wiring.append(("var", m.var_index(f"pg_{g.id}"), 1.0 / base, 0.0))
    for b in case.load_buses():
        wiring.append(("const", b.load_mw / base))
    for kind in ("pgfm", "pgfl"):
        for p in case.ibrs:
            wiring.append(("var", m.var_index(f"{kind}_{p.id}"),
                           1.0 / base, 0.0))
    for g in case.outage_candidates():
        wiring.append(("const", 1.0 if g.id == c.outaged_gen_id else 0.0))

    emb = embed_network(m, net, bounds, enc, wiring)

    for p in case.ibrs:
        pm = p.p_available_max_mw
        pibr = m.var_index(f"pibr_{p.id}")
        gfm = m.var_index(f"pgfm_{p.id}")
        y_h = emb.out_idx[f"l_hdrm_{p.id}"]
        y_a = emb.out_idx[f"l_alpha_{p.id}"]
        m.add_constr({pibr: 1.0, y_h: base}, "=", pm,
                     name=f"cap_reserve_{p.id}")
        a_lo, a_hi = boxes.get(p.id, (0.0, 1.0))
        _require(0.0 <= a_lo < a_hi <= 1.0,
                 f"bad alpha box for plant {p.id}")
        if p.id in boxes:
            m.set_bounds(y_a, a_lo, a_hi)
        # McCormick for w = pibr * alpha on [0, pm] x [a_lo, a_hi]
        m.add_constr({gfm: 1.0, pibr: -a_lo}, ">=", 0.0,
                     name=f"mc1_{p.id}")
        m.add_constr({gfm: 1.0, y_a: -pm, pibr: -a_hi}, ">=", -pm * a_hi,
                     name=f"mc2_{p.id}")
        m.add_constr({gfm: 1.0, y_a: -pm, pibr: -a_lo}, "<=", -pm * a_lo,
                     name=f"mc3_{p.id}")
        m.add_constr({gfm: 1.0, pibr: -a_hi}, "<=", 0.0,
                     name=f"mc4_{p.id}")

    if limits.rocof_enabled:
        m.add_constr({emb.out_idx["l_rocof"]: 1.0}, ">=",
                     limits.rocof_limit_hz_per_s, name="lim_rocof")
    if limits.nadir_enabled:
        m.add_constr({emb.out_idx["l_nadir"]: 1.0}, ">=",
                     limits.nadir_limit_hz, name="lim_nadir")

    m.meta.update({"kind": "dlfcopf", "contingency": c, "limits": limits,
                   "enc": enc, "embedding": emb, "alpha_boxes": dict(boxes)})
    return m


def _lp_tightened(case: GridCase, c: Contingency, net: MlpNet,
                  limits: FreqLimits, n_segments: int,
                  boxes: dict[int, tuple[float, float]],
                  bounds: NeuronBounds) -> NeuronBounds:
    """Shrink hidden pre-activation intervals with LP probes.

    Interval propagation treats features as independent, but the network
    inputs here are dispatch variables tied together by power balance,
    the headroom coupling rows and the limit rows. Min/maxing each
    pre-activation over the triangle relaxation respects all of that, so
    the result is a sound and usually much smaller interval. Layers are
    probed in order so deeper layers see the upstream shrinkage. The
    triangle relaxation contains every exact-encoding solution, hence
    intervals stay sound for the binary and penalized encodings too.
    """
    relax = EncodingChoice("CTAR")
    tight = NeuronBounds(lower=[v.copy() for v in bounds.lower],
                         upper=[v.copy() for v in bounds.upper],
                         input_lo=bounds.input_lo.copy(),
                         input_hi=bounds.input_hi.copy())
    for layer in range(len(tight.lower)):
        probe = _assemble_dlfcopf(case, c, net, limits, relax,
                                  n_segments, boxes, tight)
        emb = probe.meta["embedding"]
        idx = [int(j) for j in emb.zhat_idx[layer]]
        for mi, (zlo, zhi) in enumerate(variable_ranges(probe, idx)):
            pad = 1e-6
            lo = max(float(tight.lower[layer][mi]), zlo - pad)
            hi = min(float(tight.upper[layer][mi]), zhi + pad)
            tight.lower[layer][mi] = lo
            tight.upper[layer][mi] = max(hi, lo)
    return tight


def build_dlfcopf(case: GridCase, c: Contingency, net: MlpNet,
                  limits: FreqLimits, enc: EncodingChoice,
                  n_segments: int = 10,
                  alpha_boxes: dict[int, tuple[float, float]] | None = None,
                  tighten_bounds: bool = True) -> OptModel:
    """T-OPF plus the embedded predictor and its coupling constraints.

    Per plant: pibr + base*hdrm_prediction = p_available_max (the setpoint
    reserves exactly the predicted transient use), pgfm + pgfl = pibr, and
    pgfm relaxes pibr*alpha_prediction through a McCormick envelope over
    pibr in [0, p_max] and alpha in alpha_boxes (default [0, 1]). The
    alpha output variable itself is left free unless a box is given, so a
    prediction straying outside [0, 1] shows up as envelope gap rather
    than spurious infeasibility.

    tighten_bounds runs LP probes that shrink the pre-activation
    intervals before encoding; neurons whose interval ends up one-signed
    need no binary or triangle, which shrinks the model the search has
    to cover. Skipped for the unbounded penalty encoding, which never
    reads the intervals.
    """
    fnames = feature_names(case)
    lnames = label_names(case)
    if tuple(net.feature_names) != fnames:
        raise FeatureMismatch("predictor feature names do not match the "
                              "case schema")
    if tuple(net.label_names) != lnames:
        raise FeatureMismatch("predictor label names do not match the "
                              "case schema")
    if c.outaged_gen_id not in [g.id for g in case.outage_candidates()]:
        raise FeatureMismatch(f"gen {c.outaged_gen_id} is not an outage "
                              "candidate, so the one-hot cannot express it")
    if limits.nadir_enabled and not (limits.nadir_limit_hz
                                     < case.base_freq_hz):
        raise OpfError("nadir limit must sit below nominal frequency")
    boxes = alpha_boxes or {}

    lo, hi = _operating_box(case, c)
    bounds = interval_bounds(net, lo, hi)
    if tighten_bounds and enc.kind != "PCAR" and bounds.n_neurons() > 0:
        bounds = _lp_tightened(case, c, net, limits, n_segments, boxes,
                               bounds)
    return _assemble_dlfcopf(case, c, net, limits, enc, n_segments, boxes,
                             bounds)


# ---------------------------------------------------------------------------
# extraction and diagnostics


def dispatch_cost(m: OptModel, s: Solution) -> float:
    """Production cost at the solution: PWL terms plus any linear objective
    that is not an encoding penalty."""
    meta = getattr(m, "meta", {})
    emb = meta.get("embedding")
    pen = emb.penalty_obj if emb is not None else {}
    cost = m.obj_const
    for j, cf in m.obj.items():
        cost += (cf - pen.get(j, 0.0)) * s.value(j)
    for j, pwl in m.pwl_terms:
        cost += pwl.value(s.value(j))
    return cost


def mccormick_gap_mw(m: OptModel, s: Solution, case: GridCase) -> float:
    """max over plants of |pgfm - pibr*alpha| at the solution. 0.0 when the
    model carries no allocation coupling."""
    meta = getattr(m, "meta", {})
    if meta.get("kind") != "dlfcopf":
        return 0.0
    emb: Embedding = meta["embedding"]
    worst = 0.0
    for p in case.ibrs:
        gfm = s.value(m.var_index(f"pgfm_{p.id}"))
        pibr = s.value(m.var_index(f"pibr_{p.id}"))
        alpha = s.value(emb.out_idx[f"l_alpha_{p.id}"])
        worst = max(worst, abs(gfm - pibr * alpha))
    return worst


def extract_dispatch(m: OptModel, s: Solution, case: GridCase) -> Dispatch:
    if s.status != "Optimal":
        raise NotOptimal(f"cannot extract a dispatch from a {s.status!r} "
                         "solution")
    meta = getattr(m, "meta", {})
    kind = meta.get("kind", "topf")
    gen_mw = {g.id: s.value(m.var_index(f"pg_{g.id}")) for g in case.gens}
    ibr_mw = {p.id: s.value(m.var_index(f"pibr_{p.id}"))
              for p in case.ibrs}
    angles = {b.id: s.value(m.var_index(f"theta_{b.id}"))
              for b in case.buses}
    flows = {ln.id: s.value(m.var_index(f"flow_{ln.id}"))
             for ln in case.lines}
    hdrm = {p.id: p.p_available_max_mw - ibr_mw[p.id] for p in case.ibrs}

    pred_rocof = None
    pred_nadir = None
    if kind == "dlfcopf":
        emb: Embedding = meta["embedding"]
        gfm = {p.id: s.value(m.var_index(f"pgfm_{p.id}"))
               for p in case.ibrs}
        gfl = {p.id: ibr_mw[p.id] - gfm[p.id] for p in case.ibrs}
        alpha = {}
        for p in case.ibrs:
            a = s.value(emb.out_idx[f"l_alpha_{p.id}"])
            alpha[p.id] = min(max(a, 0.0), 1.0)
        pred_rocof = s.value(emb.out_idx["l_rocof"])
        pred_nadir = s.value(emb.out_idx["l_nadir"])
    else:
        gfm = {p.id: 0.0 for p in case.ibrs}
        gfl = dict(ibr_mw)
        alpha = {p.id: 0.0 for p in case.ibrs}
        if kind == "lfcopf":
            pred_rocof = uniform_rocof_estimate(
                case, meta["contingency"],
                gen_mw[meta["contingency"].outaged_gen_id],
                meta["include_outaged_inertia"])

    return Dispatch(gen_mw=gen_mw, ibr_mw=ibr_mw, ibr_gfm_mw=gfm,
                    ibr_gfl_mw=gfl, ibr_alpha=alpha, ibr_headroom_mw=hdrm,
                    bus_angle_rad=angles, line_flow_mw=flows,
                    predicted_rocof=pred_rocof, predicted_nadir=pred_nadir,
                    total_cost=dispatch_cost(m, s),
                    solve_time_s=s.wall_time_s)


def solution_diagnostics(m: OptModel, s: Solution,
                         case: GridCase) -> dict:
    meta = getattr(m, "meta", {})
    out = {"status": s.status, "objective": s.objective,
           "wall_time_s": s.wall_time_s, "node_count": s.node_count,
           "mip_gap": s.gap,
           "pwl_cost_error_bound": meta.get("pwl_cost_error_bound", 0.0)}
    if s.status == "Optimal":
        out["cost"] = dispatch_cost(m, s)
        emb = meta.get("embedding")
        if emb is not None:
            out["mccormick_gap_mw"] = mccormick_gap_mw(m, s, case)
            out["relu_violation"] = emb.relu_violation(s)
            out["predictor_outputs"] = emb.outputs(s)
    return out


# ---------------------------------------------------------------------------
# solve wrappers


@dataclass
class OpfResult:
    model: OptModel
    solution: Solution
    dispatch: Dispatch | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.solution.status == "Optimal"


def _solve(m: OptModel, time_limit_s: float) -> Solution:
    if m.binary_indices():
        return solve_milp(m, time_limit_s=time_limit_s)
    return solve_lp(m)


def solve_topf(case: GridCase, n_segments: int = 10) -> OpfResult:
    m = build_topf(case, n_segments)
    s = solve_lp(m)
    d = extract_dispatch(m, s, case) if s.status == "Optimal" else None
    return OpfResult(m, s, d, solution_diagnostics(m, s, case))


def solve_lfcopf(case: GridCase, c: Contingency, limits: FreqLimits,
                 include_outaged_inertia: bool = False,
                 n_segments: int = 10) -> OpfResult:
    m = build_lfcopf(case, c, limits, include_outaged_inertia, n_segments)
    s = solve_lp(m)
    d = extract_dispatch(m, s, case) if s.status == "Optimal" else None
    return OpfResult(m, s, d, solution_diagnostics(m, s, case))


def _diagnose_infeasible(case: GridCase, c: Contingency, net: MlpNet,
                         limits: FreqLimits, enc: EncodingChoice,
                         n_segments: int, time_limit_s: float) -> dict:
    """Re-solve with the frequency limits made elastic and report by how
    much each fails. The slack weight dwarfs production cost, so violation
    is minimized first and cost only breaks ties."""
    m = build_dlfcopf(case, c, net, FreqLimits.disabled(), enc, n_segments)
    emb: Embedding = m.meta["embedding"]
    big = 1e6
    terms = {}
    if limits.rocof_enabled:
        sl = m.add_var("slack_rocof", 0.0, INF)
        m.add_constr({emb.out_idx["l_rocof"]: 1.0, sl: 1.0}, ">=",
                     limits.rocof_limit_hz_per_s, name="lim_rocof_soft")
        m.add_obj(sl, big)
        terms["rocof_violation_hz_per_s"] = sl
    if limits.nadir_enabled:
        sl = m.add_var("slack_nadir", 0.0, INF)
        m.add_constr({emb.out_idx["l_nadir"]: 1.0, sl: 1.0}, ">=",
                     limits.nadir_limit_hz, name="lim_nadir_soft")
        m.add_obj(sl, big)
        terms["nadir_violation_hz"] = sl
    s = _solve(m, time_limit_s)
    if s.status != "Optimal":
        return {"diagnostic_status": s.status}
    return {"diagnostic_status": "Optimal",
            "limit_violations": {k: s.value(j) for k, j in terms.items()}}


def solve_dlfcopf(case: GridCase, c: Contingency, net: MlpNet,
                  limits: FreqLimits, enc: EncodingChoice,
                  n_segments: int = 10, time_limit_s: float = 60.0,
                  refine_alpha: bool = True, refine_tol_frac: float = 1e-3,
                  max_refine_steps: int = 14) -> OpfResult:
    """Build and solve, then optionally tighten the allocation envelope.

    Refinement is a greedy spatial descent: while some plant's envelope
    gap exceeds refine_tol_frac * p_available_max, bisect that plant's
    alpha interval at the predicted allocation and keep the half that
    contains it (falling back to the other half, then to the incumbent,
    when a sub-solve fails). Each step strictly shrinks one interval, so
    the envelope gap of the kept solution is driven toward zero. Infeasible
    root solves trigger an elastic re-solve whose per-limit violations land
    in diagnostics["limit_violations"].
    """
    m = build_dlfcopf(case, c, net, limits, enc, n_segments)
    s = _solve(m, time_limit_s)
    if s.status != "Optimal":
        diag = solution_diagnostics(m, s, case)
        if s.status == "Infeasible":
            diag.update(_diagnose_infeasible(case, c, net, limits, enc,
                                             n_segments, time_limit_s))
        return OpfResult(m, s, None, diag)

    boxes: dict[int, tuple[float, float]] = {}
    steps = 0
    while refine_alpha and steps < max_refine_steps:
        worst_p, worst_gap = None, 0.0
        emb: Embedding = m.meta["embedding"]
        for p in case.ibrs:
            gfm = s.value(m.var_index(f"pgfm_{p.id}"))
            pibr = s.value(m.var_index(f"pibr_{p.id}"))
            alpha = s.value(emb.out_idx[f"l_alpha_{p.id}"])
            gap = abs(gfm - pibr * alpha)
            if (gap > refine_tol_frac * p.p_available_max_mw
                    and gap > worst_gap):
                worst_p, worst_gap = p, gap
        if worst_p is None:
            break
        steps += 1
        lo_b, hi_b = boxes.get(worst_p.id, (0.0, 1.0))
        a_star = s.value(emb.out_idx[f"l_alpha_{worst_p.id}"])
        width = hi_b - lo_b
        cut = min(max(a_star, lo_b + 0.25 * width), hi_b - 0.25 * width)
        first = (lo_b, cut) if a_star <= cut else (cut, hi_b)
        second = (cut, hi_b) if a_star <= cut else (lo_b, cut)
        accepted = False
        for half in (first, second):
            cand_boxes = dict(boxes)
            cand_boxes[worst_p.id] = half
            m2 = build_dlfcopf(case, c, net, limits, enc, n_segments,
                               alpha_boxes=cand_boxes)
            s2 = _solve(m2, time_limit_s)
            if s2.status == "Optimal":
                boxes = cand_boxes
                m, s = m2, s2
                accepted = True
                break
        if not accepted:
            break

    d = extract_dispatch(m, s, case)
    diag = solution_diagnostics(m, s, case)
    diag["alpha_refine_steps"] = steps
    return OpfResult(m, s, d, diag)


# ---------------------------------------------------------------------------
# export


def dispatch_to_json_dict(res: OpfResult, case: GridCase) -> dict:
    meta = getattr(res.model, "meta", {})
    enc = meta.get("enc")
    doc = {"model": meta.get("kind", "topf"),
           "status": res.solution.status,
           "encoding": enc.kind if enc is not None else None,
           "penalty_coefficient": (enc.penalty_coefficient
                                   if enc is not None else None),
           "diagnostics": {k: v for k, v in res.diagnostics.items()
                           if k != "predictor_outputs"}}
    if res.dispatch is not None:
        doc["dispatch"] = res.dispatch.to_json_dict()
    return doc
