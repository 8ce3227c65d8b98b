"""Three-model comparison reports and sensitivity sweeps.

run_pipeline solves the plain, inertia-capped, and network-embedded
dispatch models on one case, pushes every feasible dispatch through the
simulator with the same contingency, and tabulates estimated versus
measured frequency metrics. Sweeps vary one axis (network width, depth,
penalty coefficient, or encoding) and record error and solve time per
grid point.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend pinned first

from .grid import Contingency, GridCase
from .lp import KernelError
from .mlp import MlpError, MlpNet, TrainConfig, train
from .opf import (ENCODINGS, EncodingChoice, FreqLimits, OpfError, OpfResult,
                  solve_dlfcopf, solve_lfcopf, solve_topf)
from .simulator import SimConfig, SimError, simulate


class ReportError(Exception):
    pass


MODEL_NAMES = ("topf", "lfcopf", "dlfcopf")


@dataclass
class ModelRow:
    """One comparison line: a model's dispatch and how it fared in the
    simulator. Estimate fields stay None where the model makes none."""

    model: str
    status: str
    cost: float | None = None
    solve_time_s: float = 0.0
    gen_mw: dict[int, float] | None = None
    ibr_mw: dict[int, float] | None = None
    ibr_gfm_mw: dict[int, float] | None = None
    ibr_alpha: dict[int, float] | None = None
    headroom_reserved_mw: dict[int, float] | None = None
    headroom_used_mw: dict[int, float] | None = None
    est_rocof_hz_per_s: float | None = None
    est_nadir_hz: float | None = None
    sim_rocof_hz_per_s: float | None = None
    sim_nadir_hz: float | None = None
    rocof_rel_err: float | None = None
    nadir_rel_err: float | None = None
    sim_settled: bool | None = None
    limit_violations: dict | None = None
    sim: object = None                    # SimResult, not serialized

    def to_json_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "sim":
                continue
            v = getattr(self, f.name)
            if isinstance(v, dict):
                v = {str(k): val for k, val in v.items()}
            out[f.name] = v
        return out


@dataclass
class ComparisonReport:
    case_name: str
    outaged_gen_id: int
    rocof_limit_hz_per_s: float
    nadir_limit_hz: float
    encoding: str
    penalty_coefficient: float
    rows: list[ModelRow] = field(default_factory=list)

    def row(self, model: str) -> ModelRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise ReportError(f"no row for model {model!r}")

    def to_json_dict(self) -> dict:
        return {"case_name": self.case_name,
                "outaged_gen_id": self.outaged_gen_id,
                "rocof_limit_hz_per_s": self.rocof_limit_hz_per_s,
                "nadir_limit_hz": self.nadir_limit_hz,
                "encoding": self.encoding,
                "penalty_coefficient": self.penalty_coefficient,
                "rows": [r.to_json_dict() for r in self.rows]}


def _rel_err(est: float | None, exact: float | None) -> float | None:
    if est is None or exact is None or abs(exact) < 1e-12:
        return None
    return abs(est - exact) / abs(exact)


def _filled_row(name: str, res: OpfResult, case: GridCase,
                cfg: SimConfig) -> ModelRow:
    row = ModelRow(model=name, status=res.solution.status,
                   solve_time_s=res.solution.wall_time_s,
                   limit_violations=res.diagnostics.get("limit_violations"))
    if not res.optimal:
        return row
    d = res.dispatch
    row.cost = res.diagnostics.get("cost", d.total_cost)
    row.gen_mw = dict(d.gen_mw)
    row.ibr_mw = dict(d.ibr_mw)
    row.ibr_gfm_mw = {i: d.gfm_mw(i) for i in d.ibr_mw}
    row.ibr_alpha = {i: d.alpha(i) for i in d.ibr_mw}
    row.headroom_reserved_mw = dict(d.ibr_headroom_mw)
    row.est_rocof_hz_per_s = d.predicted_rocof
    row.est_nadir_hz = d.predicted_nadir
    try:
        sim = simulate(case, d, cfg)
    except SimError as exc:
        row.status = f"SimFailed: {exc}"
        return row
    row.sim = sim
    row.sim_rocof_hz_per_s = sim.metrics.worst_rocof_hz_per_s
    row.sim_nadir_hz = sim.metrics.nadir_hz
    row.sim_settled = sim.metrics.settled
    row.headroom_used_mw = dict(sim.metrics.headroom_used_mw)
    row.rocof_rel_err = _rel_err(row.est_rocof_hz_per_s,
                                 row.sim_rocof_hz_per_s)
    row.nadir_rel_err = _rel_err(row.est_nadir_hz, row.sim_nadir_hz)
    return row


def run_pipeline(case: GridCase, contingency: Contingency,
                 limits: FreqLimits, net: MlpNet,
                 enc: EncodingChoice | None = None, n_segments: int = 10,
                 time_limit_s: float = 60.0,
                 include_outaged_inertia: bool = False,
                 sim_config: SimConfig | None = None) -> ComparisonReport:
    """Solve all three models on the identical case and contingency and
    validate each dispatch in the simulator. Rows whose solve or
    simulation fails are kept with the failure recorded."""
    enc = enc or EncodingChoice("BPWL")
    cfg = sim_config or SimConfig(event=contingency)
    if cfg.event != contingency:
        cfg = dataclasses.replace(cfg, event=contingency)
    report = ComparisonReport(
        case_name=case.name, outaged_gen_id=contingency.outaged_gen_id,
        rocof_limit_hz_per_s=limits.rocof_limit_hz_per_s,
        nadir_limit_hz=limits.nadir_limit_hz, encoding=enc.kind,
        penalty_coefficient=enc.penalty_coefficient)

    def attempt(name, solver):
        try:
            report.rows.append(_filled_row(name, solver(), case, cfg))
        except (OpfError, KernelError, MlpError, SimError) as exc:
            report.rows.append(ModelRow(model=name,
                                        status=f"Error: {exc}"))

    attempt("topf", lambda: solve_topf(case, n_segments))
    attempt("lfcopf", lambda: solve_lfcopf(
        case, contingency, limits, include_outaged_inertia, n_segments))
    attempt("dlfcopf", lambda: solve_dlfcopf(
        case, contingency, net, limits, enc, n_segments=n_segments,
        time_limit_s=time_limit_s))
    return report


# ---------------------------------------------------------------------------
# sensitivity sweeps

SWEEP_AXES = ("neurons_1layer", "neurons_2layer", "penalty", "encoding")


@dataclass
class SweepPoint:
    axis: str
    value: object
    status: str
    cost: float | None = None
    solve_time_s: float | None = None
    mip_gap: float | None = None
    linearization_error: float | None = None
    real_error_mse: float | None = None
    ibr_alpha: dict[int, float] | None = None
    est_rocof_hz_per_s: float | None = None
    sim_rocof_hz_per_s: float | None = None
    est_nadir_hz: float | None = None
    sim_nadir_hz: float | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["ibr_alpha"] is not None:
            out["ibr_alpha"] = {str(k): v
                                for k, v in out["ibr_alpha"].items()}
        return out


def _real_error_mse(case: GridCase, res: OpfResult,
                    cfg: SimConfig) -> tuple[float | None, dict | None]:
    """MSE of the embedded predictions against one simulation.

    Covers worst RoCoF, nadir, and per-plant headroom use (pu)."""
    pred = res.diagnostics.get("predictor_outputs")
    if pred is None or res.dispatch is None:
        return None, None
    sim = simulate(case, res.dispatch, cfg)
    errs = [pred["l_rocof"] - sim.metrics.worst_rocof_hz_per_s,
            pred["l_nadir"] - sim.metrics.nadir_hz]
    for p in case.ibrs:
        used = sim.metrics.headroom_used_mw[p.id] / case.base_mva
        errs.append(pred[f"l_hdrm_{p.id}"] - used)
    return float(np.mean(np.square(errs))), {
        "rocof": sim.metrics.worst_rocof_hz_per_s,
        "nadir": sim.metrics.nadir_hz}


def _sweep_point(case: GridCase, contingency: Contingency,
                 limits: FreqLimits, axis: str, value, net: MlpNet | None,
                 dataset, enc: EncodingChoice, n_segments: int,
                 time_limit_s: float, seed: int, idx: int,
                 cfg: SimConfig, train_cfg: TrainConfig | None) -> SweepPoint:
    pt = SweepPoint(axis=axis, value=value, status="Pending")
    try:
        if axis == "encoding":
            pen = (enc.penalty_coefficient
                   if value in ("PCTAR", "PCAR") else 0.0)
            enc_i, net_i = EncodingChoice(value, pen), net
        elif axis == "penalty":
            kind = enc.kind if enc.penalized else "PCTAR"
            enc_i, net_i = EncodingChoice(kind, float(value)), net
        else:
            width = int(value)
            hidden = ((width,) if axis == "neurons_1layer"
                      else (width, width))
            if dataset is None:
                raise ReportError("architecture sweeps need a dataset")
            arch = (len(dataset.feature_names), *hidden,
                    len(dataset.label_names))
            tc = train_cfg or TrainConfig(epochs=300)
            tc = dataclasses.replace(
                tc, seed=int(np.random.SeedSequence(
                    [seed, 2, idx]).generate_state(1)[0]))
            net_i, _ = train(dataset, arch, tc)
            enc_i = enc
        res = solve_dlfcopf(case, contingency, net_i, limits, enc_i,
                            n_segments=n_segments,
                            time_limit_s=time_limit_s)
        pt.status = res.solution.status
        pt.solve_time_s = res.solution.wall_time_s
        pt.mip_gap = res.solution.gap
        if res.optimal:
            pt.cost = res.diagnostics.get("cost")
            pt.linearization_error = res.diagnostics.get("relu_violation")
            pt.ibr_alpha = dict(res.dispatch.ibr_alpha)
            pt.est_rocof_hz_per_s = res.dispatch.predicted_rocof
            pt.est_nadir_hz = res.dispatch.predicted_nadir
            pt.real_error_mse, simmet = _real_error_mse(case, res, cfg)
            if simmet is not None:
                pt.sim_rocof_hz_per_s = simmet["rocof"]
                pt.sim_nadir_hz = simmet["nadir"]
    except (OpfError, KernelError, MlpError, SimError,
            ReportError) as exc:
        pt.status = "Error"
        pt.error = f"{type(exc).__name__}: {exc}"
    return pt


def run_sensitivity_sweep(case: GridCase, contingency: Contingency,
                          limits: FreqLimits, axis: str,
                          values=None, net: MlpNet | None = None,
                          dataset=None,
                          enc: EncodingChoice | None = None,
                          n_segments: int = 10, time_limit_s: float = 60.0,
                          seed: int = 0, max_workers: int = 3,
                          sim_config: SimConfig | None = None,
                          train_cfg: TrainConfig | None = None
                          ) -> list[SweepPoint]:
    """One grid point per value; points run on a bounded pool and come
    back in grid order. Failed points carry their error, never vanish."""
    if axis not in SWEEP_AXES:
        raise ReportError(f"axis must be one of {SWEEP_AXES}")
    if values is None:
        values = {"encoding": list(ENCODINGS),
                  "penalty": [10.0, 100.0, 1000.0, 5000.0, 10000.0],
                  "neurons_1layer": [8, 16, 32],
                  "neurons_2layer": [8, 16, 32]}[axis]
    values = list(values)
    if axis in ("encoding", "penalty") and net is None:
        raise ReportError(f"{axis} sweep needs a trained net")
    enc = enc or EncodingChoice("PCTAR", 5000.0)
    cfg = sim_config or SimConfig(event=contingency)
    if cfg.event != contingency:
        cfg = dataclasses.replace(cfg, event=contingency)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(
            lambda iv: _sweep_point(case, contingency, limits, axis, iv[1],
                                    net, dataset, enc, n_segments,
                                    time_limit_s, seed, iv[0], cfg,
                                    train_cfg),
            enumerate(values)))


# ---------------------------------------------------------------------------
# plots with delimited twins


def _write_csv(path: Path, header: list[str],
               columns: list[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(columns[0])):
            fh.write(",".join(repr(float(c[k])) for c in columns) + "\n")


def read_csv_columns(path) -> tuple[list[str], list[np.ndarray]]:
    """Parse a twin back; exact inverse of the writer."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = [np.array([float(r[j]) for r in rows]) for j in
            range(len(header))]
    return header, cols


def rocof_series(t: np.ndarray, f: np.ndarray,
                 window_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Windowed difference quotient of a frequency trace."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if t.size < 2:
        return np.array([]), np.array([])
    dt = t[1] - t[0]
    k = max(int(round(window_s / dt)), 1)
    if k >= t.size:
        return np.array([]), np.array([])
    r = (f[k:] - f[:-k]) / (t[k:] - t[:-k])
    return t[k:], r


def _new_axes(xlabel: str, ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _finish(fig, ax, path: Path) -> None:
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report_plots(report: ComparisonReport, out_dir,
                      rocof_window_s: float = 0.167) -> list[Path]:
    """Frequency and RoCoF traces for every simulated row, each SVG
    paired with a CSV holding exactly the plotted series."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r for r in report.rows if r.sim is not None]
    if not rows:
        return []
    files: list[Path] = []
    t = rows[0].sim.t_s

    fig, ax = _new_axes("time [s]", "COI frequency [Hz]",
                        f"{report.case_name}: outage of unit "
                        f"{report.outaged_gen_id}")
    header = ["t_s"]
    cols = [t]
    for r in rows:
        ax.plot(r.sim.t_s, r.sim.f_coi_hz, label=r.model)
        header.append(f"f_coi_hz_{r.model}")
        cols.append(r.sim.f_coi_hz)
    ax.axhline(report.nadir_limit_hz, color="k", ls="--", lw=0.8,
               label="nadir limit")
    _finish(fig, ax, out_dir / "frequency.svg")
    _write_csv(out_dir / "frequency.csv", header, cols)
    files += [out_dir / "frequency.svg", out_dir / "frequency.csv"]

    fig, ax = _new_axes("time [s]", "RoCoF [Hz/s]",
                        f"{report.case_name}: windowed RoCoF")
    header, cols = [], []
    for r in rows:
        tr, rr = rocof_series(r.sim.t_s, r.sim.f_coi_hz, rocof_window_s)
        ax.plot(tr, rr, label=r.model)
        if not header:
            header, cols = ["t_s"], [tr]
        header.append(f"rocof_hz_per_s_{r.model}")
        cols.append(rr)
    ax.axhline(report.rocof_limit_hz_per_s, color="k", ls="--", lw=0.8,
               label="RoCoF limit")
    _finish(fig, ax, out_dir / "rocof.svg")
    _write_csv(out_dir / "rocof.csv", header, cols)
    files += [out_dir / "rocof.svg", out_dir / "rocof.csv"]
    return files


def emit_sweep_plots(points: list[SweepPoint], out_dir) -> list[Path]:
    """Error and solve-time charts over the sweep axis, with twins."""
    out_dir = Path(out_dir)
    if not points:
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = points[0].axis
    labels = [str(p.value) for p in points]
    x = np.arange(len(points), dtype=float)

    def col(attr):
        return np.array([getattr(p, attr) if getattr(p, attr) is not None
                         else math.nan for p in points])

    files: list[Path] = []
    fig, ax = _new_axes(axis, "error", f"sweep over {axis}")
    lin = col("linearization_error")
    real = col("real_error_mse")
    ax.plot(x, lin, "o-", label="linearization error")
    ax.plot(x, real, "s-", label="simulation MSE")
    ax.set_xticks(x, labels)
    if np.nanmax(np.concatenate([lin, real]), initial=0.0) > 0:
        ax.set_yscale("log")
    _finish(fig, ax, out_dir / "sweep_error.svg")
    _write_csv(out_dir / "sweep_error.csv",
               ["grid_index", "linearization_error", "real_error_mse"],
               [x, lin, real])
    files += [out_dir / "sweep_error.svg", out_dir / "sweep_error.csv"]

    fig, ax = _new_axes(axis, "solve time [s]", f"solve time over {axis}")
    tm = col("solve_time_s")
    ax.plot(x, tm, "o-", label="solve time")
    ax.set_xticks(x, labels)
    _finish(fig, ax, out_dir / "sweep_time.svg")
    _write_csv(out_dir / "sweep_time.csv",
               ["grid_index", "solve_time_s"], [x, tm])
    files += [out_dir / "sweep_time.svg", out_dir / "sweep_time.csv"]
    return files
