"""Command-line front end.

Subcommands mirror the study pipeline: validate a case, generate a
labeled dataset, train the predictor, solve one dispatch model, validate
a saved dispatch in the simulator, run the three-model comparison
report, and sweep a sensitivity axis.

Every command reads an optional JSON config file; precedence is
command-line flag, then config value, then built-in default. All
randomness derives from one --seed, fanned out per stage, so runs are
reproducible end to end.

Exit codes: 0 success, 2 validation/config failure, 3 infeasible model,
4 time limit, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import report as report_mod
from .dispatch import dispatch_from_json_dict
from .grid import CaseError, Contingency, load_case, scale_case, validate_case
from .lp import KernelError
from .mlp import MlpError, TrainConfig, load_net, save_net, train
from .opf import (ENCODINGS, EncodingChoice, FreqLimits, OpfError,
                  dispatch_to_json_dict, solve_dlfcopf, solve_lfcopf,
                  solve_topf)
from .simulator import SimConfig, SimError, simulate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_TIME_LIMIT = 4
EXIT_IO = 5

# per-command fallbacks; a config file sits between these and the flags
DEFAULTS = {
    "seed": 0, "n": 200, "workers": 4, "hidden": "32", "epochs": 800,
    "batch_size": 32, "learning_rate": 3e-3, "model": "dlfcopf",
    "encoding": "BPWL", "penalty": 5000.0, "segments": 10,
    "time_limit": 60.0, "rocof_limit": -0.5, "nadir_limit": 59.5,
    "load_scale": 1.0, "ibr_scale": 1.0, "t_end": 20.0,
    "include_outaged_inertia": False, "sweep_workers": 3,
    "sweep_epochs": 300,
}


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_VALIDATION):
        super().__init__(msg)
        self.code = code


def stage_seed(seed: int, *path: int) -> int:
    """Deterministic per-stage seed derived from the top-level seed."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise CliError("config must be a JSON object")
    return doc


def _merged(args: argparse.Namespace) -> dict:
    """Flag beats config beats DEFAULTS; unset stays None."""
    config = _load_config(getattr(args, "config", None))
    out = {}
    for key, val in vars(args).items():
        if key in ("config", "func", "command", "subcommand"):
            continue
        if val is None:
            val = config.get(key, DEFAULTS.get(key))
        out[key] = val
    return out


def _write_json(path, doc) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise CliError(f"missing required option --{key.replace('_', '-')}")
    return cfg[key]


def _get_case(cfg: dict):
    path = Path(_require(cfg, "case"))
    if not path.exists():
        raise CliError(f"case file not found: {path}", EXIT_IO)
    try:
        return load_case(path)
    except CaseError as exc:
        raise CliError(f"case rejected: {exc}")
    except OSError as exc:
        raise CliError(f"cannot read case: {exc}", EXIT_IO)


def _scaled_case(cfg: dict):
    case = _get_case(cfg)
    ls = float(cfg.get("load_scale") or 1.0)
    is_ = float(cfg.get("ibr_scale") or 1.0)
    if ls != 1.0 or is_ != 1.0:
        case = scale_case(case, load_scale=ls, ibr_scale=is_)
    return case


def _limits(cfg: dict) -> FreqLimits:
    try:
        return FreqLimits(rocof_limit_hz_per_s=float(cfg["rocof_limit"]),
                          nadir_limit_hz=float(cfg["nadir_limit"]))
    except OpfError as exc:
        raise CliError(str(exc))


def _encoding(cfg: dict) -> EncodingChoice:
    try:
        kind = cfg["encoding"]
        pen = float(cfg["penalty"]) if kind in ("PCTAR", "PCAR") else 0.0
        return EncodingChoice(kind, pen)
    except OpfError as exc:
        raise CliError(str(exc))


def _contingency(cfg: dict, case) -> Contingency:
    gid = cfg.get("outage")
    if gid is None:
        cands = case.outage_candidates()
        if not cands:
            raise CliError("case has no outage candidates; pass --outage")
        gid = cands[0].id
    gid = int(gid)
    if gid not in {g.id for g in case.gens}:
        raise CliError(f"no generator with id {gid}")
    return Contingency(outaged_gen_id=gid)


def _ranges(cfg: dict) -> ds_mod.ScenarioRanges:
    kw = {}
    names = {"load_scale_range": "load_scale",
             "ibr_scale_range": "ibr_scale",
             "sg_setpoint_scale": "sg_setpoint_scale",
             "gfm_alpha": "gfm_alpha",
             "ibr_utilization": "ibr_utilization"}
    for opt, field in names.items():
        if cfg.get(opt) is not None:
            val = cfg[opt]
            if isinstance(val, str):
                val = [float(v) for v in val.split(",")]
            kw[field] = tuple(val)
    try:
        return ds_mod.ScenarioRanges(**kw)
    except ds_mod.DatasetError as exc:
        raise CliError(str(exc))


def _manifest(out_dir: Path, command: str, cfg: dict,
              files: list[Path]) -> None:
    opts = {k: v for k, v in sorted(cfg.items())
            if isinstance(v, (str, int, float, bool, type(None)))}
    _write_json(out_dir / "manifest.json",
                {"command": command, "options": opts,
                 "files": sorted(p.name for p in files)})


# ---------------------------------------------------------------------------
# subcommands


def cmd_case_validate(cfg: dict) -> int:
    case = _get_case(cfg)
    problems = validate_case(case)
    if problems:
        for msg in problems:
            print(f"invalid: {msg}")
        return EXIT_VALIDATION
    print(f"{case.name}: {len(case.buses)} buses, {len(case.lines)} lines, "
          f"{len(case.gens)} units, {len(case.ibrs)} IBR plants, "
          f"{sum(b.load_mw for b in case.buses):.1f} MW load")
    print("case is valid")
    return EXIT_OK


def cmd_data_gen(cfg: dict) -> int:
    case = _get_case(cfg)
    out = Path(_require(cfg, "out"))
    ranges = _ranges(cfg)
    seed = stage_seed(int(cfg["seed"]), 0)
    try:
        ds = ds_mod.generate_dataset(case, ranges, n=int(cfg["n"]),
                                     seed=seed,
                                     max_workers=int(cfg["workers"]))
    except ds_mod.DatasetError as exc:
        raise CliError(str(exc))
    if len(ds) == 0:
        raise CliError("no scenario survived labeling", EXIT_INFEASIBLE)
    try:
        ds_mod.write_dataset(ds, out, ranges=ranges)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO)
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    case = _get_case(cfg) if cfg.get("case") else None
    data = _require(cfg, "data")
    try:
        ds = ds_mod.read_dataset(data, case=case)
    except ds_mod.DatasetError as exc:
        raise CliError(str(exc))
    except OSError as exc:
        raise CliError(f"cannot read {data}: {exc}", EXIT_IO)
    hidden = [int(v) for v in str(cfg["hidden"]).split(",") if v != ""]
    arch = (len(ds.feature_names), *hidden, len(ds.label_names))
    tc = TrainConfig(epochs=int(cfg["epochs"]),
                     batch_size=int(cfg["batch_size"]),
                     learning_rate=float(cfg["learning_rate"]),
                     seed=stage_seed(int(cfg["seed"]), 1))
    try:
        net, rep = train(ds, arch, tc)
    except MlpError as exc:
        raise CliError(str(exc))
    out = Path(_require(cfg, "out"))
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_net(net, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO)
    print(f"trained {'x'.join(str(a) for a in arch)} net: "
          f"best epoch {rep.best_epoch}, validation MSE "
          f"{rep.final_val_mse:.3e}")
    for name, mse in rep.per_label_val_mse.items():
        print(f"  {name}: val MSE {mse:.3e}")
    print(f"saved to {out}")
    return EXIT_OK


def _load_trained_net(cfg: dict, case):
    from .features import feature_names, label_names
    path = _require(cfg, "net")
    try:
        net = load_net(path)
    except MlpError as exc:
        raise CliError(str(exc))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    if (net.feature_names and case is not None
            and tuple(net.feature_names) != feature_names(case)):
        raise CliError("net was trained for a different feature schema")
    if (net.label_names and case is not None
            and tuple(net.label_names) != label_names(case)):
        raise CliError("net was trained for a different label schema")
    return net


def _exit_for_status(status: str) -> int:
    if status == "TimeLimit":
        return EXIT_TIME_LIMIT
    if status in ("Infeasible", "Unbounded"):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_solve(cfg: dict) -> int:
    case = _scaled_case(cfg)
    model = cfg["model"]
    segments = int(cfg["segments"])
    try:
        if model == "topf":
            res = solve_topf(case, segments)
        elif model == "lfcopf":
            res = solve_lfcopf(case, _contingency(cfg, case), _limits(cfg),
                               bool(cfg["include_outaged_inertia"]),
                               segments)
        else:
            net = _load_trained_net(cfg, case)
            res = solve_dlfcopf(case, _contingency(cfg, case), net,
                                _limits(cfg), _encoding(cfg),
                                n_segments=segments,
                                time_limit_s=float(cfg["time_limit"]))
    except (OpfError, KernelError) as exc:
        raise CliError(f"solve failed: {exc}")
    doc = dispatch_to_json_dict(res, case)
    if cfg.get("out"):
        _write_json(cfg["out"], doc)
        print(f"wrote {cfg['out']}")
    print(f"{model}: {res.solution.status}")
    if res.optimal:
        print(f"  cost {res.diagnostics['cost']:.2f}  "
              f"solve time {res.solution.wall_time_s:.3f} s")
        for gid, p in sorted(res.dispatch.gen_mw.items()):
            print(f"  unit {gid}: {p:.2f} MW")
        for pid, p in sorted(res.dispatch.ibr_mw.items()):
            print(f"  ibr {pid}: {p:.2f} MW (alpha "
                  f"{res.dispatch.alpha(pid):.3f})")
    elif res.diagnostics.get("limit_violations"):
        print(f"  limit violations: {res.diagnostics['limit_violations']}")
    return _exit_for_status(res.solution.status)


def cmd_validate(cfg: dict) -> int:
    case = _scaled_case(cfg)
    path = _require(cfg, "dispatch")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliError(f"dispatch file is not valid JSON: {exc}")
    disp = dispatch_from_json_dict(doc)
    problems = disp.check(case)
    if problems:
        for p in problems:
            print(f"inconsistent dispatch: {p}")
        return EXIT_VALIDATION
    ctg = _contingency(cfg, case)
    try:
        sim = simulate(case, disp, SimConfig(
            event=ctg, t_end_s=float(cfg["t_end"])))
    except SimError as exc:
        raise CliError(f"simulation failed: {exc}")
    m = sim.metrics
    print(f"outage of unit {ctg.outaged_gen_id}:")
    print(f"  worst RoCoF {m.worst_rocof_hz_per_s:+.4f} Hz/s")
    print(f"  nadir       {m.nadir_hz:.4f} Hz")
    for pid, mw in sorted(m.headroom_used_mw.items()):
        print(f"  ibr {pid} headroom used {mw:.2f} MW")
    print(f"  settled: {m.settled}")
    if cfg.get("out"):
        _write_json(cfg["out"], {
            "outaged_gen_id": ctg.outaged_gen_id,
            "worst_rocof_hz_per_s": m.worst_rocof_hz_per_s,
            "nadir_hz": m.nadir_hz,
            "headroom_used_mw": {str(k): v
                                 for k, v in m.headroom_used_mw.items()},
            "settled": m.settled})
        print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    case = _scaled_case(cfg)
    out_dir = Path(_require(cfg, "out"))
    net = _load_trained_net(cfg, case)
    ctg = _contingency(cfg, case)
    rep = report_mod.run_pipeline(
        case, ctg, _limits(cfg), net, _encoding(cfg),
        n_segments=int(cfg["segments"]),
        time_limit_s=float(cfg["time_limit"]))
    try:
        files = report_mod.emit_report_plots(rep, out_dir)
    except OSError as exc:
        raise CliError(f"cannot write plots: {exc}", EXIT_IO)
    _write_json(out_dir / "report.json", rep.to_json_dict())
    files.append(out_dir / "report.json")
    _manifest(out_dir, "report", cfg, files)
    for row in rep.rows:
        est = ("-" if row.est_rocof_hz_per_s is None
               else f"{row.est_rocof_hz_per_s:+.4f}")
        simv = ("-" if row.sim_rocof_hz_per_s is None
                else f"{row.sim_rocof_hz_per_s:+.4f}")
        cost = "-" if row.cost is None else f"{row.cost:.2f}"
        print(f"{row.model:8s} {row.status:10s} cost {cost:>10s}  "
              f"RoCoF est {est} / sim {simv}")
    print(f"wrote {len(files) + 1} files to {out_dir}")
    return max((_exit_for_status(r.status) for r in rep.rows),
               default=EXIT_OK)


def cmd_sweep(cfg: dict) -> int:
    case = _scaled_case(cfg)
    axis = _require(cfg, "axis")
    out_dir = Path(_require(cfg, "out"))
    ctg = _contingency(cfg, case)
    net = None
    dataset = None
    if axis in ("encoding", "penalty"):
        net = _load_trained_net(cfg, case)
    else:
        data = _require(cfg, "data")
        try:
            dataset = ds_mod.read_dataset(data, case=case)
        except ds_mod.DatasetError as exc:
            raise CliError(str(exc))
        except OSError as exc:
            raise CliError(f"cannot read {data}: {exc}", EXIT_IO)
    values = None
    if cfg.get("values"):
        raw = str(cfg["values"]).split(",")
        values = raw if axis == "encoding" else [float(v) for v in raw]
    # the base encoding carries the penalty that penalized grid points use
    base_kind = (cfg["encoding"] if cfg["encoding"] in ("PCTAR", "PCAR")
                 else "PCTAR")
    points = report_mod.run_sensitivity_sweep(
        case, ctg, _limits(cfg), axis, values=values, net=net,
        dataset=dataset, enc=EncodingChoice(base_kind,
                                            float(cfg["penalty"])),
        n_segments=int(cfg["segments"]),
        time_limit_s=float(cfg["time_limit"]), seed=int(cfg["seed"]),
        max_workers=int(cfg["sweep_workers"]),
        train_cfg=TrainConfig(epochs=int(cfg["sweep_epochs"])))
    try:
        files = report_mod.emit_sweep_plots(points, out_dir)
    except OSError as exc:
        raise CliError(f"cannot write plots: {exc}", EXIT_IO)
    _write_json(out_dir / "sweep.json",
                {"axis": axis,
                 "points": [p.to_json_dict() for p in points]})
    files.append(out_dir / "sweep.json")
    _manifest(out_dir, "sweep", cfg, files)
    for p in points:
        lin = ("-" if p.linearization_error is None
               else f"{p.linearization_error:.2e}")
        tm = "-" if p.solve_time_s is None else f"{p.solve_time_s:.2f}"
        print(f"{axis}={p.value}: {p.status}  lin err {lin}  time {tm} s"
              + (f"  ({p.error})" if p.error else ""))
    print(f"wrote {len(files) + 1} files to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing; every flag defaults to None so config files can fill it


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--case", help="grid case JSON")
    p.add_argument("--seed", type=int,
                   help="top-level seed, fanned out per stage (default 0)")


def _add_limits(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rocof-limit", dest="rocof_limit", type=float,
                   help="RoCoF floor, Hz/s, negative (default -0.5)")
    p.add_argument("--nadir-limit", dest="nadir_limit", type=float,
                   help="nadir floor, Hz (default 59.5)")


def _add_solve_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoding", choices=list(ENCODINGS),
                   help="hidden-unit encoding (default BPWL)")
    p.add_argument("--penalty", type=float,
                   help="penalty coefficient for P-CTAR/PCAR "
                        "(default 5000)")
    p.add_argument("--segments", type=int,
                   help="PWL cost segments per unit (default 10)")
    p.add_argument("--time-limit", dest="time_limit", type=float,
                   help="MILP time limit in seconds (default 60)")
    p.add_argument("--outage", type=int,
                   help="generator to trip (default: first candidate)")
    p.add_argument("--load-scale", dest="load_scale", type=float)
    p.add_argument("--ibr-scale", dest="ibr_scale", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="freqdispatch",
        description="frequency-aware dispatch studies")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("case", help="case file operations")
    csub = p.add_subparsers(dest="subcommand", required=True)
    pv = csub.add_parser("validate", help="parse and validate a case")
    _add_common(pv)
    pv.set_defaults(func=cmd_case_validate)

    p = sub.add_parser("data", help="dataset operations")
    dsub = p.add_subparsers(dest="subcommand", required=True)
    pg = dsub.add_parser("gen", help="generate a labeled dataset")
    _add_common(pg)
    pg.add_argument("--n", type=int, help="number of scenarios "
                    "(default 200)")
    pg.add_argument("--out", help="output CSV path")
    pg.add_argument("--workers", type=int)
    pg.add_argument("--load-scale-range", dest="load_scale_range",
                    help="lo,hi load multiplier")
    pg.add_argument("--ibr-scale-range", dest="ibr_scale_range",
                    help="lo,hi availability multiplier")
    pg.add_argument("--gfm-alpha", dest="gfm_alpha", help="lo,hi")
    pg.add_argument("--ibr-utilization", dest="ibr_utilization",
                    help="lo,hi")
    pg.set_defaults(func=cmd_data_gen)

    p = sub.add_parser("train", help="fit the frequency predictor")
    _add_common(p)
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--hidden",
                   help="hidden widths, comma separated (default 32)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--out", help="output net JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="solve one dispatch model")
    _add_common(p)
    p.add_argument("--model", choices=["topf", "lfcopf", "dlfcopf"])
    p.add_argument("--net", help="trained net JSON (dlfcopf)")
    p.add_argument("--include-outaged-inertia",
                   dest="include_outaged_inertia", action="store_const",
                   const=True)
    _add_limits(p)
    _add_solve_opts(p)
    p.add_argument("--out", help="dispatch JSON output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("validate", help="simulate a saved dispatch")
    _add_common(p)
    p.add_argument("--dispatch", help="dispatch JSON from solve")
    p.add_argument("--outage", type=int)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--load-scale", dest="load_scale", type=float)
    p.add_argument("--ibr-scale", dest="ibr_scale", type=float)
    p.add_argument("--out", help="metrics JSON output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="three-model comparison study")
    _add_common(p)
    p.add_argument("--net", help="trained net JSON")
    _add_limits(p)
    _add_solve_opts(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="sensitivity sweep")
    _add_common(p)
    p.add_argument("--axis", choices=list(report_mod.SWEEP_AXES))
    p.add_argument("--values", help="comma-separated grid values")
    p.add_argument("--net", help="trained net JSON (encoding/penalty)")
    p.add_argument("--data", help="dataset CSV (architecture axes)")
    p.add_argument("--sweep-workers", dest="sweep_workers", type=int)
    p.add_argument("--sweep-epochs", dest="sweep_epochs", type=int,
                   help="training epochs per architecture point "
                        "(default 300)")
    _add_limits(p)
    _add_solve_opts(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(_merged(args))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CaseError, OpfError, KernelError, MlpError, SimError,
            ds_mod.DatasetError, report_mod.ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
