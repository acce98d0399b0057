"""Command-line front end: ``visrted <subcommand> [options]``.

Every subcommand that writes files also writes a ``manifest_<command>.json``
recording its arguments, resolved configuration, seeds and outputs.
Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import casedata as cd
from . import dispatch as dp
from . import freq_dynamics as fd
from . import simulator as sm
from . import surrogate as sg

METHODS = ("I", "II", "III", "IV")
# surrogate training used by the pipeline commands
TRAIN_DEFAULTS = {"n": 20000, "hidden": 16, "epochs": 1000, "lr": 0.03, "batch": 32}
CONFIG_KEYS = {"train", "solver", "sim", "intervals", "peak_margin", "nseg", "trace_every"}
TABLE_ROWS = (
    ("Total scheduling cost", "total_cost"),
    ("Inertia support cost", "inertia_support_cost"),
    ("Inertia support reserve", "inertia_support_reserve_mw"),
    ("Number of RoCoF violations", "rocof"),
    ("Number of IBR capacity violations", "ibr_capacity"),
    ("Number of frequency nadir violations", "nadir"),
)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    config_digest: str
    seeds: dict
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))
        return path


def config_digest(command: str, args: dict, config: dict) -> str:
    """Hash of everything that determines the outputs (not where they go)."""
    keep = {k: v for k, v in args.items() if k not in ("out", "func", "config")}
    blob = json.dumps({"command": command, "args": keep, "config": config}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _read_config(text):
    if not text:
        return {}
    try:
        cfg = json.loads(text) if text.lstrip().startswith("{") else json.loads(Path(text).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read --config: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError("--config must be a JSON object")
    bad = sorted(set(cfg) - CONFIG_KEYS)
    if bad:
        raise UsageError(f"unknown config keys {bad}; allowed: {sorted(CONFIG_KEYS)}")
    return cfg


def _case(spec):
    return cd.builtin_case() if spec in (None, "builtin") else cd.load_case(spec)


def _methods(text):
    ms = [m.strip().upper() for m in text.split(",") if m.strip()]
    bad = [m for m in ms if m not in METHODS]
    if bad or not ms:
        raise UsageError(f"--methods takes a comma list of {','.join(METHODS)}")
    return ms


def _train_opts(config, args=None):
    opts = dict(TRAIN_DEFAULTS)
    opts.update(config.get("train", {}))
    for k in ("n", "hidden", "epochs", "lr", "batch"):
        v = getattr(args, k, None) if args is not None else None
        if v is not None:
            opts[k] = v
    return opts


def _box_key(target):
    return "nadir" if target == "nadir" else "peak"


def _train(case, target, seed, opts):
    ds = sg.generate_dataset(target, case.surrogate_box(_box_key(target)), int(opts["n"]), seed, case.synthetic())
    return _fit(ds, opts, seed)


def _fit(ds, opts, seed):
    return sg.train_mlp(ds, hidden=int(opts["hidden"]), epochs=int(opts["epochs"]), lr=float(opts["lr"]),
                        batch=int(opts["batch"]), seed=seed)


def _models(case, args, config, out, man):
    """Load surrogates from ``--models`` or train them into ``out/models``."""
    if args.models:
        d = Path(args.models)
        nets = {t: sg.Mlp.load(d / f"{t}.json") for t in sg.TARGETS}
        man.inputs["models"] = str(d)
    else:
        opts = _train_opts(config)
        mdir = out / "models"
        mdir.mkdir(parents=True, exist_ok=True)
        nets = {}
        for t in sg.TARGETS:
            t0 = time.perf_counter()
            nets[t] = _train(case, t, args.seed, opts)
            man.outputs.append(str(nets[t].save(mdir / f"{t}.json")))
            man.wall_times[f"train_{t}"] = time.perf_counter() - t0
    return dp.SurrogateModels(nets["nadir"], nets["peak_power"])


def _forecast(case, args, config):
    prof = cd.resolve_profile(args.profile, args.seed, int(config.get("intervals", 12)))
    fc = cd.forecast_intervals(prof, case.interval_s, case.load_shares(), case.system_mva)
    n = int(config.get("intervals", 12))
    if fc.n < n:
        raise ValueError(f"profile covers {fc.n} intervals, {n} requested")
    return prof, cd.ForecastSet(fc.totals[:n], fc.per_bus[:n], fc.buses, fc.dPe[:n])


def _schedule(case, fc, methods, models, config, man):
    sols = {}
    for m in methods:
        t0 = time.perf_counter()
        cfgm = dp.MethodConfig.from_variant(m, float(config.get("peak_margin", 0.05)))
        opts = dict(dp.DEFAULT_SOLVER_OPTS)
        opts.update(config.get("solver", {}))
        sols[m] = dp.solve_horizon(case, fc, cfgm, models, opts, int(config.get("nseg", 8)))
        man.wall_times[f"schedule_{m}"] = time.perf_counter() - t0
    return sols


def _simulate(case, sol, prof, config, out, man):
    t0 = time.perf_counter()
    scfg = sm.SimConfig.for_case(case, **config.get("sim", {}))
    trace = sm.simulate(case, sol, prof, scfg)
    rep = sm.violation_report(trace, sol, case, scfg)
    m = sol.method
    man.outputs.append(str(trace.to_csv(out / f"trace_{m}.csv", every=int(config.get("trace_every", 10)))))
    man.outputs.append(str(rep.save(out / f"violations_{m}.json")))
    man.wall_times[f"simulate_{m}"] = time.perf_counter() - t0
    return rep


def _dump(obj):
    return json.dumps(obj, indent=1, default=float)


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args, config, man):
    case = _case(args.case)
    md = None
    if args.md:
        try:
            M, D = (float(v) for v in args.md.split(","))
        except ValueError as e:
            raise UsageError("--md takes M,D") from e
        md = [(M, D)] * len(case.ibrs)
    p = case.synthetic(md)
    ibrs = case.ibr_params() if md is None else [u.with_md(*md[0]) for u in case.ibr_params()]
    res = {
        "dPe": args.dpe,
        "synthetic": p.to_dict(),
        "freq": fd.freq_metrics(p, args.dpe).to_dict(),
        "ibr_power": {u.id: fd.power_metrics(p, u, args.dpe).to_dict() for u in ibrs},
    }
    print(_dump(res))
    if args.out:
        path = Path(args.out) / "analyze.json"
        path.write_text(_dump(res))
        man.outputs.append(str(path))


def cmd_dataset(args, config, man):
    case = _case(args.case)
    opts = _train_opts(config, args)
    ds = sg.generate_dataset(args.target, case.surrogate_box(_box_key(args.target)), int(opts["n"]), args.seed,
                             case.synthetic())
    path = ds.to_csv(Path(args.out) / f"dataset_{args.target}.csv")
    man.outputs.append(str(path))
    print(str(path))


def cmd_train(args, config, man):
    case = _case(args.case)
    opts = _train_opts(config, args)
    if args.data:
        ds = sg.Dataset.from_csv(args.data, args.seed, case.synthetic())
        if ds.target_name != args.target:
            raise ValueError(f"dataset holds {ds.target_name!r} samples, not {args.target!r}")
        man.inputs["data"] = args.data
        m = _fit(ds, opts, args.seed)
    else:
        m = _train(case, args.target, args.seed, opts)
    path = m.save(Path(args.out) / f"{args.target}.json")
    man.outputs.append(str(path))
    print(_dump({"model": str(path), "digest": m.digest(), "best_val_loss": m.meta["best_val_loss"]}))


def cmd_encode_verify(args, config, man):
    if args.model:
        m = sg.Mlp.load(args.model)
        man.inputs["model"] = args.model
    else:
        m = _train(_case(args.case), args.target, args.seed, _train_opts(config))
    lo, hi = m.input_box()
    bounds = sg.propagate_bounds(m, (lo, hi))
    out = {"target": m.target_name, "digest": m.digest()}
    for label, fix in (("fixed", True), ("unfixed", False)):
        frag = sg.encode_relu_milp(m, bounds, fix_stable=fix)
        rep = sg.verify_encoding(m, frag, n=args.n, seed=args.seed)
        rep["n_binaries"] = frag.n_binaries
        out[label] = rep
    out["ok"] = out["fixed"]["ok"] and out["unfixed"]["ok"]
    path = Path(args.out) / f"encode_verify_{m.target_name}.json"
    path.write_text(_dump(out))
    man.outputs.append(str(path))
    print(_dump({k: v for k, v in out.items() if k != "digest"}))
    if not out["ok"]:
        raise ValueError("encoding differs from the forward pass")


def cmd_schedule(args, config, man):
    methods = _methods(args.methods)
    case = _case(args.case)
    out = Path(args.out)
    models = _models(case, args, config, out, man)
    _, fc = _forecast(case, args, config)
    sols = _schedule(case, fc, methods, models, config, man)
    for m, sol in sols.items():
        man.outputs.append(str(sol.save(out / f"schedule_{m}.json")))
        print(m, _dump(sol.totals()))


def cmd_simulate(args, config, man):
    case = _case(args.case)
    out = Path(args.out)
    prof = cd.resolve_profile(args.profile, args.seed, int(config.get("intervals", 12)))
    src = Path(args.schedules or args.out)
    for m in _methods(args.methods):
        path = src / f"schedule_{m}.json"
        sol = dp.DispatchSolution.load(path)
        man.inputs[f"schedule_{m}"] = str(path)
        rep = _simulate(case, sol, prof, config, out, man)
        print(m, _dump(rep.counts))


def compare_rows(sols: dict, reports: dict) -> dict:
    """Table rows keyed by label, each mapping method -> value."""
    rows = {}
    for label, key in TABLE_ROWS:
        if key in ("rocof", "ibr_capacity", "nadir"):
            rows[label] = {m: int(reports[m].counts[key]) for m in sols}
        else:
            rows[label] = {m: float(sols[m].totals()[key]) for m in sols}
    return rows


def cmd_compare(args, config, man):
    methods = _methods(args.methods)
    case = _case(args.case)
    out = Path(args.out)
    models = _models(case, args, config, out, man)
    prof, fc = _forecast(case, args, config)
    sols = _schedule(case, fc, methods, models, config, man)
    reports = {}
    for m in methods:
        man.outputs.append(str(sols[m].save(out / f"schedule_{m}.json")))
        reports[m] = _simulate(case, sols[m], prof, config, out, man)
    rows = compare_rows(sols, reports)
    report = {
        "methods": methods,
        "rows": rows,
        "details": {m: {**sols[m].totals(), "violations": reports[m].counts,
                        "interval_status": [r.status for r in sols[m].intervals],
                        "max_interval_solve_s": max(r.solve_time for r in sols[m].intervals)}
                    for m in methods},
    }
    (out / "compare.json").write_text(_dump(report))
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + methods)
        for label, vals in rows.items():
            w.writerow([label] + [repr(vals[m]) for m in methods])
    man.outputs += [str(out / "compare.json"), str(out / "compare.csv")]
    width = max(len(lbl) for lbl in rows)
    print(" " * width + "".join(f"{m:>14}" for m in methods))
    for label, vals in rows.items():
        print(f"{label:<{width}}" + "".join(f"{vals[m]:>14.2f}" if isinstance(vals[m], float)
                                            else f"{vals[m]:>14d}" for m in methods))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="visrted", description="Virtual-inertia scheduling real-time dispatch toolkit.")
    ap.add_argument("--version", action="version", version=f"visrted {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default="visrted_out"):
        p.add_argument("--case", default="builtin", help="'builtin' or a case JSON file")
        p.add_argument("--profile", default="builtin", help="'builtin', 'seed:N' or a profile CSV")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--config", help="JSON overrides (file path or inline object)")

    p = sub.add_parser("analyze", help="closed-form frequency and IBR power metrics")
    common(p, out_default=None)
    p.add_argument("--dpe", type=float, required=True, help="disturbance in system p.u. (load increase > 0)")
    p.add_argument("--md", help="common own-base IBR M,D (default: case defaults)")
    p.set_defaults(func=cmd_analyze)

    for name, func, helptext in (("dataset", cmd_dataset, "sample a surrogate training set"),
                                 ("train", cmd_train, "train a surrogate network")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--target", choices=sorted(sg.TARGETS), required=True)
        p.add_argument("--n", type=int, help="number of samples")
        if name == "train":
            p.add_argument("--hidden", type=int)
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--batch", type=int)
            p.add_argument("--data", help="train on this dataset CSV instead of sampling")
        p.set_defaults(func=func)

    p = sub.add_parser("encode-verify", help="check a MILP encoding against the forward pass")
    common(p)
    p.add_argument("--model", help="model JSON (default: train one for --target)")
    p.add_argument("--target", choices=sorted(sg.TARGETS), default="nadir")
    p.add_argument("--n", type=int, default=100, help="random inputs to check")
    p.set_defaults(func=cmd_encode_verify)

    for name, func, helptext, mdef in (("schedule", cmd_schedule, "solve the dispatch horizon", "IV"),
                                       ("simulate", cmd_simulate, "simulate saved schedules", "IV"),
                                       ("compare", cmd_compare, "schedule, simulate and tabulate methods",
                                        ",".join(METHODS))):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--methods", default=mdef, help="comma list of I,II,III,IV")
        if name != "simulate":
            p.add_argument("--models", help="directory with nadir.json and peak_power.json")
        else:
            p.add_argument("--schedules", help="directory with schedule_<method>.json (default: --out)")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    t0 = time.perf_counter()
    try:
        config = _read_config(args.config)
        arg_map = {k: v for k, v in vars(args).items() if k != "func"}
        man = RunManifest(args.command, argv, config, config_digest(args.command, arg_map, config),
                          {"seed": args.seed})
        man.inputs.update({"case": args.case, "profile": args.profile})
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        args.func(args, config, man)
    except UsageError as e:
        ap.print_usage(sys.stderr)
        print(f"visrted: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError, np.linalg.LinAlgError) as e:
        print(f"visrted: error: {e}", file=sys.stderr)
        return 1
    if args.out:
        man.wall_times["total"] = time.perf_counter() - t0
        man.save(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
