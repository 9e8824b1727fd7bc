"""Command-line entry point.

Exit status: 0 on success, 1 when a scenario or request fails validation,
2 on any other runtime error. The default output directory comes from the
``SUPCTL_OUT`` environment variable (falling back to ``./supctl_out``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

from ..errors import ConfigError, DimensionError, GenerationError, InvalidScenarioError, LogicError
from ..supervisor import DYNAMIC, FIXED
from ..system_bank import validate_scenario
from .config import build_bank, build_experiment, canonical_json, load_scenario, save_scenario
from .generate import DEFAULT_BUDGET, generate_scenario
from .l2gain import l2_gain_report
from .montecarlo import criteria_stats, read_run, run_montecarlo, run_one, write_run

OUT_ENV = "SUPCTL_OUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationFailed(Exception):
    pass


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "supctl_out")


def _common(top: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering earlier values
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (overrides the scenario)")
    p.add_argument("--out", default=d(None), help=f"output directory (default ${OUT_ENV} or ./supctl_out)")
    p.add_argument("--format", choices=("json", "csv"), default=d("json"))
    p.add_argument("--jobs", type=int, default=d(1), help="parallel worker processes")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common(top=False)
    ap = argparse.ArgumentParser(prog="supctl", parents=[_common(top=True)],
                                 description="Supervisory switching control experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="assumption report for a scenario")
    v.add_argument("scenario")

    r = sub.add_parser("run", parents=[common], help="one seeded supervisor run")
    r.add_argument("scenario")
    r.add_argument("--run", type=int, default=0, help="run index under the master seed")
    r.add_argument("--schedule", choices=(FIXED, DYNAMIC), default=None)

    m = sub.add_parser("montecarlo", parents=[common], help="aggregate study over many runs")
    m.add_argument("scenario")
    m.add_argument("--runs", type=int, default=None)
    m.add_argument("--schedule", choices=(FIXED, DYNAMIC), default=None)

    c = sub.add_parser("criteria-stats", parents=[common], help="score frequencies for one controller")
    c.add_argument("scenario")
    c.add_argument("--controller", type=int, required=True)
    c.add_argument("--episodes", type=int, default=1000)
    c.add_argument("--init", choices=("zero", "random"), default="zero")
    c.add_argument("--init-radius", type=float, default=1.0)

    g = sub.add_parser("generate", parents=[common], help="sample a valid scenario")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dx", type=int, default=2)
    g.add_argument("--du", type=int, default=1)
    g.add_argument("--dy", type=int, default=1)
    g.add_argument("--eps-c", type=float, default=0.1)
    g.add_argument("--eps-a", type=float, default=0.2)
    g.add_argument("--gamma", type=float, default=0.3)
    g.add_argument("--h", type=int, default=3)
    g.add_argument("--nu", type=int, default=None)
    g.add_argument("--max-tau", type=float, default=None)
    g.add_argument("--mixed-row", action="store_true")
    g.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    g.add_argument("--name", default="scenario.json", help="file name inside --out")

    rep = sub.add_parser("report", parents=[common], help="L2-gain report for stored runs")
    rep.add_argument("run_dir")
    return ap


def _emit(obj, fmt: str, stream=None):
    stream = stream or sys.stdout
    if fmt == "json":
        stream.write(canonical_json(obj))
        return
    rows = obj if isinstance(obj, list) else [_flatten(obj)]
    keys = sorted({k for row in rows for k in row})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys)
    w.writeheader()
    for row in rows:
        w.writerow(row)
    stream.write(buf.getvalue())


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def _num(x):
    return x if not (isinstance(x, float) and not math.isfinite(x)) else str(x)


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    try:
        bank = build_bank(cfg)
    except InvalidScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    c = bank.constants
    report = validate_scenario(bank, c, cfg.declared())
    if args.format == "json":
        doc = report.to_dict()
        doc["constants"] = {k: _num(getattr(c, k)) for k in
                            ("eps_c", "eps_a", "gamma", "zeta", "theta", "sigma_r_sq", "nu", "h",
                             "T1", "T2", "tau", "R1", "R2", "delta_c")}
        _emit(doc, "json")
    else:
        for line in report.lines():
            print(line)
        print(f"tau={_num(c.tau)} (T1={_num(c.T1)}, T2={_num(c.T2)}) theta={c.theta:.6g}")
    return EXIT_OK if report.valid else EXIT_INVALID


def _out_dir(args) -> Path:
    return Path(args.out or _default_out())


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    exp = build_experiment(cfg, args.schedule)
    summary, episodes = run_one(exp, args.run, args.seed)
    out = _out_dir(args)
    write_run(out, summary, episodes)
    (out / "scenario.json").write_text(cfg.to_json())
    brief = {k: summary[k] for k in ("run", "master_seed", "committed", "true_index", "success",
                                     "L", "tau", "pull_counts")}
    brief["divergence_events"] = len(summary["divergence_events"])
    _emit(brief, args.format)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = load_scenario(args.scenario)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(cfg.to_json())
    agg = run_montecarlo(cfg, out, jobs=args.jobs, num_runs=args.runs,
                         schedule_variant=args.schedule, master_seed=args.seed)
    _emit(agg, args.format)
    return EXIT_OK


def cmd_criteria_stats(args) -> int:
    cfg = load_scenario(args.scenario)
    res = criteria_stats(cfg, args.controller, args.episodes, init=args.init,
                         init_radius=args.init_radius, master_seed=args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"criteria_stats_c{args.controller}.json").write_text(canonical_json(res))
    _emit(res, args.format)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = generate_scenario(
        args.n, (args.dx, args.du, args.dy), (args.eps_c, args.eps_a, args.gamma),
        seed=0 if args.seed is None else args.seed, nu=args.nu, h=args.h,
        require_mixed_row=args.mixed_row, max_tau=args.max_tau, budget=args.budget)
    path = save_scenario(cfg, _out_dir(args) / args.name)
    print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = load_scenario(run_dir / "scenario.json")
    bank = build_bank(cfg)
    runs_dir = run_dir / "runs" if (run_dir / "runs").is_dir() else run_dir
    indices = sorted(int(p.stem.split("_")[1]) for p in runs_dir.glob("run_*.json"))
    if not indices:
        raise ValidationFailed(f"no run summaries found in {runs_dir}")
    rows = []
    for k in indices:
        summary, _ = read_run(runs_dir, k)
        rep = l2_gain_report(summary["energy_series"], bank, bank.constants.R1,
                             bank.constants.R2, summary["tau"] * summary["L"])
        row = {"run": k, "success": summary["success"]}
        row.update(rep.to_dict())
        rows.append(row)
    (run_dir / "l2_report.json").write_text(canonical_json(rows))
    if args.format == "json":
        _emit(rows, "json")
    else:
        _emit([{key: _num(v) for key, v in r.items()} for r in rows], "csv")
    ok = [r["bound_satisfied"] for r in rows if r["success"]]
    print(f"bound satisfied on {sum(ok)}/{len(ok)} successful runs", file=sys.stderr)
    for r in rows:
        print(f"run {r['run']}: log10 C0={r['log10_C0']:.6g} vs empirical {r['empirical_C0']}; "
              f"C1={r['C1']:.6g} vs empirical {r['empirical_C1']}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "montecarlo": cmd_montecarlo,
    "criteria-stats": cmd_criteria_stats,
    "generate": cmd_generate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DimensionError, InvalidScenarioError, ValidationFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GenerationError as exc:
        print(f"error: {exc}; diagnostics: {json.dumps(exc.diagnostics, default=str)}",
              file=sys.stderr)
        return EXIT_RUNTIME
    except (LogicError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
