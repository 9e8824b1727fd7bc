"""Seeded Monte Carlo studies over supervisor runs and single episodes."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import beta

from .. import numerics as nx
from ..criteria import EpisodeOutputs, score_episode
from ..simulator import GENERATOR_NAME, NoiseStreams, rollout_episode, splitmix64
from ..supervisor import pull_count_bound, run_supervisor
from .config import SCHEMA_VERSION, Experiment, ScenarioConfig, build_experiment, canonical_json
from .l2gain import l2_gain_report

CONFIDENCE = 0.99
STREAM_INIT = 3

# Per-episode score guarantees for each controller class.
SCORE_BOUNDS = {
    "matched": ("s1_freq", 14.0 / 15.0),
    "destabilizing": ("s0_freq", 2.0 / 5.0),
    "mismatched_stable": ("s0_freq", 1.0 / 2.0),
}


def clopper_pearson(k: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Exact two-sided binomial interval."""
    if n == 0:
        return 0.0, 1.0
    a = 1.0 - confidence
    lo = 0.0 if k == 0 else float(beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def controller_class(bank, j: int) -> str:
    i = bank.true_index
    if j == i:
        return "matched"
    if nx.spectral_radius(bank.loop(i, j).A) >= 1.0:
        return "destabilizing"
    return "mismatched_stable"


def _freq(k: int, n: int) -> dict:
    lo, hi = clopper_pearson(k, n)
    return {"count": k, "n": n, "freq": k / n if n else None, "ci99": [lo, hi]}


# ---------------------------------------------------------------- single runs

def run_one(exp: Experiment, run: int, master_seed: int | None = None) -> tuple[dict, list]:
    """One supervisor run; returns its summary document and episode rows."""
    cfg = exp.config
    seed = cfg.master_seed if master_seed is None else int(master_seed)
    noise = NoiseStreams(seed, cfg.sigma_w, cfg.sigma_eta, cfg.sigma_u, run)
    rec = run_supervisor(exp.bank, exp.criterion, exp.schedule, noise, exp.post_commit_horizon)
    bound = pull_count_bound(exp.schedule)
    others = [q for i, q in enumerate(rec.Q) if i != exp.bank.true_index]
    c = exp.constants
    energy = {
        "state_pre": rec.ledger.state_pre, "input_pre": rec.ledger.input_pre,
        "state_post": rec.ledger.state_post, "input_post": rec.ledger.input_post,
    }
    l2 = l2_gain_report(energy, exp.bank, c.R1, c.R2, rec.tau * rec.L)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "run": run,
        "master_seed": seed,
        "run_seed": noise.run_seed,
        "generator": GENERATOR_NAME,
        "schedule_variant": exp.schedule.variant,
        "criterion_variant": exp.criterion.variant,
        "committed": rec.committed,
        "true_index": rec.true_index,
        "success": rec.success,
        "L": rec.L,
        "tau": rec.tau,
        "post_commit_horizon": rec.post_commit_horizon,
        "tau_overridden": rec.tau_overridden,
        "L_overridden": rec.L_overridden,
        "pull_counts": rec.Q,
        "pull_bound": bound,
        "pull_bound_ok": all(q <= bound for q in others),
        "divergence_events": rec.divergence_events,
        "energy": {"state_energy": rec.energy.state_energy,
                   "input_energy_pre": rec.energy.input_energy_pre,
                   "input_energy_post": rec.energy.input_energy_post},
        "energy_series": energy,
        "l2_gain": l2.to_dict(),
        "episode_log_length": len(rec.episodes),
    }
    return summary, [e.to_dict() for e in rec.episodes]


def write_run(out_dir: Path, summary: dict, episodes: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"run_{summary['run']:05d}"
    with open(out_dir / f"{stem}.jsonl", "w") as fh:
        for row in episodes:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out_dir / f"{stem}.json").write_text(canonical_json(summary))


def read_run(out_dir: Path, run: int) -> tuple[dict, list]:
    stem = f"run_{run:05d}"
    summary = json.loads((Path(out_dir) / f"{stem}.json").read_text())
    with open(Path(out_dir) / f"{stem}.jsonl") as fh:
        episodes = [json.loads(line) for line in fh]
    return summary, episodes


# worker state: one experiment per process, built once
_WORKER: dict = {}


def _init_worker(cfg_dict: dict, schedule_variant: str | None):
    _WORKER["exp"] = build_experiment(ScenarioConfig(**cfg_dict), schedule_variant)


def _worker_run(args):
    run, seed = args
    return run_one(_WORKER["exp"], run, seed)


def _digest(summary: dict, episodes: list, bank) -> dict:
    """Compact per-run facts kept in memory for aggregation."""
    per_ctrl = {}
    for e in episodes:
        stats = per_ctrl.setdefault(e["controller"], [0, 0, 0, 0])
        stats[0] += 1
        stats[1] += e["s1"]
        stats[2] += e["s2"]
        stats[3] += e["s"]
    correct = np.cumsum([e["controller"] == bank.true_index for e in episodes])
    row = {k: summary[k] for k in ("run", "run_seed", "committed", "success", "pull_bound_ok")}
    row["divergences"] = len(summary["divergence_events"])
    row["l2_satisfied"] = summary["l2_gain"]["bound_satisfied"]
    row["pull_counts"] = summary["pull_counts"]
    row["per_controller"] = per_ctrl
    row["correct_cumsum"] = correct
    return row


def run_montecarlo(cfg: ScenarioConfig, out_dir=None, jobs: int = 1, num_runs: int | None = None,
                   schedule_variant: str | None = None, master_seed: int | None = None) -> dict:
    """Independent seeded runs, merged by run index; returns the aggregate summary.

    When ``out_dir`` is given, per-run JSON/JSONL files, ``summary.json``,
    ``runs.csv`` and ``selection_curve.csv`` are written there, plus a
    ``timing.json`` sidecar that is the only file depending on wall-clock.
    """
    exp = build_experiment(cfg, schedule_variant)
    n = cfg.num_runs if num_runs is None else int(num_runs)
    seed = cfg.master_seed if master_seed is None else int(master_seed)
    if n < 1:
        raise ValueError("num_runs must be >= 1")
    out = Path(out_dir) if out_dir is not None else None
    t0 = time.perf_counter()
    tasks = [(k, seed) for k in range(n)]
    digests = []

    def consume(summary, episodes):
        if out is not None:
            write_run(out / "runs", summary, episodes)
        digests.append(_digest(summary, episodes, exp.bank))

    if jobs <= 1:
        for k, s in tasks:
            consume(*run_one(exp, k, s))
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(cfg.to_dict(), schedule_variant)) as pool:
            for summary, episodes in pool.map(_worker_run, tasks, chunksize=1):
                consume(summary, episodes)
    digests.sort(key=lambda d: d["run"])
    agg = aggregate(digests, exp, seed)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(canonical_json(agg))
        _write_runs_csv(out / "runs.csv", digests)
        _write_curve_csv(out / "selection_curve.csv", digests)
        (out / "timing.json").write_text(canonical_json(
            {"wall_clock_seconds": time.perf_counter() - t0, "jobs": jobs}))
    return agg


def aggregate(digests: list, exp: Experiment, master_seed: int) -> dict:
    bank = exp.bank
    n = len(digests)
    wins = sum(d["success"] for d in digests)
    successes = [d for d in digests if d["success"]]
    classes = {}
    for j in range(bank.N):
        cls = controller_class(bank, j)
        tot = [0, 0, 0, 0]
        for d in digests:
            st = d["per_controller"].get(j)
            if st:
                tot = [a + b for a, b in zip(tot, st)]
        entry = classes.setdefault(cls, {"controllers": [], "episodes": 0, "s1": 0, "s2": 0, "s": 0})
        entry["controllers"].append(j)
        entry["episodes"] += tot[0]
        entry["s1"] += tot[1]
        entry["s2"] += tot[2]
        entry["s"] += tot[3]
    for entry in classes.values():
        m = entry["episodes"]
        for key in ("s1", "s2", "s"):
            entry[f"{key}_freq"] = entry[key] / m if m else None
    lo, hi = clopper_pearson(wins, n)
    delta = exp.config.delta_alg
    total_div = sum(d["divergences"] for d in digests)
    return {
        "schema_version": SCHEMA_VERSION,
        "master_seed": master_seed,
        "num_runs": n,
        "schedule_variant": exp.schedule.variant,
        "criterion_variant": exp.criterion.variant,
        "L": exp.schedule.L,
        "tau": exp.tau,
        "theorem_checks_apply": exp.theorem_checks_apply,
        "success": {"count": wins, "rate": wins / n, "ci99": [lo, hi],
                    "target": 1.0 - delta, "meets_target": hi >= 1.0 - delta},
        "score_frequencies": classes,
        "mean_pull_counts": [float(np.mean([d["pull_counts"][j] for d in digests]))
                             for j in range(bank.N)],
        "pull_bound": pull_count_bound(exp.schedule),
        "pull_bound_violations": sum(not d["pull_bound_ok"] for d in successes),
        "divergence_event_rate": total_div / n,
        "runs_with_divergence": sum(d["divergences"] > 0 for d in digests),
        "l2_satisfied_fraction_of_successes": (
            sum(d["l2_satisfied"] for d in successes) / len(successes) if successes else None),
    }


def _write_runs_csv(path: Path, digests: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "run_seed", "committed", "success", "pull_counts", "pull_bound_ok",
                    "divergences", "l2_satisfied"])
        for d in digests:
            w.writerow([d["run"], d["run_seed"], d["committed"], int(d["success"]),
                        ";".join(map(str, d["pull_counts"])), int(d["pull_bound_ok"]),
                        d["divergences"], int(d["l2_satisfied"])])


def _write_curve_csv(path: Path, digests: list):
    curves = np.array([d["correct_cumsum"] for d in digests], dtype=float)
    ell = np.arange(1, curves.shape[1] + 1)
    frac = (curves / ell).mean(axis=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "cumulative_correct_fraction"])
        for e, f in zip(ell, frac):
            w.writerow([int(e), repr(float(f))])


# ------------------------------------------------------------ episode cells

def _initial_state(noise: NoiseStreams, n: int, radius: float) -> np.ndarray:
    """Uniform draw from the ball of the given radius."""
    g = np.random.Generator(np.random.Philox(key=[noise.run_seed, STREAM_INIT]))
    v = g.standard_normal(n)
    v /= np.linalg.norm(v) or 1.0
    return radius * g.uniform() ** (1.0 / n) * v


def criteria_stats(cfg: ScenarioConfig, controller: int, num_episodes: int,
                   init: str = "zero", init_radius: float = 1.0,
                   master_seed: int | None = None, tau: int | None = None) -> dict:
    """Frequencies of each criterion outcome for one controller held over fresh episodes.

    Episode ``k`` uses run index ``k`` of the master seed, so cells are
    independent and reproducible.
    """
    if init not in ("zero", "random"):
        raise ValueError("init must be 'zero' or 'random'")
    exp = build_experiment(cfg if tau is None else cfg.replace(tau_override=tau))
    bank, crit = exp.bank, exp.criterion
    if not 0 <= controller < bank.N:
        raise ValueError(f"controller {controller} out of range for N={bank.N}")
    seed = cfg.master_seed if master_seed is None else int(master_seed)
    base = NoiseStreams(seed, cfg.sigma_w, cfg.sigma_eta, cfg.sigma_u)
    n_state = bank.loop(bank.true_index, controller).A.shape[0]
    counts = {"s1": 0, "s2": 0, "s": 0}
    diverged = 0
    for k in range(int(num_episodes)):
        noise = base.for_run(k)
        x1 = np.zeros(n_state) if init == "zero" else _initial_state(noise, n_state, init_radius)
        traj, _ = rollout_episode(bank, controller, x1, crit.tau, noise, 0)
        sc = score_episode(EpisodeOutputs(traj.outputs, traj.inputs, controller), bank, crit)
        counts["s1"] += sc.s1
        counts["s2"] += sc.s2
        counts["s"] += sc.s
        diverged += traj.diverged
    n = int(num_episodes)
    cls = controller_class(bank, controller)
    which, bound = SCORE_BOUNDS[cls]
    result = {
        "schema_version": SCHEMA_VERSION,
        "controller": controller,
        "class": cls,
        "episodes": n,
        "tau": crit.tau,
        "init": init,
        "master_seed": seed,
        "s1_is_1": _freq(counts["s1"], n),
        "s2_is_1": _freq(counts["s2"], n),
        "s_is_1": _freq(counts["s"], n),
        "s_is_0": _freq(n - counts["s"], n),
        "diverged": diverged,
    }
    target = result["s_is_1"] if which == "s1_freq" else result["s_is_0"]
    result["bound"] = {"event": "S=1" if which == "s1_freq" else "S=0", "value": bound,
                       "passes": target["ci99"][1] >= bound}
    return result
