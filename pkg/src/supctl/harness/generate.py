"""Random scenario generation by rejection sampling."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .. import numerics as nx
from ..errors import GenerationError, InvalidScenarioError
from ..system_bank import (
    Controller,
    Margins,
    StateSpaceModel,
    derive_constants,
    make_bank,
    strict_observability_margin,
    validate_scenario,
)
from .config import ScenarioConfig, candidate_dict

DEFAULT_BUDGET = 100_000


def _sample_candidate(rng: np.random.Generator, d_x: int, d_u: int, d_y: int, rho_max: float):
    """One model with a static gain that stabilizes it, or ``None``."""
    A = rng.normal(scale=1.0 / math.sqrt(d_x), size=(d_x, d_x)) * rng.uniform(0.8, 1.6)
    B = rng.normal(size=(d_x, d_u))
    C = rng.normal(size=(d_y, d_x))
    K = rng.normal(scale=1.0, size=(d_u, d_y))
    if nx.spectral_radius(A + B @ K @ C) > rho_max:
        return None
    return A, B, C, K


def _observability_floor(models, gains, nu: int) -> float:
    out = math.inf
    for (A, B, C), K in zip(models, gains):
        Acl = A + B @ K @ C
        out = min(out, strict_observability_margin(StateSpaceModel(C, Acl, B), nu))
    return out


def generate_scenario(N: int, dims: tuple = (2, 1, 1), margins: tuple = (0.1, 0.2, 0.3),
                      seed: int = 0, *, nu: int | None = None, h: int = 3,
                      noise: tuple = (0.1, 0.1, 1.0), true_index: int = 0,
                      eps_c_target: float | None = 1.0, rho_max: float = 0.8,
                      require_mixed_row: bool = False, max_tau: float | None = None,
                      budget: int = DEFAULT_BUDGET, delta_c: float = 1.0 / 30.0,
                      delta_alg: float = 0.1) -> ScenarioConfig:
    """Draw random static output-feedback banks until all requested margins hold.

    ``eps_c_target`` rescales every output matrix (and inversely every gain)
    so the smallest matched observability margin equals the target. This is
    a change of output units; the closed-loop state matrices do not move.
    ``require_mixed_row`` asks for both a destabilizing and a stabilizing
    mismatched controller on the true plant.

    Raises
    ------
    GenerationError
        When ``budget`` attempts pass without an accepted scenario.
    """
    if N < 1:
        raise ValueError("N >= 1 required")
    d_x, d_u, d_y = dims
    eps_c_min, eps_a_min, gamma_min = margins
    nu = d_x if nu is None else nu
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    reasons: Counter = Counter()
    declared = Margins(eps_c=eps_c_min, eps_a=eps_a_min, gamma=gamma_min)
    best_seen = {"eps_c": 0.0, "gamma": 0.0, "tau": math.inf}

    for attempt in range(1, int(budget) + 1):
        raw = [_sample_candidate(rng, d_x, d_u, d_y, rho_max) for _ in range(N)]
        if any(r is None for r in raw):
            reasons["matched loop not stabilized"] += 1
            continue
        models = [(A, B, C) for A, B, C, _ in raw]
        gains = [K for *_, K in raw]
        scale = 1.0
        if eps_c_target is not None:
            floor = _observability_floor(models, gains, nu)
            if floor <= 1e-9:
                reasons["matched loop not observable"] += 1
                continue
            scale = eps_c_target / floor
        sms = [StateSpaceModel(C * scale, A, B) for A, B, C in models]
        ctrls = [Controller.static(K / scale) for K in gains]
        bank = make_bank(sms, ctrls, true_index, noise)

        rhos = np.array([[nx.spectral_radius(bank.loop(i, j).A) for j in range(N)]
                         for i in range(N)])
        off = ~np.eye(N, dtype=bool)
        if N > 1 and not np.any(rhos[off] >= 1.0):
            reasons["no destabilizing pair"] += 1
            continue
        if require_mixed_row and N > 1:
            row = rhos[true_index][off[true_index]]
            if not (np.any(row >= 1.0) and np.any(row < 1.0)):
                reasons["true row lacks a destabilizing and a stabilizing mismatch"] += 1
                continue
        try:
            consts = derive_constants(bank, nu, h, delta_c, delta_alg)
        except InvalidScenarioError as exc:
            reasons[f"invalid: {exc}".split("(")[0].strip()] += 1
            continue
        best_seen["eps_c"] = max(best_seen["eps_c"], consts.eps_c)
        if math.isfinite(consts.gamma):
            best_seen["gamma"] = max(best_seen["gamma"], consts.gamma)
        report = validate_scenario(bank, consts, declared)
        if not report.valid:
            reasons["margins: " + ", ".join(c.name for c in report.failures())] += 1
            continue
        best_seen["tau"] = min(best_seen["tau"], consts.tau)
        if max_tau is not None and not consts.tau <= max_tau:
            reasons["episode length above max_tau"] += 1
            continue

        meta = {
            "generator": {
                "seed": int(seed), "N": N, "dims": list(dims), "margins": list(margins),
                "eps_c_target": eps_c_target, "rho_max": rho_max,
                "require_mixed_row": require_mixed_row, "max_tau": max_tau,
                "attempts": attempt, "rejections": dict(sorted(reasons.items())),
            }
        }
        return ScenarioConfig(
            candidates=[candidate_dict(m, k) for m, k in zip(sms, ctrls)],
            true_index=true_index, nu=nu, h=h, sigma_w=float(noise[0]),
            sigma_eta=float(noise[1]), sigma_u=float(noise[2]), delta_c=delta_c,
            delta_alg=delta_alg, declared_margins={"eps_c": eps_c_min, "eps_a": eps_a_min,
                                                   "gamma": gamma_min},
            metadata=meta,
        )
    raise GenerationError(
        f"no scenario accepted after {budget} attempts",
        {"attempts": int(budget), "rejections": dict(reasons),
         "best_eps_c": best_seen["eps_c"], "best_gamma": best_seen["gamma"],
         "best_tau": best_seen["tau"]},
    )
