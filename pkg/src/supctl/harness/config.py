"""Scenario files: a single JSON document with explicit row-major matrices."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..criteria import DIMENSION_FREE, STANDARD, CriterionConfig, make_criterion_config
from ..errors import ConfigError, DimensionError, ProbabilityRangeError, ScenarioParseError
from ..supervisor import DYNAMIC, FIXED, ExplorationSchedule
from ..system_bank import (
    CandidateBank,
    Controller,
    Margins,
    StateSpaceModel,
    derive_constants,
    make_bank,
)

SCHEMA_VERSION = 1


@dataclass
class ScenarioConfig:
    candidates: list
    true_index: int
    nu: int
    h: int
    sigma_w: float
    sigma_eta: float
    sigma_u: float
    delta_c: float = 1.0 / 30.0
    delta_alg: float = 0.1
    criterion_variant: str = STANDARD
    schedule_variant: str = FIXED
    tau_override: int | None = None
    L_override: int | None = None
    master_seed: int = 0
    num_runs: int = 1
    post_commit_horizon: int | None = None
    zeta_scope: str = "matched"
    declared_margins: dict | None = None
    metadata: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def N(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig(**d)

    def declared(self) -> Margins:
        return Margins(**(self.declared_margins or {}))


def _sanitize(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if obj != obj else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Sorted, indented JSON; non-finite floats are written as strings."""
    return json.dumps(_sanitize(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _matrix(value, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{where}: not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise ScenarioParseError(f"{where}: expected a nested row-major list, got ndim={arr.ndim}")
    return arr


def model_from_dict(d: dict, where: str) -> StateSpaceModel:
    try:
        return StateSpaceModel(_matrix(d["C"], f"{where}.C"), _matrix(d["A"], f"{where}.A"),
                               _matrix(d["B"], f"{where}.B"))
    except KeyError as exc:
        raise ScenarioParseError(f"{where}: missing matrix {exc}") from None
    except DimensionError as exc:
        raise DimensionError(f"{where}: {exc}") from None


def controller_from_dict(d: dict, where: str) -> Controller:
    kind = d.get("kind", "static_output_feedback")
    try:
        if kind == "static_output_feedback":
            return Controller.static(_matrix(d["D_K"], f"{where}.D_K"))
        if kind == "dynamic":
            return Controller.dynamic(*(_matrix(d[k], f"{where}.{k}")
                                        for k in ("A_K", "B_K", "C_K", "D_K")))
    except KeyError as exc:
        raise ScenarioParseError(f"{where}: missing matrix {exc}") from None
    except DimensionError as exc:
        raise DimensionError(f"{where}: {exc}") from None
    raise ScenarioParseError(f"{where}: unknown controller kind {kind!r}")


def model_to_dict(m: StateSpaceModel) -> dict:
    return {"A": m.A.tolist(), "B": m.B.tolist(), "C": m.C.tolist()}


def controller_to_dict(k: Controller) -> dict:
    d = {"kind": k.kind, "D_K": k.D_K.tolist()}
    if k.kind == "dynamic":
        d.update(A_K=k.A_K.tolist(), B_K=k.B_K.tolist(), C_K=k.C_K.tolist())
    return d


def candidate_dict(model: StateSpaceModel, ctrl: Controller) -> dict:
    return {"model": model_to_dict(model), "controller": controller_to_dict(ctrl)}


def parse_candidates(cands) -> tuple[list, list]:
    if not isinstance(cands, list) or not cands:
        raise ConfigError("N ≥ 1 required: candidates list is empty")
    models, ctrls = [], []
    for idx, c in enumerate(cands):
        if not isinstance(c, dict) or "model" not in c or "controller" not in c:
            raise ScenarioParseError(f"candidate {idx}: needs 'model' and 'controller'")
        m = model_from_dict(c["model"], f"candidate {idx} model")
        k = controller_from_dict(c["controller"], f"candidate {idx} controller")
        if models:
            ref = models[0]
            if m.n_inputs != ref.n_inputs:
                raise DimensionError(
                    f"candidate {idx}: d_u={m.n_inputs} but candidate 0 has d_u={ref.n_inputs}")
            if m.n_outputs != ref.n_outputs:
                raise DimensionError(
                    f"candidate {idx}: d_y={m.n_outputs} but candidate 0 has d_y={ref.n_outputs}")
        if k.D_K.shape != (m.n_inputs, m.n_outputs):
            raise DimensionError(
                f"candidate {idx}: controller D_K is {k.D_K.shape}, model needs "
                f"{(m.n_inputs, m.n_outputs)}")
        models.append(m)
        ctrls.append(k)
    return models, ctrls


def _check_config(cfg: ScenarioConfig):
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version}")
    parse_candidates(cfg.candidates)
    for name in ("delta_c", "delta_alg"):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
            raise ProbabilityRangeError(f"{name}={v!r} must lie in the open interval (0, 1)")
    if not 0 <= cfg.true_index < cfg.N:
        raise ConfigError(f"true_index {cfg.true_index} out of range for N={cfg.N}")
    if cfg.nu < 1 or cfg.h < 1:
        raise ConfigError("nu and h must be >= 1")
    for name in ("sigma_w", "sigma_eta", "sigma_u"):
        v = getattr(cfg, name)
        if not (math.isfinite(v) and v >= 0):
            raise ConfigError(f"{name} must be a finite nonnegative number")
    if cfg.criterion_variant not in (STANDARD, DIMENSION_FREE):
        raise ConfigError(f"unknown criterion_variant {cfg.criterion_variant!r}")
    if cfg.schedule_variant not in (FIXED, DYNAMIC):
        raise ConfigError(f"unknown schedule_variant {cfg.schedule_variant!r}")
    if cfg.zeta_scope not in ("matched", "all_stable"):
        raise ConfigError(f"unknown zeta_scope {cfg.zeta_scope!r}")
    if cfg.num_runs < 1:
        raise ConfigError("num_runs must be >= 1")
    if cfg.tau_override is not None and cfg.tau_override < cfg.nu + cfg.h + 1:
        raise ConfigError("tau_override must be at least nu + h + 1")
    if cfg.L_override is not None and cfg.L_override < cfg.N:
        raise ConfigError("L_override must be at least N")
    if cfg.declared_margins is not None:
        unknown = set(cfg.declared_margins) - {"eps_c", "eps_a", "gamma"}
        if unknown:
            raise ConfigError(f"unknown declared margins {sorted(unknown)}")


def config_from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ScenarioParseError("scenario root must be an object")
    names = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - names
    if unknown:
        raise ScenarioParseError(f"unknown fields {sorted(unknown)}")
    try:
        cfg = ScenarioConfig(**d)
    except TypeError as exc:
        raise ScenarioParseError(str(exc)) from None
    _check_config(cfg)
    return cfg


def loads_scenario(text: str) -> ScenarioConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON: {exc}") from None
    return config_from_dict(d)


def load_scenario(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {p}: {exc}") from None
    return loads_scenario(text)


def save_scenario(cfg: ScenarioConfig, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(cfg.to_json())
    return p


@dataclass
class Experiment:
    """Everything needed to run supervisor episodes for one scenario."""

    config: ScenarioConfig
    bank: CandidateBank
    criterion: CriterionConfig
    schedule: ExplorationSchedule

    @property
    def constants(self):
        return self.bank.constants

    @property
    def tau(self) -> int:
        return self.criterion.tau

    @property
    def post_commit_horizon(self) -> int:
        p = self.config.post_commit_horizon
        return 10 * self.tau if p is None else int(p)

    @property
    def theorem_checks_apply(self) -> bool:
        return not (self.criterion.overridden or self.schedule.overridden)


def build_bank(cfg: ScenarioConfig) -> CandidateBank:
    models, ctrls = parse_candidates(cfg.candidates)
    bank = make_bank(models, ctrls, cfg.true_index, (cfg.sigma_w, cfg.sigma_eta, cfg.sigma_u))
    consts = derive_constants(bank, cfg.nu, cfg.h, cfg.delta_c, cfg.delta_alg,
                              dim_free=cfg.criterion_variant == DIMENSION_FREE,
                              zeta_scope=cfg.zeta_scope)
    return bank.with_constants(consts)


def build_experiment(cfg: ScenarioConfig, schedule_variant: str | None = None) -> Experiment:
    bank = build_bank(cfg)
    crit = make_criterion_config(bank, variant=cfg.criterion_variant, tau=cfg.tau_override)
    sched = ExplorationSchedule.build(schedule_variant or cfg.schedule_variant, bank.N,
                                      cfg.delta_alg, cfg.L_override)
    return Experiment(cfg, bank, crit, sched)
