"""Per-episode scoring of the active controller.

The supervisor only sees outputs and the exploratory input. All model
quantities come from the active candidate's own matched loop ``[j, j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ExcitationError, InvalidScenarioError, LogicError
from .system_bank import (
    CandidateBank,
    DerivedConstants,
    markov_parameters,
    observability_matrix,
    unstable_mode_directions,
)

STANDARD = "standard"
DIMENSION_FREE = "dimension_free"


@dataclass(frozen=True)
class EpisodeOutputs:
    outputs: np.ndarray
    inputs: np.ndarray
    active: int

    @property
    def tau(self) -> int:
        return self.outputs.shape[0]

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.outputs)))


class _CandidateCache:
    """Per-candidate matrices reused across episodes."""

    def __init__(self, bank: CandidateBank, j: int, nu: int, h: int, tau: int):
        cl = bank.loop(j, j)
        O = observability_matrix(cl, nu)
        if nx.min_singular_value(O) <= 0.0:
            raise InvalidScenarioError(f"observability matrix of loop [{j},{j}] is rank-deficient")
        self.O_pinv = nx.pseudo_inverse(O)
        self.G = markov_parameters(cl, h)
        # free_response[t] = C A^t for t = 0..tau-1
        n = cl.A.shape[0]
        resp = np.empty((tau, cl.C.shape[0], n))
        row = cl.C
        for t in range(tau):
            resp[t] = row
            row = row @ cl.A
        self.free_response = resp


@dataclass
class CriterionConfig:
    """Thresholds, horizons and precomputed directions for scoring.

    ``tau`` must be at least the formula length ``tau_required`` unless
    ``overridden`` is set.
    """

    variant: str
    delta_c: float
    theta: float
    gamma: float
    nu: int
    h: int
    tau: int
    critical_directions: list
    unstable_directions: list | None = None
    tau_required: float = 0.0
    overridden: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in (STANDARD, DIMENSION_FREE):
            raise ValueError(f"unknown criterion variant {self.variant!r}")
        if self.tau < self.nu + self.h + 1:
            raise ValueError("tau must be at least nu + h + 1")
        if not self.overridden and self.tau < self.tau_required:
            raise LogicError(
                f"tau={self.tau} is below the required length {self.tau_required}; "
                "mark the config as overridden to run shorter episodes")
        if self.variant == DIMENSION_FREE and self.unstable_directions is None:
            raise ValueError("dimension-free variant needs unstable-mode directions")

    def cache(self, bank: CandidateBank, j: int) -> _CandidateCache:
        key = (id(bank), j)
        c = self._cache.get(key)
        if c is None:
            c = _CandidateCache(bank, j, self.nu, self.h, self.tau)
            self._cache[key] = c
        return c

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state


def make_criterion_config(bank: CandidateBank, constants: DerivedConstants | None = None,
                          variant: str = STANDARD, tau: int | None = None) -> CriterionConfig:
    """Build the scoring config; ``tau=None`` uses the formula length."""
    c = constants or bank.constants
    if c is None:
        raise ValueError("bank has no derived constants")
    required = c.tau
    if tau is None:
        if not math.isfinite(required):
            raise LogicError("formula episode length is unbounded; pass an explicit tau")
        tau = int(required)
    tau = int(tau)
    unstable = None
    if tau > c.nu + 2:
        if c.unstable_directions is not None and tau == required:
            unstable = c.unstable_directions
        else:
            unstable = [unstable_mode_directions(bank, j, tau, c.nu) for j in range(bank.N)]
    return CriterionConfig(
        variant=variant, delta_c=c.delta_c, theta=c.theta, gamma=c.gamma, nu=c.nu, h=c.h,
        tau=tau, critical_directions=c.critical_directions, unstable_directions=unstable,
        tau_required=required, overridden=tau < required,
    )


def estimate_initial_state(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig) -> np.ndarray:
    """Apply the pseudo-inverse of ``O[j,j]`` to ``[y_nu; ...; y_1]``."""
    if ep.tau < cfg.nu:
        raise ValueError("episode shorter than nu")
    stack = ep.outputs[: cfg.nu][::-1].reshape(-1)
    return cfg.cache(bank, ep.active).O_pinv @ stack


def predicted_outputs(x_hat: np.ndarray, bank: CandidateBank, cfg: CriterionConfig, j: int) -> np.ndarray:
    """Free response ``C A^{t-1} x_hat`` of loop ``[j, j]`` for ``t = 1..tau``."""
    return cfg.cache(bank, j).free_response @ x_hat


def instability_threshold(theta: float, delta_c: float, d_y: int = 1, N: int | None = None,
                          dim_free: bool = False) -> float:
    """Residual level beyond which an episode is declared unstable."""
    if dim_free:
        return math.sqrt(2.0 * theta * math.log(2.0 * N / delta_c))
    return math.sqrt(2.0 * d_y * theta * math.log(2.0 * d_y / delta_c))


def _final_residual(ep, bank, cfg):
    x_hat = estimate_initial_state(ep, bank, cfg)
    resp = cfg.cache(bank, ep.active).free_response[ep.tau - 1]
    return ep.outputs[-1] - resp @ x_hat


def criterion1(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig) -> int:
    """Instability detection on the norm of the final-step residual."""
    if not ep.finite:
        return 0
    r = _final_residual(ep, bank, cfg)
    level = instability_threshold(cfg.theta, cfg.delta_c, d_y=bank.d_y)
    return 0 if np.linalg.norm(r) > level else 1


def criterion1_dim_free(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig) -> int:
    """Instability detection along the precomputed unstable-mode directions."""
    if not ep.finite:
        return 0
    r = _final_residual(ep, bank, cfg)
    level = instability_threshold(cfg.theta, cfg.delta_c, N=bank.N, dim_free=True)
    for u in cfg.unstable_directions[ep.active]:
        if np.any(u) and abs(float(u @ r)) > level:
            return 0
    return 1


def regressors(inputs: np.ndarray, h: int, start: int) -> np.ndarray:
    """Rows ``z_t = [u_{t-h}; ...; u_{t-1}]`` for 1-based ``t = start..len(inputs)``."""
    tau, d_u = inputs.shape
    ts = np.arange(start, tau + 1)
    # u_{t-s} sits at row t-s-1
    cols = [inputs[ts - s - 1] for s in range(h, 0, -1)]
    return np.concatenate(cols, axis=1) if cols else np.zeros((len(ts), 0))


def shifted_outputs(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig,
                    x_hat: np.ndarray | None = None):
    """Outputs with the free response and nominal input response removed.

    Returns ``(y_tilde, z)`` with one row per ``t = nu+h+1..tau``.
    """
    start = cfg.nu + cfg.h + 1
    if ep.tau < start:
        raise ValueError(f"episode length {ep.tau} is shorter than nu + h + 1 = {start}")
    if x_hat is None:
        x_hat = estimate_initial_state(ep, bank, cfg)
    cache = cfg.cache(bank, ep.active)
    z = regressors(ep.inputs, cfg.h, start)
    free = cache.free_response[start - 1: ep.tau] @ x_hat
    y_tilde = ep.outputs[start - 1:] - free - z @ cache.G.T
    return y_tilde, z


def scalar_ols(zs, ys) -> float:
    """Slope of a no-intercept least-squares fit, ``sum(y z) / sum(z^2)``."""
    zs = np.asarray(zs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    denom = float(zs @ zs)
    if denom <= 0.0:
        raise ExcitationError("regressor has zero energy")
    return float(ys @ zs) / denom


def criterion2(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig) -> int:
    """Identification test: OLS slopes along each critical direction must stay within gamma."""
    if not ep.finite:
        return 0
    y_tilde, z = shifted_outputs(ep, bank, cfg)
    for k, (u, v) in enumerate(cfg.critical_directions[ep.active]):
        if k == ep.active:
            continue
        try:
            slope = scalar_ols(z @ v, y_tilde @ u)
        except ExcitationError:
            return 0
        if abs(slope) > cfg.gamma:
            return 0
    return 1


def combined_score(s1: int, s2: int) -> int:
    """Floor of the mean of two binary scores."""
    if s1 not in (0, 1) or s2 not in (0, 1):
        raise ValueError("scores must be binary")
    return (s1 + s2) // 2


@dataclass(frozen=True)
class EpisodeScore:
    s1: int
    s2: int

    @property
    def s(self) -> int:
        return combined_score(self.s1, self.s2)


def score_episode(ep: EpisodeOutputs, bank: CandidateBank, cfg: CriterionConfig) -> EpisodeScore:
    detect = criterion1_dim_free if cfg.variant == DIMENSION_FREE else criterion1
    return EpisodeScore(detect(ep, bank, cfg), criterion2(ep, bank, cfg))
