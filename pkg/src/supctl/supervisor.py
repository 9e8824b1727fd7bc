"""UCB-style supervisor: warm start, episode selection, commitment, full runs.

Controllers are indexed from 0; episodes are counted from 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .criteria import CriterionConfig, EpisodeOutputs, score_episode
from .errors import LogicError, ProbabilityRangeError
from .simulator import (
    EnergyLedger,
    EnergyMetrics,
    NoiseStreams,
    carry_over_state,
    energy_metrics,
    rollout_episode,
)
from .system_bank import CandidateBank

FIXED = "fixed"
DYNAMIC = "dynamic"


def _check_delta(delta: float):
    if not 0.0 < delta < 1.0:
        raise ProbabilityRangeError(f"delta must lie in (0, 1), got {delta}")


def horizon_length(N: int, delta_alg: float, variant: str = FIXED) -> int:
    """Number of episodes before commitment."""
    if N < 1:
        raise ValueError("N >= 1 required")
    if variant == FIXED:
        return math.ceil(72 * N * math.log(72 * N**2 / delta_alg))
    if variant == DYNAMIC:
        arg = 24.0 * math.sqrt(6.0) / math.sqrt(delta_alg) * math.pi * N**1.5
        return math.ceil(144 * N * math.log(arg))
    raise ValueError(f"unknown schedule variant {variant!r}")


@dataclass(frozen=True)
class ExplorationSchedule:
    variant: str
    L: int
    N: int
    delta_alg: float

    def __post_init__(self):
        if self.variant not in (FIXED, DYNAMIC):
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        if self.N < 1 or self.L < self.N:
            raise ValueError("need N >= 1 and L >= N")
        if not self.delta_alg > 0:
            raise ProbabilityRangeError("delta_alg must be positive")

    @classmethod
    def build(cls, variant: str, N: int, delta_alg: float, L: int | None = None):
        _check_delta(delta_alg)
        return cls(variant, int(L) if L is not None else horizon_length(N, delta_alg, variant),
                   N, delta_alg)

    @property
    def formula_L(self) -> int:
        return horizon_length(self.N, self.delta_alg, self.variant)

    @property
    def overridden(self) -> bool:
        return self.L != self.formula_L

    def a(self, ell: int) -> float:
        if self.variant == FIXED:
            return self.L / (72.0 * self.N)
        return 0.5 * math.log(math.pi**2 * self.N * ell**2 / (6.0 * self.delta_alg))


def exploration_bonus(sched: ExplorationSchedule, ell: int, Q_i: int) -> float:
    if Q_i < 1:
        raise LogicError("bonus needs at least one completed pull")
    return math.sqrt(max(sched.a(ell), 0.0) / Q_i)


def pull_count_bound(sched: ExplorationSchedule) -> int:
    """Ceiling of ``36 a_L``: the most pulls any non-matching arm gets on the good event."""
    return math.ceil(36.0 * sched.a(sched.L))


@dataclass
class SupervisorState:
    N: int
    Q: list = field(default_factory=list)
    score_history: list = field(default_factory=list)
    episode: int = 0
    committed: int | None = None

    def __post_init__(self):
        if not self.Q:
            self.Q = [0] * self.N
        if not self.score_history:
            self.score_history = [[] for _ in range(self.N)]

    def mean_score(self, i: int) -> float:
        q = self.Q[i]
        return sum(self.score_history[i]) / q if q else 0.0


def select_controller(state: SupervisorState, sched: ExplorationSchedule) -> int:
    """Round-robin for the first N episodes, then UCB with lowest-index ties."""
    ell = state.episode + 1
    if ell <= state.N:
        return ell - 1
    best, best_val = 0, -math.inf
    for i in range(state.N):
        val = state.mean_score(i) + exploration_bonus(sched, ell, state.Q[i])
        if val > best_val:
            best, best_val = i, val
    return best


def record_episode(state: SupervisorState, controller: int, score: int) -> SupervisorState:
    if score not in (0, 1):
        raise ValueError("score must be binary")
    if state.committed is not None:
        raise LogicError("supervisor already committed")
    state.Q[controller] += 1
    state.score_history[controller].append(int(score))
    state.episode += 1
    return state


def commit(state: SupervisorState, L: int) -> int:
    if state.episode != L:
        raise LogicError(f"commit requested at episode {state.episode}, expected {L}")
    state.committed = int(np.argmax(state.Q))
    return state.committed


@dataclass
class EpisodeRecord:
    episode: int
    controller: int
    s1: int
    s2: int
    s: int
    Q_snapshot: list
    state_norm_end: float
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "episode": self.episode, "controller": self.controller, "s1": self.s1,
            "s2": self.s2, "s": self.s, "Q_snapshot": list(self.Q_snapshot),
            "state_norm_end": self.state_norm_end, "diverged": self.diverged,
        }


@dataclass
class RunRecord:
    episodes: list
    committed: int
    true_index: int
    Q: list
    L: int
    tau: int
    post_commit_horizon: int
    energy: EnergyMetrics
    ledger: EnergyLedger
    divergence_events: list
    tau_overridden: bool = False
    L_overridden: bool = False

    @property
    def success(self) -> bool:
        return self.committed == self.true_index


def run_supervisor(bank: CandidateBank, cfg: CriterionConfig, sched: ExplorationSchedule,
                   noise: NoiseStreams, post_commit_horizon: int | None = None) -> RunRecord:
    """Execute all ``L`` episodes, commit, then hold the committed controller.

    Divergent episodes are logged and scored 0; they never abort the run.
    """
    if sched.N != bank.N:
        raise ValueError("schedule and bank disagree on N")
    tau = cfg.tau
    post = 10 * tau if post_commit_horizon is None else int(post_commit_horizon)
    if post < 0:
        raise ValueError("post_commit_horizon must be nonnegative")
    state = SupervisorState(bank.N)
    ledger = EnergyLedger(split_time=tau * sched.L)
    log, events = [], []
    x = np.zeros(bank.loop(bank.true_index, 0).A.shape[0])
    prev = 0
    g = 0
    for ell in range(1, sched.L + 1):
        j = select_controller(state, sched)
        x = carry_over_state(x, prev, j, bank)
        traj, x = rollout_episode(bank, j, x, tau, noise, g)
        ledger.add(traj)
        score = score_episode(EpisodeOutputs(traj.outputs, traj.inputs, j), bank, cfg)
        record_episode(state, j, score.s)
        if traj.diverged:
            events.append({"episode": ell, "controller": j,
                           "global_step": g + traj.divergence_step})
        log.append(EpisodeRecord(ell, j, score.s1, score.s2, score.s, list(state.Q),
                                 float(np.linalg.norm(x)), traj.diverged))
        prev = j
        g += tau
    i_hat = commit(state, sched.L)
    if post > 0:
        x = carry_over_state(x, prev, i_hat, bank)
        traj, x = rollout_episode(bank, i_hat, x, post, noise, g)
        ledger.add(traj)
        if traj.diverged:
            events.append({"episode": None, "controller": i_hat,
                           "global_step": g + traj.divergence_step})
    return RunRecord(
        episodes=log, committed=i_hat, true_index=bank.true_index, Q=list(state.Q), L=sched.L,
        tau=tau, post_commit_horizon=post, energy=energy_metrics(ledger), ledger=ledger,
        divergence_events=events, tau_overridden=cfg.overridden, L_overridden=sched.overridden,
    )
