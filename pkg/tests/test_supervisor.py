import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as orc
from conftest import random_matched_bank
from supctl.criteria import make_criterion_config
from supctl.errors import LogicError, ProbabilityRangeError
from supctl.harness.config import build_experiment, load_scenario
from supctl.simulator import NoiseStreams
from supctl.supervisor import (
    DYNAMIC,
    FIXED,
    ExplorationSchedule,
    SupervisorState,
    commit,
    exploration_bonus,
    horizon_length,
    pull_count_bound,
    record_episode,
    run_supervisor,
    select_controller,
)
from supctl.system_bank import derive_constants


def test_horizon_collapses():
    assert horizon_length(1, 72 / math.e, FIXED) == 72


@pytest.mark.parametrize("N, delta", [(2, 0.1), (3, 0.1), (5, 0.01), (1, 0.5)])
def test_horizon_oracle(N, delta):
    assert horizon_length(N, delta, FIXED) == orc.L_fixed_mp(N, delta)[0]
    assert horizon_length(N, delta, DYNAMIC) == orc.L_dynamic_mp(N, delta)[0]
    assert horizon_length(2, 0.1, FIXED) == math.ceil(144 * math.log(2880))


def test_horizon_errors():
    with pytest.raises(ValueError):
        horizon_length(0, 0.1)
    with pytest.raises(ValueError):
        horizon_length(2, 0.1, "other")
    with pytest.raises(ProbabilityRangeError):
        ExplorationSchedule.build(FIXED, 2, 1.5)


def test_bonus_examples():
    assert exploration_bonus(ExplorationSchedule(FIXED, 72, 1, 0.5), 5, 1) == 1.0
    assert exploration_bonus(ExplorationSchedule(DYNAMIC, 10, 1, math.pi**2 / 6), 1, 1) == pytest.approx(0.0, abs=1e-7)
    assert exploration_bonus(ExplorationSchedule(FIXED, 144, 2, 0.5), 9, 4) == 0.5
    with pytest.raises(LogicError):
        exploration_bonus(ExplorationSchedule(FIXED, 144, 2, 0.5), 9, 0)


def test_dynamic_a_grows_with_episode():
    s = ExplorationSchedule.build(DYNAMIC, 3, 0.1)
    assert s.a(10) < s.a(100)
    assert s.a(7) == pytest.approx(0.5 * math.log(math.pi**2 * 3 * 49 / 0.6))


def test_schedule_override_flag():
    s = ExplorationSchedule.build(FIXED, 3, 0.1)
    assert not s.overridden and s.L == horizon_length(3, 0.1)
    assert ExplorationSchedule.build(FIXED, 3, 0.1, L=50).overridden


def test_pull_count_bound_fixed():
    s = ExplorationSchedule.build(FIXED, 3, 0.1)
    assert pull_count_bound(s) == math.ceil(36 * s.L / 216)


def state_with(histories, episode=None):
    Q = [len(h) for h in histories]
    return SupervisorState(len(histories), Q, [list(h) for h in histories],
                           episode if episode is not None else sum(Q))


def test_warm_start_round_robin():
    s = SupervisorState(3)
    sched = ExplorationSchedule(FIXED, 30, 3, 0.5)
    seen = []
    for _ in range(3):
        j = select_controller(s, sched)
        seen.append(j)
        record_episode(s, j, 0)
    assert seen == [0, 1, 2]
    # the second episode of a 3-arm run picks the second arm
    assert select_controller(state_with([[1], [], []], episode=1), sched) == 1


def test_select_example():
    sched = ExplorationSchedule(FIXED, 144, 2, 0.5)  # a = 1
    st_ = state_with([[0.9] * 4, [0.5] * 4])
    assert select_controller(st_, sched) == 0


def test_select_tie_goes_low():
    sched = ExplorationSchedule(FIXED, 144, 3, 0.5)
    assert select_controller(state_with([[1, 0], [0, 1], [1, 0]]), sched) == 0
    assert select_controller(state_with([[0, 0], [1, 0], [0, 1]]), sched) == 1


@given(st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=8), min_size=2, max_size=5),
       st.floats(-3, 3))
def test_select_shift_invariance(hist, c):
    sched = ExplorationSchedule(FIXED, 400, len(hist), 0.1)
    base = select_controller(state_with(hist), sched)
    # use a dyadic shift so every shifted mean stays exactly representable
    c = round(c * 8) / 8
    shifted = select_controller(state_with([[v + c for v in h] for h in hist]), sched)
    assert base == shifted


def test_record_examples():
    s = record_episode(SupervisorState(2), 0, 1)
    assert s.Q == [1, 0] and s.mean_score(0) == 1.0
    record_episode(s, 0, 0)
    assert s.mean_score(0) == 0.5
    with pytest.raises(ValueError):
        record_episode(s, 1, 2)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1)), min_size=1, max_size=60))
def test_record_replay(seq):
    s = SupervisorState(4)
    for i, score in seq:
        record_episode(s, i, score)
    for i in range(4):
        picks = [sc for k, sc in seq if k == i]
        assert s.Q[i] == len(picks)
        assert s.mean_score(i) == (sum(picks) / len(picks) if picks else 0.0)
    assert sum(s.Q) == s.episode == len(seq)


def test_commit_examples():
    assert commit(SupervisorState(3, [10, 3, 2], [[]] * 3, 15), 15) == 0
    assert commit(SupervisorState(2, [5, 5], [[]] * 2, 10), 10) == 0
    with pytest.raises(LogicError):
        commit(SupervisorState(2, [1, 1], [[]] * 2, 2), 10)
    s = SupervisorState(2, [1, 1], [[1], [1]], 2)
    commit(s, 2)
    with pytest.raises(LogicError):
        record_episode(s, 0, 1)


def small_experiment(N=2, seed=0):
    rng = np.random.default_rng(seed)
    bank = random_matched_bank(rng, N=N, d_x=2, d_y=1, noise=(0.1, 0.1, 1.0))
    bank = bank.with_constants(derive_constants(bank, 2, 2))
    return bank, make_criterion_config(bank, tau=40)


def test_single_candidate_run():
    bank, cfg = small_experiment(N=1)
    sched = ExplorationSchedule.build(FIXED, 1, 0.1, L=20)
    rec = run_supervisor(bank, cfg, sched, NoiseStreams(1, 0.1, 0.1, 1.0), post_commit_horizon=0)
    assert rec.committed == 0 and rec.success
    assert all(e.controller == 0 for e in rec.episodes)


def test_run_bookkeeping():
    bank, cfg = small_experiment(N=3, seed=4)
    sched = ExplorationSchedule.build(DYNAMIC, 3, 0.1, L=40)
    rec = run_supervisor(bank, cfg, sched, NoiseStreams(2, 0.1, 0.1, 1.0))
    assert [e.controller for e in rec.episodes[:3]] == [0, 1, 2]
    for e in rec.episodes:
        assert sum(e.Q_snapshot) == e.episode
        assert e.s == (e.s1 and e.s2)
    assert rec.Q == rec.episodes[-1].Q_snapshot
    assert rec.post_commit_horizon == 10 * cfg.tau
    assert rec.ledger.steps == cfg.tau * 40 + rec.post_commit_horizon
    assert rec.tau_overridden and rec.L_overridden


def test_run_is_deterministic():
    bank, cfg = small_experiment(N=2, seed=5)
    sched = ExplorationSchedule.build(FIXED, 2, 0.1, L=30)
    a = run_supervisor(bank, cfg, sched, NoiseStreams(9, 0.1, 0.1, 1.0, run=3))
    b = run_supervisor(bank, cfg, sched, NoiseStreams(9, 0.1, 0.1, 1.0, run=3))
    assert [e.to_dict() for e in a.episodes] == [e.to_dict() for e in b.episodes]
    assert a.energy.as_tuple() == b.energy.as_tuple()


def test_noise_free_reference_identifies_true_model(reference_path):
    # process and measurement noise off, exploration on: every score is fixed by the inputs
    cfg = load_scenario(reference_path)
    exp = build_experiment(cfg)
    sched = ExplorationSchedule.build(FIXED, exp.bank.N, cfg.delta_alg, L=60)
    noise = NoiseStreams(cfg.master_seed, 0.0, 0.0, cfg.sigma_u)
    rec = run_supervisor(exp.bank, exp.criterion, sched, noise, post_commit_horizon=0)
    assert rec.committed == exp.bank.true_index
    matched = [e for e in rec.episodes if e.controller == exp.bank.true_index]
    assert matched and all(e.s1 == 1 for e in matched)
    destab = [j for j in range(exp.bank.N)
              if max(abs(np.linalg.eigvals(exp.bank.loop(exp.bank.true_index, j).A))) > 1]
    assert destab and all(e.s == 0 for e in rec.episodes if e.controller in destab)
