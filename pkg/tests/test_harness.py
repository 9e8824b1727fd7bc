import json
import math

import numpy as np
import pytest

from supctl.errors import ConfigError, DimensionError, GenerationError, ProbabilityRangeError, ScenarioParseError
from supctl.harness import cli
from supctl.harness.config import (
    build_bank,
    build_experiment,
    candidate_dict,
    canonical_json,
    load_scenario,
    loads_scenario,
    save_scenario,
)
from supctl.harness.generate import generate_scenario
from supctl.harness.l2gain import kappa_constants, l2_gain_report, transient_log_constant
from supctl.harness.montecarlo import clopper_pearson, controller_class, criteria_stats, read_run, run_montecarlo, run_one
from supctl.system_bank import Controller, StateSpaceModel, make_bank, validate_scenario

import oracles as orc


@pytest.fixture(scope="module")
def ref(reference_path):
    return load_scenario(reference_path)


# ---------------------------------------------------------------- config

def test_round_trip(ref, tmp_path):
    p = save_scenario(ref, tmp_path / "s.json")
    again = load_scenario(p)
    assert again == ref
    assert again.to_json() == p.read_text()
    assert json.loads(ref.to_json())["schema_version"] == 1


def test_empty_candidates(ref):
    d = ref.to_dict()
    d["candidates"] = []
    with pytest.raises(ConfigError, match="N ≥ 1 required"):
        loads_scenario(json.dumps(d))


def test_input_dimension_mismatch_names_candidate(ref):
    d = ref.to_dict()
    m = StateSpaceModel(np.ones((1, 2)), 0.5 * np.eye(2), np.ones((2, 2)))
    d["candidates"][2] = candidate_dict(m, Controller.static(np.zeros((2, 1))))
    with pytest.raises(DimensionError, match="candidate 2"):
        loads_scenario(json.dumps(d))


@pytest.mark.parametrize("field", ["delta_c", "delta_alg"])
@pytest.mark.parametrize("value", [0.0, 1.0, -0.1, 2.0])
def test_probability_range(ref, field, value):
    d = ref.to_dict()
    d[field] = value
    with pytest.raises(ProbabilityRangeError, match=field):
        loads_scenario(json.dumps(d))


def test_parse_errors_are_distinct(ref, tmp_path):
    with pytest.raises(ScenarioParseError, match="invalid JSON"):
        loads_scenario("{not json")
    d = ref.to_dict()
    d["bogus"] = 1
    with pytest.raises(ScenarioParseError, match="bogus"):
        loads_scenario(json.dumps(d))
    with pytest.raises(ScenarioParseError, match="cannot read"):
        load_scenario(tmp_path / "missing.json")


def test_canonical_json_handles_infinity():
    assert json.loads(canonical_json({"a": math.inf, "b": [math.nan]})) == {"a": "inf", "b": ["nan"]}


# ------------------------------------------------------------- generator

def test_generator_valid_and_deterministic():
    a = generate_scenario(2, (2, 1, 1), (0.1, 0.2, 0.3), seed=3)
    b = generate_scenario(2, (2, 1, 1), (0.1, 0.2, 0.3), seed=3)
    assert a.to_json() == b.to_json()
    bank = build_bank(a)
    assert validate_scenario(bank, bank.constants, a.declared()).valid
    assert any(controller_class(bank, j) == "destabilizing" for j in range(2))
    assert a.metadata["generator"]["attempts"] >= 1


def test_generator_impossible_margins():
    with pytest.raises(GenerationError) as info:
        generate_scenario(2, (2, 1, 1), (2e6, 0.2, 0.3), seed=0, budget=50)
    assert info.value.diagnostics["attempts"] == 50


def test_reference_matches_declared_design(ref):
    bank = build_bank(ref)
    assert (bank.N, bank.d_u, bank.d_y) == (3, 1, 1)
    assert all(k.order == 0 for k in bank.controllers)
    classes = sorted(controller_class(bank, j) for j in range(3))
    assert classes == ["destabilizing", "matched", "mismatched_stable"]


# -------------------------------------------------------------- L2 gain

def scalar_bank(a):
    return make_bank([StateSpaceModel([[1.0]], [[a]], [[1.0]])], [Controller.static([[0.0]])], 0)


def test_kappa_scalar():
    k0, k1 = kappa_constants(scalar_bank(0.5))
    assert k0 == pytest.approx(4 / 3)
    assert k1 == pytest.approx(2 * (4 / 3) ** 2 * 2)


def test_zero_energy_holds():
    e = {"state_pre": 0.0, "input_pre": 0.0, "state_post": [0.0] * 5, "input_post": [0.0] * 5}
    rep = l2_gain_report(e, scalar_bank(0.5), 1.5, 1.0, 10)
    assert rep.bound_satisfied


def test_transient_constant_oracle():
    for k0, r1, r2, T in [(1.3, 3.18, 1.94, 250_000), (2.0, 1.2, 5.0, 40), (0.7, 2.0, 0.1, 3)]:
        got, form = transient_log_constant(k0, r1, r2, T)
        assert form == "geometric R1>1"
        assert got == pytest.approx(float(orc.log_C0_mp(k0, r1, r2, T)), rel=1e-12)
    got, form = transient_log_constant(1.0, 0.5, 2.0, 10)
    assert form == "contractive R1<1" and got == pytest.approx(math.log(2 * 2 / 0.25))
    got, form = transient_log_constant(1.0, 1.0, 0.5, 10)
    assert form == "marginal R1=1" and got == pytest.approx(math.log(2 * 100))


def test_l2_detects_violation():
    # a state energy far above the bound must fail
    e = {"state_pre": 1.0, "input_pre": 1e-3, "state_post": [1e9], "input_post": [1.0]}
    rep = l2_gain_report(e, scalar_bank(0.5), 0.5, 1.0, 1)
    assert not rep.bound_satisfied and rep.worst_log_margin < 0


# ----------------------------------------------------------- monte carlo

def test_clopper_pearson():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi and lo == pytest.approx(1 - hi)


def test_matched_criteria_frequencies(ref):
    res = criteria_stats(ref, ref.true_index, 300)
    bound = 1 - ref.delta_c
    assert res["s1_is_1"]["ci99"][1] >= bound
    assert res["s2_is_1"]["ci99"][1] >= bound
    assert res["bound"]["passes"]


def test_matched_noise_free_always_one(ref):
    quiet = ref.replace(sigma_w=0.0, sigma_eta=0.0, tau_override=132)
    res = criteria_stats(quiet, quiet.true_index, 20)
    assert res["s_is_1"]["freq"] == 1.0


def test_random_initial_state_cell(ref):
    res = criteria_stats(ref, ref.true_index, 50, init="random", init_radius=2.0)
    assert res["init"] == "random" and res["episodes"] == 50


def test_no_excitation_zeroes_identification(ref, tmp_path):
    cfg = ref.replace(sigma_u=0.0, tau_override=132, L_override=12, num_runs=2)
    agg = run_montecarlo(cfg, tmp_path, num_runs=2)
    for entry in agg["score_frequencies"].values():
        assert entry["s2"] == 0 and entry["s"] == 0
    assert agg["theorem_checks_apply"] is False


def test_single_noise_free_run_succeeds(ref):
    cfg = ref.replace(sigma_w=0.0, sigma_eta=0.0, tau_override=132, L_override=60)
    agg = run_montecarlo(cfg, None, num_runs=1)
    assert agg["success"]["rate"] == 1.0


def test_run_summary_reparses(ref, tmp_path):
    exp = build_experiment(ref.replace(L_override=15, post_commit_horizon=50))
    summary, episodes = run_one(exp, 3)
    from supctl.harness.montecarlo import write_run
    write_run(tmp_path, summary, episodes)
    s, e = read_run(tmp_path, 3)
    assert s["schema_version"] == 1 and len(e) == 15
    assert set(e[0]) >= {"episode", "controller", "s1", "s2", "s", "Q_snapshot", "state_norm_end"}


# ------------------------------------------------------------------ CLI

def test_cli_validate(reference_path, capsys):
    assert cli.main(["validate", str(reference_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["valid"] and doc["constants"]["tau"] == 132


def test_cli_invalid_scenario(ref, tmp_path):
    d = ref.to_dict()
    d["candidates"] = []
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["validate", str(p)]) == 1


def test_cli_generation_failure(tmp_path):
    args = ["generate", "--n", "2", "--eps-c", "2e6", "--budget", "20", "--out", str(tmp_path)]
    assert cli.main(args) == 2


def test_cli_run_is_byte_identical(reference_path, tmp_path):
    # L override via a trimmed scenario copy keeps this quick
    cfg = load_scenario(reference_path).replace(L_override=30, post_commit_horizon=100)
    scen = save_scenario(cfg, tmp_path / "s.json")
    for k in (1, 2):
        assert cli.main(["run", str(scen), "--seed", "5", "--out", str(tmp_path / f"o{k}")]) == 0
    a = (tmp_path / "o1" / "run_00000.json").read_bytes()
    b = (tmp_path / "o2" / "run_00000.json").read_bytes()
    assert a == b
    assert (tmp_path / "o1" / "run_00000.jsonl").read_bytes() == (tmp_path / "o2" / "run_00000.jsonl").read_bytes()
    assert cli.main(["report", str(tmp_path / "o1")]) == 0
    rows = json.loads((tmp_path / "o1" / "l2_report.json").read_text())
    assert rows[0]["run"] == 0


def test_cli_report_empty_dir(reference_path, tmp_path):
    save_scenario(load_scenario(reference_path), tmp_path / "scenario.json")
    assert cli.main(["report", str(tmp_path)]) == 1


def test_cli_env_out(reference_path, tmp_path, monkeypatch):
    monkeypatch.setenv("SUPCTL_OUT", str(tmp_path / "envout"))
    cfg = load_scenario(reference_path).replace(L_override=9, post_commit_horizon=0)
    scen = save_scenario(cfg, tmp_path / "s.json")
    assert cli.main(["run", str(scen), "--format", "csv"]) == 0
    assert (tmp_path / "envout" / "run_00000.json").exists()
