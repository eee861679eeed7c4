"""Experiment orchestration: spec validation, policy plumbing, CSV I/O,
resource accounting and the shipped reference fixtures."""
import math
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from ranswitch.expert_bank import ExpertCostProfile
from ranswitch.harness import (ExperimentSpec, TRIGGER_FIXED, TRIGGER_ORACLE,
                               build_labeled_dataset, default_run_spec,
                               default_scenarios, default_training_spec,
                               execute_run, experiment_from_config, fmt_value,
                               median, parse_policy, read_kpm_csv,
                               relative_gap, reproduce_fixtures,
                               resource_account, run_experiment,
                               write_kpm_csv)
from ranswitch.phy_pipeline import ExecutionMode, PipelineConfig
from ranswitch.radio_scene import GOOD, POOR, ScenarioConfig, SlotGeometry
from ranswitch.validation import ConfigurationError

RUN_FILES = ("kpms_policy.csv", "kpms_mmse.csv", "kpms_ai.csv",
             "mode_trace.csv", "throughput.csv", "resources.csv", "summary.csv")
EXPERIMENT_TOML = Path(__file__).resolve().parents[1] / "configs" / "experiment.toml"


def tiny_spec(timeline, seed=0, exec_mode=ExecutionMode.CONCURRENT,
              policy="oracle", window=4):
    geometry = SlotGeometry(n_ant=2, n_prb=4)
    good = ScenarioConfig(regime=GOOD, seed=seed, interference_excess_delay=8)
    poor = ScenarioConfig(regime=POOR, seed=seed, interference_excess_delay=8,
                          interference_prb_mask=(True,) * 4,
                          interference_power_db=0.0)
    return ExperimentSpec(
        timeline=timeline, exec_mode=exec_mode, policy=policy, seed=seed,
        scenarios={GOOD: good, POOR: poor}, geometry=geometry,
        pipeline_config=PipelineConfig(window_length=window, noise_guard=8))


def test_parse_policy():
    assert parse_policy("oracle") == (TRIGGER_ORACLE, None)
    assert parse_policy("fixed:0") == (TRIGGER_FIXED, 0)
    assert parse_policy("fixed:1") == (TRIGGER_FIXED, 1)
    assert parse_policy("tree:/tmp/t.txt") == ("tree", "/tmp/t.txt")
    for bad in ("fixed:2", "greedy", "tree"):
        with pytest.raises(ConfigurationError):
            parse_policy(bad)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=())
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=((GOOD, 0),))
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=((GOOD, 2),), window=4)  # shorter than the window
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=(("medium", 10),))  # no scenario for that regime
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=((GOOD, 10),), policy="nope")


def test_spec_coerces_exec_mode_strings():
    spec = tiny_spec(timeline=((GOOD, 8),), exec_mode="selected")
    assert spec.exec_mode is ExecutionMode.SELECTED_ONLY
    spec = tiny_spec(timeline=((GOOD, 8),), exec_mode="concurrent")
    assert spec.exec_mode is ExecutionMode.CONCURRENT
    with pytest.raises(ConfigurationError):
        tiny_spec(timeline=((GOOD, 8),), exec_mode="both")


def test_spec_reseeds_scenarios_and_expands_regimes():
    spec = tiny_spec(timeline=((GOOD, 3), (POOR, 2)), seed=9)
    assert all(s.seed == 9 for s in spec.scenarios.values())
    assert spec.slot_regimes() == [GOOD] * 3 + [POOR] * 2


def test_default_scenarios_structure():
    scens = default_scenarios(seed=5)
    good, poor = scens[GOOD], scens[POOR]
    assert good.interference_prb_mask == ()
    assert poor.interference_prb_mask == (True,) * 12
    assert poor.interference_power_db == 0.0
    assert good.assumed_delay_spread == poor.assumed_delay_spread == 1.25
    assert good.delay_spread == poor.delay_spread == 3.0
    assert good.seed == poor.seed == 5


def test_resource_account_arithmetic():
    outcomes = [SimpleNamespace(slot_cost=ExpertCostProfile(10.0, 100.0, 40.0)),
                SimpleNamespace(slot_cost=ExpertCostProfile(30.0, 200.0, 80.0))]
    rep = resource_account(outcomes)
    assert rep.mean_power_w == 150.0 and rep.median_power_w == 150.0
    assert rep.mean_util_pct == 60.0
    assert rep.mean_compute_us == 20.0
    assert rep.total_energy_j == pytest.approx((100 * 10 + 200 * 30) * 1e-6)


def test_execute_run_fixed_policies_pin_the_mode():
    spec = tiny_spec(timeline=((GOOD, 4), (POOR, 4)))
    for mode in (0, 1):
        run = execute_run(spec, policy=f"fixed:{mode}")
        assert run.modes() == [mode] * 8
        assert len(run.messages) == 1
        assert run.messages[0].trigger == TRIGGER_FIXED


def test_execute_run_oracle_reacts_one_slot_after_the_flip():
    spec = tiny_spec(timeline=((GOOD, 6), (POOR, 6), (GOOD, 4)))
    run = execute_run(spec)
    # message goes out at the end of the first slot of the new regime and
    # lands at the following boundary
    assert run.modes() == [1] * 7 + [0] * 6 + [1] * 3
    assert [m.mode for m in run.messages] == [0, 1]
    assert all(m.trigger == TRIGGER_ORACLE for m in run.messages)
    assert run.regimes == spec.slot_regimes()
    assert run.decoded_bytes == sum(o.tb_bytes for o in run.outcomes if o.crc_pass)


def test_execute_run_is_deterministic():
    spec = tiny_spec(timeline=((GOOD, 5), (POOR, 5)), seed=3)
    a = execute_run(spec)
    b = execute_run(spec)
    assert a.records == b.records
    assert a.report == b.report


def test_fmt_value():
    assert fmt_value(True) == "1" and fmt_value(np.bool_(False)) == "0"
    assert fmt_value(np.int64(7)) == "7"
    assert fmt_value(0.1) == "0.1"
    assert fmt_value(np.float64(1 / 3)) == repr(1 / 3)
    assert fmt_value("plain") == "plain"


def test_kpm_csv_round_trip(tmp_path):
    spec = tiny_spec(timeline=((GOOD, 6),))
    records = execute_run(spec, policy="fixed:1").records
    path = tmp_path / "kpms.csv"
    write_kpm_csv(records, path)
    back = read_kpm_csv(path)
    assert back == records  # repr floats survive the trip bit-exactly
    assert isinstance(back[0].tb_size, int)


def test_run_experiment_writes_the_report_set(tmp_path):
    spec = tiny_spec(timeline=((GOOD, 5), (POOR, 5)))
    out = run_experiment(spec, tmp_path / "run")
    for name in RUN_FILES:
        assert (tmp_path / "run" / name).exists()
    assert set(out) == {"dir", "policy", "mmse", "ai"}
    assert out["mmse"].modes() == [1] * 10
    assert out["ai"].modes() == [0] * 10


def test_run_experiment_cleans_up_on_failure(tmp_path):
    spec = tiny_spec(timeline=((GOOD, 5),), policy="tree:/nonexistent/tree.txt")
    target = tmp_path / "broken"
    with pytest.raises(FileNotFoundError):
        run_experiment(spec, target)
    assert not target.exists()  # partial outputs removed with the directory


def test_build_labeled_dataset_labels_and_warmup():
    spec = tiny_spec(timeline=((GOOD, 10), (POOR, 10)), policy="fixed:1",
                     exec_mode=ExecutionMode.SELECTED_ONLY, window=4)
    data = build_labeled_dataset(spec)
    assert data.x.shape == (12, 10)
    assert list(data.y) == [1] * 6 + [0] * 6
    with pytest.raises(ConfigurationError):
        build_labeled_dataset(spec, warmup=50)


def test_default_spec_builders():
    train_spec = default_training_spec(seed=2, segment_slots=200)
    assert train_spec.timeline == ((GOOD, 200), (POOR, 200),
                                   (GOOD, 200), (POOR, 200))
    assert train_spec.exec_mode is ExecutionMode.SELECTED_ONLY
    assert train_spec.policy == "fixed:1"
    run_spec = default_run_spec(seed=2, segment_slots=150)
    assert run_spec.timeline == ((GOOD, 150), (POOR, 150), (GOOD, 150))
    assert run_spec.policy == "oracle"


def test_experiment_from_config_shipped_file():
    spec = experiment_from_config("configs/experiment.toml")
    assert spec.seed == 7
    assert spec.timeline == ((GOOD, 600), (POOR, 600), (GOOD, 600))
    assert spec.exec_mode is ExecutionMode.CONCURRENT
    assert spec.policy == "oracle"
    assert spec.scenarios[POOR].interference_prb_mask == (True,) * 12
    assert spec.scenarios[GOOD].assumed_delay_spread == 1.25
    # CLI-style overrides win over file contents
    spec = experiment_from_config("configs/experiment.toml", seed=9,
                                  exec_mode="selected", policy="fixed:0")
    assert spec.seed == 9
    assert spec.exec_mode is ExecutionMode.SELECTED_ONLY
    assert spec.policy == "fixed:0"
    with pytest.raises(ConfigurationError):
        experiment_from_config({"timeline": [{"regime": "good", "slots": 200}],
                                "exec": "warp"})


def test_reproduce_fixtures_all_pass():
    checks = reproduce_fixtures()
    assert [c.name for c in checks] == [
        "degradation_monotonicity", "phy_matrix_clustering",
        "mac_matrix_independence", "confusion_metrics"]
    assert all(c.passed for c in checks), [c.detail for c in checks if not c.passed]


def test_median_and_relative_gap():
    assert median([3, 1, 2]) == 2.0
    assert relative_gap(11.0, 10.0) == pytest.approx(0.1)
    assert relative_gap(5.0, 0.0) == math.inf
    assert relative_gap(0.0, 0.0) == 0.0
