"""Experiment orchestration: regime timelines, closed-loop and baseline
runs sharing one seed, resource accounting, fixture reproduction and CSV
report emission.

Every float lands in CSV via repr(), the shortest round-trip form, so a
rerun with the same config and seed is byte-identical.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .dapp_control import (Dapp, DappConfig, E3Indication, FailsafeMonitor,
                           LatencyModel, TRIGGER_FAILSAFE, failsafe_check)
from .expert_bank import CostTable, ExpertId, cost_table_from_dict
from .kpm_selection import (final_policy_set, hcluster, pick_representatives)
from .kpm_selection import CorrelationMatrix
from .perturbation_lab import DegradationTable, monotonicity_filter
from .phy_pipeline import (ControlMessage, ExecutionMode, KPM_FIELDS, KpmRecord,
                           Pipeline, PipelineConfig, SlotOutcome)
from .radio_scene import (GOOD, POOR, ScenarioConfig, SlotGeometry, read_config,
                          scenario_from_dict, with_seed)
from .switch_policy import (FEATURE_ORDER, LabeledDataset, TreeModel,
                            load_tree, metrics_from_confusion)
from .validation import ConfigurationError

TRIGGER_FIXED = "fixed"
TRIGGER_ORACLE = "oracle"

# default two-regime setup: the poor regime turns on an asynchronous
# co-channel interferer; the serving channel process itself is shared so a
# mid-run regime flip only changes what is added on top of it
DEFAULT_GOOD_SNR_DB = 20.0
DEFAULT_POOR_SNR_DB = 20.0
DEFAULT_DELAY_SPREAD = 3.0
DEFAULT_ASSUMED_DELAY_SPREAD = 1.25
DEFAULT_INTERFERENCE_POWER_DB = 0.0
DEFAULT_TEMPORAL_CORRELATION = 0.9


def default_scenarios(seed: int, geometry: SlotGeometry | None = None) -> dict:
    geometry = geometry or SlotGeometry()
    good = ScenarioConfig(
        regime=GOOD, base_snr_db=DEFAULT_GOOD_SNR_DB,
        delay_spread=DEFAULT_DELAY_SPREAD,
        temporal_correlation=DEFAULT_TEMPORAL_CORRELATION, seed=seed,
        mmse_assumed_delay_spread=DEFAULT_ASSUMED_DELAY_SPREAD)
    # full-band interferer: every PRB sees the async co-channel transmission
    mask = tuple(True for _ in range(geometry.n_prb))
    poor = replace(good, regime=POOR, base_snr_db=DEFAULT_POOR_SNR_DB,
                   interference_prb_mask=mask,
                   interference_power_db=DEFAULT_INTERFERENCE_POWER_DB)
    return {GOOD: good, POOR: poor}


def parse_policy(policy: str) -> tuple:
    if policy == "oracle":
        return (TRIGGER_ORACLE, None)
    if policy.startswith("fixed:"):
        mode = policy.split(":", 1)[1]
        if mode not in ("0", "1"):
            raise ConfigurationError(f"fixed policy mode must be 0 or 1, got {mode!r}")
        return (TRIGGER_FIXED, int(mode))
    if policy.startswith("tree:"):
        return ("tree", policy.split(":", 1)[1])
    raise ConfigurationError(f"unknown policy source: {policy!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    timeline: tuple
    exec_mode: ExecutionMode = ExecutionMode.CONCURRENT
    policy: str = "oracle"
    seed: int = 0
    scenarios: Optional[dict] = None
    geometry: SlotGeometry = SlotGeometry()
    pipeline_config: PipelineConfig = PipelineConfig()
    costs: CostTable = CostTable()
    dapp_config: DappConfig = DappConfig()
    latency: LatencyModel = LatencyModel()

    def __post_init__(self):
        try:
            object.__setattr__(self, "exec_mode", ExecutionMode(self.exec_mode))
        except ValueError:
            raise ConfigurationError(
                f"unknown execution mode {self.exec_mode!r}") from None
        if not self.timeline:
            raise ConfigurationError("timeline must contain at least one segment")
        for regime, slots in self.timeline:
            if slots <= 0:
                raise ConfigurationError("segment durations must be positive")
        total = sum(s for _, s in self.timeline)
        if total < self.pipeline_config.window_length:
            raise ConfigurationError("timeline shorter than the KPM window")
        parse_policy(self.policy)
        scenarios = self.scenarios or default_scenarios(self.seed, self.geometry)
        scenarios = {k: with_seed(v, self.seed) for k, v in scenarios.items()}
        object.__setattr__(self, "scenarios", scenarios)
        for regime, _ in self.timeline:
            if regime not in scenarios:
                raise ConfigurationError(f"no scenario configured for regime {regime!r}")

    def slot_regimes(self) -> list:
        out = []
        for regime, slots in self.timeline:
            out.extend([regime] * slots)
        return out


@dataclass(frozen=True)
class ResourceReport:
    median_power_w: float
    mean_power_w: float
    median_util_pct: float
    mean_util_pct: float
    median_compute_us: float
    mean_compute_us: float
    total_energy_j: float

    def row(self) -> list:
        return [self.median_power_w, self.mean_power_w, self.median_util_pct,
                self.mean_util_pct, self.median_compute_us, self.mean_compute_us,
                self.total_energy_j]


RESOURCE_COLUMNS = ("median_power_w", "mean_power_w", "median_util_pct",
                    "mean_util_pct", "median_compute_us", "mean_compute_us",
                    "total_energy_j")


def resource_account(outcomes, costs: CostTable | None = None,
                     exec_mode: ExecutionMode | None = None) -> ResourceReport:
    """Aggregates the per-slot cost profiles already charged by the pipeline
    (selected-only: active expert + switch; concurrent: both experts)."""
    power = np.array([o.slot_cost.gpu_power_w for o in outcomes])
    util = np.array([o.slot_cost.gpu_utilization_pct for o in outcomes])
    compute = np.array([o.slot_cost.exec_time_us for o in outcomes])
    energy = float(np.sum(power * compute * 1e-6))
    return ResourceReport(
        median_power_w=float(np.median(power)), mean_power_w=float(np.mean(power)),
        median_util_pct=float(np.median(util)), mean_util_pct=float(np.mean(util)),
        median_compute_us=float(np.median(compute)),
        mean_compute_us=float(np.mean(compute)), total_energy_j=energy)


@dataclass
class RunResult:
    name: str
    outcomes: list
    messages: list
    regimes: list
    report: ResourceReport
    failsafe_events: list

    @property
    def records(self) -> list:
        return [o.kpm for o in self.outcomes]

    @property
    def decoded_bytes(self) -> int:
        return sum(o.tb_bytes for o in self.outcomes if o.crc_pass)

    def modes(self) -> list:
        return [1 if o.active_expert is ExpertId.MMSE else 0 for o in self.outcomes]


def execute_run(spec: ExperimentSpec, policy: str | None = None,
                name: str | None = None, tree: TreeModel | None = None) -> RunResult:
    """Runs the timeline once under one policy source. The two fixed
    baselines come from calling this with policy overrides; all runs share
    the spec seed, hence identical channel, noise and data realizations."""
    kind, arg = parse_policy(policy if policy is not None else spec.policy)
    regimes = spec.slot_regimes()
    pipe = Pipeline(spec.geometry, spec.scenarios[regimes[0]], spec.exec_mode,
                    spec.costs, spec.pipeline_config)
    slot_ns = spec.geometry.slot_duration_ns
    messages: list = []
    dapp = monitor = None
    if kind == TRIGGER_FIXED:
        pipe.controller.force_mode(arg, at_ns=0, trigger=TRIGGER_FIXED)
        messages.append(ControlMessage(mode=arg, decided_at_ns=0,
                                       deliverable_at_ns=0, trigger=TRIGGER_FIXED))
    elif kind == "tree":
        model = tree if tree is not None else load_tree(arg)
        dapp = Dapp(model, spec.latency, spec.dapp_config)
        monitor = FailsafeMonitor(timeout_ns=spec.dapp_config.timeout_ns(slot_ns))

    outcomes: list = []
    current = regimes[0]
    for n, regime in enumerate(regimes):
        if regime != current:
            pipe.set_scenario(spec.scenarios[regime])
            current = regime
        out = pipe.run_slot()
        outcomes.append(out)
        end_ns = (n + 1) * slot_ns

        if kind == TRIGGER_ORACLE:
            mode = 1 if regime == GOOD else 0
            last = messages[-1].mode if messages else 1
            if mode != last:
                msg = ControlMessage(mode=mode, decided_at_ns=end_ns,
                                     deliverable_at_ns=end_ns, trigger=TRIGGER_ORACLE)
                pipe.deliver(msg)
                messages.append(msg)
        elif kind == "tree":
            ind = E3Indication(kpm_window=(out.kpm,), emitted_at_ns=end_ns,
                               slot_duration_ns=slot_ns)
            msg = dapp.on_indication(ind)
            if msg is not None:
                pipe.deliver(msg)
                monitor.note_delivery(msg.deliverable_at_ns)
                messages.append(msg)
            forced = failsafe_check(monitor, end_ns, pipe.controller.mode_var.mode)
            if forced is not None:
                pipe.controller.force_mode(forced, at_ns=end_ns)
                messages.append(ControlMessage(
                    mode=forced, decided_at_ns=end_ns, deliverable_at_ns=end_ns,
                    trigger=TRIGGER_FAILSAFE))

    report = resource_account(outcomes, spec.costs, spec.exec_mode)
    return RunResult(name=name or kind, outcomes=outcomes, messages=messages,
                     regimes=regimes, report=report,
                     failsafe_events=list(monitor.events) if monitor else [])


# ------------------------------------------------------------- CSV output

def fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_value(v) for v in row])


def write_kpm_csv(records, path):
    write_csv(path, KPM_FIELDS, ([getattr(r, f) for f in KPM_FIELDS] for r in records))


def read_kpm_csv(path) -> list:
    ints = {"slot_index", "mcs_index", "pdu_length", "ndi", "qam_order",
            "num_cb", "tb_size", "mac_rx_bytes", "lcid4_rx_bytes"}
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            kwargs = {k: (int(row[k]) if k in ints else float(row[k]))
                      for k in KPM_FIELDS}
            out.append(KpmRecord(**kwargs))
    return out


def run_experiment(spec: ExperimentSpec, out_dir) -> dict:
    """Executes the policy run plus both fixed baselines and writes the
    report CSVs. Partial outputs are removed if anything fails."""
    out = Path(out_dir)
    created_dir = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    written: list = []

    def emit(name, header, rows):
        path = out / name
        write_csv(path, header, rows)
        written.append(path)

    try:
        kind, _ = parse_policy(spec.policy)
        policy_run = execute_run(spec, name="policy")
        run_mmse = execute_run(spec, policy="fixed:1", name="mmse")
        run_ai = execute_run(spec, policy="fixed:0", name="ai")
        runs = {"policy": policy_run, "mmse": run_mmse, "ai": run_ai}

        for label, run in runs.items():
            path = out / f"kpms_{label}.csv"
            write_kpm_csv(run.records, path)
            written.append(path)

        emit("mode_trace.csv",
             ("decided_at_ns", "deliverable_at_ns", "mode", "trigger"),
             ([m.decided_at_ns, m.deliverable_at_ns, m.mode, m.trigger]
              for m in policy_run.messages))

        modes = policy_run.modes()
        emit("throughput.csv",
             ("slot", "regime", "mode",
              "mac_mbps_policy", "mac_mbps_mmse", "mac_mbps_ai",
              "phy_mbps_policy", "phy_mbps_mmse", "phy_mbps_ai"),
             ([n, policy_run.regimes[n], modes[n],
               policy_run.records[n].mac_throughput,
               run_mmse.records[n].mac_throughput,
               run_ai.records[n].mac_throughput,
               policy_run.records[n].phy_throughput,
               run_mmse.records[n].phy_throughput,
               run_ai.records[n].phy_throughput]
              for n in range(len(policy_run.outcomes))))

        emit("resources.csv", ("run",) + RESOURCE_COLUMNS,
             ([label] + run.report.row() for label, run in runs.items()))

        emit("summary.csv",
             ("run", "slots", "decoded_bytes", "median_phy_mbps",
              "median_mac_mbps", "mode_changes", "failsafe_events"),
             ([label, len(run.outcomes), run.decoded_bytes,
               float(np.median([r.phy_throughput for r in run.records])),
               float(np.median([r.mac_throughput for r in run.records])),
               sum(1 for a, b in zip(run.modes(), run.modes()[1:]) if a != b),
               len(run.failsafe_events)]
              for label, run in runs.items()))
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        if created_dir:
            try:
                out.rmdir()
            except OSError:
                pass
        raise
    return {"dir": out, **runs}


# --------------------------------------------------- labeled data + config

def build_labeled_dataset(spec: ExperimentSpec,
                          warmup: int | None = None) -> LabeledDataset:
    """Collection pass for policy training: fixed-MMSE run over the
    timeline, one row per slot, label 1 in the good regime and 0 under
    interference. Slots inside the post-transition warm-up are dropped so
    the windowed KPMs in each row reflect a single regime."""
    warmup = spec.pipeline_config.window_length if warmup is None else warmup
    run = execute_run(spec, policy="fixed:1", name="collect")
    x, y = [], []
    since_change = 0
    for n, (rec, regime) in enumerate(zip(run.records, run.regimes)):
        if n > 0 and regime != run.regimes[n - 1]:
            since_change = 0
        if since_change >= warmup:
            x.append([float(getattr(rec, f)) for f in FEATURE_ORDER])
            y.append(1 if regime == GOOD else 0)
        since_change += 1
    if not x:
        raise ConfigurationError("warm-up exclusion consumed every slot")
    return LabeledDataset(np.array(x), np.array(y))


def default_training_spec(seed: int = 0, segment_slots: int = 1500) -> ExperimentSpec:
    """Alternating-regime collection timeline; selected-only keeps the
    collection pass single-expert."""
    return ExperimentSpec(
        timeline=((GOOD, segment_slots), (POOR, segment_slots),
                  (GOOD, segment_slots), (POOR, segment_slots)),
        exec_mode=ExecutionMode.SELECTED_ONLY, policy="fixed:1", seed=seed)


def default_run_spec(seed: int = 0, exec_mode: ExecutionMode = ExecutionMode.CONCURRENT,
                     policy: str = "oracle", segment_slots: int = 600) -> ExperimentSpec:
    return ExperimentSpec(
        timeline=((GOOD, segment_slots), (POOR, segment_slots),
                  (GOOD, segment_slots)),
        exec_mode=exec_mode, policy=policy, seed=seed)


def experiment_from_config(cfg, seed: int | None = None,
                           exec_mode: str | None = None,
                           policy: str | None = None) -> ExperimentSpec:
    if not isinstance(cfg, dict):
        cfg = read_config(cfg)
    seed = seed if seed is not None else int(cfg.get("seed", 0))
    exec_name = exec_mode or cfg.get("exec", "concurrent")
    try:
        mode = ExecutionMode(exec_name)
    except ValueError:
        raise ConfigurationError(f"unknown execution mode {exec_name!r}") from None
    policy = policy or cfg.get("policy", "oracle")

    timeline = tuple((seg["regime"], int(seg["slots"]))
                     for seg in cfg.get("timeline", ()))
    geometry = None
    scenarios = {}
    for regime, sc in cfg.get("scenario", {}).items():
        merged = dict(sc)
        merged["geometry"] = cfg.get("geometry", {})
        merged["regime"] = regime
        merged["seed"] = seed
        geometry, scenarios[regime] = scenario_from_dict(merged)
    if geometry is None:
        geometry, _ = scenario_from_dict({"geometry": cfg.get("geometry", {})})
    if not scenarios:
        scenarios = default_scenarios(seed, geometry)

    costs = cost_table_from_dict(cfg) if "costs" in cfg else CostTable()
    dapp_keys = ("decision_period_slots", "window_length_slots", "failsafe_timeout_us")
    d = cfg.get("dapp", {})
    dapp = DappConfig(**{k: d[k] for k in dapp_keys if k in d})
    lat_keys = ("framework_overhead_us", "policy_inference_us", "switch_exec_us")
    la = cfg.get("latency", {})
    latency = LatencyModel(**{k: la[k] for k in lat_keys if k in la})

    return ExperimentSpec(timeline=timeline, exec_mode=mode, policy=policy,
                          seed=seed, scenarios=scenarios, geometry=geometry,
                          pipeline_config=PipelineConfig.from_dict(cfg),
                          costs=costs, dapp_config=dapp, latency=latency)


# ------------------------------------------------------- fixture checks

FIXTURE_FILES = ("degradation_trends.csv", "corr_phy.csv", "corr_mac.csv",
                 "confusion_counts.csv")

# expected structures for the shipped reference matrices
PHY_MULTI_CLUSTER = ("code_rate", "mcs_index", "num_cb", "qam_order",
                     "sinr", "tb_size")
PHY_FINAL_SET = frozenset(
    {"phy_throughput", "mcs_index", "pdu_length", "ndi", "rsrp"})
MAC_KPMS = ("lcid4_rx_bytes", "lcid4_throughput", "mac_rx_bytes", "snr_db",
            "mac_throughput")
CONFUSION_METRICS = {
    "accuracy": 0.9948275862068966,
    "precision": 0.975609756097561,
    "specificity": 0.9959919839679359,
    "recall": 0.9876543209876543,
    "f1": 0.9815950920245398,
}


@dataclass(frozen=True)
class FixtureCheck:
    name: str
    passed: bool
    detail: str


def fixture_dir() -> Path:
    return Path(str(resources.files(__package__).joinpath("fixtures")))


def _fixture_path(base: Path, name: str) -> Path:
    path = base / name
    if not path.exists():
        raise FileNotFoundError(f"fixture file missing: {path}")
    return path


def reproduce_fixtures(base_dir=None) -> list:
    base = Path(base_dir) if base_dir is not None else fixture_dir()
    checks: list = []

    table = DegradationTable.read_csv(_fixture_path(base, FIXTURE_FILES[0]))
    scores = monotonicity_filter(table, tau=0.9)
    ok = all(v.retained and not v.degenerate for v in scores.values())
    detail = "; ".join(f"{k}: spearman={v.spearman:.4f}" for k, v in scores.items())
    checks.append(FixtureCheck("degradation_monotonicity", ok, detail))

    phy = CorrelationMatrix.read_csv(_fixture_path(base, FIXTURE_FILES[1]))
    result = pick_representatives(hcluster(phy, threshold=0.8))
    singles = {c[0] for c in result.clusters if len(c) == 1}
    big = [c for c in result.clusters if len(c) > 1]
    ok = (len(big) == 1 and big[0] == PHY_MULTI_CLUSTER
          and singles == {"ndi", "pdu_length", "rsrp"})
    rep = dict(zip(result.clusters, result.representatives)).get(PHY_MULTI_CLUSTER)
    ok = ok and rep == "mcs_index"
    final = set(final_policy_set(result, readd=("phy_throughput",)))
    ok = ok and final == set(PHY_FINAL_SET)
    checks.append(FixtureCheck(
        "phy_matrix_clustering", ok,
        f"clusters={result.clusters} final={sorted(final)}"))

    mac = CorrelationMatrix.read_csv(_fixture_path(base, FIXTURE_FILES[2]))
    result = pick_representatives(hcluster(mac, threshold=0.8))
    ok = (all(len(c) == 1 for c in result.clusters)
          and set(result.representatives) == set(MAC_KPMS))
    off = np.abs(mac.r - np.eye(len(mac.kpm_names)))
    i, j = np.unravel_index(np.argmax(off), off.shape)
    strongest = tuple(sorted((mac.kpm_names[i], mac.kpm_names[j])))
    ok = ok and strongest == ("lcid4_throughput", "mac_throughput")
    ok = ok and abs(off[i, j] - 0.77) < 0.005
    checks.append(FixtureCheck(
        "mac_matrix_independence", ok,
        f"clusters={result.clusters} strongest={strongest}:{off[i, j]:.2f}"))

    with open(_fixture_path(base, FIXTURE_FILES[3]), newline="") as f:
        counts = next(csv.DictReader(f))
    m = metrics_from_confusion(int(counts["tp"]), int(counts["fn"]),
                               int(counts["fp"]), int(counts["tn"]))
    diffs = {k: abs(getattr(m, k) - v) for k, v in CONFUSION_METRICS.items()}
    ok = all(d < 1e-12 for d in diffs.values())
    checks.append(FixtureCheck(
        "confusion_metrics", ok,
        "; ".join(f"{k}={getattr(m, k):.6f}" for k in CONFUSION_METRICS)))

    return checks


def median(values) -> float:
    return float(np.median(np.asarray(list(values), dtype=float)))


def relative_gap(a: float, b: float) -> float:
    """(a - b) / b, guarded."""
    if b == 0:
        return math.inf if a > 0 else 0.0
    return (a - b) / b
