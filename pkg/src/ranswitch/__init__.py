"""Deterministic slot-level simulator and toolkit for switchable channel
estimation experts in a 5G uplink receive pipeline, with the telemetry
selection and decision-tree control methodology around it."""

from .radio_scene import (GOOD, POOR, ScenarioConfig, SlotGeometry,
                          load_scenario)
from .expert_bank import (CostTable, DmrsEstimate, ExpertCostProfile, ExpertId,
                          Stage, denoiser_estimate, ls_estimate, mmse_estimate)
from .phy_pipeline import (ControlMessage, ExecutionMode, ExpertBuffers,
                           KPM_FIELDS, KpmRecord, ModeVar, Pipeline,
                           PipelineConfig, SwitchController, switch_select)
from .perturbation_lab import (DegradationTable, PerturbationConfig,
                               inject_noise, monotonicity_filter, sweep)
from .kpm_selection import (ClusterResult, CorrelationMatrix, KpmSelector,
                            final_policy_set, hcluster, pearson_matrix,
                            pick_representatives)
from .switch_policy import (FEATURE_ORDER, LabeledDataset, PolicyMetrics,
                            TreeModel, TreePolicy, evaluate,
                            feature_importance, load_tree, predict, save_tree,
                            train)
from .dapp_control import (Dapp, DappConfig, E3Indication, FailsafeMonitor,
                           LatencyModel, failsafe_check, loop_latency)
from .harness import (ExperimentSpec, ResourceReport, RunResult,
                      build_labeled_dataset, execute_run,
                      experiment_from_config, reproduce_fixtures,
                      resource_account, run_experiment)

__version__ = "0.1.0"

__all__ = [
    "GOOD", "POOR", "ScenarioConfig", "SlotGeometry", "load_scenario",
    "CostTable", "DmrsEstimate", "ExpertCostProfile", "ExpertId", "Stage",
    "denoiser_estimate", "ls_estimate", "mmse_estimate",
    "ControlMessage", "ExecutionMode", "ExpertBuffers", "KPM_FIELDS",
    "KpmRecord", "ModeVar", "Pipeline", "PipelineConfig", "SwitchController",
    "switch_select",
    "DegradationTable", "PerturbationConfig", "inject_noise",
    "monotonicity_filter", "sweep",
    "ClusterResult", "CorrelationMatrix", "KpmSelector", "final_policy_set",
    "hcluster", "pearson_matrix", "pick_representatives",
    "FEATURE_ORDER", "LabeledDataset", "PolicyMetrics", "TreeModel",
    "TreePolicy", "evaluate", "feature_importance", "load_tree", "predict",
    "save_tree", "train",
    "Dapp", "DappConfig", "E3Indication", "FailsafeMonitor", "LatencyModel",
    "failsafe_check", "loop_latency",
    "ExperimentSpec", "ResourceReport", "RunResult", "build_labeled_dataset",
    "execute_run", "experiment_from_config", "reproduce_fixtures",
    "resource_account", "run_experiment",
    "__version__",
]
