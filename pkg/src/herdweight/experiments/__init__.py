"""Experiment designs: single-source, joint, and transfer learning with
cow-level splits, grid search, two-stage training, and repeated
cross-validation."""

from .manifest import CowRecord, DatasetManifest, load_manifest, write_manifest_rows
from .splits import SplitPlan, split_cows, split_pool
from .grid import TABLE_GRID, grid_cells, validate_grid
from .data import FrameStore, TrainData, aggregate_predictions
from .training import (RunResult, TrainSettings, evaluate_cow_mape,
                       fit_target_scaling, grid_search, train_model,
                       transfer_finetune, two_stage_train)
from .runner import ExperimentPlan, load_plan, run_design, write_results

__all__ = [
    "CowRecord", "DatasetManifest", "load_manifest", "write_manifest_rows",
    "SplitPlan", "split_cows", "split_pool",
    "TABLE_GRID", "grid_cells", "validate_grid",
    "FrameStore", "TrainData", "aggregate_predictions",
    "TrainSettings", "RunResult", "train_model", "two_stage_train",
    "fit_target_scaling", "evaluate_cow_mape",
    "grid_search", "transfer_finetune",
    "ExperimentPlan", "load_plan", "run_design", "write_results",
]
