"""Plan files, the job matrix, and end-to-end execution of the designs.

A plan names the farms (manifest + camera profile per farm), the designs,
scenarios, models, repeat count, master seed, and any grid or epoch-cap
overrides. One cow partition is drawn per repeat and shared by every
design, scenario, and model in that repeat, which makes the small-farm
test set identical across them by construction.
"""

from __future__ import annotations

import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from ..depth_io import read_camera_profile
from ..errors import PlanError
from ..evaluation import mape, r_squared
from ..kvtext import read_kv_file
from ..models import build_model, save_checkpoint
from ..seeds import derive_seed
from .data import FrameStore, TrainData, concat_data
from .grid import TABLE_GRID, validate_grid
from .manifest import load_manifest
from .splits import SplitPlan, split_cows, split_pool
from .training import (RunResult, TrainSettings, evaluate_cow_mape,
                       fit_target_scaling, grid_search, train_model,
                       transfer_finetune, two_stage_train)

DESIGNS = ("single_source", "joint", "transfer")
SCENARIOS = {"medium": ("medium",), "large": ("large",),
             "medium_plus_large": ("medium", "large")}
TARGET_FARM = "small"


@dataclass(frozen=True)
class ExperimentPlan:
    designs: tuple[str, ...]
    scenarios: tuple[str, ...]
    models: tuple[str, ...]
    repeats: int
    master_seed: int
    manifests: dict          # farm -> path
    cameras: dict            # farm -> path
    settings: TrainSettings
    grids: dict              # model kind -> overrides
    finetune_lrs: tuple[float, ...]

    def external_farms(self) -> tuple[str, ...]:
        farms = []
        if any(d in ("joint", "transfer") for d in self.designs):
            for sc in self.scenarios:
                for farm in SCENARIOS[sc]:
                    if farm not in farms:
                        farms.append(farm)
        return tuple(farms)


def _parse_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_values(key: str, items: list[str]):
    if key == "feature_tnet":
        return [item in ("on", "true", "True") for item in items]
    if key in ("embedding_dim", "k_neighbors"):
        return [int(item) for item in items]
    return [float(item) for item in items]


def load_plan(path: str | Path) -> ExperimentPlan:
    values: dict[str, str] = {}
    for key, value in read_kv_file(path):
        values[key] = value

    def need(key):
        if key not in values:
            raise PlanError(f"plan is missing required key {key!r}")
        return values[key]

    designs = tuple(_parse_list(need("design")))
    bad = set(designs) - set(DESIGNS)
    if bad:
        raise PlanError(f"unknown designs {sorted(bad)}; valid: {DESIGNS}")
    scenarios = tuple(_parse_list(values.get("scenario", "")))
    if any(d in ("joint", "transfer") for d in designs):
        if not scenarios:
            raise PlanError("joint/transfer designs need a scenario list")
        bad = set(scenarios) - set(SCENARIOS)
        if bad:
            raise PlanError(f"unknown scenarios {sorted(bad)}; valid: {tuple(SCENARIOS)}")
    models = tuple(_parse_list(need("model")))
    bad = set(models) - set(TABLE_GRID)
    if bad:
        raise PlanError(f"unknown models {sorted(bad)}")

    manifests = {}
    cameras = {}
    for key, value in values.items():
        if key.startswith("manifest."):
            manifests[key.split(".", 1)[1]] = value
        elif key.startswith("camera."):
            cameras[key.split(".", 1)[1]] = value
    if TARGET_FARM not in manifests:
        raise PlanError(f"plan must name manifest.{TARGET_FARM}")
    for farm in manifests:
        if farm not in cameras:
            raise PlanError(f"manifest.{farm} has no matching camera.{farm}")

    defaults = TrainSettings()
    def setting(name, cast):
        return cast(values.get(name, getattr(defaults, name)))
    settings = TrainSettings(
        batch_size=setting("batch_size", int),
        max_epochs=setting("max_epochs", int),
        early_patience=setting("early_patience", int),
        plateau_patience=setting("plateau_patience", int),
        plateau_factor=setting("plateau_factor", float),
        min_lr=setting("min_lr", float),
        tuning_epochs=setting("tuning_epochs", int),
        stage1_epochs=setting("stage1_epochs", int),
        stage2_epochs=setting("stage2_epochs", int),
        finetune_epochs=setting("finetune_epochs", int),
        eval_batch_size=setting("eval_batch_size", int))

    grids: dict[str, dict] = {kind: {} for kind in TABLE_GRID}
    for key, value in values.items():
        if key.startswith("grid."):
            _, kind, param = key.split(".", 2)
            if kind not in TABLE_GRID:
                raise PlanError(f"grid override for unknown model {kind!r}")
            grids[kind][param] = _parse_values(param, _parse_list(value))
    for kind in grids:
        validate_grid(kind, grids[kind])

    lr_default = TABLE_GRID["pointnet"]["learning_rate"]
    finetune_lrs = tuple(float(v) for v in
                         _parse_values("learning_rate",
                                       _parse_list(values.get("finetune.learning_rate", ""))) or lr_default)

    return ExperimentPlan(
        designs=designs, scenarios=scenarios or ("none",), models=models,
        repeats=int(need("repeats")), master_seed=int(need("master_seed")),
        manifests=manifests, cameras=cameras, settings=settings, grids=grids,
        finetune_lrs=finetune_lrs)


# ---------------------------------------------------------------------------
# job execution

@dataclass(frozen=True)
class Job:
    repeat: int
    design: str
    scenario: str
    model: str
    split: SplitPlan


def _metrics(per_cow: dict, truth: dict) -> tuple[float, float, dict]:
    cows = sorted(per_cow)
    y = [truth[c] for c in cows]
    yhat = [per_cow[c] for c in cows]
    preds = {c[1]: (truth[c], per_cow[c]) for c in cows}
    return r_squared(y, yhat), mape(y, yhat), preds


def _predict_test(model, test: TrainData) -> tuple[float, float, dict]:
    preds = model.predict(test.clouds)
    per_cow = {}
    for cow, p in zip(test.cows, preds):
        per_cow.setdefault(cow, []).append(p)
    per_cow = {c: float(np.mean(v)) for c, v in per_cow.items()}
    return _metrics(per_cow, test.cow_weights())


def run_job(job: Job, plan: ExperimentPlan, store: FrameStore) -> RunResult:
    settings = plan.settings
    seed = derive_seed(plan.master_seed, "job", job.repeat, job.design,
                       job.scenario, job.model)
    split = job.split
    small_train = store.subset(TARGET_FARM, split.train_cows)
    small_subtrain = store.subset(TARGET_FARM, split.subtrain_cows)
    small_val = store.subset(TARGET_FARM, split.val_cows)
    small_test = store.subset(TARGET_FARM, split.test_cows)
    grid = plan.grids.get(job.model, {})
    unfreeze = ""

    if job.design == "single_source":
        allowed = {TARGET_FARM}
        cell = grid_search(job.model, grid, small_subtrain, small_val,
                           settings, derive_seed(seed, "search"), allowed)
        model = _final_model(job.model, cell, seed)
        fit_target_scaling(model, small_train.weights)
        two_stage_train(model, small_train, small_val, settings,
                        derive_seed(seed, "final"), allowed,
                        lr=cell["learning_rate"], weight_decay=cell["weight_decay"])
        params = dict(cell)

    elif job.design == "joint":
        ext = [store.whole_farm(f) for f in SCENARIOS[job.scenario]]
        pool = concat_data([small_train, *ext])
        allowed = {TARGET_FARM, *SCENARIOS[job.scenario]}
        sub_cows, val_cows = split_pool(set(pool.cows), derive_seed(seed, "pool-split"))
        subtrain = _subset_pool(pool, sub_cows)
        val = _subset_pool(pool, val_cows)
        cell = grid_search(job.model, grid, subtrain, val, settings,
                           derive_seed(seed, "search"), allowed)
        model = _final_model(job.model, cell, seed)
        fit_target_scaling(model, pool.weights)
        two_stage_train(model, pool, val, settings, derive_seed(seed, "final"),
                        allowed, lr=cell["learning_rate"],
                        weight_decay=cell["weight_decay"])
        params = dict(cell)

    elif job.design == "transfer":
        source_farms = SCENARIOS[job.scenario]
        source = concat_data([store.whole_farm(f) for f in source_farms])
        allowed_src = set(source_farms)
        sub_cows, val_cows = split_pool(set(source.cows), derive_seed(seed, "src-split"))
        src_subtrain = _subset_pool(source, sub_cows)
        src_val = _subset_pool(source, val_cows)
        cell = grid_search(job.model, grid, src_subtrain, src_val, settings,
                           derive_seed(seed, "search"), allowed_src)
        model = _final_model(job.model, cell, seed)
        fit_target_scaling(model, source.weights)
        two_stage_train(model, source, src_val, settings,
                        derive_seed(seed, "pretrain"), allowed_src,
                        lr=cell["learning_rate"], weight_decay=cell["weight_decay"])
        with tempfile.TemporaryDirectory() as td:
            ckpt = os.path.join(td, "source.ckpt")
            save_checkpoint(model, ckpt, {"source_farms": "+".join(source_farms),
                                          "repeat": str(job.repeat)})
            model, unfreeze, ft_lr, _ = transfer_finetune(
                ckpt, small_train, small_val, plan.finetune_lrs,
                cell["weight_decay"], settings, derive_seed(seed, "finetune"),
                {TARGET_FARM})
        params = dict(cell)
        params["finetune_lr"] = ft_lr

    else:
        raise PlanError(f"unknown design {job.design!r}")

    r2, mape_value, preds = _predict_test(model, small_test)
    return RunResult(job.design, job.scenario, job.model, job.repeat, params,
                     unfreeze, r2, mape_value, preds,
                     split.train_cows, split.test_cows)


def _subset_pool(pool: TrainData, cow_set) -> TrainData:
    wanted = set(cow_set)
    idx = [i for i, c in enumerate(pool.cows) if c in wanted]
    return TrainData(pool.clouds[idx], pool.weights[idx],
                     tuple(pool.cows[i] for i in idx),
                     tuple(pool.farms[i] for i in idx))


def _final_model(kind: str, cell: dict, seed: int):
    from .grid import split_cell
    model_cfg, _ = split_cell(cell)
    model_cfg.pop("finetune_lr", None)
    return build_model(kind, model_cfg, seed=derive_seed(seed, "final-init"))


# ---------------------------------------------------------------------------
# run orchestration

_POOL_CONTEXT: dict = {}


def _pool_run(job: Job) -> RunResult:
    return run_job(job, _POOL_CONTEXT["plan"], _POOL_CONTEXT["store"])


def build_store(plan: ExperimentPlan, base_dir: str | Path = ".") -> FrameStore:
    base = Path(base_dir)
    store = FrameStore(plan.master_seed)
    farms = (TARGET_FARM, *plan.external_farms())
    for farm in farms:
        if farm not in plan.manifests:
            raise PlanError(f"scenario needs farm {farm!r} but the plan has no "
                            f"manifest.{farm}")
        manifest = load_manifest(base / plan.manifests[farm])
        camera = read_camera_profile(base / plan.cameras[farm])
        store.add_farm(manifest, camera)
    return store


def build_jobs(plan: ExperimentPlan, store: FrameStore) -> list[Job]:
    jobs = []
    for repeat in range(1, plan.repeats + 1):
        split = split_cows(store.cow_ids(TARGET_FARM),
                           derive_seed(plan.master_seed, "repeat", repeat),
                           repeat_index=repeat)
        for design in plan.designs:
            scenarios = ("none",) if design == "single_source" else plan.scenarios
            for scenario in scenarios:
                for model in plan.models:
                    jobs.append(Job(repeat, design, scenario, model,
                                    replace(split, design=design, scenario=scenario)))
    return jobs


def run_design(plan: ExperimentPlan, base_dir: str | Path = ".",
               workers: int = 1) -> list[RunResult]:
    """Execute the full job matrix; results come back sorted and audited."""
    store = build_store(plan, base_dir)
    jobs = build_jobs(plan, store)
    if workers <= 1:
        results = [run_job(job, plan, store) for job in jobs]
    else:
        _POOL_CONTEXT["plan"] = plan
        _POOL_CONTEXT["store"] = store
        try:
            with ProcessPoolExecutor(max_workers=workers,
                                     mp_context=get_context("fork")) as pool:
                results = list(pool.map(_pool_run, jobs))
        finally:
            _POOL_CONTEXT.clear()
    results.sort(key=lambda r: (DESIGNS.index(r.design), r.scenario, r.model, r.repeat))
    audit_results(results)
    return results


def audit_results(results: list[RunResult]) -> None:
    """Split hygiene over the full matrix: no train/test overlap anywhere,
    and one identical test set per repeat."""
    per_repeat_tests: dict[int, tuple] = {}
    for r in results:
        overlap = set(r.train_cows) & set(r.test_cows)
        if overlap:
            raise PlanError(f"train/test overlap in {r.design}/{r.model} "
                            f"repeat {r.repeat}: {sorted(overlap)}")
        seen = per_repeat_tests.setdefault(r.repeat, r.test_cows)
        if seen != r.test_cows:
            raise PlanError(f"test sets differ within repeat {r.repeat}")


# ---------------------------------------------------------------------------
# results files

def format_params(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def write_results(results: list[RunResult], out_dir: str | Path) -> dict[str, Path]:
    from ..evaluation import results_table, summary_console, summary_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["design,scenario,model,repeat,params,unfreeze,r2,mape"]
    pred_lines = ["design,scenario,model,repeat,cow_id,true_kg,pred_kg"]
    for r in results:
        lines.append(f"{r.design},{r.scenario},{r.model},{r.repeat},"
                     f"{format_params(r.params)},{r.unfreeze},"
                     f"{r.r2:.10g},{r.mape:.10g}")
        for cow in sorted(r.predictions):
            true, pred = r.predictions[cow]
            pred_lines.append(f"{r.design},{r.scenario},{r.model},{r.repeat},"
                              f"{cow},{true:.10g},{pred:.10g}")
    paths = {
        "results": out / "results.csv",
        "predictions": out / "predictions.csv",
        "summary": out / "summary.csv",
    }
    paths["results"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["predictions"].write_text("\n".join(pred_lines) + "\n", encoding="utf-8")
    rows = results_table(results)
    paths["summary"].write_text(summary_csv(rows), encoding="utf-8")
    return paths
