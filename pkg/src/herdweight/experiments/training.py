"""Training loops: seeded batching with farm-provenance checks, early
stopping with best-epoch restore, the two-stage protocol, validation-MAPE
grid search, and the transfer fine-tune over the unfreeze grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..engine import AdamW, OneCycleSchedule, Tensor, TrainControl, scale_shift, smooth_l1_loss
from ..errors import ContractError, DivergedError, SearchFailureError
from ..evaluation import mape
from ..models import UNFREEZE_OPTIONS, build_model, load_checkpoint, save_checkpoint
from ..seeds import derive_rng, derive_seed
from .data import TrainData, aggregate_predictions
from .grid import grid_cells, split_cell


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 32
    max_epochs: int = 200
    early_patience: int = 15
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-7
    tuning_epochs: int = 30
    stage1_epochs: int = 200
    stage2_epochs: int = 200
    finetune_epochs: int = 200
    eval_batch_size: int = 64


@dataclass(frozen=True)
class RunResult:
    design: str
    scenario: str
    model: str
    repeat: int
    params: dict
    unfreeze: str
    r2: float
    mape: float
    predictions: dict          # cow id -> (true kg, predicted kg)
    train_cows: tuple
    test_cows: tuple


def fit_target_scaling(model, weights: np.ndarray) -> None:
    std = float(weights.std())
    model.set_target_scaling(float(weights.mean()), std if std > 1e-9 else 1.0)


def evaluate_cow_mape(model, data: TrainData, batch_size: int) -> float:
    preds = model.predict(data.clouds, batch_size=batch_size)
    per_cow = aggregate_predictions(data.cows, preds)
    truth = data.cow_weights()
    cows = sorted(per_cow)
    return mape([truth[c] for c in cows], [per_cow[c] for c in cows])


def train_model(model, train: TrainData, val: TrainData | None,
                settings: TrainSettings, seed: int, allowed_farms,
                lr: float, weight_decay: float, max_epochs: int,
                schedule: str = "plateau", stage: str = "train") -> list[float]:
    """Train in place; returns per-epoch validation MAPE (empty if val is
    skipped). Early stopping restores the best-epoch snapshot."""
    allowed = set(allowed_farms)
    bad = set(train.farms) - allowed
    if bad:
        raise ContractError(f"{stage}: training data from farms {sorted(bad)} "
                            f"not allowed here (allowed: {sorted(allowed)})")
    if max_epochs <= 0:
        return []
    mean, std = model.target_scaling
    opt = AdamW(model.store, lr=lr, weight_decay=weight_decay, kind="adamw")
    control = TrainControl(settings.early_patience, settings.plateau_patience,
                           settings.plateau_factor, settings.min_lr)
    n = train.n_frames
    batches = max(1, math.ceil(n / settings.batch_size))
    onecycle = None
    if schedule == "onecycle":
        onecycle = OneCycleSchedule(lr, max(2, max_epochs * batches))
    history: list[float] = []
    best_state = None
    step = 0
    current_lr = lr
    for epoch in range(max_epochs):
        order = derive_rng(seed, stage, "shuffle", epoch).permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start:start + settings.batch_size]
            if onecycle is not None:
                current_lr = onecycle.lr_at(step)
            opt.lr = current_lr
            rng = derive_rng(seed, stage, "dropout", epoch, step)
            out = model.forward(train.clouds[idx], train=True, rng=rng)
            target = (train.weights[idx] - mean) / std
            pred_n = scale_shift(out, 1.0 / std, -mean / std)
            loss = smooth_l1_loss(pred_n, Tensor(target))
            if not np.isfinite(loss.data):
                raise DivergedError(f"{stage}: non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            step += 1
        if val is None or max_epochs == 1:
            continue
        vmape = evaluate_cow_mape(model, val, settings.eval_batch_size)
        history.append(vmape)
        new_lr, improved, stop = control.observe(vmape, current_lr)
        if onecycle is None:
            current_lr = new_lr
        if improved:
            best_state = model.store.snapshot()
        if stop:
            break
    if best_state is not None:
        model.store.restore(best_state)
    return history


def two_stage_train(model, train: TrainData, val: TrainData | None,
                    settings: TrainSettings, seed: int, allowed_farms,
                    lr: float, weight_decay: float) -> None:
    """Stage 1 trains the head against a frozen backbone; stage 2 trains
    everything. Either stage may be disabled by a zero epoch cap."""
    model.set_trainable("head_only")
    train_model(model, train, val, settings, derive_seed(seed, "stage1"),
                allowed_farms, lr, weight_decay,
                max_epochs=settings.stage1_epochs, stage="stage1")
    model.set_trainable("full")
    train_model(model, train, val, settings, derive_seed(seed, "stage2"),
                allowed_farms, lr, weight_decay,
                max_epochs=settings.stage2_epochs, stage="stage2")


def grid_search(kind: str, grid: dict, subtrain: TrainData, val: TrainData,
                settings: TrainSettings, seed: int, allowed_farms) -> dict:
    """Train one candidate per grid cell on the subtraining set, score by
    cow-level validation MAPE, return the first-best cell."""
    cells = grid_cells(kind, grid)
    if len(cells) == 1:
        return cells[0]
    best_cell = None
    best_mape = math.inf
    failures = []
    for i, cell in enumerate(cells):
        model_cfg, opt_cfg = split_cell(cell)
        model = build_model(kind, model_cfg, seed=derive_seed(seed, "grid", i))
        fit_target_scaling(model, subtrain.weights)
        try:
            train_model(model, subtrain, val, settings,
                        derive_seed(seed, "grid-train", i), allowed_farms,
                        lr=opt_cfg["learning_rate"],
                        weight_decay=opt_cfg["weight_decay"],
                        max_epochs=settings.tuning_epochs, schedule="onecycle",
                        stage=f"tuning[{i}]")
            vmape = evaluate_cow_mape(model, val, settings.eval_batch_size)
        except DivergedError as exc:
            failures.append(f"cell {i} {cell}: {exc}")
            continue
        if vmape < best_mape:
            best_mape = vmape
            best_cell = cell
    if best_cell is None:
        raise SearchFailureError("every grid cell diverged:\n" + "\n".join(failures))
    return best_cell


def transfer_finetune(source_ckpt: str, train: TrainData, val: TrainData,
                      lr_list, weight_decay: float, settings: TrainSettings,
                      seed: int, allowed_farms):
    """Fine-tune the source model on the target farm for every unfreeze
    option (and learning rate), selecting by cow-level validation MAPE.

    Returns (model, unfreeze_option, learning_rate, val_mape)."""
    best = None
    for oi, option in enumerate(UNFREEZE_OPTIONS):
        for li, lr in enumerate(lr_list):
            model = load_checkpoint(source_ckpt)
            fit_target_scaling(model, train.weights)
            model.set_trainable(option)
            train_model(model, train, val, settings,
                        derive_seed(seed, "finetune", option, li), allowed_farms,
                        lr=lr, weight_decay=weight_decay,
                        max_epochs=settings.finetune_epochs,
                        stage=f"finetune[{option}]")
            vmape = evaluate_cow_mape(model, val, settings.eval_batch_size)
            if best is None or vmape < best[3]:
                best = (model, option, lr, vmape)
    return best
