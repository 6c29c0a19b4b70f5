"""Coefficient of determination, mean absolute percentage error, and the
summary table aggregated over cross-validation repeats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DESIGN_ORDER = ("single_source", "joint", "transfer")
SCENARIO_ORDER = ("none", "medium", "large", "medium_plus_large")
MODEL_ORDER = ("pointnet", "dgcnn")


def r_squared(y: Sequence[float], yhat: Sequence[float]) -> float:
    """1 - SSres/SStot; may be negative for fits worse than the mean."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"mismatched metric inputs: {y.shape} vs {yhat.shape}")
    if y.size < 2:
        raise ValueError(f"R^2 needs at least 2 observations, got {y.size}")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined: observed values are constant")
    ss_res = float(((y - yhat) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def mape(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Mean of |y - yhat| / |y| expressed in percent."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"mismatched metric inputs: {y.shape} vs {yhat.shape}")
    if y.size < 1:
        raise ValueError("MAPE over an empty vector")
    if np.any(y == 0):
        raise ValueError("MAPE undefined: an observed value is zero")
    return float(np.mean(np.abs((y - yhat) / y))) * 100.0


@dataclass(frozen=True)
class SummaryRow:
    design: str
    scenario: str
    model: str
    n_repeats: int
    r2_mean: float
    r2_se: float
    mape_mean: float
    mape_se: float


def _order_key(row: SummaryRow) -> tuple[int, int, int]:
    def pos(seq, value):
        return seq.index(value) if value in seq else len(seq)

    return (pos(DESIGN_ORDER, row.design), pos(SCENARIO_ORDER, row.scenario),
            pos(MODEL_ORDER, row.model))


def _mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def results_table(results: Iterable) -> list[SummaryRow]:
    """Group run results by (design, scenario, model); mean and standard
    error of the mean over repeats, ordered as in the reporting layout."""
    cells: dict[tuple[str, str, str], list] = {}
    for r in results:
        cells.setdefault((r.design, r.scenario, r.model), []).append(r)
    rows = []
    for (design, scenario, model), group in cells.items():
        r2_mean, r2_se = _mean_se([g.r2 for g in group])
        mape_mean, mape_se = _mean_se([g.mape for g in group])
        rows.append(SummaryRow(design, scenario, model, len(group),
                               r2_mean, r2_se, mape_mean, mape_se))
    rows.sort(key=_order_key)
    return rows


def summary_csv(rows: list[SummaryRow]) -> str:
    lines = ["strategy,scenario,model,n_repeats,r2_mean,r2_se,mape_mean,mape_se"]
    for r in rows:
        lines.append(f"{r.design},{r.scenario},{r.model},{r.n_repeats},"
                     f"{r.r2_mean:.10g},{r.r2_se:.10g},{r.mape_mean:.10g},{r.mape_se:.10g}")
    return "\n".join(lines) + "\n"


def summary_console(rows: list[SummaryRow]) -> str:
    """Aligned text table; standard errors in parentheses, n=1 cells flagged."""
    header = f"{'strategy':<15}{'scenario':<19}{'model':<10}{'R2':<18}{'MAPE (%)':<18}"
    out = [header, "-" * len(header)]
    for r in rows:
        flag = " [n=1]" if r.n_repeats == 1 else ""
        out.append(f"{r.design:<15}{r.scenario:<19}{r.model:<10}"
                   f"{r.r2_mean:.3f} ({r.r2_se:.3f})   "
                   f"{r.mape_mean:.2f} ({r.mape_se:.2f}){flag}")
    return "\n".join(out) + "\n"
