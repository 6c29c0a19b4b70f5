"""Hyperparameter grids: the full tuned search ranges, override validation,
and deterministic cell enumeration."""

from __future__ import annotations

from itertools import product

TABLE_GRID = {
    "dgcnn": {
        "learning_rate": (1e-6, 1e-5, 1e-4, 1e-3),
        "dropout_p": (0.2, 0.3, 0.4, 0.5),
        "k_neighbors": (15, 20),
        "weight_decay": (1e-5, 1e-4, 1e-3, 1e-2),
        "embedding_dim": (256, 512, 1024),
    },
    "pointnet": {
        "learning_rate": (1e-6, 1e-5, 1e-4, 1e-3),
        "dropout_p": (0.2, 0.3, 0.4, 0.5),
        "weight_decay": (1e-5, 1e-4, 1e-3, 1e-2),
        "embedding_dim": (256, 512, 1024),
        "feature_tnet": (True, False),
    },
}

OPTIMIZER_KEYS = ("learning_rate", "weight_decay")


def validate_grid(kind: str, grid: dict) -> dict:
    """Check keys and that every value stays within the published ranges."""
    table = TABLE_GRID[kind]
    out = {}
    for key, allowed in table.items():
        values = grid.get(key, allowed)
        values = tuple(values)
        if not values:
            raise ValueError(f"grid for {kind}.{key} is empty")
        bad = [v for v in values if v not in allowed]
        if bad:
            raise ValueError(f"grid values {bad} for {kind}.{key} outside "
                             f"the search range {allowed}")
        out[key] = values
    extra = set(grid) - set(table)
    if extra:
        raise ValueError(f"unknown grid keys for {kind}: {sorted(extra)}")
    return out


def grid_cells(kind: str, grid: dict) -> list[dict]:
    """Full Cartesian product in the published key order; enumeration order
    is the tie-breaking order of the search."""
    full = validate_grid(kind, grid)
    keys = list(TABLE_GRID[kind])
    cells = []
    for combo in product(*(full[k] for k in keys)):
        cells.append(dict(zip(keys, combo)))
    return cells


def split_cell(cell: dict) -> tuple[dict, dict]:
    """-> (model config kwargs, optimizer kwargs)."""
    model_cfg = {k: v for k, v in cell.items() if k not in OPTIMIZER_KEYS}
    opt_cfg = {k: v for k, v in cell.items() if k in OPTIMIZER_KEYS}
    return model_cfg, opt_cfg
