"""PointNet and DGCNN body-weight regressors with freezable layer registries."""

from __future__ import annotations

from .base import LayerEntry, RegressorBase, parse_unfreeze
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .dgcnn import Dgcnn, DgcnnConfig, knn_graph
from .pointnet import PointNet, PointNetConfig

UNFREEZE_OPTIONS = ("head_only", "head_plus_last_1", "head_plus_last_2",
                    "head_plus_last_3", "full")


def build_model(kind: str, config_values: dict, seed: int) -> RegressorBase:
    """Construct a fresh model of the given kind from config key-values."""
    if kind == "pointnet":
        return PointNet(PointNetConfig(**config_values), seed)
    if kind == "dgcnn":
        return Dgcnn(DgcnnConfig(**config_values), seed)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "RegressorBase", "LayerEntry", "parse_unfreeze", "UNFREEZE_OPTIONS",
    "PointNet", "PointNetConfig", "Dgcnn", "DgcnnConfig", "knn_graph",
    "save_checkpoint", "load_checkpoint", "load_into", "build_model",
]
