"""Shared regressor machinery: layer registry, freezing, checksums."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..engine import ParamStore, Tensor
from ..errors import ContractError

N_INPUT_POINTS = 1024


@dataclass(frozen=True)
class LayerEntry:
    """One freezable unit: its parameters freeze and unfreeze together."""

    name: str
    param_names: tuple[str, ...]
    is_head: bool
    depth: int


def parse_unfreeze(spec: str, n_backbone: int) -> tuple[bool, int]:
    """Returns (train_full_backbone, last_n). head_only -> (False, 0)."""
    if spec == "full":
        return True, n_backbone
    if spec == "head_only":
        return False, 0
    if spec.startswith("head_plus_last_"):
        n = int(spec.rsplit("_", 1)[1])
        if not 1 <= n <= n_backbone:
            raise ValueError(f"unfreeze depth {n} outside [1, {n_backbone}]")
        return False, n
    raise ValueError(f"unknown unfreeze spec {spec!r}")


class RegressorBase:
    """Common structure for the point-cloud regressors.

    Holds the parameter store, the ordered layer registry that defines the
    backbone/head boundary and "last N backbone layers", and the target
    scaling buffer that maps the network's normalized output to kilograms.
    """

    kind = "base"

    def __init__(self, seed: int):
        self.seed = seed
        self.store = ParamStore(seed)
        self.registry: list[LayerEntry] = []
        self.store.buffers["target_scale"] = np.array([0.0, 1.0])

    # -- registry -----------------------------------------------------------

    def _register(self, name: str, param_names: list[str], is_head: bool) -> None:
        self.registry.append(LayerEntry(name, tuple(param_names), is_head,
                                        depth=len(self.registry)))

    def backbone_layers(self) -> list[LayerEntry]:
        return [e for e in self.registry if not e.is_head]

    def head_layers(self) -> list[LayerEntry]:
        return [e for e in self.registry if e.is_head]

    def set_trainable(self, spec: str) -> None:
        """Apply an unfreeze spec; frozen batch-norm layers also stop
        updating their running statistics (handled by BatchNorm/EdgeConv)."""
        backbone = self.backbone_layers()
        _, last_n = parse_unfreeze(spec, len(backbone))
        trainable_backbone = {e.name for e in backbone[len(backbone) - last_n:]}
        for entry in self.registry:
            flag = entry.is_head or entry.name in trainable_backbone
            for pname in entry.param_names:
                self.store.set_trainable(pname, flag)

    def trainable_layer_names(self) -> list[str]:
        return [e.name for e in self.registry
                if all(self.store.is_trainable(p) for p in e.param_names)]

    # -- state --------------------------------------------------------------

    def backbone_checksum(self) -> str:
        """Digest of backbone parameters and their running statistics."""
        digest = hashlib.sha256()
        for entry in self.backbone_layers():
            for pname in entry.param_names:
                digest.update(self.store.params[pname].data.tobytes())
                for suffix in (".running_mean", ".running_var"):
                    stat = self.store.buffers.get(pname.rsplit(".", 1)[0] + suffix)
                    if stat is not None:
                        digest.update(stat.tobytes())
        return digest.hexdigest()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.store.params.values())

    # -- target scaling ------------------------------------------------------

    def set_target_scaling(self, mean: float, std: float) -> None:
        if std <= 0:
            raise ValueError(f"target std must be positive, got {std}")
        self.store.buffers["target_scale"] = np.array([float(mean), float(std)])

    @property
    def target_scaling(self) -> tuple[float, float]:
        mean, std = self.store.buffers["target_scale"]
        return float(mean), float(std)

    # -- inference -----------------------------------------------------------

    def config_values(self) -> dict:
        raise NotImplementedError

    def forward(self, clouds: np.ndarray, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def predict(self, clouds: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Eval-mode predictions in kg for [n, points, 3] clouds."""
        outputs = []
        for start in range(0, clouds.shape[0], batch_size):
            out = self.forward(clouds[start:start + batch_size], train=False)
            outputs.append(out.data)
        return np.concatenate(outputs)

    @staticmethod
    def check_input(clouds: np.ndarray) -> np.ndarray:
        clouds = np.asarray(clouds, dtype=np.float64)
        if clouds.ndim != 3 or clouds.shape[2] != 3:
            raise ContractError(f"expected [batch, points, 3] clouds, got {clouds.shape}")
        if clouds.shape[1] != N_INPUT_POINTS:
            raise ContractError(
                f"clouds must be standardized to {N_INPUT_POINTS} points, "
                f"got {clouds.shape[1]}")
        return clouds
