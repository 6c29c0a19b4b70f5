"""PointNet regressor: input T-Net, shared per-point MLP 3-64-128-256-emb,
optional 128x128 feature T-Net, global max pool, three-layer head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import (BatchNorm, Dropout, Linear, Tensor, bmm, pool_points,
                      reshape, scale_shift)
from ..engine.nn import ParamStore
from .base import RegressorBase

EMBEDDING_CHOICES = (256, 512, 1024)


@dataclass(frozen=True)
class PointNetConfig:
    embedding_dim: int = 512
    feature_tnet: bool = False
    dropout_p: float = 0.3

    def __post_init__(self):
        if self.embedding_dim not in EMBEDDING_CHOICES:
            raise ValueError(f"embedding_dim must be one of {EMBEDDING_CHOICES}, "
                             f"got {self.embedding_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


class TNet:
    """Predicts a d x d alignment transform from a compact shared MLP
    (32-64-128) with max pooling; initialized to the identity (zero final
    weights, identity bias), so an untrained net is a no-op."""

    WIDTHS = (32, 64, 128)
    FC = 64

    def __init__(self, store: ParamStore, name: str, d: int):
        if d not in (3, 128):
            raise ValueError(f"T-Net dimension must be 3 or 128, got {d}")
        self.d = d
        self.stages = []
        cin = d
        param_names = []
        for si, width in enumerate(self.WIDTHS, start=1):
            lin = Linear(store, f"{name}.mlp{si}", cin, width)
            bn = BatchNorm(store, f"{name}.mlp{si}", width)
            self.stages.append((lin, bn))
            param_names += [f"{name}.mlp{si}.{leaf}" for leaf in ("w", "b", "gamma", "beta")]
            cin = width
        self.fc = Linear(store, f"{name}.fc", cin, self.FC)
        self.bnf = BatchNorm(store, f"{name}.fc", self.FC)
        param_names += [f"{name}.fc.{leaf}" for leaf in ("w", "b", "gamma", "beta")]
        self.out = Linear(store, f"{name}.out", self.FC, d * d, zero_init=True,
                          bias_init=np.eye(d).reshape(-1))
        param_names += [f"{name}.out.w", f"{name}.out.b"]
        self.param_names = param_names

    def __call__(self, x: Tensor, train: bool) -> tuple[Tensor, Tensor]:
        h = x
        for lin, bn in self.stages:
            h = bn(lin(h), train, activation="relu")
        g = pool_points(h, "max")
        g = self.bnf(self.fc(g), train, activation="relu")
        t = self.out(g)
        transform = reshape(t, (t.data.shape[0], self.d, self.d))
        return transform, bmm(x, transform)


class PointNet(RegressorBase):
    kind = "pointnet"

    def __init__(self, config: PointNetConfig, seed: int):
        super().__init__(seed)
        self.config = config
        store = self.store
        emb = config.embedding_dim

        self.input_tnet = TNet(store, "input_tnet", 3)
        self._register("input_tnet", self.input_tnet.param_names, is_head=False)

        def stage(name, cin, cout):
            lin = Linear(store, name, cin, cout)
            bn = BatchNorm(store, name, cout)
            self._register(name, [f"{name}.w", f"{name}.b",
                                  f"{name}.gamma", f"{name}.beta"], is_head=False)
            return lin, bn

        self.mlp1 = stage("mlp1", 3, 64)
        self.mlp2 = stage("mlp2", 64, 128)
        self.feature_tnet = None
        if config.feature_tnet:
            self.feature_tnet = TNet(store, "feature_tnet", 128)
            self._register("feature_tnet", self.feature_tnet.param_names, is_head=False)
        self.mlp3 = stage("mlp3", 128, 256)
        self.mlp4 = stage("mlp4", 256, emb)

        def head_stage(name, cin, cout, with_bn=True):
            lin = Linear(store, name, cin, cout)
            names = [f"{name}.w", f"{name}.b"]
            bn = None
            if with_bn:
                bn = BatchNorm(store, name, cout)
                names += [f"{name}.gamma", f"{name}.beta"]
            self._register(name, names, is_head=True)
            return lin, bn

        self.head1 = head_stage("head1", emb, 256)
        self.head2 = head_stage("head2", 256, 128)
        self.head3 = head_stage("head3", 128, 1, with_bn=False)
        self.drop = Dropout(config.dropout_p)

    def config_values(self) -> dict:
        return {"embedding_dim": self.config.embedding_dim,
                "feature_tnet": self.config.feature_tnet,
                "dropout_p": self.config.dropout_p}

    def forward(self, clouds: np.ndarray, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        x = Tensor(self.check_input(clouds))
        _, x = self.input_tnet(x, train)
        for lin, bn in (self.mlp1, self.mlp2):
            x = bn(lin(x), train, activation="relu")
        if self.feature_tnet is not None:
            _, x = self.feature_tnet(x, train)
        for lin, bn in (self.mlp3, self.mlp4):
            x = bn(lin(x), train, activation="relu")
        g = pool_points(x, "max")
        for lin, bn in (self.head1, self.head2):
            g = self.drop(bn(lin(g), train, activation="relu"), train, rng)
        lin, _ = self.head3
        out = reshape(lin(g), (g.data.shape[0],))
        mean, std = self.target_scaling
        return scale_shift(out, std, mean)
