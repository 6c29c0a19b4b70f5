"""Parameter storage and the stateful layers built on the autodiff ops."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UninitializedStatsError
from ..seeds import derive_rng
from . import _kernels
from .autodiff import Tensor, _result, linear

__all__ = ["ParamStore", "Linear", "BatchNorm", "Dropout", "batch_norm", "kaiming_uniform"]


def kaiming_uniform(in_dim: int, out_dim: int, slope: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in init scaled for a following (Leaky)ReLU of the given slope."""
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / in_dim)
    return rng.uniform(-bound, bound, size=(in_dim, out_dim))


class ParamStore:
    """Named trainable parameters plus non-trainable buffers.

    Names are unique and insertion-ordered; the layer registry relies on
    that ordering to define "last N backbone layers". Each parameter is
    initialized from its own generator derived from (base_seed, name), so
    adding or removing unrelated parameters never shifts another one's
    initial values.
    """

    def __init__(self, base_seed: int):
        self.base_seed = base_seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def rng_for(self, name: str) -> np.random.Generator:
        return derive_rng(self.base_seed, "init", name)

    def is_trainable(self, name: str) -> bool:
        return self.params[name].requires_grad

    def set_trainable(self, name: str, flag: bool) -> None:
        self.params[name].requires_grad = flag

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer array."""
        state = {f"param:{k}": p.data.copy() for k, p in self.params.items()}
        state.update({f"buffer:{k}": v.copy() for k, v in self.buffers.items()})
        return state

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for key, arr in state.items():
            kind, name = key.split(":", 1)
            if kind == "param":
                self.params[name].data = arr.copy()
            else:
                self.buffers[name] = arr.copy()
        for name in [b for b in self.buffers if f"buffer:{b}" not in state]:
            del self.buffers[name]


class Linear:
    """Per-point linear map y = x w + b; x may carry any leading axes."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 slope: float = 0.0, zero_init: bool = False,
                 bias_init: np.ndarray | None = None):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = kaiming_uniform(in_dim, out_dim, slope, store.rng_for(name))
        self.w = store.add_param(f"{name}.w", w)
        b = np.zeros(out_dim) if bias_init is None else np.asarray(bias_init, dtype=np.float64)
        self.b = store.add_param(f"{name}.b", b)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, train: bool,
               running_mean: np.ndarray | None = None,
               running_var: np.ndarray | None = None,
               eps: float = 1e-5,
               activation: str | None = None,
               slope: float = 0.2) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize per channel (last axis) over all leading axes.

    Train mode normalizes by batch statistics and returns (y, batch_mean,
    unbiased_batch_var) for the caller's running-stat bookkeeping; eval mode
    normalizes by the supplied running statistics and echoes them back.
    An optional relu/leaky activation is fused into the same node to avoid
    materializing the intermediate.
    """
    ch = x.data.shape[-1]
    if gamma.data.shape != (ch,) or beta.data.shape != (ch,):
        raise ShapeError(f"batch_norm: affine shape {gamma.data.shape} vs {ch} channels")
    axes = tuple(range(x.data.ndim - 1))
    m = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
    if m < 1:
        raise ShapeError("batch_norm over an empty batch")

    x2 = np.ascontiguousarray(x.data.reshape(-1, ch))
    act_code = {None: 0, "relu": 1, "leaky": 2}[activation]
    if train:
        mean = np.empty(ch)
        meansq = np.empty(ch)
        _kernels.bn_stats(x2, mean, meansq)
        var = np.maximum(meansq - mean * mean, 0.0)
        sigma = np.sqrt(var + eps)
        xhat = np.empty_like(x2)
        out2 = np.empty_like(x2)
        _kernels.bn_apply(x2, mean, 1.0 / sigma, gamma.data, beta.data,
                          act_code, slope, xhat, out2)

        def run(g):
            g2 = np.ascontiguousarray(g.reshape(-1, ch))
            dgamma = np.empty(ch)
            dbeta = np.empty(ch)
            _kernels.bn_backward_reduce(g2, out2, act_code, slope, xhat, dgamma, dbeta)
            if gamma.requires_grad:
                gamma.accumulate_grad(dgamma)
            if beta.requires_grad:
                beta.accumulate_grad(dbeta)
            if x.requires_grad:
                # dx = (gamma/sigma)(g~ - mean g~ - xhat mean(g~ xhat)), into xhat
                _kernels.bn_backward_dx(g2, out2, act_code, slope, xhat,
                                        gamma.data / sigma, dbeta / m, dgamma / m)
                x.accumulate_grad(xhat.reshape(x.data.shape), own=True)

        out = _result(out2.reshape(x.data.shape), (x, gamma, beta), "batch_norm", run)
        var_u = var * (m / (m - 1)) if m > 1 else var
        return out, mean, var_u

    if running_mean is None or running_var is None:
        raise UninitializedStatsError("eval-mode batch norm before any training statistics")
    sigma = np.sqrt(running_var + eps)
    pre = x2 - running_mean
    pre *= gamma.data / sigma
    pre += beta.data
    data, act_mask = _apply_activation(pre, activation, slope)

    def run_eval(g):
        g2 = g.reshape(-1, ch)
        if act_mask is not None:
            g2 = g2 * act_mask
        if gamma.requires_grad:
            xhat = (x2 - running_mean) / sigma
            gamma.accumulate_grad(np.einsum("mc,mc->c", g2, xhat))
        if beta.requires_grad:
            beta.accumulate_grad(g2.sum(axis=0))
        if x.requires_grad:
            dx = g2 * (gamma.data / sigma)
            x.accumulate_grad(dx.reshape(x.data.shape), own=True)

    out = _result(data.reshape(x.data.shape), (x, gamma, beta), "batch_norm_eval", run_eval)
    return out, running_mean, running_var


def _apply_activation(pre: np.ndarray, activation: str | None, slope: float):
    if activation is None:
        return pre, None
    if activation == "relu":
        mask = pre > 0
        np.multiply(pre, mask, out=pre)
        return pre, mask
    if activation == "leaky":
        mask = np.where(pre > 0, 1.0, slope)
        np.multiply(pre, mask, out=pre)
        return pre, mask
    raise ValueError(f"unknown fused activation {activation!r}")


class BatchNorm:
    """Channel-last batch norm with running statistics kept in the store.

    Running statistics are created on the first train-mode pass even when
    the layer is frozen (a frozen fresh backbone still has to support
    eval-mode validation) and afterwards only updated while the layer is
    trainable, so freezing a layer pins both its affine parameters and its
    statistics.
    """

    def __init__(self, store: ParamStore, name: str, ch: int,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = store.add_param(f"{name}.gamma", np.ones(ch))
        self.beta = store.add_param(f"{name}.beta", np.zeros(ch))
        self.store = store
        self.key_mean = f"{name}.running_mean"
        self.key_var = f"{name}.running_var"
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool, activation: str | None = None) -> Tensor:
        rm = self.store.buffers.get(self.key_mean)
        rv = self.store.buffers.get(self.key_var)
        if train:
            out, bm, bv = batch_norm(x, self.gamma, self.beta, True, eps=self.eps,
                                     activation=activation)
            if rm is None:
                self.store.buffers[self.key_mean] = bm
                self.store.buffers[self.key_var] = bv
            elif self.gamma.requires_grad:
                mom = self.momentum
                self.store.buffers[self.key_mean] = (1 - mom) * rm + mom * bm
                self.store.buffers[self.key_var] = (1 - mom) * rv + mom * bv
            return out
        out, _, _ = batch_norm(x, self.gamma, self.beta, False, rm, rv,
                               eps=self.eps, activation=activation)
        return out


class Dropout:
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def __call__(self, x: Tensor, train: bool, rng: np.random.Generator | None = None) -> Tensor:
        from .autodiff import dropout
        return dropout(x, self.p, train, rng)
