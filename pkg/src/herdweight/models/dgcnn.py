"""DGCNN regressor: three edge convolutions with per-layer kNN recomputation,
a shared projection to the embedding, max+avg global descriptor, and a
three-layer head with LeakyReLU activations.

The edge convolution (concat(x_i, x_j - x_i) -> shared linear -> batch norm
-> LeakyReLU -> max over neighbors) is evaluated in decomposed form: with
W split into center/offset halves, every edge response is u_i + v_j for
per-point features u = x (W_c - W_r) + b and v = x W_r. Batch statistics
come from neighbor sums of v, and the neighbor max reduces to a per-channel
max (or min, where the normalization scale is negative) of v. Exact
gradients follow from per-point quantities plus reverse-graph sums, so the
[batch, n, k, ch] edge tensor is never materialized. Results are identical
to the direct composition up to float64 rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..engine import (BatchNorm, Dropout, Linear, Tensor, concat_last,
                      pool_points, reshape, scale_shift)
from ..engine.autodiff import _result
from ..engine.nn import ParamStore, kaiming_uniform
from ..errors import ShapeError, UninitializedStatsError
from .base import RegressorBase

EMBEDDING_CHOICES = (256, 512, 1024)
K_CHOICES = (15, 20)
EDGE_CHANNELS = (32, 64, 128)
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class DgcnnConfig:
    k_neighbors: int = 20
    embedding_dim: int = 512
    dropout_p: float = 0.3

    def __post_init__(self):
        if self.k_neighbors not in K_CHOICES:
            raise ValueError(f"k_neighbors must be one of {K_CHOICES}, "
                             f"got {self.k_neighbors}")
        if self.embedding_dim not in EMBEDDING_CHOICES:
            raise ValueError(f"embedding_dim must be one of {EMBEDDING_CHOICES}, "
                             f"got {self.embedding_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


# ---------------------------------------------------------------------------
# kNN graph

@njit(cache=True)
def _knn_select(gram, sq, row0, rows, k, out):
    """Exact k smallest squared distances per row via insertion selection.

    Distances are sq[row0+r] + sq[j] - 2 gram[r, j]; self is skipped.
    Strict comparisons make ties resolve to the lower index (candidates
    arrive in index order), and each row comes out sorted by
    (distance, index)."""
    n = sq.shape[0]
    bd = np.empty(k)
    bi = np.empty(k, np.int64)
    for r in range(rows):
        i = row0 + r
        cnt = 0
        for j in range(n):
            if j == i:
                continue
            val = sq[i] + sq[j] - 2.0 * gram[r, j]
            if cnt < k:
                p = cnt
                while p > 0 and bd[p - 1] > val:
                    bd[p] = bd[p - 1]
                    bi[p] = bi[p - 1]
                    p -= 1
                bd[p] = val
                bi[p] = j
                cnt += 1
            elif val < bd[k - 1]:
                p = k - 1
                while p > 0 and bd[p - 1] > val:
                    bd[p] = bd[p - 1]
                    bi[p] = bi[p - 1]
                    p -= 1
                bd[p] = val
                bi[p] = j
        for q in range(k):
            out[i, q] = bi[q]


_KNN_BLOCK = 128  # gram computed in cache-resident row blocks


def knn_graph(features: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors by squared Euclidean distance,
    self excluded, ordered by (distance, index) with ties to the lower index.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"knn_graph expects [batch, n, ch], got {f.shape}")
    B, n, _ = f.shape
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}, got {k}")
    out = np.empty((B, n, k), dtype=np.int64)
    gram = np.empty((min(_KNN_BLOCK, n), n))
    for b in range(B):
        x = np.ascontiguousarray(f[b])
        sq = np.einsum("ij,ij->i", x, x)
        xt = x.T
        for row0 in range(0, n, _KNN_BLOCK):
            rows = min(_KNN_BLOCK, n - row0)
            block = gram[:rows]
            np.matmul(x[row0:row0 + rows], xt, out=block)
            _knn_select(block, sq, row0, rows, k, out[b])
    return out


# ---------------------------------------------------------------------------
# numba kernels for the neighbor reductions

@njit(cache=True)
def _neighbor_sums(v, idx, s, s2):
    """s = sum of v over neighbors, s2 = sum of v^2 (for batch statistics)."""
    B, n, k = idx.shape
    ch = v.shape[2]
    for b in range(B):
        for i in range(n):
            for c in range(ch):
                s[b, i, c] = 0.0
                s2[b, i, c] = 0.0
            for jj in range(k):
                j = idx[b, i, jj]
                for c in range(ch):
                    val = v[b, j, c]
                    s[b, i, c] += val
                    s2[b, i, c] += val * val


@njit(cache=True)
def _neighbor_extreme(v, idx, want_max, m, jsel):
    """Per channel: max of v over neighbors where want_max, else min;
    first neighbor-slot occurrence wins on exact ties."""
    B, n, k = idx.shape
    ch = v.shape[2]
    for b in range(B):
        for i in range(n):
            j0 = idx[b, i, 0]
            for c in range(ch):
                m[b, i, c] = v[b, j0, c]
                jsel[b, i, c] = j0
            for jj in range(1, k):
                j = idx[b, i, jj]
                for c in range(ch):
                    val = v[b, j, c]
                    if want_max[c]:
                        if val > m[b, i, c]:
                            m[b, i, c] = val
                            jsel[b, i, c] = j
                    elif val < m[b, i, c]:
                        m[b, i, c] = val
                        jsel[b, i, c] = j


@njit(cache=True)
def _reverse_sums(u, idx, deg, rsum):
    B, n, k = idx.shape
    ch = u.shape[2]
    for b in range(B):
        for i in range(n):
            for jj in range(k):
                j = idx[b, i, jj]
                deg[b, j] += 1.0
                for c in range(ch):
                    rsum[b, j, c] += u[b, i, c]


@njit(cache=True)
def _scatter_selected(ga, alpha, jsel, dv):
    """dv[b, jsel, c] += alpha[c] * ga[b, i, c]."""
    B, n, ch = ga.shape
    for b in range(B):
        for i in range(n):
            for c in range(ch):
                dv[b, jsel[b, i, c], c] += alpha[c] * ga[b, i, c]


# ---------------------------------------------------------------------------
# edge convolution

class EdgeConv:
    """One freezable edge-convolution block (shared linear + batch norm +
    LeakyReLU + neighbor max). Running statistics follow the same freezing
    rules as BatchNorm."""

    def __init__(self, store: ParamStore, name: str, ch_in: int, ch_out: int,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.ch_in = ch_in
        self.ch_out = ch_out
        w = kaiming_uniform(2 * ch_in, ch_out, LEAKY_SLOPE, store.rng_for(name))
        self.w = store.add_param(f"{name}.w", w)
        self.b = store.add_param(f"{name}.b", np.zeros(ch_out))
        self.gamma = store.add_param(f"{name}.gamma", np.ones(ch_out))
        self.beta = store.add_param(f"{name}.beta", np.zeros(ch_out))
        self.store = store
        self.key_mean = f"{name}.running_mean"
        self.key_var = f"{name}.running_var"
        self.momentum = momentum
        self.eps = eps
        self.param_names = [f"{name}.{leaf}" for leaf in ("w", "b", "gamma", "beta")]

    def __call__(self, x: Tensor, idx: np.ndarray, train: bool) -> Tensor:
        B, n, ch_in = x.data.shape
        if ch_in != self.ch_in:
            raise ShapeError(f"edge conv expects {self.ch_in} input channels, got {ch_in}")
        if idx.ndim != 3 or idx.shape[:2] != (B, n):
            raise ShapeError(f"neighbor index shape {idx.shape} does not match "
                             f"input {x.data.shape}")
        if idx.min() < 0 or idx.max() >= n:
            raise ShapeError(f"neighbor index out of range [0, {n})")
        k = idx.shape[2]
        co = self.ch_out
        idx = np.ascontiguousarray(idx, dtype=np.int64)

        wc = self.w.data[:ch_in]
        wr = self.w.data[ch_in:]
        a_mat = wc - wr
        u = np.matmul(x.data, a_mat)
        u += self.b.data
        v = np.ascontiguousarray(np.matmul(x.data, wr))

        m_edges = B * n * k
        s = s2 = None
        if train:
            s = np.empty((B, n, co))
            s2 = np.empty((B, n, co))
            _neighbor_sums(v, idx, s, s2)
            bn = B * n
            mean = np.einsum("bnc->c", u) / bn + np.einsum("bnc->c", s) / m_edges
            e_z2 = (np.einsum("bnc,bnc->c", u, u) / bn
                    + 2.0 * np.einsum("bnc,bnc->c", u, s) / m_edges
                    + np.einsum("bnc->c", s2) / m_edges)
            var = np.maximum(e_z2 - mean * mean, 0.0)
            rm = self.store.buffers.get(self.key_mean)
            var_u = var * (m_edges / (m_edges - 1)) if m_edges > 1 else var
            if rm is None:
                self.store.buffers[self.key_mean] = mean
                self.store.buffers[self.key_var] = var_u
            elif self.gamma.requires_grad:
                mom = self.momentum
                self.store.buffers[self.key_mean] = (1 - mom) * rm + mom * mean
                self.store.buffers[self.key_var] = \
                    (1 - mom) * self.store.buffers[self.key_var] + mom * var_u
        else:
            mean = self.store.buffers.get(self.key_mean)
            var = self.store.buffers.get(self.key_var)
            if mean is None or var is None:
                raise UninitializedStatsError(
                    "eval-mode edge conv before any training statistics")

        sigma = np.sqrt(var + self.eps)
        alpha = self.gamma.data / sigma
        m_sel = np.empty((B, n, co))
        jsel = np.empty((B, n, co), dtype=np.int64)
        _neighbor_extreme(v, idx, alpha >= 0, m_sel, jsel)
        z_sel = u + m_sel
        pre = z_sel * alpha
        pre += self.beta.data - self.gamma.data * mean / sigma
        pos = pre > 0
        data = np.where(pos, pre, LEAKY_SLOPE * pre)

        x_t, w_t, b_t, gamma_t, beta_t = x, self.w, self.b, self.gamma, self.beta

        def run(g):
            ga = np.where(pos, 1.0, LEAKY_SLOPE)
            ga *= g
            zhat = z_sel  # consumed below; safe to overwrite in a one-shot graph
            zhat -= mean
            zhat /= sigma
            dgamma = np.einsum("bnc,bnc->c", ga, zhat)
            dbeta = np.einsum("bnc->c", ga)
            if gamma_t.requires_grad:
                gamma_t.accumulate_grad(dgamma)
            if beta_t.requires_grad:
                beta_t.accumulate_grad(dbeta)
            need_w = w_t.requires_grad or b_t.requires_grad
            if not (need_w or x_t.requires_grad):
                return
            dv = np.zeros_like(v)
            _scatter_selected(ga, alpha, jsel, dv)
            if train:
                g_bar = dbeta / m_edges
                h_bar = dgamma / m_edges
                deg = np.zeros((B, n))
                rsum = np.zeros_like(u)
                _reverse_sums(u, idx, deg, rsum)
                degc = deg[:, :, None]
                # dv -= alpha (g_bar deg + h_bar (rsum + deg (v - mean)) / sigma)
                vm = v
                vm -= mean
                vm *= degc
                rsum += vm
                rsum *= alpha * h_bar / sigma
                dv -= rsum
                dv -= degc * (alpha * g_bar)
                # du = alpha (ga - k g_bar - h_bar (k u + s - k mean) / sigma)
                du = u
                du *= k
                du += s
                du -= k * mean
                du *= h_bar / sigma
                np.subtract(ga, du, out=du)
                du -= k * g_bar
                du *= alpha
            else:
                du = ga
                du *= alpha
            if need_w:
                x2 = x_t.data.reshape(-1, ch_in)
                d_a = x2.T @ du.reshape(-1, co)
                d_wr = x2.T @ dv.reshape(-1, co)
                if w_t.requires_grad:
                    w_t.accumulate_grad(np.vstack([d_a, d_wr - d_a]))
                if b_t.requires_grad:
                    b_t.accumulate_grad(du.sum(axis=(0, 1)))
            if x_t.requires_grad:
                dx = np.matmul(du, a_mat.T)
                dx += np.matmul(dv, wr.T)
                x_t.accumulate_grad(dx, own=True)

        return _result(data, (x, self.w, self.b, self.gamma, self.beta),
                       "edge_conv", run)


# ---------------------------------------------------------------------------
# the regressor

class Dgcnn(RegressorBase):
    kind = "dgcnn"

    def __init__(self, config: DgcnnConfig, seed: int):
        super().__init__(seed)
        self.config = config
        store = self.store
        emb = config.embedding_dim

        chans = [3, *EDGE_CHANNELS]
        self.convs = []
        for li, (cin, cout) in enumerate(zip(chans[:-1], chans[1:]), start=1):
            conv = EdgeConv(store, f"edge{li}", cin, cout)
            self.convs.append(conv)
            self._register(f"edge{li}", conv.param_names, is_head=False)

        self.proj = Linear(store, "proj", sum(EDGE_CHANNELS), emb)
        self._register("proj", ["proj.w", "proj.b"], is_head=False)

        def head_stage(name, cin, cout, with_bn=True):
            lin = Linear(store, name, cin, cout, slope=LEAKY_SLOPE)
            names = [f"{name}.w", f"{name}.b"]
            bn = None
            if with_bn:
                bn = BatchNorm(store, name, cout)
                names += [f"{name}.gamma", f"{name}.beta"]
            self._register(name, names, is_head=True)
            return lin, bn

        self.head1 = head_stage("head1", 2 * emb, 256)
        self.head2 = head_stage("head2", 256, 64)
        self.head3 = head_stage("head3", 64, 1, with_bn=False)
        self.drop = Dropout(config.dropout_p)

    def config_values(self) -> dict:
        return {"k_neighbors": self.config.k_neighbors,
                "embedding_dim": self.config.embedding_dim,
                "dropout_p": self.config.dropout_p}

    def forward(self, clouds: np.ndarray, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        x = Tensor(self.check_input(clouds))
        k = self.config.k_neighbors
        feats = []
        f = x
        for conv in self.convs:
            idx = knn_graph(f.data, k)
            f = conv(f, idx, train)
            feats.append(f)
        h = self.proj(concat_last(feats))
        g = concat_last([pool_points(h, "max"), pool_points(h, "avg")])
        lin, bn = self.head1
        g = self.drop(bn(lin(g), train, activation="leaky"), train, rng)
        lin, bn = self.head2
        g = bn(lin(g), train, activation="leaky")
        lin, _ = self.head3
        out = reshape(lin(g), (g.data.shape[0],))
        mean, std = self.target_scaling
        return scale_shift(out, std, mean)
