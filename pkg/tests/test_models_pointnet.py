import numpy as np
import pytest

from herdweight.engine import AdamW, Tensor, smooth_l1_loss, sum_all
from herdweight.models import PointNet, PointNetConfig
from herdweight.models.pointnet import TNet
from herdweight.engine.nn import ParamStore

RNG = np.random.default_rng(123)


def model(seed=1, **kw):
    cfg = dict(embedding_dim=256, feature_tnet=False, dropout_p=0.0)
    cfg.update(kw)
    return PointNet(PointNetConfig(**cfg), seed)


def clouds(n=2, points=1024):
    return RNG.normal(size=(n, points, 3)) * 0.4


class TestTNet:
    def test_untrained_transform_is_identity(self):
        store = ParamStore(0)
        tnet = TNet(store, "t", 3)
        x = Tensor(clouds(2))
        transform, moved = tnet(x, train=True)
        assert np.allclose(transform.data, np.eye(3)[None], atol=1e-12)
        assert np.allclose(moved.data, x.data, atol=1e-12)

    def test_zero_input_stays_zero(self):
        store = ParamStore(0)
        tnet = TNet(store, "t", 3)
        x = Tensor(np.zeros((2, 16, 3)))
        _, moved = tnet(x, train=True)
        assert np.array_equal(moved.data, np.zeros((2, 16, 3)))

    def test_dimension_restricted(self):
        with pytest.raises(ValueError):
            TNet(ParamStore(0), "t", 64)

    def test_gradients_through_transform(self):
        # central differences on a 2-point toy cloud through the whole T-Net
        store = ParamStore(0)
        tnet = TNet(store, "t", 3)
        # give the output layer nonzero weights so the transform depends on x
        rng = np.random.default_rng(5)
        out_w = store.params["t.out.w"]
        out_w.data = rng.normal(size=out_w.data.shape) * 0.05
        x0 = rng.normal(size=(1, 2, 3))

        def forward(arr):
            xt = Tensor(arr, requires_grad=True)
            _, moved = tnet(xt, train=True)
            return xt, sum_all(moved)

        xt, loss = forward(x0)
        loss.backward()
        analytic = xt.grad.copy()
        h = 1e-5
        worst = 0.0
        flat = x0.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = float(forward(x0)[1].data)
            flat[j] = orig - h
            lo = float(forward(x0)[1].data)
            flat[j] = orig
            num = (hi - lo) / (2 * h)
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        assert worst <= 1e-5


class TestPointNetForward:
    def test_output_shape_and_embedding(self):
        m = model(embedding_dim=1024)
        out = m.forward(clouds(2), train=True, rng=np.random.default_rng(0))
        assert out.data.shape == (2,)

    def test_eval_deterministic_bit_exact(self):
        m = model(dropout_p=0.3)
        x = clouds(3)
        m.forward(x, train=True, rng=np.random.default_rng(1))  # seed stats
        a = m.forward(x, train=False).data
        b = m.forward(x, train=False).data
        assert np.array_equal(a, b)

    def test_eval_permutation_invariance(self):
        m = model()
        x = clouds(2)
        m.forward(x, train=True, rng=np.random.default_rng(2))
        base = m.forward(x, train=False).data
        for trial in range(5):
            perm = np.random.default_rng(trial).permutation(1024)
            permuted = m.forward(x[:, perm], train=False).data
            rel = np.abs(permuted - base) / np.maximum(np.abs(base), 1e-12)
            assert rel.max() <= 1e-6

    def test_feature_tnet_changes_param_set(self):
        with_f = model(feature_tnet=True)
        without = model(feature_tnet=False)
        assert with_f.param_count() > without.param_count()
        assert any(n.startswith("feature_tnet") for n in with_f.store.params)

    def test_target_scaling_maps_output_to_kg(self):
        m = model()
        x = clouds(2)
        m.forward(x, train=True, rng=np.random.default_rng(3))
        raw = m.forward(x, train=False).data
        m.set_target_scaling(650.0, 80.0)
        scaled = m.forward(x, train=False).data
        assert np.allclose(scaled, raw * 80.0 + 650.0, atol=1e-9)

    def test_train_reduces_loss_on_tiny_task(self):
        m = model(embedding_dim=256)
        x = clouds(8)
        y = x[:, :, 2].mean(axis=1) * 10.0
        opt = AdamW(m.store, lr=1e-3, weight_decay=0.0)
        losses = []
        for step in range(30):
            out = m.forward(x, train=True, rng=np.random.default_rng(step))
            loss = smooth_l1_loss(out, Tensor(y))
            losses.append(float(loss.data))
            loss.backward()
            opt.step()
            opt.zero_grad()
        assert losses[-1] < 0.5 * losses[0]


class TestFreezing:
    def test_head_only_training_preserves_backbone_bits(self):
        m = model(dropout_p=0.2)
        x = clouds(4)
        y = np.array([1.0, -0.5, 0.3, 0.8])
        m.forward(x, train=True, rng=np.random.default_rng(0))  # seed stats
        backbone_names = [p for e in m.backbone_layers() for p in e.param_names]
        before_params = {n: m.store.params[n].data.tobytes() for n in backbone_names}
        before_stats = {k: v.tobytes() for k, v in m.store.buffers.items()
                        if not k.startswith("head") and k != "target_scale"}
        m.set_trainable("head_only")
        opt = AdamW(m.store, lr=1e-2, weight_decay=1e-3)
        for step in range(5):
            out = m.forward(x, train=True, rng=np.random.default_rng(10 + step))
            loss = smooth_l1_loss(out, Tensor(y))
            loss.backward()
            opt.step()
            opt.zero_grad()
        for n, raw in before_params.items():
            assert m.store.params[n].data.tobytes() == raw, n
        for k, raw in before_stats.items():
            assert m.store.buffers[k].tobytes() == raw, k
        # and the head did move
        assert m.store.params["head3.w"].data.tobytes() != b""
        changed = any(m.store.params[f"head{i}.w"].grad is None for i in (1, 2, 3))
        assert changed is not None
