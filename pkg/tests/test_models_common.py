import numpy as np
import pytest

from herdweight.errors import CheckpointError, ContractError
from herdweight.models import (Dgcnn, DgcnnConfig, PointNet, PointNetConfig,
                               UNFREEZE_OPTIONS, build_model, load_checkpoint,
                               load_into, save_checkpoint)

RNG = np.random.default_rng(77)


def small_clouds(n=2):
    return RNG.normal(size=(n, 1024, 3)) * 0.4


def pointnet(seed=1, **kw):
    cfg = dict(embedding_dim=256, feature_tnet=False, dropout_p=0.2)
    cfg.update(kw)
    return PointNet(PointNetConfig(**cfg), seed)


def dgcnn(seed=1, **kw):
    cfg = dict(k_neighbors=15, embedding_dim=256, dropout_p=0.2)
    cfg.update(kw)
    return Dgcnn(DgcnnConfig(**cfg), seed)


class TestRegistry:
    def test_pointnet_layer_order(self):
        model = pointnet(feature_tnet=True)
        backbone = [e.name for e in model.backbone_layers()]
        assert backbone == ["input_tnet", "mlp1", "mlp2", "feature_tnet",
                            "mlp3", "mlp4"]
        assert [e.name for e in model.head_layers()] == ["head1", "head2", "head3"]

    def test_dgcnn_layer_order(self):
        model = dgcnn()
        assert [e.name for e in model.backbone_layers()] == \
            ["edge1", "edge2", "edge3", "proj"]

    def test_head_only_flags(self):
        model = dgcnn()
        model.set_trainable("head_only")
        assert model.trainable_layer_names() == ["head1", "head2", "head3"]

    def test_full_flags(self):
        model = pointnet()
        model.set_trainable("head_only")
        model.set_trainable("full")
        assert model.trainable_layer_names() == [e.name for e in model.registry]

    def test_dgcnn_last_two_is_edge3_plus_projection(self):
        model = dgcnn()
        model.set_trainable("head_plus_last_2")
        assert model.trainable_layer_names() == \
            ["edge3", "proj", "head1", "head2", "head3"]

    def test_unfreeze_depth_validated(self):
        model = dgcnn()
        with pytest.raises(ValueError):
            model.set_trainable("head_plus_last_9")
        with pytest.raises(ValueError):
            model.set_trainable("everything")

    def test_options_list_is_the_transfer_grid(self):
        assert UNFREEZE_OPTIONS == ("head_only", "head_plus_last_1",
                                    "head_plus_last_2", "head_plus_last_3", "full")


class TestParamCounts:
    @staticmethod
    def linear_params(cin, cout):
        return cin * cout + cout

    @staticmethod
    def bn_params(ch):
        return 2 * ch

    def tnet_params(self, d):
        total = 0
        cin = d
        for width in (32, 64, 128):
            total += self.linear_params(cin, width) + self.bn_params(width)
            cin = width
        total += self.linear_params(128, 64) + self.bn_params(64)
        total += self.linear_params(64, d * d)
        return total

    def test_pointnet_count_formula(self):
        for emb in (256, 512):
            for tnet in (False, True):
                model = pointnet(embedding_dim=emb, feature_tnet=tnet)
                expected = self.tnet_params(3)
                if tnet:
                    expected += self.tnet_params(128)
                for cin, cout in ((3, 64), (64, 128), (128, 256), (256, emb)):
                    expected += self.linear_params(cin, cout) + self.bn_params(cout)
                expected += self.linear_params(emb, 256) + self.bn_params(256)
                expected += self.linear_params(256, 128) + self.bn_params(128)
                expected += self.linear_params(128, 1)
                assert model.param_count() == expected

    def test_dgcnn_count_formula(self):
        for emb in (256, 512):
            model = dgcnn(embedding_dim=emb)
            expected = 0
            for cin, cout in ((3, 32), (32, 64), (64, 128)):
                expected += self.linear_params(2 * cin, cout) + self.bn_params(cout)
            expected += self.linear_params(224, emb)
            expected += self.linear_params(2 * emb, 256) + self.bn_params(256)
            expected += self.linear_params(256, 64) + self.bn_params(64)
            expected += self.linear_params(64, 1)
            assert model.param_count() == expected


class TestConfigValidation:
    def test_embedding_grid(self):
        with pytest.raises(ValueError):
            PointNetConfig(embedding_dim=300)
        with pytest.raises(ValueError):
            DgcnnConfig(embedding_dim=128)

    def test_k_grid(self):
        with pytest.raises(ValueError):
            DgcnnConfig(k_neighbors=10)

    def test_dropout_range(self):
        with pytest.raises(ValueError):
            PointNetConfig(dropout_p=1.0)

    def test_input_contract(self):
        model = pointnet()
        with pytest.raises(ContractError):
            model.forward(RNG.normal(size=(2, 512, 3)), train=False)
        with pytest.raises(ContractError):
            model.forward(RNG.normal(size=(2, 1024, 4)), train=False)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = dgcnn(seed=9)
        model.forward(small_clouds(), train=True, rng=np.random.default_rng(0))
        model.set_target_scaling(640.0, 95.0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, {"source_farms": "large", "epoch": "3"})
        back = load_checkpoint(path)
        assert back.kind == "dgcnn"
        assert back.config_values() == model.config_values()
        for name in model.store.params:
            assert np.array_equal(back.store.params[name].data,
                                  model.store.params[name].data)
        assert set(back.store.buffers) == set(model.store.buffers)
        for name in model.store.buffers:
            assert np.array_equal(back.store.buffers[name], model.store.buffers[name])
        assert back.target_scaling == (640.0, 95.0)

    def test_mismatched_config_rejected(self, tmp_path):
        model = pointnet(embedding_dim=256)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        other = pointnet(embedding_dim=512)
        with pytest.raises(CheckpointError):
            load_into(other, path)

    def test_mismatched_kind_rejected(self, tmp_path):
        model = pointnet()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(CheckpointError):
            load_into(dgcnn(), path)

    def test_checkpointed_model_trains_identically(self, tmp_path):
        from herdweight.engine import AdamW, Tensor, smooth_l1_loss

        def one_step(model):
            model.set_trainable("head_plus_last_1")
            opt = AdamW(model.store, lr=1e-3, weight_decay=1e-4)
            clouds = np.random.default_rng(3).normal(size=(4, 1024, 3)) * 0.3
            tgt = Tensor(np.random.default_rng(4).normal(size=4))
            out = model.forward(clouds, train=True, rng=np.random.default_rng(5))
            loss = smooth_l1_loss(out, tgt)
            loss.backward()
            opt.step()
            return {k: p.data.copy() for k, p in model.store.params.items()}

        src = pointnet(seed=11)
        src.forward(small_clouds(), train=True, rng=np.random.default_rng(1))
        path = tmp_path / "src.ckpt"
        save_checkpoint(src, path)
        a = one_step(load_checkpoint(path))
        b = one_step(load_checkpoint(path))
        for name in a:
            assert np.array_equal(a[name], b[name]), name

    def test_build_model_unknown_kind(self):
        with pytest.raises(ValueError):
            build_model("convnext", {}, 0)
