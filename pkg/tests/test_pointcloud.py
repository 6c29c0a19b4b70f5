import numpy as np
import pytest

from herdweight.errors import (ContractError, DegenerateCloudError,
                               EmptyCloudError)
from herdweight.pointcloud import (PointCloud, clean, normalize, preprocess,
                                   read_cloud, standardize, write_cloud)


def cloud(points, stage="raw"):
    return PointCloud(np.asarray(points, dtype=np.float64), stage, "f", "c", "x")


def random_cloud(rng, n, stage="cleaned", scale=100.0):
    return cloud(rng.normal(size=(n, 3)) * scale, stage)


class TestClean:
    def test_drops_non_finite(self):
        out = clean(cloud([[1, 2, 3], [np.nan, 0, 0], [4, 5, 6]]))
        assert np.array_equal(out.points, [[1, 2, 3], [4, 5, 6]])
        assert out.stage == "cleaned"

    def test_finite_cloud_unchanged(self):
        pts = [[1, 2, 3], [4, 5, 6]]
        out = clean(cloud(pts))
        assert np.array_equal(out.points, pts)

    def test_all_nan_errors_with_identity(self):
        with pytest.raises(EmptyCloudError, match="f/c/x"):
            clean(cloud(np.full((4, 3), np.nan)))

    def test_inf_also_removed(self):
        out = clean(cloud([[np.inf, 0, 0], [1, 1, 1]]))
        assert out.n_points == 1

    def test_requires_raw_stage(self):
        with pytest.raises(ContractError):
            clean(cloud([[1, 2, 3]], stage="cleaned"))


class TestNormalize:
    def test_hand_example(self):
        # centroid (1,0,0), max radius 1
        out = normalize(cloud([[0, 0, 0], [2, 0, 0]], stage="cleaned"))
        assert np.allclose(out.points, [[-1, 0, 0], [1, 0, 0]])
        assert out.stage == "normalized"

    def test_fixed_point(self):
        pts = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
        out = normalize(cloud(pts, stage="cleaned"))
        assert np.allclose(out.points, pts, atol=1e-12)

    def test_degenerate_cloud(self):
        with pytest.raises(DegenerateCloudError):
            normalize(cloud(np.full((1024, 3), 5.0), stage="cleaned"))

    def test_postconditions_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = normalize(random_cloud(rng, int(rng.integers(2, 200))))
            centroid = out.points.mean(axis=0)
            radii = np.linalg.norm(out.points, axis=1)
            assert np.linalg.norm(centroid) <= 1e-9
            assert 1 - 1e-9 <= radii.max() <= 1.0

    def test_translation_and_scale_invariance(self):
        rng = np.random.default_rng(1)
        base = random_cloud(rng, 64)
        ref = normalize(base).points
        for _ in range(10):
            a = rng.uniform(0.1, 50.0)
            t = rng.normal(size=3) * 1000
            moved = cloud(base.points * a + t, stage="cleaned")
            assert np.allclose(normalize(moved).points, ref, atol=1e-9)


class TestStandardize:
    def test_stride_2048(self):
        # oracle: stride 2 from index 0 gives exactly the even indices
        pts = np.arange(2048 * 3, dtype=np.float64).reshape(2048, 3)
        out = standardize(cloud(pts, stage="normalized"), target=1024, seed=0)
        assert np.array_equal(out.points, pts[np.arange(0, 2048, 2)])
        assert out.stage == "standardized"

    def test_identity_at_target(self):
        pts = np.random.default_rng(2).normal(size=(1024, 3))
        out = standardize(cloud(pts, stage="normalized"), seed=9)
        assert np.array_equal(out.points, pts)

    def test_upsample_keeps_all_and_duplicates(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(500, 3))
        out = standardize(cloud(pts, stage="normalized"), target=1024, seed=7)
        assert out.n_points == 1024
        assert np.array_equal(out.points[:500], pts)
        # duplicates all come from the original points
        orig = {tuple(p) for p in pts}
        assert all(tuple(p) in orig for p in out.points[500:])
        again = standardize(cloud(pts, stage="normalized"), target=1024, seed=7)
        assert np.array_equal(out.points, again.points)

    def test_seed_changes_fill(self):
        pts = np.random.default_rng(4).normal(size=(10, 3))
        a = standardize(cloud(pts, stage="normalized"), target=32, seed=1)
        b = standardize(cloud(pts, stage="normalized"), target=32, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_downsample_unique_coverage(self):
        rng = np.random.default_rng(5)
        for n in (1024, 1030, 1500, 2047, 2049, 5000):
            pts = np.arange(n, dtype=np.float64)[:, None].repeat(3, axis=1)
            out = standardize(cloud(pts, stage="normalized"), seed=0)
            ids = out.points[:, 0].astype(int)
            assert len(set(ids)) == 1024
            assert ids.max() < n
            step = n // 1024
            assert np.array_equal(ids, np.arange(0, n, step)[:1024])

    def test_bad_target(self):
        with pytest.raises(ValueError):
            standardize(cloud([[1, 2, 3]], stage="normalized"), target=0)

    def test_stage_contract(self):
        with pytest.raises(ContractError):
            standardize(cloud([[1, 2, 3]], stage="cleaned"))


class TestPersistence:
    def test_binary_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        src = preprocess(cloud(rng.normal(size=(1500, 3)) * 800), seed=11)
        path = tmp_path / "c.pcb"
        write_cloud(path, src)
        back = read_cloud(path)
        assert back.stage == src.stage
        assert (back.farm_id, back.cow_id, back.frame_id) == ("f", "c", "x")
        assert np.array_equal(back.points, src.points)

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "bogus.pcb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        from herdweight.errors import DepthFormatError
        with pytest.raises(DepthFormatError):
            read_cloud(path)
