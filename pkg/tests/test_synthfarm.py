import math

import numpy as np
import pytest

from herdweight.depth_io import clip_depth, deproject, read_camera_profile
from herdweight.errors import GenerationError
from herdweight.experiments import load_manifest
from herdweight.pointcloud import clean
from herdweight.synthfarm import (CowParams, FarmProfile, demo_camera,
                                  generate_cow_frame, generate_farm,
                                  half_ellipsoid_weight, read_farm_profile,
                                  sample_cow, write_farm_profile)


def profile(**kw):
    base = dict(
        farm_id="test", n_cows=6, frames_per_cow=(2, 3),
        camera=demo_camera("test"),
        length_range_mm=(1800.0, 2800.0), width_range_mm=(600.0, 960.0),
        height_range_mm=(1200.0, 1300.0),
        weight_coeff_kg_per_mm3=5.2e-7, weight_noise_kg=15.0,
        depth_noise_mm=10.0, pose_offset_mm=150.0)
    base.update(kw)
    return FarmProfile(**base)


def quiet_cow(c=1250.0):
    return CowParams("cow0000", 1100.0, 400.0, c, 650.0, 4.0)


class TestRendering:
    def test_apex_depth_exact_when_centered(self):
        # cow centered at the nadir: the principal-point pixel sees the apex
        prof = profile(depth_noise_mm=0.0, pose_offset_mm=0.0)
        cam = prof.effective_camera()
        frame, weight = generate_cow_frame(quiet_cow(), prof, "f", seed=3)
        apex = frame.depth[int(cam.cy), int(cam.cx)]
        assert apex == pytest.approx(cam.h_camera_mm - 1250.0, abs=1e-9)
        assert weight == 650.0

    def test_floor_pixels_where_no_hit(self):
        prof = profile(depth_noise_mm=0.0, pose_offset_mm=0.0)
        cow = CowParams("c", 400.0, 150.0, 900.0, 300.0, 3.0)  # small cow
        frame, _ = generate_cow_frame(cow, prof, "f", seed=1)
        cam = prof.effective_camera()
        assert np.any(frame.depth == cam.h_camera_mm)

    def test_noise_free_frames_deproject_onto_ellipsoid(self):
        prof = profile(depth_noise_mm=0.0, pose_offset_mm=0.0)
        cam = prof.effective_camera()
        cow = quiet_cow()
        frame, _ = generate_cow_frame(cow, prof, "f", seed=5)
        cloud = clean(deproject(clip_depth(frame), cam))
        pts = cloud.points
        resid = (pts[:, 0] ** 2 / cow.a_mm ** 2 + pts[:, 1] ** 2 / cow.b_mm ** 2
                 + pts[:, 2] ** 2 / cow.c_mm ** 2) - 1.0
        # algebraic residual bounds geometric distance via the gradient norm:
        # |resid| * max_axis / 2 >= distance, so this is well under 1 mm
        assert np.abs(resid).max() * max(cow.a_mm, cow.b_mm, cow.c_mm) / 2 < 1.0

    def test_rotation_affects_render(self):
        prof = profile(depth_noise_mm=0.0, pose_offset_mm=140.0)
        a, _ = generate_cow_frame(quiet_cow(), prof, "f", seed=1)
        b, _ = generate_cow_frame(quiet_cow(), prof, "f", seed=2)
        assert not np.array_equal(a.depth, b.depth)

    def test_too_tall_cow_rejected(self):
        prof = profile()
        with pytest.raises(GenerationError):
            generate_cow_frame(CowParams("c", 1000, 400, 2600.0, 800, 4.0),
                               prof, "f", seed=0)

    def test_out_of_view_rejected(self):
        narrow = demo_camera("test", width=24, height=18)
        prof = profile(camera=narrow)
        with pytest.raises(GenerationError):
            generate_cow_frame(quiet_cow(), prof, "f", seed=0)


class TestWeightLaw:
    def test_half_ellipsoid_formula(self):
        w = half_ellipsoid_weight(1000.0, 400.0, 1250.0, 5.2e-7)
        assert w == pytest.approx(5.2e-7 * (4 / 3) * math.pi * 1000 * 400 * 1250 / 2)

    def test_ols_recovers_coefficient(self):
        prof = profile(n_cows=200)
        vols, weights = [], []
        for i in range(200):
            cow = sample_cow(prof, i, master_seed=11)
            vols.append((4 / 3) * math.pi * cow.a_mm * cow.b_mm * cow.c_mm / 2)
            weights.append(cow.weight_kg)
        vols = np.array(vols)
        weights = np.array(weights)
        k_hat = (vols * weights).sum() / (vols * vols).sum()
        assert abs(k_hat - prof.weight_coeff_kg_per_mm3) / prof.weight_coeff_kg_per_mm3 < 0.05

    def test_cow_sampling_deterministic(self):
        prof = profile()
        a = sample_cow(prof, 3, master_seed=5)
        b = sample_cow(prof, 3, master_seed=5)
        assert a == b
        c = sample_cow(prof, 3, master_seed=6)
        assert c != a


class TestGenerateFarm:
    def test_manifest_counts_and_layout(self, tmp_path):
        prof = profile(n_cows=6, frames_per_cow=(2, 4))
        manifest = generate_farm(prof, 9, tmp_path)
        assert len(manifest.records) == 6
        assert 12 <= manifest.n_frames <= 24
        for rec in manifest.records:
            for p in rec.frame_paths:
                assert p.exists()
                assert p.parent.parent.name == "test"
        assert (tmp_path / "test.camera").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        prof = profile(n_cows=3, frames_per_cow=(2, 2))
        generate_farm(prof, 4, tmp_path / "a")
        generate_farm(prof, 4, tmp_path / "b")
        files_a = sorted((tmp_path / "a").rglob("*.*"))
        files_b = sorted((tmp_path / "b").rglob("*.*"))
        assert [f.name for f in files_a] == [f.name for f in files_b]
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes(), fa.name

    def test_weight_correlates_with_rendered_area(self, tmp_path):
        prof = profile(n_cows=40, frames_per_cow=(2, 2))
        manifest = generate_farm(prof, 21, tmp_path)
        cam = read_camera_profile(tmp_path / "test.camera")
        from herdweight.depth_io import read_depth_file
        areas, weights = [], []
        for rec in manifest.records:
            counts = []
            for p in rec.frame_paths:
                depth = read_depth_file(p).depth
                counts.append((cam.h_camera_mm - depth > 50).sum())
            areas.append(np.mean(counts))
            weights.append(rec.body_weight_kg)
        r = np.corrcoef(areas, weights)[0, 1]
        assert r > 0.8

    def test_domain_shift_changes_camera_height(self, tmp_path):
        prof = profile(camera_height_offset_mm=480.0)
        generate_farm(profile(n_cows=1, frames_per_cow=(1, 1)), 1, tmp_path / "a")
        generate_farm(prof.__class__(**{**prof.__dict__, "n_cows": 1,
                                        "frames_per_cow": (1, 1)}), 1, tmp_path / "b")
        cam_a = read_camera_profile(tmp_path / "a" / "test.camera")
        cam_b = read_camera_profile(tmp_path / "b" / "test.camera")
        assert cam_b.h_camera_mm == cam_a.h_camera_mm + 480.0


class TestProfileFile:
    def test_roundtrip(self, tmp_path):
        prof = profile(size_shift_mm=-40.0, camera_height_offset_mm=120.0)
        path = tmp_path / "farm.profile"
        write_farm_profile(path, prof)
        back = read_farm_profile(path)
        assert back == prof

    def test_validation(self):
        with pytest.raises(ValueError):
            profile(length_range_mm=(500.0, 400.0))
        with pytest.raises(ValueError):
            profile(depth_noise_mm=-1.0)
