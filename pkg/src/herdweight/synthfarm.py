"""Procedural farms: half-ellipsoid cows on a flat floor, rendered into the
same depth-CSV / camera-profile / manifest formats the pipeline consumes.

Rendering inverts the deprojection model exactly: for each pixel the ray
{Z * (x_n, y_n, 1)} is intersected with the cow's half-ellipsoid (a
quadratic in Z), so noise-free frames deproject onto the analytic surface
to float precision. Weight follows the half-ellipsoid volume times a
density coefficient plus cow-level noise. Domain shift between farms comes
from a camera-height offset and a shift of the body-size distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .depth_io import CameraProfile, DepthFrame, write_camera_profile, write_depth_file
from .errors import GenerationError
from .kvtext import read_kv_file, write_kv_file
from .seeds import derive_rng


@dataclass(frozen=True)
class FarmProfile:
    farm_id: str
    n_cows: int
    frames_per_cow: tuple[int, int]
    camera: CameraProfile
    length_range_mm: tuple[float, float]
    width_range_mm: tuple[float, float]
    height_range_mm: tuple[float, float]
    weight_coeff_kg_per_mm3: float
    weight_noise_kg: float
    depth_noise_mm: float
    pose_offset_mm: float = 150.0
    camera_height_offset_mm: float = 0.0
    size_shift_mm: float = 0.0

    def __post_init__(self):
        for name in ("length_range_mm", "width_range_mm", "height_range_mm",
                     "frames_per_cow"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValueError(f"{name} must be a positive range, got ({lo}, {hi})")
        if self.weight_noise_kg < 0 or self.depth_noise_mm < 0:
            raise ValueError("noise levels must be >= 0")

    def effective_camera(self) -> CameraProfile:
        cam = self.camera
        return replace(cam, h_camera_mm=cam.h_camera_mm + self.camera_height_offset_mm,
                       farm_id=self.farm_id)


@dataclass(frozen=True)
class CowParams:
    cow_id: str
    a_mm: float  # half body length
    b_mm: float  # half body width
    c_mm: float  # dorsal height
    weight_kg: float
    age_years: float


def half_ellipsoid_weight(a: float, b: float, c: float, coeff: float) -> float:
    """k * (4/3) pi a b c / 2."""
    return coeff * (4.0 / 3.0) * math.pi * a * b * c / 2.0


def sample_cow(profile: FarmProfile, index: int, master_seed: int) -> CowParams:
    rng = derive_rng(master_seed, profile.farm_id, f"cow{index:04d}", "params")
    shift = profile.size_shift_mm
    a = (rng.uniform(*profile.length_range_mm) + shift) / 2.0
    b = (rng.uniform(*profile.width_range_mm) + shift) / 2.0
    c = rng.uniform(*profile.height_range_mm) + shift
    weight = half_ellipsoid_weight(a, b, c, profile.weight_coeff_kg_per_mm3)
    weight += rng.normal(0.0, profile.weight_noise_kg)
    age = round(rng.uniform(2.0, 8.0), 1)
    return CowParams(f"cow{index:04d}", a, b, c, max(weight, 1.0), age)


def _check_in_view(cow: CowParams, x0: float, y0: float, theta: float,
                   cam: CameraProfile) -> None:
    """The apex and the mid-height body slice must project inside the image."""
    h = cam.h_camera_mm
    if cow.c_mm >= h:
        raise GenerationError(f"cow {cow.cow_id} taller than the camera height")
    ct, st = math.cos(theta), math.sin(theta)
    za = cow.c_mm
    zs = cow.c_mm / 2.0
    ring = math.sqrt(3.0) / 2.0
    probes = [(x0, y0, za)]
    for ex, ey in ((cow.a_mm * ring, 0.0), (-cow.a_mm * ring, 0.0),
                   (0.0, cow.b_mm * ring), (0.0, -cow.b_mm * ring)):
        probes.append((x0 + ex * ct - ey * st, y0 + ex * st + ey * ct, zs))
    for px, py, pz in probes:
        u = (px / pz) * cam.fx + cam.cx
        v = (py / pz) * cam.fy + cam.cy
        if not (0 <= u < cam.width and 0 <= v < cam.height):
            raise GenerationError(
                f"cow {cow.cow_id} leaves the field of view at pixel ({u:.0f}, {v:.0f})")


def generate_cow_frame(cow: CowParams, profile: FarmProfile, frame_id: str,
                       seed: int) -> tuple[DepthFrame, float]:
    """Render one depth frame of the cow in a random in-plane pose; returns
    the frame and the cow's true weight."""
    rng = np.random.default_rng(seed)
    cam = profile.effective_camera()
    theta = rng.uniform(0.0, math.pi)
    x0, y0 = rng.uniform(-profile.pose_offset_mm, profile.pose_offset_mm, size=2)
    _check_in_view(cow, x0, y0, theta, cam)

    xn = (np.arange(cam.width) - cam.cx) / cam.fx
    yn = (np.arange(cam.height) - cam.cy) / cam.fy
    ct, st = math.cos(theta), math.sin(theta)
    al = ct * xn[None, :] + st * yn[:, None]
    be = -st * xn[None, :] + ct * yn[:, None]
    p0 = ct * x0 + st * y0
    q0 = -st * x0 + ct * y0
    a2, b2, c2 = cow.a_mm ** 2, cow.b_mm ** 2, cow.c_mm ** 2

    qa = al * al / a2 + be * be / b2 + 1.0 / c2
    qb = -2.0 * (al * p0 / a2 + be * q0 / b2)
    qc = p0 * p0 / a2 + q0 * q0 / b2 - 1.0
    disc = qb * qb - 4.0 * qa * qc
    hit = disc >= 0.0
    z = np.zeros_like(qa)
    z[hit] = (-qb[hit] + np.sqrt(disc[hit])) / (2.0 * qa[hit])
    hit &= z > 0.0
    if not hit.any():
        raise GenerationError(f"cow {cow.cow_id} not visible under the camera")

    depth = np.where(hit, cam.h_camera_mm - z, cam.h_camera_mm)
    if profile.depth_noise_mm > 0:
        depth = depth + rng.normal(0.0, profile.depth_noise_mm, size=depth.shape)
    frame = DepthFrame(depth, profile.farm_id, cow.cow_id, frame_id)
    return frame, cow.weight_kg


def generate_farm(profile: FarmProfile, master_seed: int, out_dir: str | Path):
    """Write depth CSVs, the camera profile, and the manifest; returns the
    loaded manifest. Byte-identical for a fixed (profile, seed)."""
    from .experiments.manifest import load_manifest, write_manifest_rows

    out_dir = Path(out_dir)
    farm_dir = out_dir / profile.farm_id
    farm_dir.mkdir(parents=True, exist_ok=True)
    write_camera_profile(out_dir / f"{profile.farm_id}.camera", profile.effective_camera())

    rows = []
    lo, hi = profile.frames_per_cow
    for i in range(profile.n_cows):
        cow = sample_cow(profile, i, master_seed)
        n_frames = int(derive_rng(master_seed, profile.farm_id, cow.cow_id,
                                  "n_frames").integers(lo, hi + 1))
        for j in range(n_frames):
            frame_id = f"frame{j:02d}"
            seed = derive_rng(master_seed, profile.farm_id, cow.cow_id,
                              frame_id).integers(0, 2 ** 62)
            frame, weight = generate_cow_frame(cow, profile, frame_id, int(seed))
            rel = Path(profile.farm_id) / cow.cow_id / f"{frame_id}.csv"
            write_depth_file(out_dir / rel, frame)
            rows.append((cow.cow_id, profile.farm_id, weight, cow.age_years, str(rel)))
    manifest_path = out_dir / f"{profile.farm_id}_manifest.csv"
    write_manifest_rows(manifest_path, rows)
    return load_manifest(manifest_path)


_PROFILE_FIELDS = (
    ("farm_id", str), ("n_cows", int), ("frames_per_cow_min", int),
    ("frames_per_cow_max", int), ("length_range_mm", None),
    ("width_range_mm", None), ("height_range_mm", None),
    ("weight_coeff_kg_per_mm3", float), ("weight_noise_kg", float),
    ("depth_noise_mm", float), ("pose_offset_mm", float),
    ("camera_height_offset_mm", float), ("size_shift_mm", float),
)


def read_farm_profile(path: str | Path) -> FarmProfile:
    """Farm profile key-value file; camera intrinsics are inline with a
    `camera.` prefix."""
    values = dict(read_kv_file(path))

    def rng_pair(key):
        lo, hi = values[key].split(",")
        return float(lo), float(hi)

    camera = CameraProfile(
        fx=float(values["camera.fx"]), fy=float(values["camera.fy"]),
        cx=float(values["camera.cx"]), cy=float(values["camera.cy"]),
        width=int(values["camera.width"]), height=int(values["camera.height"]),
        h_camera_mm=float(values["camera.h_camera_mm"]), farm_id=values["farm_id"])
    return FarmProfile(
        farm_id=values["farm_id"],
        n_cows=int(values["n_cows"]),
        frames_per_cow=(int(values["frames_per_cow_min"]), int(values["frames_per_cow_max"])),
        camera=camera,
        length_range_mm=rng_pair("length_range_mm"),
        width_range_mm=rng_pair("width_range_mm"),
        height_range_mm=rng_pair("height_range_mm"),
        weight_coeff_kg_per_mm3=float(values["weight_coeff_kg_per_mm3"]),
        weight_noise_kg=float(values["weight_noise_kg"]),
        depth_noise_mm=float(values["depth_noise_mm"]),
        pose_offset_mm=float(values.get("pose_offset_mm", 150.0)),
        camera_height_offset_mm=float(values.get("camera_height_offset_mm", 0.0)),
        size_shift_mm=float(values.get("size_shift_mm", 0.0)))


def write_farm_profile(path: str | Path, profile: FarmProfile) -> None:
    cam = profile.camera
    pairs = [
        ("farm_id", profile.farm_id),
        ("n_cows", str(profile.n_cows)),
        ("frames_per_cow_min", str(profile.frames_per_cow[0])),
        ("frames_per_cow_max", str(profile.frames_per_cow[1])),
        ("length_range_mm", f"{profile.length_range_mm[0]!r},{profile.length_range_mm[1]!r}"),
        ("width_range_mm", f"{profile.width_range_mm[0]!r},{profile.width_range_mm[1]!r}"),
        ("height_range_mm", f"{profile.height_range_mm[0]!r},{profile.height_range_mm[1]!r}"),
        ("weight_coeff_kg_per_mm3", repr(profile.weight_coeff_kg_per_mm3)),
        ("weight_noise_kg", repr(profile.weight_noise_kg)),
        ("depth_noise_mm", repr(profile.depth_noise_mm)),
        ("pose_offset_mm", repr(profile.pose_offset_mm)),
        ("camera_height_offset_mm", repr(profile.camera_height_offset_mm)),
        ("size_shift_mm", repr(profile.size_shift_mm)),
        ("camera.fx", repr(cam.fx)), ("camera.fy", repr(cam.fy)),
        ("camera.cx", repr(cam.cx)), ("camera.cy", repr(cam.cy)),
        ("camera.width", str(cam.width)), ("camera.height", str(cam.height)),
        ("camera.h_camera_mm", repr(cam.h_camera_mm)),
    ]
    write_kv_file(path, pairs)


def demo_camera(farm_id: str, width: int = 128, height: int = 96) -> CameraProfile:
    """Wide-angle synthetic intrinsics so a full cow fits the small frame."""
    return CameraProfile(fx=width / 9.0, fy=width / 9.0, cx=width / 2.0,
                         cy=height / 2.0, width=width, height=height,
                         h_camera_mm=2520.0, farm_id=farm_id)
