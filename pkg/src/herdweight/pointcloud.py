"""Point-cloud cleaning, unit-sphere normalization, and 1024-point
standardization.

Stages move strictly raw -> cleaned -> normalized -> standardized. The
standardization rule is a stride pass (step = floor(n/target) from index 0,
first `target` hits) when the cloud is large enough, otherwise the whole
cloud plus seeded uniform resampling with replacement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateCloudError, DepthFormatError, EmptyCloudError

STANDARD_POINTS = 1024
CLOUD_MAGIC = b"HWPC"
CLOUD_VERSION = 1

_STAGES = ("raw", "cleaned", "normalized", "standardized")


@dataclass(frozen=True)
class PointCloud:
    """Ordered (X, Y, Z) triples with identity and a processing-stage tag.

    Coordinates are millimeters through the cleaned stage and dimensionless
    once normalized.
    """

    points: np.ndarray  # (n, 3) float64
    stage: str
    farm_id: str
    cow_id: str
    frame_id: str

    def __post_init__(self):
        if self.stage not in _STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {self.points.shape}")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def ident(self) -> str:
        return f"{self.farm_id}/{self.cow_id}/{self.frame_id}"


def _require_stage(cloud: PointCloud, stage: str, op: str) -> None:
    if cloud.stage != stage:
        raise ContractError(f"{op} requires a {stage} cloud, got {cloud.stage!r} "
                            f"for {cloud.ident()}")


def clean(cloud: PointCloud) -> PointCloud:
    """Drop points with any non-finite coordinate, preserving order."""
    _require_stage(cloud, "raw", "clean")
    keep = np.all(np.isfinite(cloud.points), axis=1)
    pts = cloud.points[keep]
    if pts.shape[0] == 0:
        raise EmptyCloudError(f"no finite points left in {cloud.ident()}")
    return replace(cloud, points=pts, stage="cleaned")


def normalize(cloud: PointCloud) -> PointCloud:
    """Center at the centroid and scale by the maximum distance from it."""
    _require_stage(cloud, "cleaned", "normalize")
    if cloud.n_points < 1:
        raise EmptyCloudError(f"cannot normalize empty cloud {cloud.ident()}")
    centered = cloud.points - cloud.points.mean(axis=0)
    r = float(np.sqrt((centered * centered).sum(axis=1).max()))
    if r < 1e-9:
        raise DegenerateCloudError(f"all points coincide in {cloud.ident()}")
    scaled = centered / r
    # a final ulp guard keeps the max radius at exactly <= 1
    r2 = float(np.sqrt((scaled * scaled).sum(axis=1).max()))
    if r2 > 1.0:
        scaled /= r2
    return replace(cloud, points=scaled, stage="normalized")


def standardize(cloud: PointCloud, target: int = STANDARD_POINTS,
                seed: int = 0) -> PointCloud:
    """Resample to exactly `target` points, deterministically for a fixed
    (cloud, seed)."""
    _require_stage(cloud, "normalized", "standardize")
    if target <= 0:
        raise ValueError(f"target point count must be positive, got {target}")
    n = cloud.n_points
    rng = np.random.default_rng(seed)
    if n >= target:
        step = n // target
        idx = np.arange(0, n, step)[:target]
        if idx.size < target:  # unreachable for floor stride; keeps the rule total
            unselected = np.setdiff1d(np.arange(n), idx)
            extra = rng.choice(unselected, size=target - idx.size, replace=False)
            idx = np.concatenate([idx, extra])
    else:
        extra = rng.integers(0, n, size=target - n)
        idx = np.concatenate([np.arange(n), extra])
    return replace(cloud, points=cloud.points[idx], stage="standardized")


def preprocess(cloud: PointCloud, seed: int, target: int = STANDARD_POINTS) -> PointCloud:
    """clean -> normalize -> standardize."""
    return standardize(normalize(clean(cloud)), target=target, seed=seed)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_cloud(path: str | Path, cloud: PointCloud) -> None:
    """Header: magic, version, n_points, stage + identity strings; payload:
    n x 3 little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", CLOUD_MAGIC, CLOUD_VERSION, cloud.n_points))
        for s in (cloud.stage, cloud.farm_id, cloud.cow_id, cloud.frame_id):
            fh.write(_pack_str(s))
        fh.write(cloud.points.astype("<f8").tobytes())


def read_cloud(path: str | Path) -> PointCloud:
    with open(path, "rb") as fh:
        magic, version, n = struct.unpack("<4sHI", fh.read(10))
        if magic != CLOUD_MAGIC or version != CLOUD_VERSION:
            raise DepthFormatError(f"not a point-cloud file: {path}")
        fields = []
        for _ in range(4):
            (ln,) = struct.unpack("<H", fh.read(2))
            fields.append(fh.read(ln).decode("utf-8"))
        data = np.frombuffer(fh.read(n * 3 * 8), dtype="<f8").reshape(n, 3)
    stage, farm_id, cow_id, frame_id = fields
    return PointCloud(data.astype(np.float64), stage, farm_id, cow_id, frame_id)
