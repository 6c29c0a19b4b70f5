"""Depth-frame parsing, range conditioning, image export, and deprojection.

Depth frames arrive as plain-text comma-separated millimeter grids, one
image row per line, laid out `<farm>/<cow>/<frame>.csv`. Camera profiles
are key-value text files, one per farm. Deprojection follows the pin-hole
height model: a pixel's height above the floor is the camera height minus
its depth, and the 3D point is that height times the normalized ray
direction through the pixel.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import CalibrationError, ContractError, DepthFormatError
from .kvtext import read_kv_file, write_kv_file
from .pointcloud import PointCloud

DEPTH_CLIP_MM = 10_000.0
IMAGE_SIZE = 224
IMAGE_MAGIC = b"HWIT"
IMAGE_VERSION = 1


@dataclass(frozen=True)
class CameraProfile:
    """Per-farm intrinsics; focal lengths and principal point in pixels,
    camera height in millimeters."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    h_camera_mm: float
    farm_id: str

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        if self.h_camera_mm <= 0:
            raise ValueError(f"camera height must be positive, got {self.h_camera_mm}")


@dataclass(frozen=True)
class DepthFrame:
    """One captured depth grid; NaN marks a missing cell."""

    depth: np.ndarray  # (height, width) float64 millimeters
    farm_id: str
    cow_id: str
    frame_id: str

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def parse_depth_csv(text: str, farm_id: str = "", cow_id: str = "",
                    frame_id: str = "") -> DepthFrame:
    """Parse a comma-separated depth grid.

    Empty cells and non-finite tokens become missing; every line must have
    the same number of cells.
    """
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DepthFormatError("depth CSV has no rows")
    ncells = lines[0].count(",") + 1
    for lineno, line in enumerate(lines, start=1):
        if line.count(",") + 1 != ncells:
            raise DepthFormatError(
                f"ragged row at line {lineno}: expected {ncells} cells, "
                f"got {line.count(',') + 1}")
    try:
        grid = pd.read_csv(io.StringIO("\n".join(lines)), header=None,
                           dtype=np.float64, na_values=[""]).to_numpy()
    except ValueError as exc:
        raise DepthFormatError(f"non-numeric cell in depth CSV: {exc}") from exc
    grid[~np.isfinite(grid)] = np.nan
    return DepthFrame(grid, farm_id, cow_id, frame_id)


def read_depth_file(path: str | Path, farm_id: str | None = None,
                    cow_id: str | None = None, frame_id: str | None = None) -> DepthFrame:
    """Load `<farm>/<cow>/<frame>.csv`; identity falls back to path parts."""
    path = Path(path)
    if farm_id is None:
        farm_id = path.parent.parent.name
    if cow_id is None:
        cow_id = path.parent.name
    if frame_id is None:
        frame_id = path.stem
    return parse_depth_csv(path.read_text(encoding="utf-8"), farm_id, cow_id, frame_id)


def write_depth_file(path: str | Path, frame: DepthFrame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(frame.depth)
    df.to_csv(path, header=False, index=False, float_format="%.1f", na_rep="")


def clip_depth(frame: DepthFrame, lo: float = 0.0, hi: float = DEPTH_CLIP_MM) -> DepthFrame:
    """Clamp present values into [lo, hi]; missing cells stay missing."""
    if lo >= hi:
        raise ValueError(f"clip range is empty: lo={lo} >= hi={hi}")
    return replace(frame, depth=np.clip(frame.depth, lo, hi))


def _resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned separable bilinear resampling."""

    def axis_coords(src: int, dst: int) -> np.ndarray:
        if src == 1 or dst == 1:
            return np.zeros(dst)
        return np.arange(dst) * (src - 1) / (dst - 1)

    ys = axis_coords(grid.shape[0], out_h)
    xs = axis_coords(grid.shape[1], out_w)
    y0 = np.minimum(ys.astype(int), grid.shape[0] - 1)
    y1 = np.minimum(y0 + 1, grid.shape[0] - 1)
    x0 = np.minimum(xs.astype(int), grid.shape[1] - 1)
    x1 = np.minimum(x0 + 1, grid.shape[1] - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - wx) + grid[y0][:, x1] * wx
    bot = grid[y1][:, x0] * (1 - wx) + grid[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def export_image_tensor(frame: DepthFrame) -> np.ndarray:
    """Clipped depth -> [0,1] grayscale, 224x224, duplicated to 3 channels.

    The result feeds externally trained image backbones; the point-cloud
    models never consume it. Missing cells are imputed as 0 (far clip).
    """
    depth = frame.depth
    present = np.isfinite(depth)
    if np.any(depth[present] > DEPTH_CLIP_MM) or np.any(depth[present] < 0):
        raise ContractError("export_image_tensor requires a frame clipped to [0, 10000] mm")
    filled = np.where(present, depth, 0.0) / DEPTH_CLIP_MM
    resized = _resize_bilinear(filled, IMAGE_SIZE, IMAGE_SIZE)
    return np.repeat(resized[:, :, None], 3, axis=2)


def write_image_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Binary layout: 16-byte header (magic, version, channels, height,
    width), then row-major little-endian float32 values."""
    h, w, c = tensor.shape
    header = struct.pack("<4sHHII", IMAGE_MAGIC, IMAGE_VERSION, c, h, w)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tensor.astype("<f4").tobytes())


def read_image_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, version, c, h, w = struct.unpack("<4sHHII", fh.read(16))
        if magic != IMAGE_MAGIC or version != IMAGE_VERSION:
            raise DepthFormatError(f"not an image tensor file: {path}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(h, w, c).astype(np.float64)


def deproject(frame: DepthFrame, profile: CameraProfile) -> PointCloud:
    """Depth grid -> raw point cloud in row-major pixel order.

    Z = camera height - depth; pixels that are missing or at/below the
    floor (depth >= camera height) emit no point.
    """
    if frame.width != profile.width or frame.height != profile.height:
        raise CalibrationError(
            f"frame {frame.width}x{frame.height} does not match profile "
            f"{profile.width}x{profile.height} for farm {profile.farm_id!r}")
    depth = frame.depth
    z = profile.h_camera_mm - depth
    keep = np.isfinite(depth) & (z > 0)
    ys, xs = np.nonzero(keep)
    zk = z[ys, xs]
    xn = (xs - profile.cx) / profile.fx
    yn = (ys - profile.cy) / profile.fy
    points = np.column_stack([zk * xn, zk * yn, zk])
    return PointCloud(points, "raw", frame.farm_id, frame.cow_id, frame.frame_id)


_PROFILE_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "h_camera_mm", "farm_id")


def read_camera_profile(path: str | Path) -> CameraProfile:
    values = dict(read_kv_file(path))
    missing = [k for k in _PROFILE_KEYS if k not in values]
    if missing:
        raise CalibrationError(f"camera profile {path} missing keys: {', '.join(missing)}")
    return CameraProfile(
        fx=float(values["fx"]), fy=float(values["fy"]),
        cx=float(values["cx"]), cy=float(values["cy"]),
        width=int(values["width"]), height=int(values["height"]),
        h_camera_mm=float(values["h_camera_mm"]), farm_id=values["farm_id"])


def write_camera_profile(path: str | Path, profile: CameraProfile) -> None:
    write_kv_file(path, [
        ("fx", repr(profile.fx)), ("fy", repr(profile.fy)),
        ("cx", repr(profile.cx)), ("cy", repr(profile.cy)),
        ("width", str(profile.width)), ("height", str(profile.height)),
        ("h_camera_mm", repr(profile.h_camera_mm)), ("farm_id", profile.farm_id)])


# Installed RealSense D455 calibrations; camera heights stored in mm.
TABLE_PROFILES = {
    "large": CameraProfile(388.48, 388.48, 326.86, 240.69, 640, 480, 2520.0, "large"),
    "medium": CameraProfile(386.19, 385.79, 326.81, 246.99, 640, 480, 3050.0, "medium"),
    "small": CameraProfile(385.04, 384.57, 329.22, 241.01, 640, 480, 3000.0, "small"),
}
