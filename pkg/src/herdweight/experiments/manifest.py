"""Dataset manifests: one CSV row per frame, grouped into per-cow records."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from ..errors import ManifestError

HEADER = "cow_id,farm_id,body_weight_kg,age_years,frame_path"


@dataclass(frozen=True)
class CowRecord:
    cow_id: str
    farm_id: str
    body_weight_kg: float
    age_years: float
    frame_paths: tuple[Path, ...]


@dataclass(frozen=True)
class DatasetManifest:
    farm_id: str
    records: tuple[CowRecord, ...]
    base_dir: Path

    @property
    def cow_ids(self) -> tuple[str, ...]:
        return tuple(r.cow_id for r in self.records)

    @property
    def n_frames(self) -> int:
        return sum(len(r.frame_paths) for r in self.records)

    def record(self, cow_id: str) -> CowRecord:
        for r in self.records:
            if r.cow_id == cow_id:
                return r
        raise ManifestError(f"unknown cow {cow_id!r} in farm {self.farm_id!r}")


def write_manifest_rows(path: str | Path, rows) -> None:
    """rows: iterable of (cow_id, farm_id, weight_kg, age_years, frame_path)."""
    path = Path(path)
    lines = [HEADER]
    for cow_id, farm_id, weight, age, frame_path in rows:
        lines.append(f"{cow_id},{farm_id},{weight!r},{age!r},{frame_path}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate; relative frame paths resolve against the manifest
    directory, and every referenced file must exist."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"cow_id": str, "farm_id": str})
    except Exception as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    expected = HEADER.split(",")
    if list(df.columns) != expected:
        raise ManifestError(f"manifest {path} columns {list(df.columns)} != {expected}")
    if len(df) == 0:
        raise ManifestError(f"manifest {path} has no rows")
    farms = df["farm_id"].unique()
    if len(farms) != 1:
        raise ManifestError(f"manifest {path} mixes farms {sorted(farms)}")
    base = path.parent
    records = []
    for cow_id, group in df.groupby("cow_id", sort=True):
        weights = group["body_weight_kg"].unique()
        ages = group["age_years"].unique()
        if len(weights) != 1 or len(ages) != 1:
            raise ManifestError(f"cow {cow_id} has conflicting weight/age rows")
        weight = float(weights[0])
        if weight <= 0:
            raise ManifestError(f"cow {cow_id} has nonpositive weight {weight}")
        paths = []
        for rel in group["frame_path"]:
            frame_path = base / rel
            if not frame_path.exists():
                raise ManifestError(f"frame file missing: {frame_path}")
            paths.append(frame_path)
        records.append(CowRecord(str(cow_id), str(farms[0]), weight,
                                 float(ages[0]), tuple(paths)))
    return DatasetManifest(str(farms[0]), tuple(records), base)
