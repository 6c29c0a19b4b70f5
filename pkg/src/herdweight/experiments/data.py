"""In-memory frame store: manifests -> standardized clouds, plus the
cow-level views training and evaluation consume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..depth_io import CameraProfile, clip_depth, deproject, read_depth_file
from ..errors import ManifestError
from ..pointcloud import STANDARD_POINTS, preprocess
from ..seeds import derive_seed
from .manifest import DatasetManifest


@dataclass(frozen=True)
class TrainData:
    """Frame-aligned arrays; cows are (farm_id, cow_id) pairs so multi-farm
    pools never collide."""

    clouds: np.ndarray        # [n, points, 3]
    weights: np.ndarray       # [n] kg
    cows: tuple[tuple[str, str], ...]
    farms: tuple[str, ...]

    @property
    def n_frames(self) -> int:
        return self.clouds.shape[0]

    def cow_weights(self) -> dict[tuple[str, str], float]:
        return dict(zip(self.cows, self.weights))


def concat_data(parts: list[TrainData]) -> TrainData:
    return TrainData(
        np.concatenate([p.clouds for p in parts]),
        np.concatenate([p.weights for p in parts]),
        tuple(c for p in parts for c in p.cows),
        tuple(f for p in parts for f in p.farms))


class FrameStore:
    """Preprocessed clouds for every manifest frame, keyed by farm.

    Standardization seeds derive from (master_seed, farm, cow, frame), so
    per-frame results are independent of processing order and of which
    experiment later consumes them.
    """

    def __init__(self, master_seed: int, target: int = STANDARD_POINTS):
        self.master_seed = master_seed
        self.target = target
        self.clouds: dict[str, np.ndarray] = {}
        self.frame_cows: dict[str, list[str]] = {}
        self.weights: dict[str, dict[str, float]] = {}

    def add_farm(self, manifest: DatasetManifest, camera: CameraProfile) -> None:
        farm = manifest.farm_id
        clouds = []
        cows = []
        weights = {}
        for rec in manifest.records:
            weights[rec.cow_id] = rec.body_weight_kg
            for path in rec.frame_paths:
                frame = read_depth_file(path, farm_id=farm, cow_id=rec.cow_id)
                cloud = deproject(clip_depth(frame), camera)
                seed = derive_seed(self.master_seed, farm, rec.cow_id,
                                   frame.frame_id, "standardize")
                cloud = preprocess(cloud, seed=seed, target=self.target)
                clouds.append(cloud.points)
                cows.append(rec.cow_id)
        self.clouds[farm] = np.stack(clouds)
        self.frame_cows[farm] = cows
        self.weights[farm] = weights

    def cow_ids(self, farm: str) -> tuple[str, ...]:
        return tuple(sorted(self.weights[farm]))

    def subset(self, farm: str, cow_ids) -> TrainData:
        """Frames of the given cows, in stored frame order."""
        wanted = set(cow_ids)
        unknown = wanted - set(self.weights[farm])
        if unknown:
            raise ManifestError(f"unknown cows for farm {farm!r}: {sorted(unknown)}")
        idx = [i for i, c in enumerate(self.frame_cows[farm]) if c in wanted]
        cows = tuple((farm, self.frame_cows[farm][i]) for i in idx)
        weights = np.array([self.weights[farm][c] for _, c in cows])
        return TrainData(self.clouds[farm][idx], weights, cows, (farm,) * len(idx))

    def whole_farm(self, farm: str) -> TrainData:
        return self.subset(farm, self.weights[farm].keys())


def aggregate_predictions(frame_cows, frame_preds, known_cows=None) -> dict:
    """Average frame-level predictions per cow; an unknown cow is an error."""
    preds: dict = {}
    known = None if known_cows is None else set(known_cows)
    for cow, value in zip(frame_cows, frame_preds):
        if known is not None and cow not in known:
            raise ManifestError(f"prediction for unknown cow {cow!r}")
        preds.setdefault(cow, []).append(float(value))
    return {cow: float(np.mean(vals)) for cow, vals in preds.items()}
