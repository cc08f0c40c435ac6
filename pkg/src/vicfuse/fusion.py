"""Fusion pipelines: single-view baselines, late fusion, early fusion, and
time-compensated late fusion (TCLF).

Late fusion converts infrastructure detections into the vehicle LiDAR
frame and merges them with the vehicle detections through a distance-gated
Hungarian matcher. TCLF first estimates per-object velocities from the two
most recent infrastructure frames, advances each infrastructure box
linearly to the vehicle timestamp, then runs the same merge. Yaw and size
are never compensated, only position.

Each pipeline also reports the bytes the infrastructure would have
transmitted; nothing ever flows vehicle -> infrastructure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    InsufficientHistory,
    MissingCloud,
    MissingDetections,
    NonPositiveDt,
)
from .frames import (
    Detection,
    Frame,
    WirePayload,
    LEVEL_OBJECTS,
    encode_cloud,
    encode_objects,
)
from .geometry import BBox3D, PointCloud, compose, inverse, transform_box, transform_points
from .matching import match_with_threshold
from .pairing import FramePair

SCORE_KEEP_VEHICLE = "keep_vehicle"
SCORE_KEEP_HIGHER = "keep_higher_score"
FALLBACK_ZERO = "zero"
FALLBACK_SCENE_MEAN = "scene_mean"

PROVENANCE_MATCHED = "matched"
PROVENANCE_FALLBACK = "fallback"


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of the merge step.

    match_dist gates both the duplicate merge and the cross-frame matching
    used for velocity estimation, so scenarios should keep per-interval
    object displacement below it for compensation to engage.
    """

    match_dist: float = 1.0
    score_rule: str = SCORE_KEEP_VEHICLE
    velocity_fallback: str = FALLBACK_ZERO
    class_constrained: bool = True

    def __post_init__(self):
        if self.match_dist <= 0.0:
            raise ValueError(f"match_dist must be positive, got {self.match_dist}")
        if self.score_rule not in (SCORE_KEEP_VEHICLE, SCORE_KEEP_HIGHER):
            raise ValueError(f"unknown score_rule {self.score_rule!r}")
        if self.velocity_fallback not in (FALLBACK_ZERO, FALLBACK_SCENE_MEAN):
            raise ValueError(
                f"unknown velocity_fallback {self.velocity_fallback!r}"
            )


@dataclass(frozen=True)
class VelocityEstimate:
    """Per-box BEV velocities for the newer frame's detections."""

    velocities: np.ndarray  # (n, 2) m/s
    provenance: tuple[str, ...]  # matched | fallback per detection


def relative_pose(pair: FramePair):
    """Pose mapping infrastructure LiDAR coordinates into the vehicle frame."""
    return compose(inverse(pair.vehicle.pose), pair.infrastructure.pose)


def _require_detections(frame: Frame, side: str) -> tuple[Detection, ...]:
    if frame.detections is None:
        raise MissingDetections(f"{side} frame carries no detections")
    return frame.detections


def veh_only(pair: FramePair) -> list[Detection]:
    """Vehicle detections, untouched."""
    return list(_require_detections(pair.vehicle, "vehicle"))


def inf_only(pair: FramePair) -> list[Detection]:
    """Infrastructure detections converted into the vehicle frame."""
    dets = _require_detections(pair.infrastructure, "infrastructure")
    rel = relative_pose(pair)
    return [replace(d, box=transform_box(rel, d.box)) for d in dets]


def _match_detections(a, b, cfg: FusionConfig):
    """Gated matching of two detection lists, optionally class-partitioned.

    Returns (row, col) index pairs into the original lists.
    """
    if not cfg.class_constrained:
        assignment = match_with_threshold(
            [d.box for d in a], [d.box for d in b], cfg.match_dist
        )
        return list(assignment.pairs)
    pairs = []
    classes = sorted({d.class_id for d in a} & {d.class_id for d in b})
    for cls in classes:
        ia = [i for i, d in enumerate(a) if d.class_id == cls]
        ib = [j for j, d in enumerate(b) if d.class_id == cls]
        assignment = match_with_threshold(
            [a[i].box for i in ia], [b[j].box for j in ib], cfg.match_dist
        )
        pairs.extend((ia[r], ib[c]) for r, c in assignment.pairs)
    return pairs


def _merge(veh_dets, inf_dets, cfg: FusionConfig) -> list[Detection]:
    """Merge vehicle detections with infrastructure detections already in
    the vehicle frame: one box per matched pair, everything else kept."""
    matched = dict(_match_detections(veh_dets, inf_dets, cfg))
    taken = set(matched.values())
    fused = []
    for i, det in enumerate(veh_dets):
        j = matched.get(i)
        if j is not None and cfg.score_rule == SCORE_KEEP_HIGHER:
            other = inf_dets[j]
            fused.append(other if other.score > det.score else det)
        else:
            fused.append(det)
    fused.extend(d for j, d in enumerate(inf_dets) if j not in taken)
    return fused


def late_fuse(
    pair: FramePair, cfg: FusionConfig = FusionConfig()
) -> tuple[list[Detection], WirePayload]:
    """Object-level fusion; the payload is what the infrastructure sent."""
    veh_dets = list(_require_detections(pair.vehicle, "vehicle"))
    inf_dets = _require_detections(pair.infrastructure, "infrastructure")
    rel = relative_pose(pair)
    converted = [replace(d, box=transform_box(rel, d.box)) for d in inf_dets]
    return _merge(veh_dets, converted, cfg), encode_objects(inf_dets)


def early_fuse(pair: FramePair) -> tuple[PointCloud, WirePayload]:
    """Point-cloud fusion: infrastructure cloud converted and appended."""
    if pair.vehicle.cloud is None:
        raise MissingCloud("vehicle frame carries no point cloud")
    if pair.infrastructure.cloud is None:
        raise MissingCloud("infrastructure frame carries no point cloud")
    rel = relative_pose(pair)
    moved = transform_points(rel, pair.infrastructure.cloud)
    veh = pair.vehicle.cloud
    points = np.concatenate([veh.points, moved.points])
    if veh.intensity is None and moved.intensity is None:
        intensity = None
    else:
        intensity = np.concatenate(
            [
                veh.intensity if veh.intensity is not None else np.zeros(len(veh)),
                moved.intensity if moved.intensity is not None else np.zeros(len(moved)),
            ]
        )
    return PointCloud(points, intensity), encode_cloud(pair.infrastructure.cloud)


def estimate_velocities(
    newer: Frame, older: Frame, cfg: FusionConfig = FusionConfig()
) -> VelocityEstimate:
    """BEV velocities for the newer frame's detections.

    Detections are matched across the two frames; matched boxes get the
    finite difference of their centers, unmatched ones the configured
    fallback (zero, or the mean velocity of matched same-class boxes).
    """
    dt = newer.timestamp - older.timestamp
    if dt <= 0.0:
        raise NonPositiveDt(f"frames must be time-ordered, dt = {dt}")
    new_dets = _require_detections(newer, "newer")
    old_dets = _require_detections(older, "older")
    velocities = np.zeros((len(new_dets), 2))
    provenance = [PROVENANCE_FALLBACK] * len(new_dets)
    matched = _match_detections(list(new_dets), list(old_dets), cfg)
    for i, j in matched:
        delta = new_dets[i].box.center[:2] - old_dets[j].box.center[:2]
        velocities[i] = delta / dt
        provenance[i] = PROVENANCE_MATCHED
    if cfg.velocity_fallback == FALLBACK_SCENE_MEAN:
        by_class: dict[int, list[np.ndarray]] = {}
        for i, j in matched:
            by_class.setdefault(new_dets[i].class_id, []).append(velocities[i])
        for i, det in enumerate(new_dets):
            if provenance[i] == PROVENANCE_FALLBACK and det.class_id in by_class:
                velocities[i] = np.mean(by_class[det.class_id], axis=0)
    return VelocityEstimate(velocities, tuple(provenance))


def compensate_infrastructure(
    pair: FramePair, cfg: FusionConfig = FusionConfig()
) -> list[Detection]:
    """Infrastructure detections advanced to the vehicle timestamp.

    Velocities come from the pair's infrastructure frame and its most
    recent history frame; each box moves by v * delta_t in the
    infrastructure frame. delta_t = 0 returns the detections unchanged.
    """
    if not pair.inf_history:
        raise InsufficientHistory(
            "time compensation needs at least one earlier infrastructure frame"
        )
    estimate = estimate_velocities(pair.infrastructure, pair.inf_history[0], cfg)
    dets = list(pair.infrastructure.detections)
    if pair.delta_t == 0.0:
        return dets
    compensated = []
    for det, v in zip(dets, estimate.velocities):
        center = det.box.center + np.array([v[0] * pair.delta_t, v[1] * pair.delta_t, 0.0])
        compensated.append(
            replace(det, box=BBox3D(center, det.box.size, det.box.yaw))
        )
    return compensated


def tclf(
    pair: FramePair, cfg: FusionConfig = FusionConfig()
) -> tuple[list[Detection], WirePayload]:
    """Time-compensated late fusion.

    The payload charges both transmissions the scheme needs: the
    compensated detections and the previous infrastructure frame's
    detections. The two framed messages are concatenated; only the total
    length feeds the byte accounting.
    """
    veh_dets = list(_require_detections(pair.vehicle, "vehicle"))
    compensated = compensate_infrastructure(pair, cfg)
    previous = _require_detections(pair.inf_history[0], "previous infrastructure")
    rel = relative_pose(pair)
    converted = [replace(d, box=transform_box(rel, d.box)) for d in compensated]
    fused = _merge(veh_dets, converted, cfg)
    payload = WirePayload(
        LEVEL_OBJECTS,
        encode_objects(compensated).data + encode_objects(previous).data,
    )
    return fused, payload
