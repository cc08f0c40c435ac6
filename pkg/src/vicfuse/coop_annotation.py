"""Cooperative ground truth from a synchronous pair.

Infrastructure annotations are converted into the vehicle LiDAR frame and
unioned with the vehicle annotations. An infrastructure box that matches a
vehicle box of the same class within dup_dist (BEV center distance) is a
duplicate observation of the same object and is discarded; the vehicle
label always wins unmodified. Matches or near-misses within 20% of the
gate are collected for human review instead of the manual adjustment pass
a labeling crew would run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import MissingAnnotations, NotSynchronous
from .frames import Detection, Frame
from .geometry import compose, inverse, transform_box
from .matching import cost_matrix, match_with_threshold
from .pairing import SYNC_THRESHOLD, FramePair, SyncClass, classify_sync

DEFAULT_DUP_DIST = 1.0
_AUDIT_BAND = 0.2


@dataclass(frozen=True)
class AuditEntry:
    """A duplicate decision close enough to the gate to deserve review."""

    infra_index: int
    vehicle_index: int | None
    distance: float
    suppressed: bool


@dataclass(frozen=True)
class CoopAnnotationResult:
    detections: tuple[Detection, ...]
    suppressed: int
    audit: tuple[AuditEntry, ...]


def fuse_ground_truth(
    pair: FramePair,
    dup_dist: float = DEFAULT_DUP_DIST,
    sync_threshold: float = SYNC_THRESHOLD,
) -> list[Detection]:
    """Union of vehicle and (converted, deduplicated) infrastructure GT."""
    return list(
        fuse_ground_truth_detailed(pair, dup_dist, sync_threshold).detections
    )


def fuse_ground_truth_detailed(
    pair: FramePair,
    dup_dist: float = DEFAULT_DUP_DIST,
    sync_threshold: float = SYNC_THRESHOLD,
) -> CoopAnnotationResult:
    """As fuse_ground_truth, with suppression count and audit entries."""
    if classify_sync(pair, sync_threshold) is not SyncClass.SYNCHRONOUS:
        raise NotSynchronous(
            f"|delta_t| = {abs(pair.delta_t):.4f} s exceeds {sync_threshold} s"
        )
    if pair.vehicle.annotations is None:
        raise MissingAnnotations("vehicle frame has no annotations")
    if pair.infrastructure.annotations is None:
        raise MissingAnnotations("infrastructure frame has no annotations")

    veh = list(pair.vehicle.annotations)
    rel = compose(inverse(pair.vehicle.pose), pair.infrastructure.pose)
    infra = [
        replace(d, box=transform_box(rel, d.box))
        for d in pair.infrastructure.annotations
    ]

    suppressed = [False] * len(infra)
    matched_with: dict[int, tuple[int, float]] = {}
    classes = sorted({d.class_id for d in infra} & {d.class_id for d in veh})
    for cls in classes:
        vi = [i for i, d in enumerate(veh) if d.class_id == cls]
        ii = [j for j, d in enumerate(infra) if d.class_id == cls]
        boxes_v = [veh[i].box for i in vi]
        boxes_i = [infra[j].box for j in ii]
        assignment = match_with_threshold(boxes_v, boxes_i, dup_dist)
        for r, c in assignment.pairs:
            suppressed[ii[c]] = True
            matched_with[ii[c]] = (vi[r], _bev_distance(boxes_v[r], boxes_i[c]))

    audit = []
    low, high = (1.0 - _AUDIT_BAND) * dup_dist, (1.0 + _AUDIT_BAND) * dup_dist
    for j, det in enumerate(infra):
        if suppressed[j]:
            vidx, dist = matched_with[j]
            if dist >= low:
                audit.append(AuditEntry(j, vidx, dist, True))
        else:
            dist, vidx = _nearest_same_class(det, veh)
            if vidx is not None and dist <= high:
                audit.append(AuditEntry(j, vidx, dist, False))

    fused = tuple(veh) + tuple(d for j, d in enumerate(infra) if not suppressed[j])
    return CoopAnnotationResult(fused, sum(suppressed), tuple(audit))


def _bev_distance(a, b) -> float:
    return float(cost_matrix([a], [b])[0, 0])


def _nearest_same_class(det: Detection, veh) -> tuple[float, int | None]:
    best, best_i = float("inf"), None
    for i, v in enumerate(veh):
        if v.class_id != det.class_id:
            continue
        d = _bev_distance(v.box, det.box)
        if d < best:
            best, best_i = d, i
    return best, best_i


def attach_cooperative_gt(
    pair: FramePair,
    dup_dist: float = DEFAULT_DUP_DIST,
    sync_threshold: float = SYNC_THRESHOLD,
) -> Frame:
    """Vehicle frame with its gt field replaced by the fused annotations."""
    fused = fuse_ground_truth_detailed(pair, dup_dist, sync_threshold)
    return replace(pair.vehicle, annotations=fused.detections)


def format_audit(result: CoopAnnotationResult, dup_dist: float = DEFAULT_DUP_DIST) -> str:
    """Plain-text review sheet for near-threshold duplicate decisions."""
    lines = [
        f"duplicate gate: {dup_dist:.3f} m "
        f"(review band {(1 - _AUDIT_BAND) * dup_dist:.3f}"
        f"-{(1 + _AUDIT_BAND) * dup_dist:.3f} m)",
        f"suppressed {result.suppressed} infrastructure boxes, "
        f"{len(result.audit)} decisions to review",
    ]
    for entry in result.audit:
        verdict = "suppressed" if entry.suppressed else "kept"
        lines.append(
            f"  infra[{entry.infra_index}] vs vehicle[{entry.vehicle_index}] "
            f"at {entry.distance:.3f} m -> {verdict}"
        )
    return "\n".join(lines) + "\n"
