"""Range-binned Average Precision over the egocentric area, plus the
Average Byte transmission metric.

Matching here is deliberately NOT the Hungarian matcher the fusion
pipelines use: per frame, detections sorted by descending score greedily
claim the unmatched ground-truth box of highest IoU, a true positive when
that IoU clears the threshold. Precision is then interpolated at 40 evenly
spaced recall points (the modern KITTI convention; an 11-point mode with a
leading zero recall point is available via EvalConfig.interpolation).

BEV IoU ignores z entirely, so a detection floating above a ground-truth
box can still match in BEV mode; use the 3d metric when that matters.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .errors import NoGroundTruth
from .frames import Detection
from .geometry import iou_3d, iou_bev

METRIC_3D = "3d"
METRIC_BEV = "bev"
R40 = "r40"
R11 = "r11"

DEFAULT_AREA = (0.0, -39.12, 100.0, 39.12)
DEFAULT_BINS = ((0.0, 100.0), (0.0, 30.0), (30.0, 50.0), (50.0, 100.0))


@dataclass(frozen=True)
class EvalConfig:
    """What to evaluate and where.

    The area rectangle (x_min, y_min, x_max, y_max) is closed: boundary
    objects count. Range bins are half-open [lo, hi) intervals of BEV
    distance from the ego origin; by convention the first bin is the
    overall view.
    """

    iou_threshold: float = 0.5
    metric_kind: str = METRIC_3D
    range_bins: tuple = DEFAULT_BINS
    area: tuple = DEFAULT_AREA
    class_id: int = 0
    interpolation: str = R40

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if self.metric_kind not in (METRIC_3D, METRIC_BEV):
            raise ValueError(f"unknown metric_kind {self.metric_kind!r}")
        if self.interpolation not in (R40, R11):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        for lo, hi in self.range_bins:
            if not hi > lo:
                raise ValueError(f"degenerate range bin ({lo}, {hi})")


@dataclass(frozen=True)
class BinResult:
    """AP and counts for one range bin; ap is None when no GT fell in it."""

    lo: float
    hi: float
    ap: float | None
    gt: int
    tp: int
    fp: int


@dataclass(frozen=True)
class EvalReport:
    bins: tuple[BinResult, ...]
    average_byte: float

    def to_dict(self) -> dict:
        return {
            "average_byte": self.average_byte,
            "bins": [
                {
                    "lo": b.lo,
                    "hi": b.hi,
                    "ap": b.ap,
                    "gt": b.gt,
                    "tp": b.tp,
                    "fp": b.fp,
                }
                for b in self.bins
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self, label: str = "") -> str:
        """Aligned text table, one AP column per bin plus the byte column."""
        headers = [_bin_label(b, self.bins) for b in self.bins]
        cells = ["-" if b.ap is None else f"{100.0 * b.ap:.2f}" for b in self.bins]
        headers.append("AB (Byte)")
        cells.append(f"{self.average_byte:.2f}")
        name_w = max(len(label), len("pipeline"))
        widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
        head = "  ".join(
            ["pipeline".ljust(name_w)] + [h.rjust(w) for h, w in zip(headers, widths)]
        )
        row = "  ".join(
            [label.ljust(name_w)] + [c.rjust(w) for c, w in zip(cells, widths)]
        )
        return head + "\n" + row + "\n"


def _bin_label(b: BinResult, bins) -> str:
    if bins and b is bins[0]:
        return "Overall"
    return f"{b.lo:g}-{b.hi:g}m"


def filter_area(dets, area=DEFAULT_AREA) -> list[Detection]:
    """Detections whose BEV center lies inside the closed rectangle."""
    x_min, y_min, x_max, y_max = area
    kept = []
    for d in dets:
        x, y = d.box.center[0], d.box.center[1]
        if x_min <= x <= x_max and y_min <= y <= y_max:
            kept.append(d)
    return kept


def average_byte(payloads) -> float:
    """Mean payload length in bytes; 0.0 for no payloads (nothing sent)."""
    sizes = [len(p) for p in payloads]
    if not sizes:
        return 0.0
    return sum(sizes) / len(sizes)


def _select(dets, cfg: EvalConfig, bin_range=None) -> list[Detection]:
    out = [d for d in filter_area(dets, cfg.area) if d.class_id == cfg.class_id]
    if bin_range is not None:
        lo, hi = bin_range
        out = [
            d for d in out if lo <= float(np.hypot(d.box.center[0], d.box.center[1])) < hi
        ]
    return out


def _match_frame(dets, gts, iou_fn, threshold):
    """Greedy per-frame matching; yields (score, original_index, is_tp)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    claimed = [False] * len(gts)
    outcomes = []
    for i in order:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if claimed[j]:
                continue
            iou = iou_fn(dets[i].box, gt.box)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= threshold:
            claimed[best_j] = True
            outcomes.append((dets[i].score, i, True))
        else:
            outcomes.append((dets[i].score, i, False))
    return outcomes


def _interp_points(kind: str):
    if kind == R40:
        return [i / 40.0 for i in range(1, 41)]
    return [i / 10.0 for i in range(0, 11)]


def _ap_core(frame_dets, frame_gts, cfg: EvalConfig):
    """AP plus (gt, tp, fp) counts over already-selected per-frame lists."""
    iou_fn = iou_3d if cfg.metric_kind == METRIC_3D else iou_bev
    n_gt = sum(len(g) for g in frame_gts)
    if n_gt == 0:
        raise NoGroundTruth("no ground-truth boxes to evaluate against")
    flagged = []
    for fi, (dets, gts) in enumerate(zip(frame_dets, frame_gts)):
        for score, di, is_tp in _match_frame(dets, gts, iou_fn, cfg.iou_threshold):
            flagged.append((score, fi, di, is_tp))
    # global sweep in descending score; ties resolved by input order
    flagged.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))
    tp_total = sum(1 for rec in flagged if rec[3])
    fp_total = len(flagged) - tp_total
    if not flagged:
        return 0.0, n_gt, 0, 0
    recalls, precisions = [], []
    tp = 0
    for rank, rec in enumerate(flagged, 1):
        tp += rec[3]
        recalls.append(tp / n_gt)
        precisions.append(tp / rank)
    # precision envelope from the right: best precision at recall >= r
    envelope = precisions.copy()
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    points = _interp_points(cfg.interpolation)
    for r in points:
        k = bisect_left(recalls, r)
        ap += envelope[k] if k < len(envelope) else 0.0
    return ap / len(points), n_gt, tp_total, fp_total


def average_precision(frame_dets, frame_gts, cfg: EvalConfig = EvalConfig()) -> float:
    """AP for one class over the configured area.

    frame_dets and frame_gts are parallel per-frame detection lists.
    Raises NoGroundTruth when nothing of the class survives the area
    filter: an undefined AP is reported as absent, never as zero.
    """
    dets = [_select(d, cfg) for d in frame_dets]
    gts = [_select(g, cfg) for g in frame_gts]
    ap, _, _, _ = _ap_core(dets, gts, cfg)
    return ap


def range_binned_ap(
    frame_dets, frame_gts, cfg: EvalConfig = EvalConfig(), payloads=()
) -> EvalReport:
    """Independent AP per range bin, plus the transmission average."""
    results = []
    for lo, hi in cfg.range_bins:
        dets = [_select(d, cfg, (lo, hi)) for d in frame_dets]
        gts = [_select(g, cfg, (lo, hi)) for g in frame_gts]
        try:
            ap, n_gt, tp, fp = _ap_core(dets, gts, cfg)
        except NoGroundTruth:
            ap, n_gt, tp, fp = None, 0, 0, sum(len(d) for d in dets)
        results.append(BinResult(lo, hi, ap, n_gt, tp, fp))
    return EvalReport(tuple(results), average_byte(payloads))
