"""SE(3) poses, 7-DoF boxes, point clouds, and rotated-box IoU.

Conventions: right-handed frames with x forward, y left, z up. Box yaw is
measured counter-clockwise from +x in the containing frame; the box length
runs along the heading, the width across it. BEV quantities live in the
x-y plane and ignore z entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPlanarRotation

ORTHONORMAL_TOL = 1e-9
DEFAULT_PLANARITY_TOL_DEG = 1.0


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on the open upper bound
    return -math.pi if wrapped >= math.pi else wrapped


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates into a parent frame.

    rotation is a 3x3 orthonormal matrix with determinant +1 (checked to
    ORTHONORMAL_TOL at construction); translation is in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        err = float(np.abs(rot @ rot.T - np.eye(3)).max())
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation has determinant -1 (reflection)")
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "translation", _readonly(trans))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Pose rotating about z by `yaw` then translating."""
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, np.asarray(translation, dtype=float))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose mapping a point first through b, then through a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -(rt @ p.translation))


def transform_point(p: Pose, x) -> np.ndarray:
    return p.rotation @ np.asarray(x, dtype=float) + p.translation


@dataclass(frozen=True)
class PointCloud:
    """Points (n, 3) in meters with optional per-point intensity in [0, 1]."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", _readonly(pts))
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=float).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError(
                    f"intensity length {len(inten)} != point count {len(pts)}"
                )
            object.__setattr__(self, "intensity", _readonly(inten))

    def __len__(self) -> int:
        return len(self.points)


def transform_points(p: Pose, pc: PointCloud) -> PointCloud:
    """Apply the pose to every point; intensities carry over unchanged."""
    return PointCloud(pc.points @ p.rotation.T + p.translation, pc.intensity)


@dataclass(frozen=True)
class BBox3D:
    """7-DoF cuboid: center (3,), size (width, length, height), yaw.

    Sizes must be strictly positive; yaw is normalized to [-pi, pi) at
    construction. The box occupies [z - h/2, z + h/2] vertically.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(3)
        size = np.array(self.size, dtype=float).reshape(3)
        if not (size > 0.0).all():
            raise ValueError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", _readonly(center))
        object.__setattr__(self, "size", _readonly(size))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def width(self) -> float:
        return float(self.size[0])

    @property
    def length(self) -> float:
        return float(self.size[1])

    @property
    def height(self) -> float:
        return float(self.size[2])


def pose_yaw(p: Pose) -> float:
    """Heading of the pose's rotation about z."""
    return math.atan2(p.rotation[1, 0], p.rotation[0, 0])


def transform_box(
    p: Pose, b: BBox3D, planarity_tol_deg: float = DEFAULT_PLANARITY_TOL_DEG
) -> BBox3D:
    """Move a box through a near-planar pose.

    The center transforms as a point and the yaw is incremented by the
    pose's z-heading. Raises NonPlanarRotation when the rotation tilts the
    z-axis by more than `planarity_tol_deg`, since a tilted box no longer
    fits the yaw-only parameterization.
    """
    z_image = p.rotation[:, 2]
    tilt = math.acos(min(1.0, max(-1.0, float(z_image[2]))))
    if tilt > math.radians(planarity_tol_deg):
        raise NonPlanarRotation(
            f"z-axis tilts by {math.degrees(tilt):.3f} deg "
            f"(tolerance {planarity_tol_deg} deg)"
        )
    return BBox3D(transform_point(p, b.center), b.size, b.yaw + pose_yaw(p))


def bev_corners(b: BBox3D) -> np.ndarray:
    """Counter-clockwise (4, 2) corners of the box footprint."""
    hl, hw = 0.5 * b.length, 0.5 * b.width
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + b.center[:2]


def _polygon_area(pts) -> float:
    """Shoelace area of a polygon given as a vertex sequence."""
    if len(pts) < 3:
        return 0.0
    arr = np.asarray(pts, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _edge_intersection(p0, p1, a, b):
    """Intersection of segment p0-p1 with the infinite line through a-b."""
    d = (p1[0] - p0[0], p1[1] - p0[1])
    e = (b[0] - a[0], b[1] - a[1])
    denom = d[0] * e[1] - d[1] * e[0]
    t = ((a[0] - p0[0]) * e[1] - (a[1] - p0[1]) * e[0]) / denom
    return (p0[0] + t * d[0], p0[1] + t * d[1])


def clip_convex(subject, clip) -> list:
    """Sutherland-Hodgman clip of convex polygon `subject` against convex
    CCW polygon `clip`. Vertices on a clip edge count as inside, so clipping
    a polygon against itself returns its own vertices unchanged."""
    output = [tuple(p) for p in subject]
    clip = [tuple(p) for p in clip]
    for i in range(len(clip)):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % len(clip)]
        ex, ey = b[0] - a[0], b[1] - a[1]
        inputs = output
        output = []
        prev = inputs[-1]
        prev_side = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0])
        for cur in inputs:
            cur_side = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0])
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_intersection(prev, cur, a, b))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_intersection(prev, cur, a, b))
            prev, prev_side = cur, cur_side
    return output


def iou_bev(a: BBox3D, b: BBox3D) -> float:
    """Rotated-rectangle IoU of the two footprints (z ignored)."""
    ca, cb = bev_corners(a), bev_corners(b)
    inter = _polygon_area(clip_convex(ca, cb))
    if inter <= 0.0:
        return 0.0
    union = _polygon_area(ca) + _polygon_area(cb) - inter
    return max(0.0, min(1.0, inter / union))


def iou_3d(a: BBox3D, b: BBox3D) -> float:
    """Volumetric IoU: BEV intersection area times vertical overlap."""
    dz = min(
        a.center[2] + 0.5 * a.height, b.center[2] + 0.5 * b.height
    ) - max(a.center[2] - 0.5 * a.height, b.center[2] - 0.5 * b.height)
    if dz <= 0.0:
        return 0.0
    ca, cb = bev_corners(a), bev_corners(b)
    inter_area = _polygon_area(clip_convex(ca, cb))
    if inter_area <= 0.0:
        return 0.0
    inter_vol = inter_area * dz
    union = _polygon_area(ca) * a.height + _polygon_area(cb) * b.height - inter_vol
    return max(0.0, min(1.0, inter_vol / union))
