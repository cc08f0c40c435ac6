"""Frame data model, JSON-lines interchange, and the binary wire format.

Frame files are UTF-8 JSON lines, one frame per line:

    {"sensor_id": str, "t": float,
     "pose": {"r": [9 floats, row-major rotation], "t": [3 floats]},
     "dets":  [{"box": [x,y,z,w,l,h,yaw], "class_id": int, "score": float}, ...],
     "cloud": {"pts": [[x,y,z], ...], "inten": [floats] | null},
     "gt":    [detection records with score 1.0, ...]}

"dets", "cloud", and "gt" are omitted when absent; at least one must be
present. Floats survive the JSON round trip bit-exactly.

The wire format is little-endian and single-precision throughout. Every
payload starts with an 8-byte header: magic b"VICW", a level byte, a
version byte, and a 16-bit flags/reserved field. Object records are 33
bytes (class u8, score f32, then x,y,z,w,l,h,yaw f32); cloud records are
16 bytes (x,y,z,intensity f32). Bit 0 of the flags field marks whether a
cloud payload carries measured intensity; all other bits are reserved, as
is the intermediate-representation level code.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, MalformedPayload, ParseError
from .geometry import BBox3D, PointCloud, Pose

CLASS_NAMES = (
    "car",
    "truck",
    "van",
    "bus",
    "pedestrian",
    "cyclist",
    "motorcyclist",
    "tricyclist",
    "barrow",
    "traffic_cone",
)
NUM_CLASSES = len(CLASS_NAMES)

GROUND_TRUTH_SCORE = 1.0

WIRE_MAGIC = b"VICW"
WIRE_VERSION = 1
LEVEL_OBJECTS = "objects"
LEVEL_RAW_CLOUD = "raw_cloud"
_LEVEL_CODES = {LEVEL_OBJECTS: 1, LEVEL_RAW_CLOUD: 2}
_LEVEL_INTERMEDIATE_CODE = 3  # reserved for a future transmission level
_CODE_LEVELS = {v: k for k, v in _LEVEL_CODES.items()}
_FLAG_HAS_INTENSITY = 0x0001

_HEADER = struct.Struct("<4sBBH")
_OBJ_RECORD = struct.Struct("<B8f")
OBJECT_RECORD_BYTES = _OBJ_RECORD.size  # 33
CLOUD_RECORD_BYTES = 16
HEADER_BYTES = _HEADER.size  # 8


@dataclass(frozen=True)
class Detection:
    """One detected (or annotated) object: box, category, confidence."""

    box: BBox3D
    class_id: int
    score: float

    def __post_init__(self):
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ValueError(f"class_id {self.class_id} outside 0..{NUM_CLASSES - 1}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class WirePayload:
    """Bytes as transmitted over the V2X link, tagged with their level."""

    level: str
    data: bytes

    def __post_init__(self):
        if self.level not in _LEVEL_CODES:
            raise ValueError(f"unknown wire level {self.level!r}")

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class Frame:
    """One timestamped sensor capture.

    `pose` maps sensor coordinates into the world frame. At least one of
    detections / cloud / annotations must be present (annotations are
    ground truth and reuse Detection with score 1.0).
    """

    sensor_id: str
    timestamp: float
    pose: Pose
    detections: tuple[Detection, ...] | None = None
    cloud: PointCloud | None = None
    annotations: tuple[Detection, ...] | None = None

    def __post_init__(self):
        if self.detections is None and self.cloud is None and self.annotations is None:
            raise InvariantError(
                f"frame {self.sensor_id!r}@{self.timestamp}: no detections, "
                "cloud, or annotations"
            )
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))
        if self.annotations is not None:
            object.__setattr__(self, "annotations", tuple(self.annotations))


# --- wire codecs -----------------------------------------------------------


def _yaw_f32(yaw: float) -> float:
    """Yaw rounded to f32 and clamped back into [-pi, pi).

    f32 rounding can push values just past +/-pi; one ulp toward zero keeps
    decode -> re-encode bit-stable.
    """
    y = np.float32(yaw)
    if float(y) >= math.pi or float(y) < -math.pi:
        y = np.nextafter(y, np.float32(0.0))
    return float(y)


def encode_objects(dets) -> WirePayload:
    """Serialize detections; length is exactly 8 + 33 * len(dets)."""
    parts = [_HEADER.pack(WIRE_MAGIC, _LEVEL_CODES[LEVEL_OBJECTS], WIRE_VERSION, 0)]
    for d in dets:
        b = d.box
        parts.append(
            _OBJ_RECORD.pack(
                d.class_id,
                d.score,
                b.center[0],
                b.center[1],
                b.center[2],
                b.size[0],
                b.size[1],
                b.size[2],
                _yaw_f32(b.yaw),
            )
        )
    return WirePayload(LEVEL_OBJECTS, b"".join(parts))


def _check_header(payload: WirePayload, expect_level: str) -> int:
    if len(payload.data) < HEADER_BYTES:
        raise MalformedPayload(f"payload of {len(payload.data)} bytes has no header")
    magic, level_code, version, flags = _HEADER.unpack_from(payload.data)
    if magic != WIRE_MAGIC:
        raise MalformedPayload(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise MalformedPayload(f"unsupported version {version}")
    if _CODE_LEVELS.get(level_code) != expect_level or payload.level != expect_level:
        raise MalformedPayload(
            f"level mismatch: header code {level_code}, tag {payload.level!r}, "
            f"expected {expect_level!r}"
        )
    return flags


def decode_objects(payload: WirePayload) -> list[Detection]:
    """Inverse of encode_objects, bit-exact on single-precision data."""
    _check_header(payload, LEVEL_OBJECTS)
    body = payload.data[HEADER_BYTES:]
    if len(body) % OBJECT_RECORD_BYTES:
        raise MalformedPayload(f"truncated object records ({len(body)} body bytes)")
    dets = []
    for off in range(0, len(body), OBJECT_RECORD_BYTES):
        class_id, score, x, y, z, w, l, h, yaw = _OBJ_RECORD.unpack_from(body, off)
        try:
            dets.append(Detection(BBox3D((x, y, z), (w, l, h), yaw), class_id, score))
        except ValueError as exc:
            raise MalformedPayload(f"invalid record at offset {off}: {exc}") from exc
    return dets


def encode_cloud(pc: PointCloud) -> WirePayload:
    """Serialize a cloud; length is exactly 8 + 16 * len(pc)."""
    flags = _FLAG_HAS_INTENSITY if pc.intensity is not None else 0
    header = _HEADER.pack(WIRE_MAGIC, _LEVEL_CODES[LEVEL_RAW_CLOUD], WIRE_VERSION, flags)
    records = np.zeros((len(pc), 4), dtype="<f4")
    records[:, :3] = pc.points
    if pc.intensity is not None:
        records[:, 3] = pc.intensity
    return WirePayload(LEVEL_RAW_CLOUD, header + records.tobytes())


def decode_cloud(payload: WirePayload) -> PointCloud:
    """Inverse of encode_cloud, bit-exact on single-precision data."""
    flags = _check_header(payload, LEVEL_RAW_CLOUD)
    body = payload.data[HEADER_BYTES:]
    if len(body) % CLOUD_RECORD_BYTES:
        raise MalformedPayload(f"truncated cloud records ({len(body)} body bytes)")
    records = np.frombuffer(body, dtype="<f4").reshape(-1, 4)
    points = records[:, :3].astype(float)
    intensity = records[:, 3].astype(float) if flags & _FLAG_HAS_INTENSITY else None
    return PointCloud(points, intensity)


# --- JSON-lines frame files -------------------------------------------------


def _detection_to_dict(d: Detection) -> dict:
    b = d.box
    return {
        "box": [*b.center.tolist(), *b.size.tolist(), b.yaw],
        "class_id": d.class_id,
        "score": d.score,
    }


def _detection_from_dict(obj: dict) -> Detection:
    box = obj["box"]
    if len(box) != 7:
        raise ValueError(f"box needs 7 values, got {len(box)}")
    return Detection(
        BBox3D(box[:3], box[3:6], box[6]), int(obj["class_id"]), float(obj["score"])
    )


def frame_to_dict(frame: Frame) -> dict:
    record: dict = {
        "sensor_id": frame.sensor_id,
        "t": frame.timestamp,
        "pose": {
            "r": frame.pose.rotation.reshape(-1).tolist(),
            "t": frame.pose.translation.tolist(),
        },
    }
    if frame.detections is not None:
        record["dets"] = [_detection_to_dict(d) for d in frame.detections]
    if frame.cloud is not None:
        record["cloud"] = {
            "pts": frame.cloud.points.tolist(),
            "inten": None
            if frame.cloud.intensity is None
            else frame.cloud.intensity.tolist(),
        }
    if frame.annotations is not None:
        record["gt"] = [_detection_to_dict(d) for d in frame.annotations]
    return record


def frame_from_dict(obj: dict) -> Frame:
    pose = Pose(np.asarray(obj["pose"]["r"], dtype=float).reshape(3, 3), obj["pose"]["t"])
    dets = None
    if "dets" in obj:
        dets = tuple(_detection_from_dict(d) for d in obj["dets"])
    cloud = None
    if "cloud" in obj:
        cloud = PointCloud(obj["cloud"]["pts"], obj["cloud"].get("inten"))
    gt = None
    if "gt" in obj:
        gt = tuple(_detection_from_dict(d) for d in obj["gt"])
    return Frame(str(obj["sensor_id"]), float(obj["t"]), pose, dets, cloud, gt)


def _check_monotonic(frames) -> None:
    last: dict = {}
    for fr in frames:
        prev = last.get(fr.sensor_id)
        if prev is not None and fr.timestamp <= prev:
            raise InvariantError(
                f"stream {fr.sensor_id!r}: timestamp {fr.timestamp} does not "
                f"increase past {prev}"
            )
        last[fr.sensor_id] = fr.timestamp


def write_frames(frames, path) -> None:
    """Write frames sorted by timestamp, one JSON record per line."""
    ordered = sorted(frames, key=lambda f: f.timestamp)
    _check_monotonic(ordered)
    with open(path, "w", encoding="utf-8") as fh:
        for fr in ordered:
            fh.write(json.dumps(frame_to_dict(fr), separators=(",", ":")) + "\n")


def read_frames(path) -> list[Frame]:
    """Read a frame file; result is timestamp-sorted and validated."""
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                frames.append(frame_from_dict(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    frames.sort(key=lambda f: f.timestamp)
    _check_monotonic(frames)
    return frames
