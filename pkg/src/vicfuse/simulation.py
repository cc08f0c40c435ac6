"""Synthetic scenario generator with oracle sensors.

A scenario is a handful of kinematic object tracks, a vehicle driving a
piecewise-linear path, and two sensors (one on the vehicle, one static on
the infrastructure side) that trigger on their own clocks. Rendering a
sensor at a time produces a Frame whose annotations are the exact ground
truth of everything the sensor can see and whose detections are that
ground truth pushed through a configurable noise model: Gaussian
perturbation, random drops, and Poisson false positives. With the noise
model zeroed the sensor is a perfect detector, which is what makes the
fusion pipelines testable against known answers.

Randomness is derived per frame from (scenario seed, sensor id, frame
index), so streams are bit-identical no matter how rendering is ordered
or parallelized.
"""

from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OutOfTimeRange
from .frames import NUM_CLASSES, Detection, Frame, GROUND_TRUTH_SCORE
from .geometry import BBox3D, PointCloud, Pose, bev_corners, inverse, transform_box

MIN_DETECTION_SCORE = 0.05
FP_SCORE_RANGE = (0.05, 0.5)


@dataclass(frozen=True)
class ConstantVelocity:
    """Straight-line BEV motion; heading defaults to the velocity direction."""

    position: tuple[float, float, float]
    velocity: tuple[float, float]
    heading: float | None = None


@dataclass(frozen=True)
class ConstantTurn:
    """Circular-arc motion at constant speed and turn rate."""

    position: tuple[float, float, float]
    speed: float
    turn_rate: float
    heading: float = 0.0


@dataclass(frozen=True)
class ObjectTrack:
    class_id: int
    size: tuple[float, float, float]  # width, length, height
    motion: ConstantVelocity | ConstantTurn
    spawn: float = 0.0
    despawn: float = math.inf

    def __post_init__(self):
        if self.despawn <= self.spawn:
            raise ValueError(
                f"despawn {self.despawn} must exceed spawn {self.spawn}"
            )
        if min(self.size) <= 0.0:
            raise ValueError(f"track size must be positive, got {self.size}")

    def alive(self, t: float) -> bool:
        return self.spawn <= t < self.despawn

    def state(self, t: float) -> tuple[np.ndarray, float]:
        """World center and yaw at time t (position is defined at spawn)."""
        tau = t - self.spawn
        m = self.motion
        if isinstance(m, ConstantVelocity):
            vx, vy = m.velocity
            center = np.array(
                [m.position[0] + vx * tau, m.position[1] + vy * tau, m.position[2]]
            )
            if m.heading is not None:
                yaw = m.heading
            elif vx == 0.0 and vy == 0.0:
                yaw = 0.0
            else:
                yaw = math.atan2(vy, vx)
            return center, yaw
        omega = m.turn_rate
        if omega == 0.0:
            local = np.array([m.speed * tau, 0.0])
        else:
            local = (m.speed / omega) * np.array(
                [math.sin(omega * tau), 1.0 - math.cos(omega * tau)]
            )
        c, s = math.cos(m.heading), math.sin(m.heading)
        center = np.array(
            [
                m.position[0] + c * local[0] - s * local[1],
                m.position[1] + s * local[0] + c * local[1],
                m.position[2],
            ]
        )
        return center, m.heading + omega * tau


@dataclass(frozen=True)
class NoiseModel:
    sigma_xy: float = 0.0
    sigma_z: float = 0.0
    sigma_yaw: float = 0.0
    drop_prob: float = 0.0
    fp_rate: float = 0.0  # expected false positives per frame

    def __post_init__(self):
        if min(self.sigma_xy, self.sigma_z, self.sigma_yaw, self.fp_rate) < 0.0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob {self.drop_prob} outside [0, 1]")


@dataclass(frozen=True)
class SensorModel:
    """One LiDAR-like sensor. mount=None means the vehicle trajectory
    drives the pose; a static world-frame mount makes it infrastructure.
    Setting points_per_box/ground_points nonzero makes rendered frames
    carry a synthetic cloud."""

    sensor_id: str
    rate: float = 10.0
    trigger_offset: float = 0.0
    max_range: float = 200.0
    fov_deg: float = 360.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    occlusion_enabled: bool = False
    mount: Pose | None = None
    points_per_box: int = 0
    ground_points: int = 0

    def __post_init__(self):
        if self.rate <= 0.0:
            raise ValueError(f"sensor rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class Waypoint:
    t: float
    position: tuple[float, float, float]
    yaw: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float
    seed: int
    tracks: tuple[ObjectTrack, ...]
    vehicle_path: tuple[Waypoint, ...]
    vehicle_sensor: SensorModel
    infrastructure_sensor: SensorModel

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "vehicle_path", tuple(self.vehicle_path))
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not self.vehicle_path:
            raise ValueError("vehicle_path needs at least one waypoint")
        if self.infrastructure_sensor.mount is None:
            raise ValueError("infrastructure sensor needs a static mount pose")


def vehicle_pose_at(scenario: ScenarioConfig, t: float) -> Pose:
    """Trajectory pose at t: positions interpolate linearly between
    waypoints, yaw along the shortest arc; ends clamp."""
    path = scenario.vehicle_path
    times = [w.t for w in path]
    if t <= times[0]:
        w = path[0]
        return Pose.from_yaw(w.yaw, w.position)
    if t >= times[-1]:
        w = path[-1]
        return Pose.from_yaw(w.yaw, w.position)
    hi = bisect_right(times, t)
    w0, w1 = path[hi - 1], path[hi]
    u = (t - w0.t) / (w1.t - w0.t)
    p0, p1 = np.asarray(w0.position, float), np.asarray(w1.position, float)
    dyaw = math.remainder(w1.yaw - w0.yaw, 2.0 * math.pi)
    return Pose.from_yaw(w0.yaw + u * dyaw, p0 + u * (p1 - p0))


def _check_time(scenario: ScenarioConfig, t: float) -> None:
    if not 0.0 <= t <= scenario.duration:
        raise OutOfTimeRange(
            f"t = {t} outside scenario duration [0, {scenario.duration}]"
        )


def ground_truth_at(
    scenario: ScenarioConfig, t: float, frame: Pose | None = None
) -> list[Detection]:
    """Exact boxes of all live tracks at t, in the world frame or, given a
    sensor pose, in that sensor's frame. Scores are fixed at 1.0."""
    _check_time(scenario, t)
    inv = None if frame is None else inverse(frame)
    dets = []
    for track in scenario.tracks:
        if not track.alive(t):
            continue
        center, yaw = track.state(t)
        box = BBox3D(center, track.size, yaw)
        if inv is not None:
            box = transform_box(inv, box)
        dets.append(Detection(box, track.class_id, GROUND_TRUTH_SCORE))
    return dets


def _sensor_pose(scenario: ScenarioConfig, sensor: SensorModel, t: float) -> Pose:
    return sensor.mount if sensor.mount is not None else vehicle_pose_at(scenario, t)


def _frame_rng(scenario: ScenarioConfig, sensor: SensorModel, t: float):
    index = max(0, int(round((t - sensor.trigger_offset) * sensor.rate)))
    key = int.from_bytes(
        hashlib.blake2s(sensor.sensor_id.encode(), digest_size=8).digest(), "little"
    )
    return np.random.default_rng([scenario.seed, key, index])


def _in_field_of_view(box: BBox3D, sensor: SensorModel) -> bool:
    x, y = box.center[0], box.center[1]
    if math.hypot(x, y) > sensor.max_range:
        return False
    if sensor.fov_deg >= 360.0:
        return True
    return abs(math.atan2(y, x)) <= math.radians(sensor.fov_deg) / 2.0


def _segment_hits_rect(target_xy: np.ndarray, corners: np.ndarray) -> bool:
    """Does the sightline from the origin to target_xy cross the CCW rect?"""
    t0, t1 = 0.0, 1.0
    for i in range(4):
        e0 = corners[i]
        e1 = corners[(i + 1) % 4]
        # inward normal of a CCW edge
        nx, ny = -(e1[1] - e0[1]), e1[0] - e0[0]
        denom = nx * target_xy[0] + ny * target_xy[1]
        num = nx * e0[0] + ny * e0[1]
        if denom == 0.0:
            if num > 0.0:  # sightline parallel to and outside this edge
                return False
            continue
        t = num / denom
        if denom > 0.0:  # inside requires t * denom >= num
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def _visible_boxes(scenario: ScenarioConfig, sensor: SensorModel, t: float, pose: Pose):
    """GT boxes in the sensor frame after range, FOV, and occlusion culls."""
    inv = inverse(pose)
    live = []
    for track in scenario.tracks:
        if not track.alive(t):
            continue
        center, yaw = track.state(t)
        live.append((track, transform_box(inv, BBox3D(center, track.size, yaw))))
    candidates = [(track, box) for track, box in live if _in_field_of_view(box, sensor)]
    if not sensor.occlusion_enabled:
        return candidates
    visible = []
    for track, box in candidates:
        blocked = False
        for other, other_box in live:
            if other is track:
                continue
            if _segment_hits_rect(box.center[:2], bev_corners(other_box)):
                blocked = True
                break
        if not blocked:
            visible.append((track, box))
    return visible


def _class_size_priors(scenario: ScenarioConfig) -> dict[int, np.ndarray]:
    sizes: dict[int, list] = {}
    for track in scenario.tracks:
        sizes.setdefault(track.class_id, []).append(track.size)
    return {cls: np.mean(vals, axis=0) for cls, vals in sizes.items()}


def _sample_box_surface(box: BBox3D, count: int, rng) -> np.ndarray:
    """Points on the four side faces and the top, in the sensor frame."""
    hw, hl, hh = 0.5 * box.width, 0.5 * box.length, 0.5 * box.height
    u = rng.uniform(-1.0, 1.0, size=(count, 2))
    faces = rng.integers(0, 5, size=count)
    local = np.empty((count, 3))
    for i, (f, (a, b)) in enumerate(zip(faces, u)):
        if f == 0:
            local[i] = (hl, a * hw, b * hh)
        elif f == 1:
            local[i] = (-hl, a * hw, b * hh)
        elif f == 2:
            local[i] = (a * hl, hw, b * hh)
        elif f == 3:
            local[i] = (a * hl, -hw, b * hh)
        else:
            local[i] = (a * hl, b * hw, hh)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def _render_cloud(sensor: SensorModel, visible, rng) -> PointCloud:
    chunks = [
        _sample_box_surface(box, sensor.points_per_box, rng) for _, box in visible
    ]
    if sensor.ground_points:
        half = math.radians(min(sensor.fov_deg, 360.0)) / 2.0
        r = sensor.max_range * np.sqrt(rng.random(sensor.ground_points))
        theta = rng.uniform(-half, half, sensor.ground_points)
        ground = np.stack(
            [r * np.cos(theta), r * np.sin(theta), np.zeros(sensor.ground_points)],
            axis=1,
        )
        chunks.append(ground)
    points = np.concatenate(chunks) if chunks else np.empty((0, 3))
    return PointCloud(points, rng.random(len(points)))


def render_frame(scenario: ScenarioConfig, sensor: SensorModel, t: float) -> Frame:
    """One sensor capture: noiseless annotations of everything visible,
    plus noisy detections per the sensor's noise model."""
    _check_time(scenario, t)
    pose = _sensor_pose(scenario, sensor, t)
    rng = _frame_rng(scenario, sensor, t)
    visible = _visible_boxes(scenario, sensor, t, pose)

    annotations = tuple(
        Detection(box, track.class_id, GROUND_TRUTH_SCORE) for track, box in visible
    )

    noise = sensor.noise
    score_scale = max(1e-6, 10.0 * (noise.sigma_xy + noise.sigma_z + noise.sigma_yaw))
    detections = []
    for track, box in visible:
        dx = rng.normal(0.0, noise.sigma_xy)
        dy = rng.normal(0.0, noise.sigma_xy)
        dz = rng.normal(0.0, noise.sigma_z)
        dyaw = rng.normal(0.0, noise.sigma_yaw)
        dropped = rng.random() < noise.drop_prob
        if dropped:
            continue
        magnitude = math.sqrt(dx * dx + dy * dy + dz * dz + dyaw * dyaw)
        score = min(1.0, max(MIN_DETECTION_SCORE, 1.0 - magnitude / score_scale))
        center = box.center + np.array([dx, dy, dz])
        detections.append(
            Detection(BBox3D(center, box.size, box.yaw + dyaw), track.class_id, score)
        )

    priors = _class_size_priors(scenario)
    n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0.0 else 0
    half = math.radians(min(sensor.fov_deg, 360.0)) / 2.0
    for _ in range(n_fp):
        r = sensor.max_range * math.sqrt(rng.random())
        theta = rng.uniform(-half, half)
        cls = int(rng.choice(sorted(priors))) if priors else 0
        base = priors.get(cls, np.array([1.0, 1.0, 1.0]))
        size = base * rng.uniform(0.8, 1.2, size=3)
        yaw = rng.uniform(-math.pi, math.pi)
        center = (r * math.cos(theta), r * math.sin(theta), size[2] / 2.0)
        score = rng.uniform(*FP_SCORE_RANGE)
        detections.append(Detection(BBox3D(center, size, yaw), cls, score))

    cloud = None
    if sensor.points_per_box or sensor.ground_points:
        cloud = _render_cloud(sensor, visible, rng)

    return Frame(
        sensor_id=sensor.sensor_id,
        timestamp=t,
        pose=pose,
        detections=tuple(detections),
        cloud=cloud,
        annotations=annotations,
    )


def _trigger_times(sensor: SensorModel, duration: float) -> list[float]:
    times = []
    n = 0
    while True:
        t = sensor.trigger_offset + n / sensor.rate
        if t > duration:
            break
        if t >= 0.0:
            times.append(t)
        n += 1
    return times


def sample_streams(scenario: ScenarioConfig) -> tuple[list[Frame], list[Frame]]:
    """Render both sensors on their own trigger clocks."""
    veh = [
        render_frame(scenario, scenario.vehicle_sensor, t)
        for t in _trigger_times(scenario.vehicle_sensor, scenario.duration)
    ]
    inf = [
        render_frame(scenario, scenario.infrastructure_sensor, t)
        for t in _trigger_times(scenario.infrastructure_sensor, scenario.duration)
    ]
    return veh, inf


# --- config (de)serialization ----------------------------------------------


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}.{key}: missing required field")
    return obj[key]


def _motion_from_dict(obj: dict, where: str):
    kind = _require(obj, "kind", where)
    if kind == "constant_velocity":
        return ConstantVelocity(
            tuple(_require(obj, "position", where)),
            tuple(_require(obj, "velocity", where)),
            obj.get("heading"),
        )
    if kind == "constant_turn":
        return ConstantTurn(
            tuple(_require(obj, "position", where)),
            float(_require(obj, "speed", where)),
            float(_require(obj, "turn_rate", where)),
            float(obj.get("heading", 0.0)),
        )
    raise ConfigError(f"{where}.kind: unknown motion kind {kind!r}")


def _track_from_dict(obj: dict, where: str) -> ObjectTrack:
    class_id = int(_require(obj, "class_id", where))
    if not 0 <= class_id < NUM_CLASSES:
        raise ConfigError(f"{where}.class_id: {class_id} outside 0..{NUM_CLASSES - 1}")
    try:
        return ObjectTrack(
            class_id,
            tuple(_require(obj, "size", where)),
            _motion_from_dict(_require(obj, "motion", where), f"{where}.motion"),
            float(obj.get("spawn", 0.0)),
            float(obj.get("despawn", math.inf)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _sensor_from_dict(obj: dict, where: str) -> SensorModel:
    noise_obj = obj.get("noise", {})
    try:
        noise = NoiseModel(
            float(noise_obj.get("sigma_xy", 0.0)),
            float(noise_obj.get("sigma_z", 0.0)),
            float(noise_obj.get("sigma_yaw", 0.0)),
            float(noise_obj.get("drop_prob", 0.0)),
            float(noise_obj.get("fp_rate", 0.0)),
        )
        mount = None
        if "mount" in obj:
            mount = Pose(
                np.asarray(obj["mount"]["r"], dtype=float).reshape(3, 3),
                obj["mount"]["t"],
            )
        return SensorModel(
            sensor_id=str(_require(obj, "sensor_id", where)),
            rate=float(obj.get("rate", 10.0)),
            trigger_offset=float(obj.get("trigger_offset", 0.0)),
            max_range=float(obj.get("max_range", 200.0)),
            fov_deg=float(obj.get("fov_deg", 360.0)),
            noise=noise,
            occlusion_enabled=bool(obj.get("occlusion", False)),
            mount=mount,
            points_per_box=int(obj.get("points_per_box", 0)),
            ground_points=int(obj.get("ground_points", 0)),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def scenario_from_dict(obj: dict) -> ScenarioConfig:
    tracks = [
        _track_from_dict(trk, f"tracks[{i}]")
        for i, trk in enumerate(_require(obj, "tracks", "scenario"))
    ]
    path = []
    for i, wp in enumerate(_require(obj, "vehicle_path", "scenario")):
        where = f"vehicle_path[{i}]"
        path.append(
            Waypoint(
                float(_require(wp, "t", where)),
                tuple(_require(wp, "position", where)),
                float(wp.get("yaw", 0.0)),
            )
        )
    sensors = _require(obj, "sensors", "scenario")
    try:
        return ScenarioConfig(
            duration=float(_require(obj, "duration", "scenario")),
            seed=int(_require(obj, "seed", "scenario")),
            tracks=tuple(tracks),
            vehicle_path=tuple(path),
            vehicle_sensor=_sensor_from_dict(
                _require(sensors, "vehicle", "scenario.sensors"), "sensors.vehicle"
            ),
            infrastructure_sensor=_sensor_from_dict(
                _require(sensors, "infrastructure", "scenario.sensors"),
                "sensors.infrastructure",
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _motion_to_dict(m) -> dict:
    if isinstance(m, ConstantVelocity):
        out = {
            "kind": "constant_velocity",
            "position": list(m.position),
            "velocity": list(m.velocity),
        }
        if m.heading is not None:
            out["heading"] = m.heading
        return out
    return {
        "kind": "constant_turn",
        "position": list(m.position),
        "speed": m.speed,
        "turn_rate": m.turn_rate,
        "heading": m.heading,
    }


def _sensor_to_dict(s: SensorModel) -> dict:
    out = {
        "sensor_id": s.sensor_id,
        "rate": s.rate,
        "trigger_offset": s.trigger_offset,
        "max_range": s.max_range,
        "fov_deg": s.fov_deg,
        "noise": {
            "sigma_xy": s.noise.sigma_xy,
            "sigma_z": s.noise.sigma_z,
            "sigma_yaw": s.noise.sigma_yaw,
            "drop_prob": s.noise.drop_prob,
            "fp_rate": s.noise.fp_rate,
        },
        "occlusion": s.occlusion_enabled,
        "points_per_box": s.points_per_box,
        "ground_points": s.ground_points,
    }
    if s.mount is not None:
        out["mount"] = {
            "r": s.mount.rotation.reshape(-1).tolist(),
            "t": s.mount.translation.tolist(),
        }
    return out


def scenario_to_dict(scenario: ScenarioConfig) -> dict:
    return {
        "duration": scenario.duration,
        "seed": scenario.seed,
        "tracks": [
            {
                "class_id": trk.class_id,
                "size": list(trk.size),
                "motion": _motion_to_dict(trk.motion),
                "spawn": trk.spawn,
                "despawn": trk.despawn if math.isfinite(trk.despawn) else None,
            }
            for trk in scenario.tracks
        ],
        "vehicle_path": [
            {"t": wp.t, "position": list(wp.position), "yaw": wp.yaw}
            for wp in scenario.vehicle_path
        ],
        "sensors": {
            "vehicle": _sensor_to_dict(scenario.vehicle_sensor),
            "infrastructure": _sensor_to_dict(scenario.infrastructure_sensor),
        },
    }


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(obj)


def save_scenario(scenario: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")
