"""Synthetic driving-yard scenes: agents, boxes, occluding walls.

The world is planar and centered at the origin; x/y are meters. Boxes sit on
the ground (center z = height / 2) and walls are thin axis-aligned segments
used purely as line-of-sight blockers. Scene generation is deterministic:
every random draw flows from ``SceneParams.seed`` through numpy's
``default_rng``, so the same parameters always yield the same scene.

The first agent anchors the world frame at the origin; additional agents are
scattered with a minimum spacing. ``SceneParams.occluded_count`` asks the
generator to guarantee that many objects are hidden from the first agent but
seen by at least one other — the situation collaboration is meant to fix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .errors import ConfigError, GenerationError, ParameterError
from .grids import Pose

_PLACE_TRIES = 200
_SCENE_TRIES = 25


@dataclass(frozen=True)
class Box3D:
    """Upright rectangular object; yaw rotates the footprint about +z."""

    x: float
    y: float
    z: float
    length: float
    width: float
    height: float
    yaw_deg: float = 0.0
    class_id: int = 1

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ParameterError("box dimensions must be positive")
        if self.class_id < 1:
            raise ParameterError("class_id must be >= 1")

    @property
    def center_xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def footprint_corners(self) -> np.ndarray:
        """Footprint corners, (4, 2) float64, counter-clockwise."""
        c = math.cos(math.radians(self.yaw_deg))
        s = math.sin(math.radians(self.yaw_deg))
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class WallSegment:
    """Axis-aligned opaque segment from (x0, y0) to (x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float
    height: float = 2.0

    def __post_init__(self):
        if self.x0 != self.x1 and self.y0 != self.y1:
            raise ParameterError("walls must be axis-aligned")
        if self.x0 == self.x1 and self.y0 == self.y1:
            raise ParameterError("wall endpoints coincide")
        if self.height <= 0:
            raise ParameterError("wall height must be positive")


@dataclass(frozen=True)
class AgentSpec:
    """One collaborating agent: true pose plus the pose it reports.

    ``reported`` is what goes over the wire (and is what localization noise
    corrupts); ``pose`` is ground truth used for sensing and evaluation.
    """

    agent_id: int
    pose: Pose
    reported: Pose | None = None

    def __post_init__(self):
        if self.reported is None:
            object.__setattr__(self, "reported", self.pose)

    def with_reported(self, reported: Pose) -> "AgentSpec":
        return replace(self, reported=reported)


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian localization error: position sigma (m), heading sigma (deg).

    ``seed`` is the default draw seed used when ``perturb_pose`` is not
    handed an explicit one.
    """

    pos_sigma_m: float = 0.0
    rot_sigma_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pos_sigma_m < 0 or self.rot_sigma_deg < 0:
            raise ParameterError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class Scene:
    extent_m: tuple[float, float]
    agents: tuple[AgentSpec, ...]
    boxes: tuple[Box3D, ...]
    walls: tuple[WallSegment, ...]
    sensor_range_m: float = 30.0
    seed: int = 0

    @property
    def ego(self) -> AgentSpec:
        return self.agents[0]

    def with_reported_poses(self, reported: dict[int, Pose]) -> "Scene":
        agents = tuple(
            a.with_reported(reported[a.agent_id]) if a.agent_id in reported else a
            for a in self.agents
        )
        return replace(self, agents=agents)


@dataclass(frozen=True)
class SceneParams:
    n_agents: int = 2
    n_objects: int = 6
    n_walls: int = 2
    occluded_count: int = 0
    seed: int = 0
    extent_m: tuple[float, float] = (32.0, 32.0)
    min_spacing_m: float = 6.0
    yaw_range_deg: float = 0.0
    agent_yaw_range_deg: float = 180.0
    box_size_m: tuple[float, float, float] = (4.5, 2.0, 1.6)
    wall_height_m: float = 2.0
    sensor_range_m: float = 30.0
    n_classes: int = 1


# -- 2D geometry ------------------------------------------------------------


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def segments_intersect(p1, p2, p3, p4) -> bool:
    """True if closed segments p1-p2 and p3-p4 share at least one point."""
    o1 = _orient(*p1, *p2, *p3)
    o2 = _orient(*p1, *p2, *p4)
    o3 = _orient(*p3, *p4, *p1)
    o4 = _orient(*p3, *p4, *p2)
    if ((o1 > 0) != (o2 > 0) and o1 != 0 and o2 != 0) and (
        (o3 > 0) != (o4 > 0) and o3 != 0 and o4 != 0
    ):
        return True
    if o1 == 0 and _on_segment(*p1, *p2, *p3):
        return True
    if o2 == 0 and _on_segment(*p1, *p2, *p4):
        return True
    if o3 == 0 and _on_segment(*p3, *p4, *p1):
        return True
    if o4 == 0 and _on_segment(*p3, *p4, *p2):
        return True
    return False


def point_in_footprint(box: Box3D, x: float, y: float) -> bool:
    c = math.cos(math.radians(-box.yaw_deg))
    s = math.sin(math.radians(-box.yaw_deg))
    dx, dy = x - box.x, y - box.y
    u = c * dx - s * dy
    v = s * dx + c * dy
    return abs(u) <= box.length / 2.0 and abs(v) <= box.width / 2.0


def box_blocks_segment(box: Box3D, p, q) -> bool:
    """True if the segment p-q touches the box footprint."""
    if point_in_footprint(box, *p) or point_in_footprint(box, *q):
        return True
    corners = box.footprint_corners()
    for i in range(4):
        a = tuple(corners[i])
        b = tuple(corners[(i + 1) % 4])
        if segments_intersect(p, q, a, b):
            return True
    return False


def line_of_sight(scene: Scene, p, q, ignore_box: int | None = None) -> bool:
    """True if nothing in the scene blocks the open segment p-q."""
    for wall in scene.walls:
        if segments_intersect(p, q, (wall.x0, wall.y0), (wall.x1, wall.y1)):
            return False
    for idx, box in enumerate(scene.boxes):
        if idx == ignore_box:
            continue
        if box_blocks_segment(box, p, q):
            return False
    return True


def visible_boxes(scene: Scene, agent_index: int) -> list[int]:
    """Indices of boxes in range of the agent with a clear sightline."""
    agent = scene.agents[agent_index]
    origin = (agent.pose.x, agent.pose.y)
    out = []
    for idx, box in enumerate(scene.boxes):
        dist = math.hypot(box.x - agent.pose.x, box.y - agent.pose.y)
        if dist > scene.sensor_range_m:
            continue
        if line_of_sight(scene, origin, box.center_xy, ignore_box=idx):
            out.append(idx)
    return out


def occluded_from_ego(scene: Scene) -> list[int]:
    """Boxes invisible to agent 0 but visible to at least one other agent."""
    ego_vis = set(visible_boxes(scene, 0))
    others: set[int] = set()
    for i in range(1, len(scene.agents)):
        others.update(visible_boxes(scene, i))
    return sorted(others - ego_vis)


# -- pose noise ---------------------------------------------------------------


def perturb_pose(pose: Pose, noise: NoiseSpec, seed: int | None = None) -> Pose:
    """Apply planar Gaussian localization error; deterministic per seed.

    Position noise hits x and y, heading noise hits yaw; z, pitch and roll
    are untouched. Zero sigmas return the pose unchanged, bit for bit.
    ``seed`` falls back to ``noise.seed`` when omitted.
    """
    if noise.pos_sigma_m == 0.0 and noise.rot_sigma_deg == 0.0:
        return pose
    rng = np.random.default_rng(noise.seed if seed is None else seed)
    dx, dy = rng.normal(0.0, noise.pos_sigma_m, size=2) if noise.pos_sigma_m else (0.0, 0.0)
    dyaw = rng.normal(0.0, noise.rot_sigma_deg) if noise.rot_sigma_deg else 0.0
    return Pose(pose.x + float(dx), pose.y + float(dy), pose.z,
                pose.yaw + float(dyaw), pose.pitch, pose.roll)


# -- generation ---------------------------------------------------------------


def _wall_hits_footprint(wall: WallSegment, box: Box3D) -> bool:
    p, q = (wall.x0, wall.y0), (wall.x1, wall.y1)
    return box_blocks_segment(box, p, q)


def _spacing_ok(x, y, centers, min_spacing) -> bool:
    return all(math.hypot(x - cx, y - cy) >= min_spacing for cx, cy in centers)


def _sample_walls(rng, p: SceneParams) -> list[WallSegment]:
    half_x, half_y = p.extent_m[0] / 2.0, p.extent_m[1] / 2.0
    walls = []
    for _ in range(p.n_walls):
        horizontal = bool(rng.integers(0, 2))
        length = float(rng.uniform(4.0, 12.0))
        if horizontal:
            cx = float(rng.uniform(-half_x + length / 2, half_x - length / 2))
            cy = float(rng.uniform(-half_y + 1.0, half_y - 1.0))
            walls.append(WallSegment(cx - length / 2, cy, cx + length / 2, cy, p.wall_height_m))
        else:
            cx = float(rng.uniform(-half_x + 1.0, half_x - 1.0))
            cy = float(rng.uniform(-half_y + length / 2, half_y - length / 2))
            walls.append(WallSegment(cx, cy - length / 2, cx, cy + length / 2, p.wall_height_m))
    return walls


def _try_generate(p: SceneParams, seed_material: list[int]) -> Scene:
    rng = np.random.default_rng(np.random.SeedSequence(seed_material))
    half_x, half_y = p.extent_m[0] / 2.0, p.extent_m[1] / 2.0
    margin = max(p.box_size_m[:2]) / 2.0 + 0.25

    walls = _sample_walls(rng, p)

    # Agent 0 anchors the frame; the rest are scattered with spacing.
    agent_xy: list[tuple[float, float]] = [(0.0, 0.0)]
    agents = [AgentSpec(0, Pose(0.0, 0.0, 0.0, 0.0))]
    for aid in range(1, p.n_agents):
        for attempt in range(_PLACE_TRIES):
            x = float(rng.uniform(-half_x + 1.0, half_x - 1.0))
            y = float(rng.uniform(-half_y + 1.0, half_y - 1.0))
            yaw = float(rng.uniform(-p.agent_yaw_range_deg, p.agent_yaw_range_deg))
            if _spacing_ok(x, y, agent_xy, p.min_spacing_m):
                agent_xy.append((x, y))
                agents.append(AgentSpec(aid, Pose(x, y, 0.0, yaw)))
                break
        else:
            raise GenerationError(
                f"min_spacing_m={p.min_spacing_m}: no room for agent {aid} "
                f"after {_PLACE_TRIES} tries"
            )

    length, width, height = p.box_size_m
    boxes: list[Box3D] = []
    centers: list[tuple[float, float]] = []

    def sample_class() -> int:
        return int(rng.integers(1, p.n_classes + 1)) if p.n_classes > 1 else 1

    def placement_ok(x, y, yaw) -> Box3D | None:
        if not (-half_x + margin <= x <= half_x - margin):
            return None
        if not (-half_y + margin <= y <= half_y - margin):
            return None
        if not _spacing_ok(x, y, centers, p.min_spacing_m):
            return None
        if not _spacing_ok(x, y, agent_xy, p.min_spacing_m):
            return None
        box = Box3D(x, y, height / 2.0, length, width, height, yaw, sample_class())
        if any(_wall_hits_footprint(w, box) for w in walls):
            return None
        return box

    # Occluded objects go behind a blocker as seen from agent 0.
    scratch = Scene(p.extent_m, tuple(agents), (), tuple(walls), p.sensor_range_m, p.seed)
    for k in range(p.occluded_count):
        placed = False
        for attempt in range(_PLACE_TRIES):
            blockers = len(walls) + len(boxes)
            if blockers == 0:
                raise GenerationError(
                    "occluded_count: scene has no walls or prior boxes to hide behind"
                )
            pick = int(rng.integers(0, blockers))
            if pick < len(walls):
                wall = walls[pick]
                t = float(rng.uniform(0.2, 0.8))
                ax = wall.x0 + t * (wall.x1 - wall.x0)
                ay = wall.y0 + t * (wall.y1 - wall.y0)
            else:
                prior = boxes[pick - len(walls)]
                ax, ay = prior.x, prior.y
            norm = math.hypot(ax, ay)
            if norm < 1e-6:
                continue
            d = float(rng.uniform(2.0, 8.0))
            x = ax + ax / norm * d
            y = ay + ay / norm * d
            yaw = float(rng.uniform(-p.yaw_range_deg, p.yaw_range_deg)) if p.yaw_range_deg else 0.0
            box = placement_ok(x, y, yaw)
            if box is None:
                continue
            trial = replace(scratch, boxes=tuple(boxes) + (box,))
            idx = len(boxes)
            if idx in visible_boxes(trial, 0):
                continue
            witnesses = [i for i in range(1, p.n_agents) if idx in visible_boxes(trial, i)]
            if not witnesses:
                continue
            boxes.append(box)
            centers.append((x, y))
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"occluded_count={p.occluded_count}: could not hide object {k} "
                f"after {_PLACE_TRIES} tries"
            )

    for k in range(p.n_objects - p.occluded_count):
        for attempt in range(_PLACE_TRIES):
            x = float(rng.uniform(-half_x + margin, half_x - margin))
            y = float(rng.uniform(-half_y + margin, half_y - margin))
            yaw = float(rng.uniform(-p.yaw_range_deg, p.yaw_range_deg)) if p.yaw_range_deg else 0.0
            box = placement_ok(x, y, yaw)
            if box is not None:
                boxes.append(box)
                centers.append((x, y))
                break
        else:
            raise GenerationError(
                f"min_spacing_m={p.min_spacing_m}: no room for object "
                f"{len(boxes)} after {_PLACE_TRIES} tries"
            )

    scene = Scene(p.extent_m, tuple(agents), tuple(boxes), tuple(walls),
                  p.sensor_range_m, p.seed)
    if len(occluded_from_ego(scene)) < p.occluded_count:
        raise GenerationError(
            f"occluded_count={p.occluded_count}: later placements broke the guarantee"
        )
    return scene


def generate_scene(params: SceneParams) -> Scene:
    """Build a scene satisfying the parameter constraints, or raise.

    Placement is rejection sampling with a bounded retry budget; if a
    constraint cannot be met, the whole scene is resampled (deterministically)
    a bounded number of times before a ``GenerationError`` naming the failed
    constraint escapes.
    """
    if params.n_agents < 1:
        raise ParameterError("n_agents must be >= 1")
    if params.n_objects < 0 or params.n_walls < 0:
        raise ParameterError("object and wall counts must be non-negative")
    if params.occluded_count < 0 or params.occluded_count > params.n_objects:
        raise ParameterError("occluded_count must lie in [0, n_objects]")
    if params.occluded_count > 0 and params.n_agents < 2:
        raise ParameterError("occluded_count needs at least two agents")
    if params.min_spacing_m <= 0:
        raise ParameterError("min_spacing_m must be positive")
    if params.extent_m[0] <= 0 or params.extent_m[1] <= 0:
        raise ParameterError("extent_m must be positive")

    last_error: GenerationError | None = None
    for attempt in range(_SCENE_TRIES):
        try:
            return _try_generate(params, [params.seed, attempt])
        except GenerationError as err:
            last_error = err
    raise GenerationError(
        f"scene generation failed after {_SCENE_TRIES} resamples: {last_error}"
    )


# -- scenario files -----------------------------------------------------------


def _pose_to_dict(pose: Pose) -> dict:
    return {"x": pose.x, "y": pose.y, "z": pose.z,
            "yaw": pose.yaw, "pitch": pose.pitch, "roll": pose.roll}


def _pose_from_dict(d: dict, where: str) -> Pose:
    if not isinstance(d, dict):
        raise ConfigError(where, "expected a mapping with x/y/z/yaw/pitch/roll")
    try:
        return Pose(float(d.get("x", 0.0)), float(d.get("y", 0.0)), float(d.get("z", 0.0)),
                    float(d.get("yaw", 0.0)), float(d.get("pitch", 0.0)),
                    float(d.get("roll", 0.0)))
    except (TypeError, ValueError) as err:
        raise ConfigError(where, f"bad pose value: {err}") from None


def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": 1,
        "extent_m": [scene.extent_m[0], scene.extent_m[1]],
        "sensor_range_m": scene.sensor_range_m,
        "seed": scene.seed,
        "agents": [
            {"id": a.agent_id,
             "pose": _pose_to_dict(a.pose),
             "reported": _pose_to_dict(a.reported)}
            for a in scene.agents
        ],
        "boxes": [
            {"x": b.x, "y": b.y, "z": b.z, "length": b.length, "width": b.width,
             "height": b.height, "yaw_deg": b.yaw_deg, "class_id": b.class_id}
            for b in scene.boxes
        ],
        "walls": [
            {"x0": w.x0, "y0": w.y0, "x1": w.x1, "y1": w.y1, "height": w.height}
            for w in scene.walls
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    if not isinstance(data, dict):
        raise ConfigError("scenario", "top level must be a mapping")
    extent = data.get("extent_m")
    if not isinstance(extent, (list, tuple)) or len(extent) != 2:
        raise ConfigError("extent_m", "expected a pair of meters")
    agents_raw = data.get("agents")
    if not isinstance(agents_raw, list) or not agents_raw:
        raise ConfigError("agents", "expected a non-empty list")
    agents = []
    for i, entry in enumerate(agents_raw):
        if not isinstance(entry, dict) or "id" not in entry or "pose" not in entry:
            raise ConfigError(f"agents[{i}]", "expected mapping with id and pose")
        pose = _pose_from_dict(entry["pose"], f"agents[{i}].pose")
        reported = (_pose_from_dict(entry["reported"], f"agents[{i}].reported")
                    if "reported" in entry else None)
        agents.append(AgentSpec(int(entry["id"]), pose, reported))
    boxes = []
    for i, entry in enumerate(data.get("boxes", []) or []):
        try:
            boxes.append(Box3D(
                float(entry["x"]), float(entry["y"]), float(entry["z"]),
                float(entry["length"]), float(entry["width"]), float(entry["height"]),
                float(entry.get("yaw_deg", 0.0)), int(entry.get("class_id", 1))))
        except (KeyError, TypeError, ValueError, ParameterError) as err:
            raise ConfigError(f"boxes[{i}]", str(err)) from None
    walls = []
    for i, entry in enumerate(data.get("walls", []) or []):
        try:
            walls.append(WallSegment(
                float(entry["x0"]), float(entry["y0"]),
                float(entry["x1"]), float(entry["y1"]),
                float(entry.get("height", 2.0))))
        except (KeyError, TypeError, ValueError, ParameterError) as err:
            raise ConfigError(f"walls[{i}]", str(err)) from None
    return Scene(
        extent_m=(float(extent[0]), float(extent[1])),
        agents=tuple(agents),
        boxes=tuple(boxes),
        walls=tuple(walls),
        sensor_range_m=float(data.get("sensor_range_m", 30.0)),
        seed=int(data.get("seed", 0)),
    )


def save_scenario(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scene_to_dict(scene), fh, sort_keys=False)


def load_scenario(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(yaml.safe_load(fh))


def scene_report(scene: Scene) -> str:
    """Human-readable ground-truth summary; stable across runs."""
    lines = [
        f"scene seed={scene.seed} extent={scene.extent_m[0]:.1f}x{scene.extent_m[1]:.1f}m "
        f"agents={len(scene.agents)} boxes={len(scene.boxes)} walls={len(scene.walls)}",
    ]
    vis = {a.agent_id: set(visible_boxes(scene, i)) for i, a in enumerate(scene.agents)}
    for i, a in enumerate(scene.agents):
        seen = ",".join(str(b) for b in sorted(vis[a.agent_id])) or "-"
        lines.append(
            f"  agent {a.agent_id}: pos=({a.pose.x:+7.2f},{a.pose.y:+7.2f}) "
            f"yaw={a.pose.yaw:+7.2f} sees [{seen}]"
        )
    for idx, b in enumerate(scene.boxes):
        seen_by = ",".join(str(a.agent_id) for i, a in enumerate(scene.agents)
                           if idx in vis[a.agent_id]) or "-"
        lines.append(
            f"  box {idx}: pos=({b.x:+7.2f},{b.y:+7.2f}) yaw={b.yaw_deg:+7.2f} "
            f"class={b.class_id} seen_by [{seen_by}]"
        )
    hidden = occluded_from_ego(scene)
    lines.append("  occluded_from_ego: [" + ",".join(str(i) for i in hidden) + "]")
    return "\n".join(lines) + "\n"
