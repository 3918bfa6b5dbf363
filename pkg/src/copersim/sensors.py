"""Proxy sensors that rasterize scene geometry into per-agent feature grids.

These stand in for real perception backbones. They are deliberately simple
but keep the properties the pipeline cares about: occlusion (blocked cells
stay empty), complementary modalities, and exact determinism.

LiDAR fills voxel cells covered by visible geometry:
    channel 0: occupancy (1.0)
    channel 1: height code ``(k + 0.5) / l_bins`` per filled bin

The camera treats the grid's third axis as range bins along the ray from the
sensor through each ground cell. Each cell stores, at its own range bin, the
ray's depth likelihood there times a semantic code:
    channel 0: presence
    channel 1: structure (walls)
    channel 1 + class_id: object semantics

Depth likelihood is a triangular kernel centered on the first obstacle the
ray meets (renormalized over the clipped support), or uniform when the ray
escapes the scene — a camera is confident about *what* it sees and fuzzy
about *how far away* it is.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError, ShapeError
from .grids import (
    BevFeature,
    GridShape,
    Pose,
    VoxelFeature,
    cell_centers_xy,
    collapse_to_bev,
)
from .scene import Box3D, Scene, box_blocks_segment, segments_intersect

_EPS = 1e-9


def depth_distribution(hit_bin: int | None, l_bins: int, halfwidth: int = 2) -> np.ndarray:
    """Likelihood over range bins for a ray whose first hit is at ``hit_bin``.

    ``None`` means the ray never hit anything: a flat distribution. The
    triangular kernel has weight ``halfwidth + 1 - |d|`` at bin offset d,
    clipped to the grid and renormalized to sum to one.
    """
    if l_bins < 1:
        raise ParameterError("l_bins must be >= 1")
    if halfwidth < 0:
        raise ParameterError("halfwidth must be >= 0")
    if hit_bin is None:
        return np.full(l_bins, 1.0 / l_bins, dtype=np.float32)
    if not 0 <= hit_bin < l_bins:
        raise ParameterError(f"hit_bin {hit_bin} outside [0, {l_bins})")
    d = np.abs(np.arange(l_bins, dtype=np.float64) - hit_bin)
    w = np.maximum(halfwidth + 1.0 - d, 0.0)
    return (w / w.sum()).astype(np.float32)


def _to_local(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """World (N, 2) points into the planar frame of ``pose``."""
    c = math.cos(math.radians(pose.yaw))
    s = math.sin(math.radians(pose.yaw))
    dx = pts[:, 0] - pose.x
    dy = pts[:, 1] - pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def _blocker_edges(scene: Scene, pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All occluder edges in the agent frame: (E, 2) starts, ends, class codes.

    Walls contribute one edge with code 0; each box contributes its four
    footprint edges with code ``class_id``.
    """
    starts, ends, codes = [], [], []
    for wall in scene.walls:
        starts.append((wall.x0, wall.y0))
        ends.append((wall.x1, wall.y1))
        codes.append(0)
    for box in scene.boxes:
        corners = box.footprint_corners()
        for i in range(4):
            starts.append(tuple(corners[i]))
            ends.append(tuple(corners[(i + 1) % 4]))
            codes.append(box.class_id)
    if not starts:
        return (np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    a = _to_local(pose, np.asarray(starts, dtype=np.float64))
    b = _to_local(pose, np.asarray(ends, dtype=np.float64))
    return a, b, np.asarray(codes, dtype=np.int64)


def _first_hits(dirs: np.ndarray, edge_a: np.ndarray, edge_b: np.ndarray,
                edge_code: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First intersection along each unit ray from the origin.

    Returns (t, code): hit distance (inf if none) and the class code of the
    nearest edge (-1 if none). ``dirs`` is (N, 2); edges are (E, 2).
    """
    n = dirs.shape[0]
    if edge_a.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
    e = edge_b - edge_a  # (E, 2)
    # Solve t * d - u * e = a for each (ray, edge) pair.
    det = dirs[:, 1][:, None] * e[None, :, 0] - dirs[:, 0][:, None] * e[None, :, 1]
    wx = edge_a[None, :, 0]
    wy = edge_a[None, :, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wy * e[None, :, 0] - wx * e[None, :, 1]) / det
        u = (dirs[:, 0][:, None] * wy - dirs[:, 1][:, None] * wx) / det
    ok = (np.abs(det) > _EPS) & (u >= -_EPS) & (u <= 1.0 + _EPS) & (t > _EPS)
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(n), idx]
    code = np.where(np.isfinite(best), edge_code[idx], -1)
    return best, code


def _clear_path(scene: Scene, p, q, ignore_box: int | None = None,
                ignore_wall: int | None = None) -> bool:
    for i, wall in enumerate(scene.walls):
        if i == ignore_wall:
            continue
        if segments_intersect(p, q, (wall.x0, wall.y0), (wall.x1, wall.y1)):
            return False
    for i, box in enumerate(scene.boxes):
        if i == ignore_box:
            continue
        if box_blocks_segment(box, p, q):
            return False
    return True


def _footprint_mask(box: Box3D, world_xy: np.ndarray) -> np.ndarray:
    c = math.cos(math.radians(-box.yaw_deg))
    s = math.sin(math.radians(-box.yaw_deg))
    dx = world_xy[:, 0] - box.x
    dy = world_xy[:, 1] - box.y
    u = c * dx - s * dy
    v = s * dx + c * dy
    return (np.abs(u) <= box.length / 2.0) & (np.abs(v) <= box.width / 2.0)


def _segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    ab = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    ap = pts - np.asarray(a, dtype=np.float64)
    denom = float(ab @ ab)
    t = np.clip((ap @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(pts))
    closest = np.asarray(a, dtype=np.float64) + t[:, None] * ab
    return np.hypot(pts[:, 0] - closest[:, 0], pts[:, 1] - closest[:, 1])


def _height_bins(height_m: float, shape: GridShape) -> int:
    return max(1, min(shape.l_bins, math.ceil(height_m / shape.z_size_m)))


def lidar_proxy_encode(scene: Scene, agent_index: int,
                       shape: GridShape) -> tuple[VoxelFeature, BevFeature]:
    """Ray-cast occupancy voxels in the agent's true frame, plus their
    bird's-eye collapse.

    A covered cell is filled only when the straight path from the sensor to
    the cell center is not blocked by a wall or by a *different* object, so
    shadows come out of the encoder for free.
    """
    if shape.channels < 2:
        raise ShapeError("lidar proxy needs at least 2 channels")
    agent = scene.agents[agent_index]
    pose = agent.pose
    origin = (pose.x, pose.y)

    centers = cell_centers_xy(shape).reshape(-1, 2).astype(np.float64)
    c = math.cos(math.radians(pose.yaw))
    s = math.sin(math.radians(pose.yaw))
    world = np.stack([
        pose.x + c * centers[:, 0] - s * centers[:, 1],
        pose.y + s * centers[:, 0] + c * centers[:, 1],
    ], axis=-1)
    in_range = np.hypot(centers[:, 0], centers[:, 1]) <= scene.sensor_range_m

    data = np.zeros((shape.h_cells, shape.w_cells, shape.l_bins, shape.channels),
                    dtype=np.float32)
    height_code = ((np.arange(shape.l_bins) + 0.5) / shape.l_bins).astype(np.float32)

    def fill(flat_indices: np.ndarray, height_m: float) -> None:
        kmax = _height_bins(height_m, shape)
        hh, ww = np.unravel_index(flat_indices, (shape.h_cells, shape.w_cells))
        for i, j in zip(hh, ww):
            data[i, j, :kmax, 0] = 1.0
            data[i, j, :kmax, 1] = height_code[:kmax]

    for bi, box in enumerate(scene.boxes):
        covered = np.flatnonzero(_footprint_mask(box, world) & in_range)
        visible = [f for f in covered
                   if _clear_path(scene, origin, tuple(world[f]), ignore_box=bi)]
        if visible:
            fill(np.asarray(visible), box.height)

    half_cell = shape.cell_size_m / 2.0
    for wi, wall in enumerate(scene.walls):
        near = _segment_distance(world, (wall.x0, wall.y0), (wall.x1, wall.y1)) <= half_cell
        covered = np.flatnonzero(near & in_range)
        visible = [f for f in covered
                   if _clear_path(scene, origin, tuple(world[f]), ignore_wall=wi)]
        if visible:
            fill(np.asarray(visible), wall.height)

    voxel = VoxelFeature(shape=shape, data=data, frame=agent.agent_id)
    return voxel, collapse_to_bev(voxel)


def camera_proxy_encode(scene: Scene, agent_index: int, shape: GridShape,
                        fov_deg: float = 360.0, halfwidth: int = 2) -> VoxelFeature:
    """Semantic range-bin voxels in the agent's true frame.

    Every in-range, in-view ground cell stores one value at its own range
    bin: the ray's depth likelihood there times the semantic code of the
    ray's first hit. Cells shadowed by an obstacle end up with (near) zero
    weight because their bin is far from the hit's bin.
    """
    if not 0 < fov_deg <= 360.0:
        raise ParameterError("fov_deg must be in (0, 360]")
    max_class = max((b.class_id for b in scene.boxes), default=0)
    if shape.channels < 2 + max_class:
        raise ShapeError(
            f"camera proxy needs {2 + max_class} channels for class {max_class}, "
            f"grid has {shape.channels}"
        )
    agent = scene.agents[agent_index]
    l_bins = shape.l_bins
    bin_size = scene.sensor_range_m / l_bins

    centers = cell_centers_xy(shape).reshape(-1, 2).astype(np.float64)
    r = np.hypot(centers[:, 0], centers[:, 1])
    live = (r > _EPS) & (r <= scene.sensor_range_m)
    if fov_deg < 360.0:
        bearing = np.degrees(np.arctan2(centers[:, 1], centers[:, 0]))
        live &= np.abs(bearing) <= fov_deg / 2.0 + 1e-12

    idx = np.flatnonzero(live)
    dirs = centers[idx] / r[idx, None]
    edge_a, edge_b, edge_code = _blocker_edges(scene, agent.pose)
    t_hit, hit_code = _first_hits(dirs, edge_a, edge_b, edge_code)
    hit = t_hit <= scene.sensor_range_m

    own_bin = np.minimum((r[idx] / bin_size).astype(np.int64), l_bins - 1)
    hit_bin = np.minimum(
        np.where(hit, t_hit / bin_size, 0.0).astype(np.int64), l_bins - 1)

    # One row per possible hit bin so vectorized lookups reproduce
    # depth_distribution() bit for bit.
    table = np.stack([depth_distribution(b, l_bins, halfwidth) for b in range(l_bins)])
    weight = np.where(hit, table[hit_bin, own_bin], np.float32(1.0 / l_bins))

    codes = np.zeros((len(idx), shape.channels), dtype=np.float32)
    codes[:, 0] = 1.0
    codes[np.flatnonzero(hit & (hit_code == 0)), 1] = 1.0
    box_rays = np.flatnonzero(hit & (hit_code > 0))
    codes[box_rays, 1 + hit_code[box_rays]] = 1.0

    data = np.zeros((shape.h_cells, shape.w_cells, l_bins, shape.channels),
                    dtype=np.float32)
    flat = data.reshape(-1, l_bins, shape.channels)
    flat[idx, own_bin, :] = weight[:, None].astype(np.float32) * codes
    return VoxelFeature(shape=shape, data=data, frame=agent.agent_id)
