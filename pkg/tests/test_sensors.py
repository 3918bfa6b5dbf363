"""Proxy sensor encoders, checked against brute-force geometry."""

import numpy as np
import pytest

from copersim.errors import ParameterError, ShapeError
from copersim.grids import GridShape, Pose, cell_centers_xy
from copersim.scene import AgentSpec, Box3D, Scene, WallSegment, point_in_footprint, segments_intersect
from copersim.sensors import camera_proxy_encode, depth_distribution, lidar_proxy_encode

SHAPE = GridShape(16, 16, 4, 4, cell_size_m=0.5, z_size_m=0.5)


def make_scene(boxes=(), walls=(), agents=None, sensor_range=30.0):
    if agents is None:
        agents = (AgentSpec(0, Pose()),)
    return Scene(extent_m=(8.0, 8.0), agents=agents, boxes=tuple(boxes),
                 walls=tuple(walls), sensor_range_m=sensor_range)


def occupancy_oracle(scene, shape):
    """Expected occupancy mask for agent 0 at the origin, cell by cell.

    A ground cell is occupied iff its center lies in some box footprint (or
    hugs a wall) and the segment from the sensor to the center crosses no
    *other* opaque geometry. Pure python; no shared code with the encoder
    beyond the footprint primitives tested elsewhere.
    """
    xy = cell_centers_xy(shape).reshape(-1, 2)
    mask = np.zeros(len(xy), dtype=bool)
    for f, (x, y) in enumerate(xy):
        if np.hypot(x, y) > scene.sensor_range_m:
            continue
        for bi, box in enumerate(scene.boxes):
            if not point_in_footprint(box, x, y):
                continue
            blocked = any(
                segments_intersect((0.0, 0.0), (x, y), (w.x0, w.y0), (w.x1, w.y1))
                for w in scene.walls)
            if not blocked:
                blocked = any(
                    _crosses_box(other, (x, y))
                    for oi, other in enumerate(scene.boxes) if oi != bi)
            if not blocked:
                mask[f] = True
    return mask.reshape(shape.h_cells, shape.w_cells)


def _crosses_box(box, q):
    corners = box.footprint_corners()
    return any(
        segments_intersect((0.0, 0.0), q, tuple(corners[i]), tuple(corners[(i + 1) % 4]))
        for i in range(4))


# -- depth distribution -------------------------------------------------------


def test_depth_distribution_no_hit_is_uniform():
    d = depth_distribution(None, 8)
    assert np.allclose(d, 1.0 / 8)


def test_depth_distribution_interior_hit_by_hand():
    # halfwidth 2 around bin 5 of 8: weights 1,2,3,2,1 on bins 3..7
    d = depth_distribution(5, 8, halfwidth=2)
    assert np.allclose(d, np.array([0, 0, 0, 1, 2, 3, 2, 1]) / 9.0)
    assert d.argmax() == 5


def test_depth_distribution_clips_and_renormalizes_at_the_edge():
    d = depth_distribution(0, 8, halfwidth=2)
    assert np.allclose(d, np.array([3, 2, 1, 0, 0, 0, 0, 0]) / 6.0)


@pytest.mark.parametrize("hit", [None, 0, 3, 7])
def test_depth_distribution_sums_to_one(hit):
    assert abs(depth_distribution(hit, 8).sum() - 1.0) < 1e-6


def test_depth_distribution_validation():
    with pytest.raises(ParameterError):
        depth_distribution(0, 0)
    with pytest.raises(ParameterError):
        depth_distribution(8, 8)
    with pytest.raises(ParameterError):
        depth_distribution(2, 8, halfwidth=-1)


# -- lidar --------------------------------------------------------------------


def test_lidar_occupancy_matches_brute_force_oracle():
    scene = make_scene(
        boxes=[Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8),
               Box3D(-2.0, -2.0, 0.0, 1.5, 1.5, 0.8, class_id=1)],
        walls=[WallSegment(1.0, 1.0, 1.0, 3.5)])
    voxel, bev = lidar_proxy_encode(scene, 0, SHAPE)
    got = voxel.data[:, :, 0, 0] > 0
    want = occupancy_oracle(scene, SHAPE)
    # wall cells are extra; box cells must agree exactly
    box_cells = np.zeros_like(want)
    xy = cell_centers_xy(SHAPE)
    for box in scene.boxes:
        for i in range(SHAPE.h_cells):
            for j in range(SHAPE.w_cells):
                if point_in_footprint(box, xy[i, j, 0], xy[i, j, 1]):
                    box_cells[i, j] = True
    assert np.array_equal(got & box_cells, want)


def test_lidar_fills_height_bins_with_the_height_code():
    scene = make_scene(boxes=[Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8)])
    voxel, _ = lidar_proxy_encode(scene, 0, SHAPE)
    occ = np.flatnonzero(voxel.data[:, :, 0, 0].ravel())
    assert occ.size > 0
    cell = np.unravel_index(occ[0], (16, 16))
    col = voxel.data[cell[0], cell[1]]
    # 0.8 m over 0.5 m bins -> two bins filled
    assert np.array_equal(col[:, 0], [1, 1, 0, 0])
    assert np.allclose(col[:2, 1], [0.125, 0.375])
    assert np.allclose(col[2:, 1], 0.0)


def test_lidar_shadowed_box_is_empty_and_reappears_without_the_wall():
    wall = WallSegment(1.5, -2.0, 1.5, 2.0)
    box = Box3D(3.0, 0.0, 0.0, 2.0, 2.0, 0.8)
    shadowed = make_scene(boxes=[box], walls=[wall])
    voxel, _ = lidar_proxy_encode(shadowed, 0, SHAPE)
    xy = cell_centers_xy(SHAPE)
    in_box = np.array([[point_in_footprint(box, *xy[i, j]) for j in range(16)]
                       for i in range(16)])
    assert not (voxel.data[:, :, 0, 0][in_box] > 0).any()

    open_scene = make_scene(boxes=[box])
    voxel2, _ = lidar_proxy_encode(open_scene, 0, SHAPE)
    occupied2 = voxel2.data[:, :, 0, 0] > 0
    assert occupied2[in_box].all()
    # monotone: opening the wall can only add cells outside the wall's own strip
    assert (voxel.data[:, :, 0, 0][in_box] <= voxel2.data[:, :, 0, 0][in_box]).all()


def test_lidar_grid_is_expressed_in_the_agents_own_frame():
    # agent 1 sits flipped 180 degrees so the square box lands at the same
    # local offset; the two occupancy grids must be identical
    box = Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8)
    scene = make_scene(boxes=[box],
                       agents=(AgentSpec(0, Pose()),
                               AgentSpec(1, Pose(x=4.0, yaw=180.0))))
    v0, _ = lidar_proxy_encode(scene, 0, SHAPE)
    v1, _ = lidar_proxy_encode(scene, 1, SHAPE)
    assert np.array_equal(v0.data, v1.data)


def test_lidar_is_deterministic():
    scene = make_scene(boxes=[Box3D(2.0, 1.0, 0.0, 2.0, 2.0, 0.8)],
                       walls=[WallSegment(0.0, -3.0, 2.0, -3.0)])
    a, _ = lidar_proxy_encode(scene, 0, SHAPE)
    b, _ = lidar_proxy_encode(scene, 0, SHAPE)
    assert np.array_equal(a.data, b.data)


def test_lidar_bev_is_the_collapse_of_the_voxels():
    scene = make_scene(boxes=[Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8)])
    voxel, bev = lidar_proxy_encode(scene, 0, SHAPE)
    assert np.allclose(bev.data, voxel.data.sum(axis=2))


def test_lidar_needs_two_channels():
    with pytest.raises(ShapeError):
        lidar_proxy_encode(make_scene(), 0, GridShape(8, 8, 2, 1))


# -- camera -------------------------------------------------------------------


def test_camera_empty_scene_is_uniform_depth():
    scene = make_scene(sensor_range=8.0)
    cam = camera_proxy_encode(scene, 0, SHAPE)
    filled = cam.data[:, :, :, 0]
    nz = filled[filled > 0]
    assert nz.size > 0
    assert np.allclose(nz, 0.25)  # 1 / l_bins
    # exactly one range bin per live cell
    assert ((filled > 0).sum(axis=2) <= 1).all()


def test_camera_tags_object_rays_with_the_class_channel():
    scene = make_scene(boxes=[Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8, class_id=1)],
                       sensor_range=8.0)
    cam = camera_proxy_encode(scene, 0, SHAPE)
    class_hits = cam.data[:, :, :, 2].sum(axis=2)
    assert class_hits.max() > 0
    # the cell straight toward the box carries the class code
    # center (1.25, 0.25) -> row 10, col 8 under 0.5 m cells
    assert class_hits[10, 8] > 0


def test_camera_far_shadow_gets_exactly_zero_weight():
    # 1 m bins: the ray through (3.75, 0.25) first hits the box at ~1.0 m
    # (bin 1) while the cell itself sits at 3.76 m (bin 3). With halfwidth 1
    # the kernel support ends at bin 2, so the shadowed cell gets nothing.
    scene = make_scene(boxes=[Box3D(1.5, 0.0, 0.0, 1.0, 3.0, 0.8)],
                       sensor_range=4.0)
    cam = camera_proxy_encode(scene, 0, SHAPE, halfwidth=1)
    assert cam.data[15, 8].sum() == 0.0


def test_camera_fov_masks_rear_cells():
    scene = make_scene(sensor_range=8.0)
    cam = camera_proxy_encode(scene, 0, SHAPE, fov_deg=90.0)
    # +x half-plane only: rows below center look backward
    assert cam.data[:4].sum() == 0.0
    assert cam.data[12:].sum() > 0.0


def test_camera_channel_budget_is_validated():
    scene = make_scene(boxes=[Box3D(2.0, 0.0, 0.0, 2.0, 2.0, 0.8, class_id=3)])
    with pytest.raises(ShapeError):
        camera_proxy_encode(scene, 0, SHAPE)  # needs 5 channels, has 4
    with pytest.raises(ParameterError):
        camera_proxy_encode(make_scene(), 0, SHAPE, fov_deg=0.0)
