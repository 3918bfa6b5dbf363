"""Grid containers, warping, resampling, and the attention kernel.

The attention tests compare against a deliberately naive double-loop
implementation written here first — the library must match the oracle,
never the other way around.
"""

import math

import numpy as np
import pytest

from copersim.errors import ParameterError, ShapeError
from copersim.grids import (
    BevFeature,
    GridShape,
    Pose,
    VoxelFeature,
    attention,
    attention_batched,
    cell_centers_xy,
    collapse_to_bev,
    relative_pose,
    resample_bev,
    sigmoid,
    softmax,
    warp_bev_to_frame,
    warp_to_frame,
    zeros_bev,
    zeros_voxel,
)


def attention_oracle(q, k, v):
    """Brute-force scaled dot-product attention, one output row at a time."""
    m, c = q.shape
    n = k.shape[0]
    out = np.zeros((m, v.shape[1]), dtype=np.float64)
    for i in range(m):
        logits = np.array([np.dot(q[i], k[j]) / math.sqrt(c) for j in range(n)])
        logits = logits - logits.max()
        w = np.exp(logits)
        w = w / w.sum()
        for j in range(n):
            out[i] += w[j] * v[j]
    return out


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def test_attention_single_key_returns_the_value_row():
    q = np.array([[3.0, -1.0], [0.5, 0.5]])
    k = np.array([[1.0, 2.0]])
    v = np.array([[7.0, -4.0]])
    out = attention(q, k, v)
    assert np.allclose(out, [[7.0, -4.0], [7.0, -4.0]])


def test_attention_identical_keys_average_the_values():
    q = np.array([[1.0, 0.0, 2.0]])
    k = np.tile([0.3, -0.7, 1.1], (4, 1))
    v = np.array([[1.0], [2.0], [3.0], [6.0]])
    out = attention(q, k, v)
    assert np.allclose(out, [[3.0]])


def test_attention_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    q = rng.normal(size=(8, 16))
    k = rng.normal(size=(5, 16))
    v = rng.normal(size=(5, 16))
    got = attention(q, k, v)
    want = attention_oracle(q, k, v)
    assert np.abs(got - want).max() < 1e-5


def test_attention_output_is_a_convex_combination_of_values():
    # weights sum to one, so every output coordinate stays inside the
    # value column's [min, max] range
    rng = np.random.default_rng(3)
    q = rng.normal(size=(6, 4)) * 3
    k = rng.normal(size=(9, 4))
    v = rng.normal(size=(9, 7))
    out = attention(q, k, v)
    lo, hi = v.min(axis=0), v.max(axis=0)
    assert (out >= lo - 1e-9).all()
    assert (out <= hi + 1e-9).all()


def test_attention_shape_mismatches_raise():
    q = np.zeros((2, 3))
    with pytest.raises(ShapeError):
        attention(q, np.zeros((2, 4)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        attention(q, np.zeros((2, 3)), np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        attention(q, np.zeros(3), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        attention(np.array([[np.nan, 0.0]]), np.zeros((1, 2)), np.zeros((1, 2)))


def test_attention_mask_excludes_keys_exactly():
    rng = np.random.default_rng(8)
    q = rng.normal(size=(1, 4, 8))
    k = rng.normal(size=(1, 6, 8))
    v = rng.normal(size=(1, 6, 8))
    valid = np.array([[True, False, True, True, False, True]])
    got = attention_batched(q, k, v, valid)[0]
    keep = valid[0]
    want = attention_oracle(q[0], k[0][keep], v[0][keep])
    assert np.abs(got - want).max() < 1e-10


def test_attention_mask_must_keep_one_key_per_row():
    with pytest.raises(ShapeError):
        attention_batched(np.zeros((1, 1, 2)), np.zeros((1, 3, 2)),
                          np.zeros((1, 3, 2)), np.zeros((1, 3), dtype=bool))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    w = softmax(rng.normal(size=(10, 7)) * 50)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert (w >= 0).all()


def test_sigmoid_is_stable_at_extremes():
    x = np.array([-1e4, -1.0, 0.0, 1.0, 1e4])
    y = sigmoid(x)
    assert y[0] == 0.0 and y[-1] == 1.0
    assert y[2] == 0.5
    assert np.isfinite(y).all()


# ---------------------------------------------------------------------------
# shapes and poses
# ---------------------------------------------------------------------------


def test_grid_shape_rejects_degenerate_dimensions():
    with pytest.raises(ShapeError):
        GridShape(0, 4, 4, 4)
    with pytest.raises(ShapeError):
        GridShape(4, 4, 4, 4, cell_size_m=0.0)


def test_downscaled_ceil_halves_plane_dims():
    shape = GridShape(64, 63, 8, 16, cell_size_m=0.5)
    s1 = shape.downscaled(1)
    s2 = shape.downscaled(2)
    assert (s1.h_cells, s1.w_cells) == (32, 32)
    assert (s2.h_cells, s2.w_cells) == (16, 16)
    assert s1.cell_size_m == 1.0
    assert s2.l_bins == shape.l_bins


def test_pose_normalizes_angles_to_half_open_range():
    p = Pose(yaw=270.0, pitch=-181.0, roll=540.0)
    assert p.yaw == -90.0
    assert p.pitch == 179.0
    assert p.roll == 180.0 or p.roll == -180.0


def test_relative_pose_of_a_frame_in_itself_is_identity():
    p = Pose(3.0, -2.0, 1.0, yaw=40.0, pitch=5.0, roll=-10.0)
    rel = relative_pose(p, p)
    assert rel.is_identity(tol=1e-9)


def test_relative_pose_round_trips_points():
    a = Pose(1.0, 2.0, 0.0, yaw=30.0)
    b = Pose(-4.0, 0.5, 0.0, yaw=-75.0)
    rel = relative_pose(a, b)  # a's frame in b's frame
    pts = np.random.default_rng(5).normal(size=(10, 3))
    world_via_a = a.apply(pts)
    world_via_b = b.apply(rel.apply(pts))
    assert np.allclose(world_via_a, world_via_b, atol=1e-9)


def test_feature_containers_validate_shape_and_finiteness():
    shape = GridShape(2, 2, 2, 3)
    with pytest.raises(ShapeError):
        VoxelFeature(shape, np.zeros((2, 2, 2, 4)))
    bad = np.zeros((2, 2, 3))
    bad[0, 0, 0] = np.inf
    with pytest.raises(ShapeError):
        BevFeature(shape, bad)
    assert zeros_voxel(shape).byte_size == 2 * 2 * 2 * 3 * 4
    assert zeros_bev(shape).byte_size == 2 * 2 * 3 * 4


# ---------------------------------------------------------------------------
# warping
# ---------------------------------------------------------------------------


def test_warp_identity_is_bit_exact():
    shape = GridShape(4, 4, 2, 3)
    rng = np.random.default_rng(1)
    v = VoxelFeature(shape, rng.normal(size=shape.voxel_dims).astype(np.float32))
    out = warp_to_frame(v, Pose(), shape)
    assert np.array_equal(out.data, v.data)


def test_warp_one_cell_translation_shifts_the_grid():
    shape = GridShape(5, 4, 2, 2, cell_size_m=0.5)
    rng = np.random.default_rng(2)
    v = VoxelFeature(shape, rng.uniform(size=shape.voxel_dims).astype(np.float32))
    # source frame sits one cell down +x in the target frame
    out = warp_to_frame(v, Pose(x=0.5), shape)
    assert np.allclose(out.data[1:], v.data[:-1], atol=1e-6)
    assert np.allclose(out.data[0], 0.0)


def test_warp_quarter_turn_matches_array_rotation():
    """yaw=90 on a square grid must be an exact index permutation.

    Grid-aligned cell centers land exactly on source cell centers, so
    trilinear sampling degenerates to a gather; the result is np.rot90.
    """
    shape = GridShape(6, 6, 2, 3, cell_size_m=0.5)
    rng = np.random.default_rng(4)
    v = VoxelFeature(shape, rng.normal(size=shape.voxel_dims).astype(np.float32))
    out = warp_to_frame(v, Pose(yaw=90.0), shape)
    want = np.rot90(v.data, k=1, axes=(0, 1))
    assert np.abs(out.data - want).max() < 1e-5


def test_warp_bev_quarter_turn_matches_array_rotation():
    shape = GridShape(6, 6, 1, 2, cell_size_m=1.0)
    rng = np.random.default_rng(6)
    b = BevFeature(shape, rng.normal(size=shape.bev_dims).astype(np.float32))
    out = warp_bev_to_frame(b, Pose(yaw=90.0), shape)
    want = np.rot90(b.data, k=1, axes=(0, 1))
    assert np.abs(out.data - want).max() < 1e-5


def test_warp_cannot_change_channel_count():
    v = zeros_voxel(GridShape(4, 4, 2, 3))
    with pytest.raises(ShapeError):
        warp_to_frame(v, Pose(), GridShape(4, 4, 2, 5))


def test_cell_centers_are_symmetric_about_the_origin():
    xy = cell_centers_xy(GridShape(4, 4, 1, 1, cell_size_m=0.5))
    assert xy[0, 0, 0] == -0.75
    assert xy[-1, -1, 0] == 0.75
    assert np.allclose(xy.sum(axis=(0, 1)), 0.0)


# ---------------------------------------------------------------------------
# collapse and resampling
# ---------------------------------------------------------------------------


def test_collapse_single_bin_identity_projection_is_the_slice():
    shape = GridShape(3, 3, 1, 2)
    rng = np.random.default_rng(7)
    v = VoxelFeature(shape, rng.normal(size=shape.voxel_dims).astype(np.float32))
    out = collapse_to_bev(v)
    assert np.allclose(out.data, v.data[:, :, 0, :])


def test_collapse_zero_voxel_leaves_only_the_bias():
    shape = GridShape(2, 2, 3, 2)
    v = zeros_voxel(shape)
    weight = np.eye(2, dtype=np.float32)
    bias = np.array([0.5, -1.5], dtype=np.float32)
    out = collapse_to_bev(v, proj=(weight, bias))
    assert np.allclose(out.data, np.broadcast_to(bias, (2, 2, 2)))


def test_collapse_two_bin_fixture_sums_by_hand():
    shape = GridShape(2, 2, 2, 2)
    data = np.zeros(shape.voxel_dims, dtype=np.float32)
    data[0, 0, 0] = [1.0, 2.0]
    data[0, 0, 1] = [3.0, 4.0]
    data[1, 1, 0] = [5.0, -1.0]
    data[1, 1, 1] = [0.5, 0.5]
    out = collapse_to_bev(VoxelFeature(shape, data))
    assert np.allclose(out.data[0, 0], [4.0, 6.0])
    assert np.allclose(out.data[1, 1], [5.5, -0.5])
    assert np.allclose(out.data[0, 1], 0.0)


def test_collapse_is_linear_up_to_the_bias():
    shape = GridShape(3, 3, 2, 4)
    rng = np.random.default_rng(9)
    v1 = rng.normal(size=shape.voxel_dims).astype(np.float32)
    v2 = rng.normal(size=shape.voxel_dims).astype(np.float32)
    weight = rng.normal(size=(4, 3)).astype(np.float32)
    bias = rng.normal(size=3).astype(np.float32)
    proj = (weight, bias)
    a = 2.0
    lhs = collapse_to_bev(VoxelFeature(shape, a * v1 + v2), proj).data
    rhs = (a * collapse_to_bev(VoxelFeature(shape, v1), proj).data
           + collapse_to_bev(VoxelFeature(shape, v2), proj).data
           - a * bias)
    assert np.abs(lhs - rhs).max() < 1e-4


def test_collapse_rejects_bad_projection_shapes():
    v = zeros_voxel(GridShape(2, 2, 2, 3))
    with pytest.raises(ShapeError):
        collapse_to_bev(v, proj=(np.zeros((4, 2)), None))
    with pytest.raises(ShapeError):
        collapse_to_bev(v, proj=(np.zeros((3, 2)), np.zeros(3)))


@pytest.mark.parametrize("factor", [0.25, 0.5, 2, 4])
def test_resample_preserves_constant_planes(factor):
    shape = GridShape(8, 8, 1, 2)
    b = BevFeature(shape, np.full(shape.bev_dims, 0.625, dtype=np.float32))
    out = resample_bev(b, factor)
    assert np.allclose(out.data, 0.625)
    assert out.shape.h_cells == int(8 * factor)


def test_resample_down_is_block_mean():
    shape = GridShape(2, 2, 1, 1)
    b = BevFeature(shape, np.array([[1.0, 3.0], [5.0, 7.0]], dtype=np.float32)[..., None])
    out = resample_bev(b, 0.5)
    assert out.data.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 4.0
    assert out.shape.cell_size_m == shape.cell_size_m * 2


def test_resample_down_then_up_round_trips_constants():
    shape = GridShape(4, 4, 1, 3)
    b = BevFeature(shape, np.full(shape.bev_dims, -0.25, dtype=np.float32))
    out = resample_bev(resample_bev(b, 0.5), 2)
    assert np.array_equal(out.data, b.data)


def test_resample_rejects_unknown_factor():
    b = zeros_bev(GridShape(4, 4, 1, 1))
    with pytest.raises(ParameterError):
        resample_bev(b, 3)
