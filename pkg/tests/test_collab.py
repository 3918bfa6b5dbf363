"""Confidence heatmaps, top-k selection, and instance-level collaboration."""

import math

import numpy as np
import pytest

from copersim.collab import (
    Heatmap,
    InstanceVector,
    collaborate_multiscale,
    discrepancy,
    downsample_heatmap,
    heatmap_head,
    instance_complete,
    instance_refine,
    instances_at,
    merge_heatmaps_max,
    positional_encoding_2d,
    select_k_max,
    select_k_min,
)
from copersim.errors import ParameterError, ProtocolError, ShapeError
from copersim.grids import BevFeature, GridShape
from copersim.weights import default_weights


def bev(shape, data, frame=0):
    return BevFeature(shape, np.asarray(data, dtype=np.float32), frame)


def heat(shape, data, scale=0):
    return Heatmap(shape, np.asarray(data, dtype=np.float32), scale=scale)


def softmax_rows(logits):
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


# -- heatmap head -------------------------------------------------------------


def test_proxy_head_separates_occupied_from_empty():
    shape = GridShape(4, 4, 1, 2)
    data = np.zeros(shape.bev_dims)
    data[1, 2, 0] = 1.0  # one-hot occupancy
    hm = heatmap_head(bev(shape, data), mode="proxy")
    assert hm.data[1, 2] > 0.7          # sigmoid(1) = 0.731...
    assert hm.data[0, 0] == 0.5
    assert abs(hm.data[1, 2] - 1.0 / (1.0 + math.exp(-1.0))) < 1e-6


def test_conv_head_of_silence_is_half():
    shape = GridShape(4, 4, 1, 4)
    hm = heatmap_head(bev(shape, np.zeros(shape.bev_dims)),
                      ws=default_weights(4), mode="conv")
    assert np.allclose(hm.data, 0.5)


def test_conv_head_requires_weights():
    shape = GridShape(2, 2, 1, 2)
    b = bev(shape, np.zeros(shape.bev_dims))
    with pytest.raises(ParameterError):
        heatmap_head(b, mode="conv")
    with pytest.raises(ParameterError):
        heatmap_head(b, mode="nonsense")


def test_heatmap_container_rejects_out_of_range_values():
    shape = GridShape(2, 2, 1, 1)
    with pytest.raises(ShapeError):
        Heatmap(shape, np.full((2, 2), 1.5, dtype=np.float32))
    with pytest.raises(ShapeError):
        Heatmap(shape, np.full((2, 3), 0.5, dtype=np.float32))


# -- discrepancy --------------------------------------------------------------


def test_discrepancy_of_identical_maps_is_zero():
    shape = GridShape(3, 3, 1, 1)
    h = heat(shape, np.random.default_rng(0).uniform(size=(3, 3)))
    assert np.allclose(discrepancy(h, h).data, 0.0)


def test_discrepancy_is_antisymmetric():
    shape = GridShape(3, 3, 1, 1)
    rng = np.random.default_rng(1)
    a = heat(shape, rng.uniform(size=(3, 3)))
    b = heat(shape, rng.uniform(size=(3, 3)))
    assert np.allclose(discrepancy(a, b).data, -discrepancy(b, a).data)


def test_discrepancy_fixture():
    shape = GridShape(1, 1, 1, 1)
    d = discrepancy(heat(shape, [[0.1]]), heat(shape, [[0.9]]))
    assert abs(d.data[0, 0] + 0.8) < 1e-7


def test_discrepancy_rejects_scale_mismatch():
    shape = GridShape(2, 2, 1, 1)
    a = heat(shape, np.zeros((2, 2)), scale=0)
    b = heat(shape, np.zeros((2, 2)), scale=1)
    with pytest.raises(ShapeError):
        discrepancy(a, b)


def test_downsample_halves_and_bumps_scale():
    shape = GridShape(4, 4, 1, 1)
    hm = downsample_heatmap(heat(shape, np.full((4, 4), 0.25)))
    assert hm.data.shape == (2, 2)
    assert hm.scale == 1
    assert np.allclose(hm.data, 0.25)


def test_merge_takes_cellwise_maximum():
    shape = GridShape(2, 2, 1, 1)
    a = heat(shape, [[0.1, 0.9], [0.4, 0.4]])
    b = heat(shape, [[0.8, 0.2], [0.4, 0.5]])
    merged = merge_heatmaps_max(a, [b])
    assert np.allclose(merged.data, [[0.8, 0.9], [0.4, 0.5]])


# -- top-k selection ----------------------------------------------------------


def test_select_k_breaks_ties_row_major():
    values = np.zeros((2, 3))
    assert select_k_max(values, 3).tolist() == [[0, 0], [0, 1], [0, 2]]
    assert select_k_min(values, 2).tolist() == [[0, 0], [0, 1]]


def test_select_k_matches_full_sort_oracle():
    rng = np.random.default_rng(2)
    values = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=(16, 16))  # many ties
    flat = values.reshape(-1)
    order_min = np.argsort(flat, kind="stable")
    order_max = np.argsort(-flat, kind="stable")
    for k in (1, 5, 20, 256):
        want_min = np.stack([order_min[:k] // 16, order_min[:k] % 16], axis=-1)
        want_max = np.stack([order_max[:k] // 16, order_max[:k] % 16], axis=-1)
        assert np.array_equal(select_k_min(values, k), want_min)
        assert np.array_equal(select_k_max(values, k), want_max)


def test_select_k_validates_arguments():
    values = np.zeros((4, 4))
    with pytest.raises(ParameterError):
        select_k_max(values, 17)
    with pytest.raises(ParameterError):
        select_k_max(values, 0)
    with pytest.raises(ShapeError):
        select_k_max(np.zeros((2, 2, 2)), 1)


def test_instances_at_packages_feature_and_confidence():
    shape = GridShape(2, 2, 1, 3)
    plane = bev(shape, np.arange(12).reshape(2, 2, 3))
    hm = heat(shape, [[0.1, 0.2], [0.3, 0.4]])
    ivs = instances_at(plane, hm, np.array([[1, 0]]))
    assert ivs[0].h == 1 and ivs[0].w == 0
    assert np.array_equal(ivs[0].feature, [6, 7, 8])
    assert abs(ivs[0].heat - 0.3) < 1e-7
    with pytest.raises(ShapeError):
        instances_at(plane, hm, np.array([[2, 0]]))


# -- positional encoding ------------------------------------------------------


def test_positional_encoding_origin_alternates_sin_cos():
    pe = positional_encoding_2d(3, 3, 8)
    assert pe.shape == (3, 3, 8)
    # position 0: sin(0)=0, cos(0)=1 in both the row and column halves
    assert np.allclose(pe[0, 0], [0, 1, 0, 1, 0, 1, 0, 1])
    with pytest.raises(ShapeError):
        positional_encoding_2d(3, 3, 6)


def test_positional_encoding_distinguishes_cells():
    pe = positional_encoding_2d(4, 4, 8)
    flat = pe.reshape(16, 8)
    assert len({tuple(np.round(row, 6)) for row in flat}) == 16


# -- instance completion ------------------------------------------------------


def test_completion_replaces_the_answered_cell_exactly():
    shape = GridShape(2, 2, 1, 2)
    ws = default_weights(2)
    plane = bev(shape, np.ones(shape.bev_dims))
    reply = {1: [InstanceVector(0, 1, np.array([3.0, -2.0]), 0.9)]}
    out = instance_complete(plane, reply, ws)
    assert np.allclose(out.data[0, 1], [3.0, -2.0])  # identity value projection
    untouched = np.ones((2, 2), dtype=bool)
    untouched[0, 1] = False
    assert np.array_equal(out.data[untouched], plane.data[untouched])


def test_completion_sums_over_senders_at_a_shared_cell():
    shape = GridShape(2, 2, 1, 2)
    ws = default_weights(2)
    plane = bev(shape, np.zeros(shape.bev_dims))
    replies = {
        2: [InstanceVector(1, 1, np.array([1.0, 2.0]), 0.8)],
        5: [InstanceVector(1, 1, np.array([10.0, 20.0]), 0.7)],
    }
    out = instance_complete(plane, replies, ws)
    assert np.allclose(out.data[1, 1], [11.0, 22.0])


def test_completion_with_no_replies_is_bit_exact_identity():
    shape = GridShape(3, 3, 1, 4)
    plane = bev(shape, np.random.default_rng(3).normal(size=shape.bev_dims))
    out = instance_complete(plane, {}, default_weights(4))
    assert np.array_equal(out.data, plane.data)
    out2 = instance_complete(plane, {1: []}, default_weights(4))
    assert np.array_equal(out2.data, plane.data)


def test_completion_names_the_offending_sender():
    shape = GridShape(2, 2, 1, 2)
    plane = bev(shape, np.zeros(shape.bev_dims))
    bad = {3: [InstanceVector(5, 0, np.array([1.0, 1.0]), 0.5)]}
    with pytest.raises(ProtocolError, match="sender 3"):
        instance_complete(plane, bad, default_weights(2))
    short = {4: [InstanceVector(0, 0, np.array([1.0]), 0.5)]}
    with pytest.raises(ProtocolError, match="sender 4"):
        instance_complete(plane, short, default_weights(2))


# -- instance refinement ------------------------------------------------------


def test_refinement_with_no_instances_is_bit_exact_identity():
    shape = GridShape(3, 3, 1, 4)
    plane = bev(shape, np.random.default_rng(4).normal(size=shape.bev_dims))
    out = instance_refine(plane, [], default_weights(4))
    assert np.array_equal(out.data, plane.data)


def test_refinement_matches_two_stage_attention_oracle():
    """Re-derive both attention rounds with explicit loops and random weights."""
    c = 4
    shape = GridShape(4, 4, 1, c)
    rng = np.random.default_rng(5)
    ws = default_weights(c)
    slots = ["ir.self.wq", "ir.self.wk", "ir.self.wv",
             "ir.cross.wq", "ir.cross.wk", "ir.cross.wv"]
    for name in slots:
        ws.set(name, rng.normal(size=(c, c)).astype(np.float32))
    plane = bev(shape, rng.normal(size=shape.bev_dims))
    instances = [
        InstanceVector(0, 0, rng.normal(size=c).astype(np.float32), 0.9),
        InstanceVector(1, 3, rng.normal(size=c).astype(np.float32), 0.8),
        InstanceVector(2, 2, rng.normal(size=c).astype(np.float32), 0.7),
        InstanceVector(3, 1, rng.normal(size=c).astype(np.float32), 0.6),
    ]
    got = instance_refine(plane, instances, ws)

    pe = positional_encoding_2d(4, 4, c).astype(np.float64)
    f = np.stack([iv.feature.astype(np.float64) + pe[iv.h, iv.w]
                  for iv in instances])
    w = {name: ws.get(name).astype(np.float64) for name in slots}

    upd = np.zeros_like(f)
    for i in range(len(f)):
        logits = np.array([
            (f[i] @ w["ir.self.wq"]) @ (f[j] @ w["ir.self.wk"]) / math.sqrt(c)
            for j in range(len(f))
        ])
        probs = softmax_rows(logits[None])[0]
        upd[i] = sum(probs[j] * (f[j] @ w["ir.self.wv"]) for j in range(len(f)))

    want = plane.data.astype(np.float64).copy()
    for i in range(4):
        for j in range(4):
            q = plane.data[i, j].astype(np.float64) @ w["ir.cross.wq"]
            logits = np.array([
                q @ (upd[t] @ w["ir.cross.wk"]) / math.sqrt(c)
                for t in range(len(upd))
            ])
            probs = softmax_rows(logits[None])[0]
            want[i, j] += sum(probs[t] * (upd[t] @ w["ir.cross.wv"])
                              for t in range(len(upd)))
    assert np.abs(got.data - want).max() < 1e-5


def test_refinement_rejects_out_of_grid_instances():
    shape = GridShape(2, 2, 1, 4)
    plane = bev(shape, np.zeros(shape.bev_dims))
    with pytest.raises(ProtocolError):
        instance_refine(plane, [InstanceVector(2, 0, np.zeros(4), 0.5)],
                        default_weights(4))


# -- multiscale orchestration -------------------------------------------------


def test_multiscale_idle_single_scale_passes_through():
    shape = GridShape(4, 4, 1, 4)
    plane = bev(shape, np.random.default_rng(6).normal(size=shape.bev_dims))
    out = collaborate_multiscale([plane], [{}], [[]], default_weights(4))
    assert np.allclose(out.data, plane.data)


def test_multiscale_idle_pyramid_sums_constant_planes():
    c = 4
    ws = default_weights(c)
    planes = [
        bev(GridShape(4, 4, 1, c), np.full((4, 4, c), 0.25)),
        bev(GridShape(2, 2, 1, c), np.full((2, 2, c), 0.25)),
        bev(GridShape(1, 1, 1, c), np.full((1, 1, c), 0.25)),
    ]
    out = collaborate_multiscale(planes, [{}, {}, {}], [[], [], []], ws)
    assert np.allclose(out.data, 0.75)
    assert out.shape.h_cells == 4


def test_multiscale_validates_lengths():
    shape = GridShape(2, 2, 1, 4)
    plane = bev(shape, np.zeros(shape.bev_dims))
    with pytest.raises(ParameterError):
        collaborate_multiscale([], [], [], default_weights(4))
    with pytest.raises(ShapeError):
        collaborate_multiscale([plane], [{}, {}], [[]], default_weights(4))
