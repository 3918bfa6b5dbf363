"""The collaboration protocol: byte arithmetic, budgets, and the full loop.

The byte totals asserted here were derived by hand from the message layout
(payload floats times four, instances at 8 + 4*channels + 4 bytes) before
the protocol code produced them.
"""

from dataclasses import replace

import numpy as np
import pytest

from copersim.errors import ParameterError, ProtocolError
from copersim.exchange import (
    ProtocolParams,
    comm_volume,
    dense_map_log2,
    ideal_heatmap,
    map_cell,
    nominal_byte_breakdown,
    plan_budget,
    rasterize_sparse_heatmap,
    reduction_vs,
    run_exchange,
)
from copersim.fusion import CompressionStrategy
from copersim.grids import GridShape, Pose
from copersim.scene import AgentSpec, Scene, SceneParams, generate_scene, occluded_from_ego
from copersim.weights import default_weights

SMALL = GridShape(16, 16, 2, 4, cell_size_m=0.5, z_size_m=0.5)

SCENE_PARAMS = SceneParams(n_agents=2, n_objects=3, n_walls=1, occluded_count=0,
                           seed=11, extent_m=(16.0, 16.0), min_spacing_m=4.0)


def small_params(**overrides):
    base = dict(shape=SMALL, k_ic=8, k_ir=(12, 6), scales=2)
    base.update(overrides)
    return ProtocolParams(**base)


# -- volume metrics -----------------------------------------------------------


def test_comm_volume_is_log2_bytes():
    assert comm_volume(8) == 3.0
    assert f"{comm_volume(5120):.2f}" == "12.32"
    with pytest.raises(ParameterError):
        comm_volume(0)


def test_dense_map_volume_fixture():
    # 256 * 256 * 64 float32 = 2^24 bytes
    assert dense_map_log2(256, 256, 64) == 24.0


def test_reduction_against_baseline():
    assert reduction_vs(24.0, 24.0) == 0.0
    assert reduction_vs(23.0, 24.0) == pytest.approx(50.0)
    assert reduction_vs(20.16, 23.18) == pytest.approx(87.672, abs=5e-4)


# -- protocol parameters ------------------------------------------------------


def test_protocol_params_validation():
    with pytest.raises(ParameterError):
        small_params(scales=0)
    with pytest.raises(ParameterError):
        small_params(k_ir=(12,))  # two scales need two entries
    with pytest.raises(ParameterError):
        small_params(k_ic=-1)
    with pytest.raises(ParameterError):
        small_params(budget_bytes=-5)
    with pytest.raises(ParameterError):
        small_params(heatmap_mode="psychic")


# -- closed-form byte plans ---------------------------------------------------


def test_nominal_bytes_for_the_reference_configuration():
    """Hand-derived totals for the stock two-agent setup.

    voxel: 2 senders x (16*16*4*16 floats * 4B)          = 131072
    heat:  2 senders x 4*(64*64 + 32*32 + 16*16)         =  43008
    query: 2 pairs x 3 scales x 20 cells x 8B            =    960
    reply: 2 pairs x 3 scales x 20 x (8 + 64 + 4)B       =   9120
    bcast: 2 senders x (100+50+25) x 76B                 =  26600
    """
    params = ProtocolParams(shape=GridShape(64, 64, 8, 16, 0.5, 0.5))
    got = nominal_byte_breakdown((0, 1), params)
    assert got["VOXEL_PRIOR"] == 131072
    assert got["HEATMAP_SHARE"] == 43008
    assert got["INSTANCE_QUERY"] == 960
    assert got["INSTANCE_REPLY"] == 9120
    assert got["INSTANCE_BROADCAST"] == 26600
    assert sum(got.values()) == 210760
    assert plan_budget((0, 1), params).nominal_bytes == 210760


def test_single_agent_plans_zero_bytes():
    params = small_params()
    assert sum(nominal_byte_breakdown((0,), params).values()) == 0
    plan = plan_budget((0,), params)
    assert plan.nominal_bytes == 0 and plan.planned_bytes == 0


def test_budget_sheds_broadcast_instances_first():
    params = small_params()
    nominal = plan_budget((0, 1), params).nominal_bytes
    unit = 8 + 4 * SMALL.channels + 4
    plan = plan_budget((0, 1), replace(params, budget_bytes=nominal - 3 * unit))
    assert plan.broadcast_drop == 3
    assert plan.k_ic == params.k_ic
    assert plan.heatmap_dropped == () and plan.voxel_dropped == ()
    assert plan.planned_bytes <= nominal - 3 * unit


def test_budget_zero_sheds_everything():
    plan = plan_budget((0, 1), small_params(budget_bytes=0))
    assert plan.planned_bytes == 0
    assert plan.k_ic == 0
    assert set(plan.heatmap_dropped) == {0, 1}
    assert set(plan.voxel_dropped) == {0, 1}


def test_budgets_are_always_respected():
    params = small_params()
    nominal = plan_budget((0, 1, 2), params).nominal_bytes
    for budget in (nominal, nominal // 2, nominal // 4, nominal // 10, 100, 0):
        plan = plan_budget((0, 1, 2), replace(params, budget_bytes=budget))
        assert plan.planned_bytes <= budget


# -- cell mapping helpers -----------------------------------------------------


def test_map_cell_identity_and_translation():
    assert map_cell(SMALL, 5, 9, Pose(), SMALL) == (5, 9)
    # source frame one cell toward +x in the destination frame
    assert map_cell(SMALL, 5, 9, Pose(x=0.5), SMALL) == (6, 9)
    assert map_cell(SMALL, 15, 0, Pose(x=1.0), SMALL) is None


def test_sparse_rasterization_keeps_peaks_single_cell():
    data = np.zeros((16, 16), dtype=np.float32)
    data[4, 4] = 1.0
    data[8, 8] = 0.3  # below the sharing threshold
    out = rasterize_sparse_heatmap(data, SMALL, Pose(), SMALL)
    assert out.data[4, 4] == 1.0
    assert out.data.sum() == 1.0


def test_sparse_rasterization_max_combines_collisions():
    src = GridShape(16, 16, 1, 1, cell_size_m=0.5)
    dst = GridShape(8, 8, 1, 1, cell_size_m=1.0)  # two source cells per dest
    data = np.zeros((16, 16), dtype=np.float32)
    data[4, 4] = 0.7
    data[4, 5] = 0.9
    out = rasterize_sparse_heatmap(data, src, Pose(), dst)
    assert out.data.max() == np.float32(0.9)
    assert (out.data > 0).sum() == 1


# -- ideal heatmaps -----------------------------------------------------------


def test_ideal_heatmap_marks_only_visible_centers():
    scene = generate_scene(SceneParams(
        n_agents=2, n_objects=4, n_walls=2, occluded_count=1, seed=13,
        extent_m=(16.0, 16.0), min_spacing_m=4.0))
    shape = GridShape(64, 64, 2, 4, cell_size_m=0.5)
    hm = ideal_heatmap(scene, 0, shape)
    hidden = occluded_from_ego(scene)
    assert hidden
    for idx in hidden:
        box = scene.boxes[idx]
        gh = round(box.x / 0.5 + 32 - 0.5)
        gw = round(box.y / 0.5 + 32 - 0.5)
        assert hm.data[gh, gw] == 0.0
    assert hm.data.sum() >= 1.0  # ego does see something


# -- the full protocol --------------------------------------------------------


def test_exchange_charges_exactly_the_closed_form():
    scene = generate_scene(SCENE_PARAMS)
    params = small_params()
    result = run_exchange(scene, params, default_weights(SMALL.channels))
    want = nominal_byte_breakdown((0, 1), params)
    got = result.ledger.bytes_by_kind()
    for kind, count in want.items():
        if count:
            assert got[kind] == count
    assert result.ledger.total_bytes == sum(want.values())
    assert result.plan.nominal_bytes == result.ledger.total_bytes


def test_exchange_is_deterministic():
    scene = generate_scene(SCENE_PARAMS)
    params = small_params()
    ws = default_weights(SMALL.channels)
    a = run_exchange(scene, params, ws)
    b = run_exchange(scene, params, ws)
    assert a.ledger.table() == b.ledger.table()
    for aid in (0, 1):
        assert a.planes[aid].data.tobytes() == b.planes[aid].data.tobytes()
        assert a.consensus[aid].data.tobytes() == b.consensus[aid].data.tobytes()


def test_single_agent_exchange_sends_nothing():
    scene = generate_scene(replace(SCENE_PARAMS, n_agents=1, occluded_count=0))
    result = run_exchange(scene, small_params(), default_weights(SMALL.channels))
    assert result.ledger.entries == []
    assert result.ledger.total_bytes == 0


def test_zero_budget_collapses_to_solo_computation_bit_for_bit():
    scene = generate_scene(SCENE_PARAMS)
    params = small_params(budget_bytes=0)
    ws = default_weights(SMALL.channels)
    together = run_exchange(scene, params, ws)
    assert together.ledger.total_bytes == 0
    assert together.ledger.entries == []

    solo_scene = replace(scene, agents=(scene.agents[0],))
    solo = run_exchange(solo_scene, small_params(), ws)
    assert together.planes[0].data.tobytes() == solo.planes[0].data.tobytes()
    assert together.consensus[0].data.tobytes() == solo.consensus[0].data.tobytes()


def test_off_strategy_shares_no_voxels_but_everything_else():
    scene = generate_scene(SCENE_PARAMS)
    params = small_params(strategy=CompressionStrategy.from_name("off"))
    result = run_exchange(scene, params, default_weights(SMALL.channels))
    got = result.ledger.bytes_by_kind()
    assert "VOXEL_PRIOR" not in got
    assert got["HEATMAP_SHARE"] > 0
    assert any("shares no voxel priors" in n for n in result.ledger.notes)


def test_exchange_rejects_malformed_agent_lists():
    scene = generate_scene(SCENE_PARAMS)
    params = small_params()
    ws = default_weights(SMALL.channels)
    dup = replace(scene, agents=(scene.agents[0], replace(scene.agents[1], agent_id=0)))
    with pytest.raises(ProtocolError):
        run_exchange(dup, params, ws)
    swapped = replace(scene, agents=(scene.agents[1], scene.agents[0]))
    with pytest.raises(ProtocolError):
        run_exchange(swapped, params, ws)


def test_consensus_recovers_a_peer_only_object():
    scene = generate_scene(SceneParams(
        n_agents=2, n_objects=4, n_walls=2, occluded_count=1, seed=13,
        extent_m=(16.0, 16.0), min_spacing_m=4.0))
    shape = GridShape(64, 64, 2, 8, cell_size_m=0.5)
    params = ProtocolParams(shape=shape, k_ic=8, k_ir=(24, 12), scales=2,
                            heatmap_mode="ideal")
    result = run_exchange(scene, params, default_weights(8))

    hidden = occluded_from_ego(scene)
    assert hidden
    for idx in hidden:
        box = scene.boxes[idx]
        gh = round(box.x / 0.5 + 32 - 0.5)
        gw = round(box.y / 0.5 + 32 - 0.5)
        window = np.s_[max(0, gh - 2):gh + 3, max(0, gw - 2):gw + 3]
        assert result.own_heat[0].data[window].max() == 0.0
        assert result.consensus[0].data[window].max() >= 0.99
