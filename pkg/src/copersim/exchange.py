"""Round-synchronous collaboration protocol, bandwidth ledger, and budgets.

One collaboration step runs four rounds, every message passing through the
binary wire format (encode, then decode — nothing is handed across agents
as live objects):

1. compressed LiDAR voxel priors are broadcast and mixed into each
   receiver's volume (stage one);
2. per-agent confidence heatmaps are broadcast;
3. each agent compares received maps against its own, asks peers for
   instances at its top-k demand cells per pyramid scale, and peers reply;
4. each agent broadcasts its own top-k instances per scale; everyone runs
   instance refinement and sums the pyramid.

Byte accounting charges message payloads only (see :mod:`copersim.wire`).
A byte budget is enforced by shedding, in order: broadcast instances
(lowest confidence first), then query width k, then whole heatmaps, then
whole voxel priors (both by descending sender id). A zero budget silences
every message, which makes each agent compute exactly what it would have
computed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .collab import (
    Heatmap,
    InstanceVector,
    discrepancy,
    downsample_heatmap,
    heatmap_head,
    instances_at,
    select_k_max,
    warp_heatmap,
)
from .collab import collaborate_multiscale
from .errors import ParameterError, ProtocolError, ShapeError
from .fusion import (
    CompressionStrategy,
    FusionResult,
    compress_voxel,
    decompress_voxel,
    fuse_local,
)
from .grids import (
    BevFeature,
    GridShape,
    Pose,
    VoxelFeature,
    relative_pose,
    resample_bev,
    warp_bev_to_frame,
    warp_to_frame,
)
from .scene import Scene, visible_boxes
from .sensors import camera_proxy_encode, lidar_proxy_encode
from .weights import WeightSet
from .wire import (
    BROADCAST,
    BroadcastMsg,
    HeatmapMsg,
    MessageKind,
    QueryMsg,
    ReplyMsg,
    VoxelPriorMsg,
    decode_message,
    encode_message,
    payload_bytes,
)

_SPARSE_THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# Bandwidth arithmetic
# ---------------------------------------------------------------------------


def comm_volume(byte_count: int) -> float:
    """Communication volume metric: log2 of the transmitted byte count."""
    if byte_count < 1:
        raise ParameterError("comm_volume needs at least 1 byte")
    return math.log2(byte_count)


def reduction_vs(ours_log2: float, baseline_log2: float) -> float:
    """Percent bandwidth saved by 'ours' against a baseline, from log2 volumes."""
    return 100.0 * (1.0 - 2.0 ** (ours_log2 - baseline_log2))


def dense_map_log2(h_cells: int, w_cells: int, channels: int) -> float:
    """Volume of sharing one dense float32 feature map of the given dims."""
    return comm_volume(h_cells * w_cells * channels * 4)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    kind: MessageKind
    sender: int
    receiver: int
    bytes: int


@dataclass(frozen=True)
class DropEntry:
    round: int
    kind: MessageKind
    sender: int
    receiver: int
    bytes: int
    reason: str


@dataclass
class CommLedger:
    """Append-only record of what went on the air and what was withheld."""

    entries: list[LedgerEntry] = field(default_factory=list)
    drops: list[DropEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def charge(self, round_no: int, msg) -> None:
        self.entries.append(LedgerEntry(
            round_no, msg.kind, msg.sender, msg.receiver, payload_bytes(msg)))

    def drop(self, round_no: int, kind: MessageKind, sender: int, receiver: int,
             byte_count: int, reason: str) -> None:
        self.drops.append(DropEntry(round_no, kind, sender, receiver, byte_count, reason))

    def note(self, text: str) -> None:
        self.notes.append(text)

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.entries)

    def bytes_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.kind.name] = out.get(e.kind.name, 0) + e.bytes
        return out

    def table(self) -> str:
        """Fixed-width text report; content is deterministic per run."""
        lines = [f"{'round':>5}  {'kind':<19}{'sender':>6}  {'receiver':>8}  "
                 f"{'bytes':>10}  {'log2':>6}"]
        for e in self.entries:
            rcv = "*" if e.receiver == BROADCAST else str(e.receiver)
            vol = f"{comm_volume(e.bytes):.2f}" if e.bytes else "n/a"
            lines.append(f"{e.round:>5}  {e.kind.name:<19}{e.sender:>6}  "
                         f"{rcv:>8}  {e.bytes:>10}  {vol:>6}")
        total = self.total_bytes
        vol = f"{comm_volume(total):.2f}" if total else "n/a"
        lines.append(f"total payload bytes: {total} (log2 volume {vol})")
        for d in self.drops:
            rcv = "*" if d.receiver == BROADCAST else str(d.receiver)
            lines.append(
                f"dropped r{d.round} {d.kind.name} {d.sender}->{rcv} "
                f"{d.bytes}B: {d.reason}"
            )
        for n in self.notes:
            lines.append(f"note: {n}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Protocol parameters and budget planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolParams:
    """Everything one collaboration step needs besides the scene and weights."""

    shape: GridShape
    strategy: CompressionStrategy = CompressionStrategy.from_name("m1")
    k_ic: int = 20
    k_ir: tuple[int, ...] = (100, 50, 25)
    scales: int = 3
    budget_bytes: int | None = None
    heatmap_mode: str = "proxy"  # proxy | conv | ideal
    camera_fov_deg: float = 360.0
    mlp_depth: int = 1
    window: int = 1

    def __post_init__(self):
        if self.scales < 1:
            raise ParameterError("scales must be >= 1")
        if len(self.k_ir) != self.scales:
            raise ParameterError(
                f"k_ir has {len(self.k_ir)} entries for {self.scales} scales"
            )
        if self.k_ic < 0 or any(k < 0 for k in self.k_ir):
            raise ParameterError("k values must be non-negative")
        if self.budget_bytes is not None and self.budget_bytes < 0:
            raise ParameterError("budget_bytes must be non-negative")
        if self.heatmap_mode not in ("proxy", "conv", "ideal"):
            raise ParameterError(f"unknown heatmap mode '{self.heatmap_mode}'")


@dataclass(frozen=True)
class BudgetPlan:
    """Deterministic shedding decisions derived from static message sizes."""

    nominal_bytes: int
    planned_bytes: int
    k_ic: int
    broadcast_drop: int
    heatmap_dropped: tuple[int, ...]
    voxel_dropped: tuple[int, ...]


def plan_budget(agent_ids: tuple[int, ...], params: ProtocolParams) -> BudgetPlan:
    """Decide what to shed so planned payload bytes fit the budget.

    Message sizes depend only on configuration (counts are fixed, never
    content-dependent), so the whole plan is computable before round one.
    Shedding order: broadcast instances, query width, heatmaps, voxel priors.
    """
    n = len(agent_ids)
    shape = params.shape
    c = shape.channels
    pair_count = n * (n - 1)
    instance_unit = 8 + 4 * c + 4

    if params.strategy.shares_voxels:
        fh, fw, fl = params.strategy.factors
        if shape.h_cells % fh or shape.w_cells % fw or shape.l_bins % fl:
            raise ShapeError(
                f"grid {shape.h_cells}x{shape.w_cells}x{shape.l_bins} not "
                f"divisible by strategy '{params.strategy.name}' factors"
            )
    voxel_msg = params.strategy.compressed_size(shape) * 4
    # Heatmaps go out once per pyramid scale, so a sender's heat cost is the
    # whole pyramid.
    heat_msg = sum(
        params.shape.downscaled(sc).h_cells * params.shape.downscaled(sc).w_cells * 4
        for sc in range(params.scales)
    )

    voxel_senders = list(agent_ids) if (voxel_msg and n > 1) else []
    heat_senders = list(agent_ids) if n > 1 else []
    k_ic = params.k_ic
    per_k = pair_count * params.scales * (8 + instance_unit)
    bcast_units = n * sum(params.k_ir) if n > 1 else 0

    def total(k: int, bcast: int, heats: int, voxels: int) -> int:
        return (voxel_msg * voxels + heat_msg * heats
                + per_k * k + instance_unit * bcast)

    nominal = total(k_ic, bcast_units, len(heat_senders), len(voxel_senders))
    if params.budget_bytes is None or nominal <= params.budget_bytes:
        return BudgetPlan(nominal, nominal, k_ic, 0, (), ())

    budget = params.budget_bytes
    bcast_drop = 0
    if instance_unit and bcast_units:
        over = total(k_ic, bcast_units, len(heat_senders), len(voxel_senders)) - budget
        bcast_drop = min(bcast_units, max(0, -(-over // instance_unit)))
    remaining_bcast = bcast_units - bcast_drop

    while k_ic > 0 and total(k_ic, remaining_bcast, len(heat_senders), len(voxel_senders)) > budget:
        k_ic -= 1

    heat_dropped: list[int] = []
    while heat_senders and total(k_ic, remaining_bcast, len(heat_senders), len(voxel_senders)) > budget:
        heat_dropped.append(heat_senders.pop())  # descending id: ids sorted ascending

    voxel_dropped: list[int] = []
    while voxel_senders and total(k_ic, remaining_bcast, len(heat_senders), len(voxel_senders)) > budget:
        voxel_dropped.append(voxel_senders.pop())

    planned = total(k_ic, remaining_bcast, len(heat_senders), len(voxel_senders))
    return BudgetPlan(nominal, planned, k_ic, bcast_drop,
                      tuple(sorted(heat_dropped)), tuple(sorted(voxel_dropped)))


def nominal_byte_breakdown(agent_ids: tuple[int, ...],
                           params: ProtocolParams) -> dict[str, int]:
    """Closed-form unbudgeted payload bytes per message kind.

    Pure arithmetic over the configuration — nothing is simulated. Matches
    what a full run charges when every agent can fill its k quotas.
    """
    n = len(agent_ids)
    zero = {kind.name: 0 for kind in MessageKind}
    if n < 2:
        return zero
    shape = params.shape
    pairs = n * (n - 1)
    unit = 8 + 4 * shape.channels + 4
    out = dict(zero)
    if params.strategy.shares_voxels:
        out[MessageKind.VOXEL_PRIOR.name] = params.strategy.compressed_size(shape) * 4 * n
    out[MessageKind.HEATMAP_SHARE.name] = n * sum(
        shape.downscaled(sc).h_cells * shape.downscaled(sc).w_cells * 4
        for sc in range(params.scales)
    )
    out[MessageKind.INSTANCE_QUERY.name] = pairs * params.scales * params.k_ic * 8
    out[MessageKind.INSTANCE_REPLY.name] = pairs * params.scales * params.k_ic * unit
    out[MessageKind.INSTANCE_BROADCAST.name] = n * sum(params.k_ir) * unit
    return out


# ---------------------------------------------------------------------------
# Frame plumbing helpers
# ---------------------------------------------------------------------------


def map_cell(src: GridShape, h: int, w: int, rel: Pose,
             dst: GridShape) -> tuple[int, int] | None:
    """Nearest destination cell for a source cell center; None if outside.

    ``rel`` is the source frame's pose expressed in the destination frame
    (planar part only).
    """
    x = (h + 0.5 - src.h_cells / 2.0) * src.cell_size_m
    y = (w + 0.5 - src.w_cells / 2.0) * src.cell_size_m
    cy = math.cos(math.radians(rel.yaw))
    sy = math.sin(math.radians(rel.yaw))
    xd = rel.x + cy * x - sy * y
    yd = rel.y + sy * x + cy * y
    gh = int(round(xd / dst.cell_size_m + dst.h_cells / 2.0 - 0.5))
    gw = int(round(yd / dst.cell_size_m + dst.w_cells / 2.0 - 0.5))
    if 0 <= gh < dst.h_cells and 0 <= gw < dst.w_cells:
        return gh, gw
    return None


def rasterize_sparse_heatmap(data: np.ndarray, src: GridShape, rel: Pose,
                             dst: GridShape, threshold: float = _SPARSE_THRESHOLD,
                             frame: int = 0, scale: int = 0) -> Heatmap:
    """Move a peaky heatmap between frames as point masses, not by blending.

    Every cell at or above ``threshold`` maps its center to the nearest
    destination cell (max-combining collisions). Unlike bilinear warping
    this keeps single-cell peaks single-cell, which matters when peaks mark
    object centers.
    """
    out = np.zeros((dst.h_cells, dst.w_cells), dtype=np.float32)
    hs, ws_ = np.nonzero(data >= threshold)
    for h, w in zip(hs, ws_):
        cell = map_cell(src, int(h), int(w), rel, dst)
        if cell is not None:
            out[cell] = max(out[cell], data[h, w])
    return Heatmap(
        GridShape(dst.h_cells, dst.w_cells, 1, 1, dst.cell_size_m, dst.z_size_m),
        out, frame=frame, scale=scale,
    )


def ideal_heatmap(scene: Scene, agent_index: int, shape: GridShape) -> Heatmap:
    """Oracle confidence map: 1.0 at centers of objects this agent can see.

    Rasterized in the agent's true frame (agents know their own sensing);
    everything downstream still crosses frames via reported poses.
    """
    agent = scene.agents[agent_index]
    pose = agent.pose
    data = np.zeros((shape.h_cells, shape.w_cells), dtype=np.float32)
    cy = math.cos(math.radians(pose.yaw))
    sy = math.sin(math.radians(pose.yaw))
    for idx in visible_boxes(scene, agent_index):
        box = scene.boxes[idx]
        dx, dy = box.x - pose.x, box.y - pose.y
        lx = cy * dx + sy * dy
        ly = -sy * dx + cy * dy
        gh = int(round(lx / shape.cell_size_m + shape.h_cells / 2.0 - 0.5))
        gw = int(round(ly / shape.cell_size_m + shape.w_cells / 2.0 - 0.5))
        if 0 <= gh < shape.h_cells and 0 <= gw < shape.w_cells:
            data[gh, gw] = 1.0
    return Heatmap(
        GridShape(shape.h_cells, shape.w_cells, 1, 1, shape.cell_size_m, shape.z_size_m),
        data, frame=agent.agent_id, scale=0,
    )


def _retag_voxel(v: VoxelFeature, frame: int) -> VoxelFeature:
    return VoxelFeature(v.shape, v.data, frame)


def _heat_pyramid(hm: Heatmap, scales: int) -> list[Heatmap]:
    pyr = [hm]
    for _ in range(scales - 1):
        pyr.append(downsample_heatmap(pyr[-1]))
    return pyr


def _bev_pyramid(plane: BevFeature, scales: int) -> list[BevFeature]:
    pyr = [plane]
    for _ in range(scales - 1):
        pyr.append(resample_bev(pyr[-1], 0.5))
    return pyr


# ---------------------------------------------------------------------------
# The protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeResult:
    """Per-agent outputs of one collaboration step plus the byte ledger."""

    planes: dict[int, BevFeature]
    consensus: dict[int, Heatmap]
    own_heat: dict[int, Heatmap]
    stage1: dict[int, FusionResult]
    ledger: CommLedger
    plan: BudgetPlan


def run_exchange(scene: Scene, params: ProtocolParams, ws: WeightSet) -> ExchangeResult:
    """Run one full collaboration step over every agent in the scene.

    Deterministic: agents are processed in ascending id order, message
    contents pass through the wire codec, and all accumulations follow
    sorted sender order.
    """
    ids = [a.agent_id for a in scene.agents]
    if len(set(ids)) != len(ids):
        raise ProtocolError("agent ids must be unique")
    if ids != sorted(ids):
        raise ProtocolError("agents must be listed in ascending id order")
    index_of = {aid: i for i, aid in enumerate(ids)}
    n = len(ids)
    shape = params.shape
    scales = params.scales
    shapes = [shape.downscaled(s) for s in range(scales)]

    plan = plan_budget(tuple(ids), params)
    ledger = CommLedger()
    if plan.k_ic != params.k_ic:
        ledger.note(f"budget: k_ic reduced {params.k_ic} -> {plan.k_ic}")
    if plan.broadcast_drop:
        ledger.note(f"budget: shedding {plan.broadcast_drop} broadcast instances")

    rel: dict[tuple[int, int], Pose] = {}
    for s in ids:
        for r in ids:
            if s != r:
                rel[(s, r)] = relative_pose(
                    scene.agents[index_of[s]].reported,
                    scene.agents[index_of[r]].reported,
                )

    lidar = {aid: lidar_proxy_encode(scene, index_of[aid], shape)[0] for aid in ids}
    camera = {aid: camera_proxy_encode(scene, index_of[aid], shape,
                                       fov_deg=params.camera_fov_deg) for aid in ids}

    # -- round 1: voxel priors ------------------------------------------------
    priors: dict[int, dict[int, VoxelFeature]] = {aid: {} for aid in ids}
    if params.strategy.shares_voxels and n > 1:
        for s in ids:
            compressed = compress_voxel(lidar[s], params.strategy)
            msg = VoxelPriorMsg(s, BROADCAST, compressed.data)
            if s in plan.voxel_dropped:
                ledger.drop(1, MessageKind.VOXEL_PRIOR, s, BROADCAST,
                            payload_bytes(msg), "budget")
                continue
            ledger.charge(1, msg)
            got = decode_message(encode_message(msg))
            sent = VoxelFeature(compressed.shape, got.data, frame=s)
            for r in ids:
                if r == s:
                    continue
                full = decompress_voxel(sent, params.strategy, shape)
                warped = warp_to_frame(full, rel[(s, r)], shape)
                priors[r][s] = _retag_voxel(warped, r)
    elif n > 1 and not params.strategy.shares_voxels:
        ledger.note(f"strategy '{params.strategy.name}' shares no voxel priors")

    stage1 = {
        aid: fuse_local(lidar[aid], camera[aid], priors[aid], ws,
                        mlp_depth=params.mlp_depth, window=params.window)
        for aid in ids
    }
    pyramids = {aid: _bev_pyramid(stage1[aid].bev_fused, scales) for aid in ids}

    # -- own heatmaps ----------------------------------------------------------
    own: dict[int, list[Heatmap]] = {}
    for aid in ids:
        if params.heatmap_mode == "ideal":
            hm = ideal_heatmap(scene, index_of[aid], shape)
        else:
            hm = heatmap_head(stage1[aid].bev_fused, ws, mode=params.heatmap_mode)
        own[aid] = _heat_pyramid(hm, scales)

    # -- round 2: heatmap sharing (one message per pyramid scale) ---------------
    received: dict[int, dict[int, list[Heatmap]]] = {aid: {} for aid in ids}
    if n > 1:
        for s in ids:
            for sc in range(scales):
                msg = HeatmapMsg(s, BROADCAST, own[s][sc].data, scale=sc)
                if s in plan.heatmap_dropped:
                    ledger.drop(2, MessageKind.HEATMAP_SHARE, s, BROADCAST,
                                payload_bytes(msg), "budget")
                    continue
                ledger.charge(2, msg)
                got = decode_message(encode_message(msg))
                for r in ids:
                    if r == s:
                        continue
                    if params.heatmap_mode == "ideal":
                        hm = rasterize_sparse_heatmap(
                            got.data, shapes[sc], rel[(s, r)], shapes[sc],
                            frame=r, scale=sc)
                    else:
                        hm = warp_heatmap(
                            Heatmap(own[s][sc].shape, got.data, frame=s),
                            rel[(s, r)], shapes[sc])
                        hm = Heatmap(hm.shape, hm.data, frame=r, scale=sc)
                    received[r].setdefault(s, [None] * scales)[sc] = hm

    # -- round 3: queries and replies -------------------------------------------
    completions: dict[int, list[dict[int, tuple[InstanceVector, ...]]]] = {
        aid: [dict() for _ in range(scales)] for aid in ids
    }
    reply_heats: dict[int, list[InstanceVector]] = {aid: [] for aid in ids}
    if n > 1 and plan.k_ic > 0:
        warped_planes: dict[tuple[int, int, int], BevFeature] = {}
        for r in ids:
            for s in sorted(received[r]):
                for sc in range(scales):
                    demand = discrepancy(received[r][s][sc], own[r][sc])
                    positions = select_k_max(demand.data,
                                             min(plan.k_ic, demand.data.size))
                    qmsg = QueryMsg(r, s, positions.astype(np.int32), scale=sc)
                    ledger.charge(3, qmsg)
                    q = decode_message(encode_message(qmsg))

                    key = (s, r, sc)
                    if key not in warped_planes:
                        warped = warp_bev_to_frame(pyramids[s][sc], rel[(s, r)], shapes[sc])
                        warped_planes[key] = BevFeature(shapes[sc], warped.data, frame=r)
                    plane = warped_planes[key]
                    # The sender's own heat, moved into the asker's frame, is
                    # byte-identical to what the asker derived from round 2.
                    heat_rs = received[r][s][sc]
                    instances = [
                        InstanceVector(int(h), int(w), plane.data[h, w],
                                       float(heat_rs.data[h, w]))
                        for h, w in q.positions
                    ]
                    rmsg = ReplyMsg(s, r, tuple(instances), scale=sc)
                    ledger.charge(3, rmsg)
                    got = decode_message(encode_message(rmsg))
                    completions[r][sc][s] = got.instances
                    if sc == 0:
                        reply_heats[r].extend(got.instances)
    elif n > 1 and params.k_ic > 0:
        ledger.note("budget: query round suppressed (k_ic 0)")

    # -- round 4: instance broadcasts -------------------------------------------
    own_sets: dict[int, list[list[InstanceVector]]] = {}
    for aid in ids:
        per_scale = []
        for sc in range(scales):
            k = min(params.k_ir[sc], own[aid][sc].data.size)
            if k < 1:
                per_scale.append([])
                continue
            positions = select_k_max(own[aid][sc].data, k)
            per_scale.append(instances_at(pyramids[aid][sc], own[aid][sc], positions))
        own_sets[aid] = per_scale

    shed: set[tuple[int, int, int]] = set()
    if n > 1 and plan.broadcast_drop:
        ranked = sorted(
            (own_sets[aid][sc][i].heat, aid, sc, i)
            for aid in ids for sc in range(scales)
            for i in range(len(own_sets[aid][sc]))
        )
        for heat, aid, sc, i in ranked[: plan.broadcast_drop]:
            shed.add((aid, sc, i))

    broadcast_rx: dict[int, list[list[tuple[int, InstanceVector]]]] = {
        aid: [[] for _ in range(scales)] for aid in ids
    }
    bcast_heats: dict[int, list[InstanceVector]] = {aid: [] for aid in ids}
    if n > 1:
        unit = 8 + 4 * shape.channels + 4
        for s in ids:
            for sc in range(scales):
                kept = [iv for i, iv in enumerate(own_sets[s][sc])
                        if (s, sc, i) not in shed]
                removed = len(own_sets[s][sc]) - len(kept)
                if removed:
                    ledger.drop(4, MessageKind.INSTANCE_BROADCAST, s, BROADCAST,
                                removed * unit,
                                f"budget: shed {removed} lowest-heat instances")
                if not kept:
                    continue
                msg = BroadcastMsg(s, BROADCAST, tuple(kept), scale=sc)
                ledger.charge(4, msg)
                got = decode_message(encode_message(msg))
                for r in ids:
                    if r == s:
                        continue
                    for iv in got.instances:
                        cell = map_cell(shapes[sc], iv.h, iv.w, rel[(s, r)], shapes[sc])
                        if cell is None:
                            continue
                        mapped = InstanceVector(cell[0], cell[1], iv.feature, iv.heat)
                        broadcast_rx[r][sc].append((s, mapped))
                        if sc == 0:
                            bcast_heats[r].append(mapped)

    # -- local reasoning ---------------------------------------------------------
    planes: dict[int, BevFeature] = {}
    consensus: dict[int, Heatmap] = {}
    for aid in ids:
        refine_sets = []
        for sc in range(scales):
            merged = list(own_sets[aid][sc])
            for s in sorted(received[aid]) if n > 1 else []:
                merged.extend(iv for src, iv in broadcast_rx[aid][sc] if src == s)
            refine_sets.append(merged)
        planes[aid] = collaborate_multiscale(
            pyramids[aid], completions[aid], refine_sets, ws)

        cons = own[aid][0].data.astype(np.float64).copy()
        for iv in reply_heats[aid] + bcast_heats[aid]:
            if 0 <= iv.h < shape.h_cells and 0 <= iv.w < shape.w_cells:
                cons[iv.h, iv.w] = max(cons[iv.h, iv.w], iv.heat)
        consensus[aid] = Heatmap(own[aid][0].shape, np.clip(cons, -1.0, 1.0),
                                 frame=aid, scale=0)

    return ExchangeResult(
        planes=planes,
        consensus=consensus,
        own_heat={aid: own[aid][0] for aid in ids},
        stage1=stage1,
        ledger=ledger,
        plan=plan,
    )
