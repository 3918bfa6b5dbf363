"""Stage two of the pipeline: confidence maps and instance-level collaboration.

Agents exchange single-channel confidence heatmaps, compare them against
their own, and then move *instances* — per-cell feature vectors plus their
grid position and confidence — instead of dense planes:

* completion: where a peer's map says "object" and mine does not, I ask that
  peer for its feature at the cell and splice the answer into my plane;
* refinement: high-confidence instances from everyone form a token set that
  is self-attended once and then queried by every cell of my plane, which
  updates residually.

Both steps run per pyramid scale; the upsampled results sum into the final
plane. All functions are deterministic given their inputs: sender ids are
processed in sorted order and ties in top-k selection break row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError, ProtocolError, ShapeError
from .grids import (
    BevFeature,
    GridShape,
    Pose,
    _pool2,
    resample_bev,
    sigmoid,
    softmax,
    warp_bev_to_frame,
)
from .weights import WeightSet

_HEAT_TOL = 1e-6


@dataclass(frozen=True)
class Heatmap:
    """Single-channel confidence plane in [0, 1] (difference maps: [-1, 1])."""

    shape: GridShape
    data: np.ndarray
    frame: int = 0
    scale: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = (self.shape.h_cells, self.shape.w_cells)
        if arr.shape != expected:
            raise ShapeError(f"heatmap data has shape {arr.shape}, expected {expected}")
        if not np.isfinite(arr).all():
            raise ShapeError("heatmap contains non-finite values")
        if arr.min() < -1.0 - _HEAT_TOL or arr.max() > 1.0 + _HEAT_TOL:
            raise ShapeError("heatmap values must lie in [-1, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def byte_size(self) -> int:
        return int(self.data.size) * 4


@dataclass(frozen=True)
class InstanceVector:
    """One transportable object hypothesis: grid cell, feature, confidence."""

    h: int
    w: int
    feature: np.ndarray
    heat: float

    def __post_init__(self):
        if self.h < 0 or self.w < 0:
            raise ShapeError("instance position must be non-negative")
        arr = np.ascontiguousarray(self.feature, dtype=np.float32)
        if arr.ndim != 1:
            raise ShapeError("instance feature must be a 1-D vector")
        if not np.isfinite(arr).all() or not np.isfinite(self.heat):
            raise ShapeError("instance contains non-finite values")
        object.__setattr__(self, "feature", arr)
        object.__setattr__(self, "heat", float(self.heat))


def _conv3x3(plane: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padding 3x3 convolution on (H, W, Cin) with (3, 3, Cin, Cout)."""
    h_n, w_n, _ = plane.shape
    out = np.zeros((h_n, w_n, kernel.shape[3]), dtype=np.float64)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            tap = kernel[1 + di, 1 + dj].astype(np.float64)
            hd = slice(max(0, -di), h_n - max(0, di))
            wd = slice(max(0, -dj), w_n - max(0, dj))
            hs = slice(max(0, di), h_n - max(0, -di))
            ws_ = slice(max(0, dj), w_n - max(0, -dj))
            out[hd, wd] += plane[hs, ws_].astype(np.float64) @ tap
    return out + bias.astype(np.float64)


def heatmap_head(bev: BevFeature, ws: WeightSet | None = None,
                 mode: str = "proxy", scale: int = 0) -> Heatmap:
    """Reduce a BEV plane to a confidence heatmap.

    ``proxy`` squashes the per-cell channel maximum through a sigmoid —
    crude but weight-free. ``conv`` runs two 3x3 convolutions (ReLU between)
    down to one channel, then the sigmoid.
    """
    if mode == "proxy":
        heat = sigmoid(bev.data.max(axis=-1).astype(np.float64))
    elif mode == "conv":
        if ws is None:
            raise ParameterError("conv heatmap head requires weights")
        c = bev.shape.channels
        mid = max(1, c // 2)
        k1 = ws.get("hm.conv1.weight", (3, 3, c, mid))
        b1 = ws.get("hm.conv1.bias", (mid,))
        k2 = ws.get("hm.conv2.weight", (3, 3, mid, 1))
        b2 = ws.get("hm.conv2.bias", (1,))
        hidden = np.maximum(_conv3x3(bev.data, k1, b1), 0.0)
        heat = sigmoid(_conv3x3(hidden, k2, b2)[..., 0])
    else:
        raise ParameterError(f"unknown heatmap mode '{mode}' (proxy or conv)")
    return Heatmap(bev.shape, heat.astype(np.float32), bev.frame, scale)


def discrepancy(received: Heatmap, own: Heatmap) -> Heatmap:
    """Demand map: where the peer is confident and this agent is not.

    Plain difference ``received - own``; positive cells are worth querying.
    """
    if received.data.shape != own.data.shape:
        raise ShapeError(
            f"heatmap dims differ: {received.data.shape} vs {own.data.shape}"
        )
    if received.scale != own.scale:
        raise ShapeError("heatmaps are at different pyramid scales")
    diff = received.data.astype(np.float64) - own.data.astype(np.float64)
    return Heatmap(own.shape, diff.astype(np.float32), own.frame, own.scale)


def warp_heatmap(hm: Heatmap, rel: Pose, target: GridShape) -> Heatmap:
    """Resample a heatmap into another frame (bilinear, zero-fill)."""
    plane = BevFeature(
        GridShape(hm.shape.h_cells, hm.shape.w_cells, 1, 1,
                  hm.shape.cell_size_m, hm.shape.z_size_m),
        hm.data[..., None], hm.frame,
    )
    tgt = GridShape(target.h_cells, target.w_cells, 1, 1,
                    target.cell_size_m, target.z_size_m)
    warped = warp_bev_to_frame(plane, rel, tgt)
    data = np.clip(warped.data[..., 0], -1.0, 1.0)
    return Heatmap(tgt, data, frame=hm.frame, scale=hm.scale)


def downsample_heatmap(hm: Heatmap) -> Heatmap:
    """Halve a heatmap (2x2 mean, ceil dims) for the next pyramid scale."""
    pooled = _pool2(hm.data[..., None].astype(np.float64))[..., 0]
    shape = GridShape(pooled.shape[0], pooled.shape[1], 1, 1,
                      hm.shape.cell_size_m * 2, hm.shape.z_size_m)
    return Heatmap(shape, pooled.astype(np.float32), hm.frame, hm.scale + 1)


def merge_heatmaps_max(base: Heatmap, others: Sequence[Heatmap]) -> Heatmap:
    """Cell-wise maximum of aligned heatmaps (consensus confidence)."""
    acc = base.data.astype(np.float64)
    for hm in others:
        if hm.data.shape != base.data.shape:
            raise ShapeError("cannot merge heatmaps with different dims")
        acc = np.maximum(acc, hm.data.astype(np.float64))
    return Heatmap(base.shape, acc.astype(np.float32), base.frame, base.scale)


def _select_k(values: np.ndarray, k: int, sign: float) -> np.ndarray:
    if k < 1:
        raise ParameterError("k must be >= 1")
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ShapeError("top-k selection expects a 2-D map")
    if k > arr.size:
        raise ParameterError(f"k={k} exceeds the {arr.size} cells available")
    flat = arr.reshape(-1)
    order = np.argsort(sign * flat.astype(np.float64), kind="stable")[:k]
    return np.stack([order // arr.shape[1], order % arr.shape[1]], axis=-1)


def select_k_max(values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k largest cells as (k, 2) rows of (h, w).

    Ties resolve row-major — equal values surface in (h, then w) order —
    so the selection is deterministic and testable against a full sort.
    """
    return _select_k(values, k, -1.0)


def select_k_min(values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k smallest cells, ties resolved row-major."""
    return _select_k(values, k, 1.0)


def instances_at(bev: BevFeature, heat: Heatmap, positions: np.ndarray) -> list[InstanceVector]:
    """Package the plane's features at the given cells as instances."""
    if heat.data.shape != bev.data.shape[:2]:
        raise ShapeError("heatmap dims do not match the feature plane")
    out = []
    for h, w in np.asarray(positions, dtype=np.int64):
        if not (0 <= h < bev.shape.h_cells and 0 <= w < bev.shape.w_cells):
            raise ShapeError(f"instance position ({h}, {w}) outside the grid")
        out.append(InstanceVector(int(h), int(w), bev.data[h, w].copy(),
                                  float(heat.data[h, w])))
    return out


def positional_encoding_2d(h_cells: int, w_cells: int, channels: int) -> np.ndarray:
    """Sinusoidal (H, W, C) position code; half the channels per axis."""
    if channels % 4:
        raise ShapeError("positional encoding needs channels divisible by 4")
    half = channels // 2

    def axis(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None]
        i = np.arange(half // 2, dtype=np.float64)[None, :]
        ang = pos / np.power(10000.0, 2.0 * i / half)
        enc = np.empty((n, half), dtype=np.float64)
        enc[:, 0::2] = np.sin(ang)
        enc[:, 1::2] = np.cos(ang)
        return enc

    rows = axis(h_cells)[:, None, :]
    cols = axis(w_cells)[None, :, :]
    out = np.empty((h_cells, w_cells, channels), dtype=np.float64)
    out[..., :half] = np.broadcast_to(rows, (h_cells, w_cells, half))
    out[..., half:] = np.broadcast_to(cols, (h_cells, w_cells, half))
    return out.astype(np.float32)


def instance_complete(bev: BevFeature,
                      replies: Mapping[int, Sequence[InstanceVector]],
                      ws: WeightSet) -> BevFeature:
    """Splice peer-supplied instances into the plane at their cells.

    Each reply instance passes through the value projection and the results
    sum per cell over senders (sorted by id), *replacing* the cell's feature.
    With one candidate per sender and cell the attention weight over that
    single key is exactly 1, so the value path is the whole computation.
    Cells nobody answered for are untouched, bit for bit.
    """
    c = bev.shape.channels
    wv = ws.get("ic.wv", (c, c)).astype(np.float64)
    accum = np.zeros(bev.data.shape, dtype=np.float64)
    touched = np.zeros(bev.data.shape[:2], dtype=bool)
    for aid in sorted(replies):
        for iv in replies[aid]:
            if not (0 <= iv.h < bev.shape.h_cells and 0 <= iv.w < bev.shape.w_cells):
                raise ProtocolError(
                    f"sender {aid} sent an instance at ({iv.h}, {iv.w}), "
                    f"outside the {bev.shape.h_cells}x{bev.shape.w_cells} grid"
                )
            if iv.feature.shape != (c,):
                raise ProtocolError(
                    f"sender {aid} instance feature has {iv.feature.shape[0]} "
                    f"channels, expected {c}"
                )
            accum[iv.h, iv.w] += iv.feature.astype(np.float64) @ wv
            touched[iv.h, iv.w] = True
    out = bev.data.astype(np.float64)
    out[touched] = accum[touched]
    return BevFeature(bev.shape, out.astype(np.float32), bev.frame)


def instance_refine(bev: BevFeature, instances: Sequence[InstanceVector],
                    ws: WeightSet) -> BevFeature:
    """One round of instance self-attention, then instance-to-plane attention.

    Instance features (plus a sinusoidal position code for their cells) are
    self-attended once; every cell of the plane then queries the updated
    token set and the result adds residually. An empty instance set is a
    no-op returning an identical plane.
    """
    if not instances:
        return BevFeature(bev.shape, bev.data.copy(), bev.frame)
    h_n, w_n, c = bev.shape.bev_dims
    hs = np.array([iv.h for iv in instances], dtype=np.int64)
    ws_pos = np.array([iv.w for iv in instances], dtype=np.int64)
    if (hs >= h_n).any() or (ws_pos >= w_n).any():
        bad = int(np.argmax((hs >= h_n) | (ws_pos >= w_n)))
        raise ProtocolError(
            f"instance at ({hs[bad]}, {ws_pos[bad]}) outside the {h_n}x{w_n} grid"
        )
    feats = np.stack([iv.feature for iv in instances]).astype(np.float64)
    if feats.shape[1] != c:
        raise ShapeError(f"instance channels {feats.shape[1]} != plane channels {c}")

    pe = positional_encoding_2d(h_n, w_n, c).astype(np.float64)
    f_all = feats + pe[hs, ws_pos]

    wq_s = ws.get("ir.self.wq", (c, c)).astype(np.float64)
    wk_s = ws.get("ir.self.wk", (c, c)).astype(np.float64)
    wv_s = ws.get("ir.self.wv", (c, c)).astype(np.float64)
    logits = (f_all @ wq_s) @ (f_all @ wk_s).T / np.sqrt(c)
    f_upd = softmax(logits, axis=-1) @ (f_all @ wv_s)

    wq_x = ws.get("ir.cross.wq", (c, c)).astype(np.float64)
    wk_x = ws.get("ir.cross.wk", (c, c)).astype(np.float64)
    wv_x = ws.get("ir.cross.wv", (c, c)).astype(np.float64)
    q = bev.data.reshape(-1, c).astype(np.float64) @ wq_x
    cross = softmax(q @ (f_upd @ wk_x).T / np.sqrt(c), axis=-1) @ (f_upd @ wv_x)

    out = bev.data.astype(np.float64) + cross.reshape(h_n, w_n, c)
    return BevFeature(bev.shape, out.astype(np.float32), bev.frame)


def collaborate_multiscale(
    pyramid: Sequence[BevFeature],
    completions: Sequence[Mapping[int, Sequence[InstanceVector]]],
    instance_sets: Sequence[Sequence[InstanceVector]],
    ws: WeightSet,
) -> BevFeature:
    """Run completion then refinement per scale and sum at full resolution.

    ``pyramid[s]`` is the fused plane at scale s (halved dims each level);
    ``completions[s]`` and ``instance_sets[s]`` carry that scale's peer
    replies and refinement tokens. Coarse results are upsampled back to
    scale 0 (cropped to exact dims, since odd grids round up when halved)
    and everything sums element-wise.
    """
    if not pyramid:
        raise ParameterError("pyramid must contain at least one scale")
    if not (len(pyramid) == len(completions) == len(instance_sets)):
        raise ShapeError("pyramid, completions and instance_sets lengths differ")
    base = pyramid[0]
    total = np.zeros(base.data.shape, dtype=np.float64)
    for s, plane in enumerate(pyramid):
        completed = instance_complete(plane, completions[s], ws)
        refined = instance_refine(completed, instance_sets[s], ws)
        up = refined
        for _ in range(s):
            up = resample_bev(up, 2)
        total += up.data[: base.shape.h_cells, : base.shape.w_cells].astype(np.float64)
    return BevFeature(base.shape, total.astype(np.float32), base.frame)
