"""Stage one of the pipeline: fuse LiDAR and camera grids on each agent.

Flow, per receiving agent:

1. Peers send compressed LiDAR voxel grids ("voxel priors"); the receiver
   warps them into its own frame.
2. :func:`mix_voxel` runs one round of attention per cell over the ego cell,
   the co-located peer cells, and the six face-adjacent ego neighbors,
   producing a collaboration-aware voxel volume.
3. :func:`occupancy_head` turns that volume into per-cell occupancy beliefs,
   which :func:`occ_gate` uses to suppress the camera's depth-uncertain
   voxels outside believed-occupied space.
4. Both volumes collapse vertically to BEV planes and
   :func:`fuse_heterogeneous` merges them: a channel-concat branch plus a
   per-cell cross-modal attention branch, summed.

Everything here is a pure function of its inputs and a
:class:`~copersim.weights.WeightSet`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ParameterError, ProtocolError, ShapeError
from .grids import (
    BevFeature,
    GridShape,
    VoxelFeature,
    attention_batched,
    collapse_to_bev,
    sigmoid,
)
from .weights import WeightSet

#: Named voxel compression presets: block-mean factors along (h, w, l).
#: ``None`` disables voxel-prior sharing entirely.
COMPRESSION_FACTORS: dict[str, tuple[int, int, int] | None] = {
    "m1": (4, 4, 2),
    "m2": (4, 4, 4),
    "m3": (2, 2, 2),
    "off": None,
}


@dataclass(frozen=True)
class CompressionStrategy:
    """A named block-pooling configuration for shared voxel priors."""

    name: str
    factors: tuple[int, int, int] | None

    @classmethod
    def from_name(cls, name: str) -> "CompressionStrategy":
        key = name.lower()
        if key not in COMPRESSION_FACTORS:
            raise ParameterError(
                f"unknown compression strategy '{name}' "
                f"(choose from {sorted(COMPRESSION_FACTORS)})"
            )
        return cls(key, COMPRESSION_FACTORS[key])

    @property
    def shares_voxels(self) -> bool:
        return self.factors is not None

    def compressed_size(self, shape: GridShape) -> int:
        """Payload float count for one shared prior at this setting."""
        if self.factors is None:
            return 0
        fh, fw, fl = self.factors
        return (shape.h_cells // fh) * (shape.w_cells // fw) * (shape.l_bins // fl) * shape.channels


def compress_voxel(v: VoxelFeature, strategy: CompressionStrategy) -> VoxelFeature:
    """Block-mean pool a voxel grid by the strategy's (h, w, l) factors.

    Grid dimensions must divide evenly; lossy reduction with ragged blocks
    would silently shift content, so that is a hard error.
    """
    if strategy.factors is None:
        raise ParameterError(f"strategy '{strategy.name}' does not share voxels")
    fh, fw, fl = strategy.factors
    s = v.shape
    if s.h_cells % fh or s.w_cells % fw or s.l_bins % fl:
        raise ShapeError(
            f"grid {s.h_cells}x{s.w_cells}x{s.l_bins} not divisible by "
            f"compression factors {strategy.factors}"
        )
    blocks = v.data.reshape(
        s.h_cells // fh, fh, s.w_cells // fw, fw, s.l_bins // fl, fl, s.channels
    )
    pooled = blocks.mean(axis=(1, 3, 5), dtype=np.float64)
    out_shape = GridShape(
        s.h_cells // fh, s.w_cells // fw, s.l_bins // fl, s.channels,
        s.cell_size_m * fh, s.z_size_m * fl,
    )
    return VoxelFeature(out_shape, pooled.astype(np.float32), v.frame)


def decompress_voxel(v: VoxelFeature, strategy: CompressionStrategy,
                     target: GridShape) -> VoxelFeature:
    """Invert :func:`compress_voxel` by nearest-neighbor repetition."""
    if strategy.factors is None:
        raise ParameterError(f"strategy '{strategy.name}' does not share voxels")
    fh, fw, fl = strategy.factors
    s = v.shape
    if (s.h_cells * fh, s.w_cells * fw, s.l_bins * fl) != (
        target.h_cells, target.w_cells, target.l_bins
    ):
        raise ShapeError(
            f"decompressing {s.h_cells}x{s.w_cells}x{s.l_bins} by {strategy.factors} "
            f"does not produce {target.h_cells}x{target.w_cells}x{target.l_bins}"
        )
    if s.channels != target.channels:
        raise ShapeError("decompression cannot change channel count")
    data = np.repeat(np.repeat(np.repeat(v.data, fh, axis=0), fw, axis=1), fl, axis=2)
    return VoxelFeature(target, data, v.frame)


_NEIGHBOR_OFFSETS = (
    (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1),
)


def _shifted(data: np.ndarray, offset: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Voxel features of each cell's neighbor at ``offset``; invalid = out of grid."""
    h_n, w_n, l_n, _ = data.shape
    out = np.zeros_like(data)
    valid = np.zeros((h_n, w_n, l_n), dtype=bool)
    slices_dst, slices_src = [], []
    for d, n in zip(offset, (h_n, w_n, l_n)):
        slices_dst.append(slice(max(0, -d), n - max(0, d)))
        slices_src.append(slice(max(0, d), n - max(0, -d)))
    out[tuple(slices_dst)] = data[tuple(slices_src)]
    valid[tuple(slices_dst)] = True
    return out, valid


def mix_voxel(ego: VoxelFeature, senders: Mapping[int, VoxelFeature],
              ws: WeightSet) -> VoxelFeature:
    """Per-cell attention over ego, co-located peer, and neighbor voxels.

    ``senders`` maps agent id -> that agent's voxel prior *already warped
    into the ego frame*. The output is invariant to sender ordering, bit for
    bit: node order is canonicalized by sorting agent ids. With no senders
    this degrades gracefully to self-attention over the ego neighborhood.
    """
    s = ego.shape
    c = s.channels
    for aid, v in senders.items():
        if v.shape != s:
            raise ShapeError(f"sender {aid} prior shape {v.shape} != ego {s}")
        if v.frame != ego.frame:
            raise ProtocolError(
                f"sender {aid} prior is in frame {v.frame}, expected ego frame {ego.frame}"
            )
    wq = ws.get("mix.wq", (c, c)).astype(np.float64)
    wk = ws.get("mix.wk", (c, c)).astype(np.float64)
    wv = ws.get("mix.wv", (c, c)).astype(np.float64)

    cells = s.h_cells * s.w_cells * s.l_bins
    node_feats = [ego.data.reshape(cells, c)]
    node_valid = [np.ones(cells, dtype=bool)]
    for aid in sorted(senders):
        node_feats.append(senders[aid].data.reshape(cells, c))
        node_valid.append(np.ones(cells, dtype=bool))
    for offset in _NEIGHBOR_OFFSETS:
        feats, valid = _shifted(ego.data, offset)
        node_feats.append(feats.reshape(cells, c))
        node_valid.append(valid.reshape(cells))
    nodes = np.stack(node_feats, axis=1).astype(np.float64)  # (B, N, C)
    valid = np.stack(node_valid, axis=1)

    q = (nodes[:, 0, :] @ wq)[:, None, :]
    attn = attention_batched(q, nodes @ wk, nodes @ wv, valid)[:, 0, :]
    mixed = attn.reshape(s.voxel_dims) + ego.data.astype(np.float64)
    return VoxelFeature(s, mixed.astype(np.float32), ego.frame)


def occupancy_head(v: VoxelFeature, ws: WeightSet) -> VoxelFeature:
    """Per-cell occupancy belief in (0, 1): sigmoid of a linear readout."""
    c = v.shape.channels
    weight, bias = ws.linear("occ", c, 1)
    logits = v.data.reshape(-1, c).astype(np.float64) @ weight.astype(np.float64) + bias
    occ = sigmoid(logits).reshape(v.shape.h_cells, v.shape.w_cells, v.shape.l_bins, 1)
    shape = GridShape(v.shape.h_cells, v.shape.w_cells, v.shape.l_bins, 1,
                      v.shape.cell_size_m, v.shape.z_size_m)
    return VoxelFeature(shape, occ.astype(np.float32), v.frame)


def occ_gate(v_img: VoxelFeature, occ: VoxelFeature, v_mix: VoxelFeature,
             ws: WeightSet) -> VoxelFeature:
    """Gate camera voxels by occupancy and inject the mixed LiDAR volume.

    Output = v_img * occ (broadcast over channels) + proj(v_mix). The gate
    suppresses camera evidence where nothing is believed to exist; the
    projected mixed volume keeps geometry flowing to the camera branch.
    """
    if occ.shape.channels != 1:
        raise ShapeError("occupancy grid must have exactly 1 channel")
    if (occ.shape.h_cells, occ.shape.w_cells, occ.shape.l_bins) != (
        v_img.shape.h_cells, v_img.shape.w_cells, v_img.shape.l_bins
    ):
        raise ShapeError("occupancy grid dims do not match camera grid")
    if v_mix.shape != v_img.shape:
        raise ShapeError("mixed LiDAR grid dims do not match camera grid")
    c = v_img.shape.channels
    weight, bias = ws.linear("occ_gate.proj", c, c)
    gated = v_img.data.astype(np.float64) * occ.data.astype(np.float64)
    injected = v_mix.data.reshape(-1, c).astype(np.float64) @ weight.astype(np.float64) + bias
    out = gated + injected.reshape(v_img.shape.voxel_dims)
    return VoxelFeature(v_img.shape, out.astype(np.float32), v_img.frame)


def _bev_window_tokens(plane: np.ndarray, window: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-cell token list from a (H, W, C) plane over a window x window patch."""
    h_n, w_n, c = plane.shape
    cells = h_n * w_n
    half = window // 2
    feats, valids = [], []
    for dh in range(-half, half + 1):
        for dw in range(-half, half + 1):
            out = np.zeros_like(plane)
            valid = np.zeros((h_n, w_n), dtype=bool)
            hd = slice(max(0, -dh), h_n - max(0, dh))
            wd = slice(max(0, -dw), w_n - max(0, dw))
            hs = slice(max(0, dh), h_n - max(0, -dh))
            ws_ = slice(max(0, dw), w_n - max(0, -dw))
            out[hd, wd] = plane[hs, ws_]
            valid[hd, wd] = True
            feats.append(out.reshape(cells, c))
            valids.append(valid.reshape(cells))
    return feats, valids


def fuse_heterogeneous(b_lidar: BevFeature, b_img: BevFeature, ws: WeightSet,
                       mlp_depth: int = 1, window: int = 1) -> BevFeature:
    """Merge LiDAR and camera BEV planes into one fused plane.

    Two branches, summed element-wise:

    * concat branch: each modality expanded by a linear layer, channel-wise
      concatenated, and projected back down;
    * attention branch: per cell, the LiDAR feature queries the camera
      feature(s) in a window around the cell (a single key by default), the
      result runs through a small MLP and adds back onto the LiDAR plane.
    """
    if b_lidar.shape.bev_dims != b_img.shape.bev_dims:
        raise ShapeError(
            f"modality planes disagree: {b_lidar.shape.bev_dims} vs {b_img.shape.bev_dims}"
        )
    if b_lidar.frame != b_img.frame:
        raise ProtocolError("modality planes are in different frames")
    if window < 1 or window % 2 == 0:
        raise ParameterError("window must be a positive odd integer")
    if mlp_depth < 1:
        raise ParameterError("mlp_depth must be >= 1")
    h_n, w_n, c = b_lidar.shape.bev_dims
    cells = h_n * w_n

    lid = b_lidar.data.astype(np.float64)
    img = b_img.data.astype(np.float64)

    w_el, b_el = ws.linear("hmf.expand_lidar", c, c)
    w_ei, b_ei = ws.linear("hmf.expand_img", c, c)
    w_cat, b_cat = ws.linear("hmf.concat", 2 * c, c)
    exp_l = lid @ w_el.astype(np.float64) + b_el
    exp_i = img @ w_ei.astype(np.float64) + b_ei
    cat = np.concatenate([exp_l, exp_i], axis=-1) @ w_cat.astype(np.float64) + b_cat

    wq = ws.get("hmf.attn.wq", (c, c)).astype(np.float64)
    wk = ws.get("hmf.attn.wk", (c, c)).astype(np.float64)
    wv = ws.get("hmf.attn.wv", (c, c)).astype(np.float64)
    feats, valids = _bev_window_tokens(img, window)
    tokens = np.stack(feats, axis=1)  # (B, N, C)
    valid = np.stack(valids, axis=1)
    q = (lid.reshape(cells, c) @ wq)[:, None, :]
    attn = attention_batched(q, tokens @ wk, tokens @ wv, valid)[:, 0, :]

    x = attn
    for depth in range(mlp_depth):
        w_m, b_m = ws.linear(f"hmf.mlp.{depth}", c, c)
        x = x @ w_m.astype(np.float64) + b_m
        if depth < mlp_depth - 1:
            x = np.maximum(x, 0.0)
    b_attn = x.reshape(h_n, w_n, c) + lid

    return BevFeature(b_lidar.shape, (cat + b_attn).astype(np.float32), b_lidar.frame)


@dataclass(frozen=True)
class FusionResult:
    """Everything stage one produces on one agent, kept for inspection."""

    v_mix: VoxelFeature
    occupancy: VoxelFeature
    v_img_gated: VoxelFeature
    bev_lidar: BevFeature
    bev_img: BevFeature
    bev_fused: BevFeature


def fuse_local(v_lidar: VoxelFeature, v_img: VoxelFeature,
               sender_priors: Mapping[int, VoxelFeature], ws: WeightSet,
               mlp_depth: int = 1, window: int = 1) -> FusionResult:
    """Run the full stage-one pipeline on one agent.

    ``sender_priors`` are peer voxel priors already decompressed and warped
    into this agent's frame (empty mapping = no collaboration).
    """
    v_mix = mix_voxel(v_lidar, sender_priors, ws)
    occ = occupancy_head(v_mix, ws)
    gated = occ_gate(v_img, occ, v_mix, ws)
    c = v_lidar.shape.channels
    bev_lidar = collapse_to_bev(v_mix)
    bev_img = collapse_to_bev(gated, proj=ws.linear("collapse.img", c, c))
    fused = fuse_heterogeneous(bev_lidar, bev_img, ws, mlp_depth=mlp_depth, window=window)
    return FusionResult(v_mix, occ, gated, bev_lidar, bev_img, fused)
