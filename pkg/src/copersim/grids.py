"""Dense grid containers, coordinate warping, and the shared attention kernel.

Conventions used by every module in the package:

* Array layout is row-major with index order ``(h, w, l, c)`` for voxel
  grids and ``(h, w, c)`` for BEV planes; serialization uses the same order.
* Cell ``(i, j, k)`` of a grid maps to local metric coordinates
  ``x = (i + 0.5 - H/2) * cell_size_m``, ``y = (j + 0.5 - W/2) * cell_size_m``,
  ``z = (k + 0.5) * z_size_m`` (x/y centered on the grid origin, z from the
  ground plane up).
* Grid data is stored as finite 32-bit floats; functions never mutate their
  inputs and always return fresh arrays, so values are safe to share across
  threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

RESAMPLE_FACTORS = (0.25, 0.5, 2, 4)


def _normalize_angle(deg: float) -> float:
    return float((deg + 180.0) % 360.0 - 180.0)


@dataclass(frozen=True)
class GridShape:
    """Dimensions and metric resolution of a dense feature grid."""

    h_cells: int
    w_cells: int
    l_bins: int
    channels: int
    cell_size_m: float = 0.5
    z_size_m: float = 0.5

    def __post_init__(self):
        for name in ("h_cells", "w_cells", "l_bins", "channels"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"GridShape.{name} must be >= 1")
        if self.cell_size_m <= 0 or self.z_size_m <= 0:
            raise ShapeError("GridShape cell sizes must be positive")

    @property
    def voxel_dims(self) -> tuple[int, int, int, int]:
        return (self.h_cells, self.w_cells, self.l_bins, self.channels)

    @property
    def bev_dims(self) -> tuple[int, int, int]:
        return (self.h_cells, self.w_cells, self.channels)

    def downscaled(self, scale: int) -> "GridShape":
        """Shape of this grid at pyramid level ``scale`` (ceil halving)."""
        f = 2**scale
        return GridShape(
            h_cells=-(-self.h_cells // f),
            w_cells=-(-self.w_cells // f),
            l_bins=self.l_bins,
            channels=self.channels,
            cell_size_m=self.cell_size_m * f,
            z_size_m=self.z_size_m,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform of one frame expressed in another (meters / degrees)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", _normalize_angle(self.yaw))
        object.__setattr__(self, "pitch", _normalize_angle(self.pitch))
        object.__setattr__(self, "roll", _normalize_angle(self.roll))

    def rotation(self) -> np.ndarray:
        """3x3 rotation matrix, yaw-pitch-roll (Z, then Y, then X) order."""
        cy, sy = np.cos(np.radians(self.yaw)), np.sin(np.radians(self.yaw))
        cp, sp = np.cos(np.radians(self.pitch)), np.sin(np.radians(self.pitch))
        cr, sr = np.cos(np.radians(self.roll)), np.sin(np.radians(self.roll))
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return rz @ ry @ rx

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) points from this pose's frame into the parent frame."""
        return points @ self.rotation().T + self.translation()

    def is_identity(self, tol: float = 0.0) -> bool:
        vals = (self.x, self.y, self.z, self.yaw, self.pitch, self.roll)
        return all(abs(v) <= tol for v in vals)


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Pose of ``source``'s frame expressed in ``target``'s frame.

    Both inputs must be poses in a common parent (world) frame.
    """
    r_t = target.rotation()
    r = r_t.T @ source.rotation()
    t = r_t.T @ (source.translation() - target.translation())
    # ZYX Euler extraction; gimbal-degenerate pitch folds roll into yaw.
    pitch = np.degrees(np.arcsin(np.clip(-r[2, 0], -1.0, 1.0)))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        yaw = np.degrees(np.arctan2(r[1, 0], r[0, 0]))
        roll = np.degrees(np.arctan2(r[2, 1], r[2, 2]))
    else:
        yaw = np.degrees(np.arctan2(-r[0, 1], r[1, 1]))
        roll = 0.0
    return Pose(x=t[0], y=t[1], z=t[2], yaw=yaw, pitch=pitch, roll=roll)


def _validated_grid_data(data: np.ndarray, dims: tuple, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.shape != dims:
        raise ShapeError(f"{what} data has shape {arr.shape}, expected {dims}")
    if not np.isfinite(arr).all():
        raise ShapeError(f"{what} data contains non-finite values")
    return arr


@dataclass(frozen=True)
class VoxelFeature:
    """Dense H x W x L x C feature grid in a named agent frame."""

    shape: GridShape
    data: np.ndarray
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "data", _validated_grid_data(self.data, self.shape.voxel_dims, "VoxelFeature")
        )

    @property
    def byte_size(self) -> int:
        return int(self.data.size) * 4


@dataclass(frozen=True)
class BevFeature:
    """Dense H x W x C bird's-eye-view feature plane (l_bins ignored)."""

    shape: GridShape
    data: np.ndarray
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "data", _validated_grid_data(self.data, self.shape.bev_dims, "BevFeature")
        )

    @property
    def byte_size(self) -> int:
        return int(self.data.size) * 4


def zeros_voxel(shape: GridShape, frame: int = 0) -> VoxelFeature:
    return VoxelFeature(shape, np.zeros(shape.voxel_dims, dtype=np.float32), frame)


def zeros_bev(shape: GridShape, frame: int = 0) -> BevFeature:
    return BevFeature(shape, np.zeros(shape.bev_dims, dtype=np.float32), frame)


# ---------------------------------------------------------------------------
# Attention kernel
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction); -inf logits drop out."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, stable for large |x| in either direction."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def attention_batched(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """Scaled dot-product attention over a batch of independent node sets.

    Args:
        queries: (B, M, C) float array.
        keys: (B, N, C) float array.
        values: (B, N, Cv) float array.
        valid: optional (B, N) bool mask; False keys are excluded exactly
            (their softmax weight is 0). Every row must keep >= 1 valid key.

    Returns:
        (B, M, Cv) float64 array; row i is softmax(q_i K^T / sqrt(C)) V.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("attention expects (B, M, C) / (B, N, C) / (B, N, Cv) arrays")
    if q.shape[2] != k.shape[2]:
        raise ShapeError(f"query dim {q.shape[2]} != key dim {k.shape[2]}")
    if k.shape[1] != v.shape[1]:
        raise ShapeError(f"key count {k.shape[1]} != value count {v.shape[1]}")
    if q.shape[0] != k.shape[0] or k.shape[0] != v.shape[0]:
        raise ShapeError("attention batch sizes differ")
    c = q.shape[2]
    if c < 1:
        raise ShapeError("attention requires channels >= 1")
    logits = np.einsum("bmc,bnc->bmn", q, k) / np.sqrt(c)
    if valid is not None:
        mask = np.asarray(valid, dtype=bool)
        if mask.shape != k.shape[:2]:
            raise ShapeError("valid mask shape must be (B, N)")
        if not mask.any(axis=1).all():
            raise ShapeError("attention mask excludes every key in some row")
        logits = np.where(mask[:, None, :], logits, -np.inf)
    weights = softmax(logits, axis=-1)
    return np.einsum("bmn,bnv->bmv", weights, v)


def attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Single-set scaled dot-product attention on 2D matrices.

    ``queries`` is (M, C), ``keys`` (N, C), ``values`` (N, Cv); the result is
    (M, Cv) with each output row a convex combination of value rows.
    """
    q = np.asarray(queries)
    k = np.asarray(keys)
    v = np.asarray(values)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention expects 2D matrices")
    for name, arr in (("queries", q), ("keys", k), ("values", v)):
        if not np.isfinite(arr).all():
            raise ShapeError(f"attention {name} contain non-finite values")
    return attention_batched(q[None], k[None], v[None])[0]


# ---------------------------------------------------------------------------
# Grid geometry helpers
# ---------------------------------------------------------------------------


def cell_centers_xy(shape: GridShape) -> np.ndarray:
    """(H, W, 2) array of local metric (x, y) centers of the BEV cells."""
    xs = (np.arange(shape.h_cells, dtype=np.float64) + 0.5 - shape.h_cells / 2.0) * shape.cell_size_m
    ys = (np.arange(shape.w_cells, dtype=np.float64) + 0.5 - shape.w_cells / 2.0) * shape.cell_size_m
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def bin_centers_z(shape: GridShape) -> np.ndarray:
    """(L,) array of vertical bin center heights."""
    return (np.arange(shape.l_bins, dtype=np.float64) + 0.5) * shape.z_size_m


def local_xy_to_cell(shape: GridShape, xy: np.ndarray) -> np.ndarray:
    """Continuous (fractional) grid indices for local (x, y) points."""
    pts = np.asarray(xy, dtype=np.float64)
    gh = pts[..., 0] / shape.cell_size_m + shape.h_cells / 2.0 - 0.5
    gw = pts[..., 1] / shape.cell_size_m + shape.w_cells / 2.0 - 0.5
    return np.stack([gh, gw], axis=-1)


def _trilinear_sample(data: np.ndarray, gh: np.ndarray, gw: np.ndarray, gl: np.ndarray) -> np.ndarray:
    """Trilinear gather from (H, W, L, C) at fractional indices; 0 outside."""
    h_n, w_n, l_n, c_n = data.shape
    out = np.zeros(gh.shape + (c_n,), dtype=np.float64)
    h0 = np.floor(gh).astype(np.int64)
    w0 = np.floor(gw).astype(np.int64)
    l0 = np.floor(gl).astype(np.int64)
    fh, fw, fl = gh - h0, gw - w0, gl - l0
    for dh in (0, 1):
        for dw in (0, 1):
            for dl in (0, 1):
                hi, wi, li = h0 + dh, w0 + dw, l0 + dl
                inb = (
                    (hi >= 0) & (hi < h_n) & (wi >= 0) & (wi < w_n) & (li >= 0) & (li < l_n)
                )
                weight = (
                    (fh if dh else 1.0 - fh)
                    * (fw if dw else 1.0 - fw)
                    * (fl if dl else 1.0 - fl)
                )
                if not inb.any():
                    continue
                hs, ws, ls = hi[inb], wi[inb], li[inb]
                out[inb] += weight[inb, None] * data[hs, ws, ls, :]
    return out


def _bilinear_sample(data: np.ndarray, gh: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """Bilinear gather from (H, W, C) at fractional indices; 0 outside."""
    h_n, w_n, c_n = data.shape
    out = np.zeros(gh.shape + (c_n,), dtype=np.float64)
    h0 = np.floor(gh).astype(np.int64)
    w0 = np.floor(gw).astype(np.int64)
    fh, fw = gh - h0, gw - w0
    for dh in (0, 1):
        for dw in (0, 1):
            hi, wi = h0 + dh, w0 + dw
            inb = (hi >= 0) & (hi < h_n) & (wi >= 0) & (wi < w_n)
            weight = (fh if dh else 1.0 - fh) * (fw if dw else 1.0 - fw)
            if not inb.any():
                continue
            out[inb] += weight[inb, None] * data[hi[inb], wi[inb], :]
    return out


def warp_to_frame(v: VoxelFeature, rel: Pose, target: GridShape) -> VoxelFeature:
    """Resample a voxel grid into a target frame.

    ``rel`` is the pose of ``v``'s frame expressed in the target frame. Each
    target cell center is inverse-transformed into the source frame and
    trilinearly sampled; samples outside the source grid contribute 0.
    """
    if v.shape.channels != target.channels:
        raise ShapeError("warp_to_frame cannot change channel count")
    if rel.is_identity() and v.shape == target:
        return VoxelFeature(target, v.data.copy(), v.frame)

    xy = cell_centers_xy(target)  # (H, W, 2)
    zs = bin_centers_z(target)  # (L,)
    h_n, w_n = target.h_cells, target.w_cells
    l_n = target.l_bins
    pts = np.empty((h_n, w_n, l_n, 3), dtype=np.float64)
    pts[..., 0] = xy[..., 0][:, :, None]
    pts[..., 1] = xy[..., 1][:, :, None]
    pts[..., 2] = zs[None, None, :]

    r = rel.rotation()
    t = rel.translation()
    src = (pts.reshape(-1, 3) - t) @ r  # rows p_src = R^T (p_tgt - t)

    s = v.shape
    gh = src[:, 0] / s.cell_size_m + s.h_cells / 2.0 - 0.5
    gw = src[:, 1] / s.cell_size_m + s.w_cells / 2.0 - 0.5
    gl = src[:, 2] / s.z_size_m - 0.5
    sampled = _trilinear_sample(v.data, gh, gw, gl)
    out = sampled.reshape(h_n, w_n, l_n, target.channels)
    return VoxelFeature(target, out.astype(np.float32), v.frame)


def warp_bev_to_frame(b: BevFeature, rel: Pose, target: GridShape) -> BevFeature:
    """Planar (x, y, yaw) warp of a BEV plane into a target frame.

    The 2.5D analogue of :func:`warp_to_frame`: bilinear sampling, zero
    outside the source plane. z, pitch and roll of ``rel`` are ignored.
    """
    if b.shape.channels != target.channels:
        raise ShapeError("warp_bev_to_frame cannot change channel count")
    planar = Pose(x=rel.x, y=rel.y, yaw=rel.yaw)
    if planar.is_identity() and b.shape.bev_dims == target.bev_dims and b.shape.cell_size_m == target.cell_size_m:
        return BevFeature(target, b.data.copy(), b.frame)
    xy = cell_centers_xy(target).reshape(-1, 2)
    r = planar.rotation()[:2, :2]
    t = planar.translation()[:2]
    src = (xy - t) @ r
    s = b.shape
    gh = src[:, 0] / s.cell_size_m + s.h_cells / 2.0 - 0.5
    gw = src[:, 1] / s.cell_size_m + s.w_cells / 2.0 - 0.5
    sampled = _bilinear_sample(b.data, gh, gw)
    out = sampled.reshape(target.h_cells, target.w_cells, target.channels)
    return BevFeature(target, out.astype(np.float32), b.frame)


# ---------------------------------------------------------------------------
# Vertical collapse and in-plane resampling
# ---------------------------------------------------------------------------


def collapse_to_bev(v: VoxelFeature, proj=None) -> BevFeature:
    """Sum a voxel grid over its vertical bins, then project per cell.

    ``proj`` is a ``(weight, bias)`` pair with weight (C_in, C_out) and bias
    (C_out,); ``None`` keeps the summed channels unchanged.
    """
    summed = v.data.sum(axis=2, dtype=np.float64)  # (H, W, C_in)
    if proj is None:
        out = summed
        channels = v.shape.channels
    else:
        weight, bias = proj
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] != v.shape.channels:
            raise ShapeError(
                f"collapse projection expects ({v.shape.channels}, C_out) weight, got {weight.shape}"
            )
        channels = weight.shape[1]
        out = summed @ weight
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float64)
            if bias.shape != (channels,):
                raise ShapeError(f"collapse bias shape {bias.shape} != ({channels},)")
            out = out + bias
    shape = GridShape(
        v.shape.h_cells, v.shape.w_cells, 1, channels, v.shape.cell_size_m, v.shape.z_size_m
    )
    return BevFeature(shape, out.astype(np.float32), v.frame)


def _pool2(plane: np.ndarray) -> np.ndarray:
    h, w, c = plane.shape
    if h % 2 or w % 2:
        plane = np.pad(plane, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
        h, w, _ = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _up2(plane: np.ndarray) -> np.ndarray:
    h, w, c = plane.shape
    oh, ow = h * 2, w * 2
    gh = (np.arange(oh, dtype=np.float64) + 0.5) / 2.0 - 0.5
    gw = (np.arange(ow, dtype=np.float64) + 0.5) / 2.0 - 0.5
    gh = np.clip(gh, 0.0, h - 1.0)
    gw = np.clip(gw, 0.0, w - 1.0)
    ghm, gwm = np.meshgrid(gh, gw, indexing="ij")
    return _bilinear_sample(plane, ghm, gwm)


def resample_bev(b: BevFeature, factor) -> BevFeature:
    """Rescale a BEV plane by a factor in {1/4, 1/2, 2, 4}.

    Downsampling is 2x2 mean pooling (applied twice for 1/4, edge-padded on
    odd dims); upsampling is bilinear. Constant planes are preserved exactly.
    """
    f = float(factor)
    if not any(abs(f - allowed) < 1e-12 for allowed in RESAMPLE_FACTORS):
        raise ParameterError(f"resample factor must be one of {RESAMPLE_FACTORS}, got {factor}")
    plane = b.data.astype(np.float64)
    steps = {0.25: ("down", 2), 0.5: ("down", 1), 2.0: ("up", 1), 4.0: ("up", 2)}
    kind, reps = steps[round(f, 2)]
    for _ in range(reps):
        plane = _pool2(plane) if kind == "down" else _up2(plane)
    h, w, c = plane.shape
    if h < 1 or w < 1:
        raise ShapeError("resample result would have an empty dimension")
    shape = GridShape(
        h, w, b.shape.l_bins, c,
        b.shape.cell_size_m / f, b.shape.z_size_m,
    )
    return BevFeature(shape, plane.astype(np.float32), b.frame)
