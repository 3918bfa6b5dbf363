"""Binary message formats for everything agents put on the air.

All messages share a fixed little-endian header::

    offset 0   magic  b"CPMS"
    offset 4   u8     format version (currently 1)
    offset 5   u8     message kind
    offset 6   u8     pyramid scale of the payload
    offset 7   u8     reserved (zero)
    offset 8   i32    sender agent id
    offset 12  i32    receiver agent id (-1 = broadcast)

followed by kind-specific metadata (grid dims / instance counts), a u32
payload length, and the raw payload. Grid cell sizes are run configuration
and never travel on the wire.

Accounting note: :func:`payload_bytes` — which feeds the communication
ledger — charges the payload only, not headers or metadata. An instance
costs ``2*4`` bytes of cell position, ``channels*4`` of feature, and 4 of
confidence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .collab import InstanceVector
from .errors import WireError

MAGIC = b"CPMS"
VERSION = 1
HEADER = struct.Struct("<4sBBBBii")


class MessageKind(IntEnum):
    VOXEL_PRIOR = 1
    HEATMAP_SHARE = 2
    INSTANCE_QUERY = 3
    INSTANCE_REPLY = 4
    INSTANCE_BROADCAST = 5


BROADCAST = -1


@dataclass(frozen=True)
class VoxelPriorMsg:
    """Compressed voxel volume, (h, w, l, c) float32 in the sender's frame."""

    sender: int
    receiver: int
    data: np.ndarray
    scale: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise WireError("voxel prior payload must be 4-D")
        object.__setattr__(self, "data", arr)

    kind = MessageKind.VOXEL_PRIOR


@dataclass(frozen=True)
class HeatmapMsg:
    """Confidence plane, (h, w) float32 in the sender's frame."""

    sender: int
    receiver: int
    data: np.ndarray
    scale: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise WireError("heatmap payload must be 2-D")
        object.__setattr__(self, "data", arr)

    kind = MessageKind.HEATMAP_SHARE


@dataclass(frozen=True)
class QueryMsg:
    """Cell positions (in the *sender's* frame) the sender wants filled in."""

    sender: int
    receiver: int
    positions: np.ndarray
    scale: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.positions, dtype=np.int32)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise WireError("query positions must be (k, 2)")
        object.__setattr__(self, "positions", arr)

    kind = MessageKind.INSTANCE_QUERY


@dataclass(frozen=True)
class ReplyMsg:
    """Instances answering a query, positions in the *receiver's* frame."""

    sender: int
    receiver: int
    instances: tuple[InstanceVector, ...]
    scale: int = 0

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    kind = MessageKind.INSTANCE_REPLY


@dataclass(frozen=True)
class BroadcastMsg:
    """Unsolicited high-confidence instances in the sender's frame."""

    sender: int
    receiver: int
    instances: tuple[InstanceVector, ...]
    scale: int = 0

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    kind = MessageKind.INSTANCE_BROADCAST


Message = VoxelPriorMsg | HeatmapMsg | QueryMsg | ReplyMsg | BroadcastMsg


def _instance_channels(instances: tuple[InstanceVector, ...]) -> int:
    if not instances:
        return 0
    c = instances[0].feature.shape[0]
    for iv in instances:
        if iv.feature.shape[0] != c:
            raise WireError("instances in one message must share channel count")
    return c


def payload_bytes(msg: Message) -> int:
    """Size of the message payload in bytes — the ledger's unit of charge."""
    if isinstance(msg, VoxelPriorMsg):
        return int(msg.data.size) * 4
    if isinstance(msg, HeatmapMsg):
        return int(msg.data.size) * 4
    if isinstance(msg, QueryMsg):
        return int(msg.positions.shape[0]) * 8
    if isinstance(msg, (ReplyMsg, BroadcastMsg)):
        c = _instance_channels(msg.instances)
        return len(msg.instances) * (8 + 4 * c + 4)
    raise WireError(f"unknown message type {type(msg).__name__}")


def _pack_instances(instances: tuple[InstanceVector, ...]) -> bytes:
    parts = []
    for iv in instances:
        parts.append(struct.pack("<ii", iv.h, iv.w))
        parts.append(iv.feature.astype("<f4").tobytes())
        parts.append(struct.pack("<f", iv.heat))
    return b"".join(parts)


def encode_message(msg: Message) -> bytes:
    """Serialize a message; ``decode_message`` inverts this exactly."""
    header = HEADER.pack(MAGIC, VERSION, int(msg.kind), msg.scale, 0,
                         msg.sender, msg.receiver)
    if isinstance(msg, VoxelPriorMsg):
        meta = struct.pack("<4I", *msg.data.shape)
        payload = msg.data.astype("<f4").tobytes()
    elif isinstance(msg, HeatmapMsg):
        meta = struct.pack("<2I", *msg.data.shape)
        payload = msg.data.astype("<f4").tobytes()
    elif isinstance(msg, QueryMsg):
        meta = struct.pack("<I", msg.positions.shape[0])
        payload = msg.positions.astype("<i4").tobytes()
    elif isinstance(msg, (ReplyMsg, BroadcastMsg)):
        meta = struct.pack("<2I", len(msg.instances), _instance_channels(msg.instances))
        payload = _pack_instances(msg.instances)
    else:
        raise WireError(f"unknown message type {type(msg).__name__}")
    return header + meta + struct.pack("<I", len(payload)) + payload


def _need(blob: bytes, offset: int, count: int, what: str) -> None:
    if offset + count > len(blob):
        raise WireError(f"truncated {what}", offset)


def _read_payload(blob: bytes, offset: int, expected: int) -> tuple[bytes, int]:
    _need(blob, offset, 4, "payload length")
    (plen,) = struct.unpack_from("<I", blob, offset)
    if plen != expected:
        raise WireError(f"payload length {plen} != expected {expected}", offset)
    offset += 4
    _need(blob, offset, plen, "payload")
    if offset + plen != len(blob):
        raise WireError(f"{len(blob) - offset - plen} trailing bytes", offset + plen)
    return blob[offset : offset + plen], offset + plen


def _unpack_instances(payload: bytes, count: int, channels: int,
                      base_offset: int) -> tuple[InstanceVector, ...]:
    stride = 8 + 4 * channels + 4
    out = []
    for i in range(count):
        at = i * stride
        h, w = struct.unpack_from("<ii", payload, at)
        feat = np.frombuffer(payload, dtype="<f4", count=channels, offset=at + 8)
        (heat,) = struct.unpack_from("<f", payload, at + 8 + 4 * channels)
        if h < 0 or w < 0:
            raise WireError(f"instance {i} has negative position", base_offset + at)
        if not np.isfinite(feat).all() or not np.isfinite(heat):
            raise WireError(f"instance {i} has non-finite values", base_offset + at)
        out.append(InstanceVector(h, w, feat.copy(), float(heat)))
    return tuple(out)


def decode_message(blob: bytes) -> Message:
    """Parse one wire message, validating structure as it goes.

    Failures raise :class:`~copersim.errors.WireError` carrying the byte
    offset where parsing stopped.
    """
    _need(blob, 0, HEADER.size, "header")
    magic, version, kind_raw, scale, _pad, sender, receiver = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise WireError(f"unsupported version {version}", 4)
    try:
        kind = MessageKind(kind_raw)
    except ValueError:
        raise WireError(f"unknown message kind {kind_raw}", 5) from None
    offset = HEADER.size

    if kind is MessageKind.VOXEL_PRIOR:
        _need(blob, offset, 16, "voxel dims")
        dims = struct.unpack_from("<4I", blob, offset)
        if min(dims) < 1:
            raise WireError(f"voxel dims {dims} contain zero", offset)
        offset += 16
        n = dims[0] * dims[1] * dims[2] * dims[3]
        payload, _ = _read_payload(blob, offset, n * 4)
        data = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if not np.isfinite(data).all():
            raise WireError("voxel payload has non-finite values", offset + 4)
        return VoxelPriorMsg(sender, receiver, data.copy(), scale)

    if kind is MessageKind.HEATMAP_SHARE:
        _need(blob, offset, 8, "heatmap dims")
        dims = struct.unpack_from("<2I", blob, offset)
        if min(dims) < 1:
            raise WireError(f"heatmap dims {dims} contain zero", offset)
        offset += 8
        payload, _ = _read_payload(blob, offset, dims[0] * dims[1] * 4)
        data = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if not np.isfinite(data).all():
            raise WireError("heatmap payload has non-finite values", offset + 4)
        return HeatmapMsg(sender, receiver, data.copy(), scale)

    if kind is MessageKind.INSTANCE_QUERY:
        _need(blob, offset, 4, "query count")
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        payload, _ = _read_payload(blob, offset, count * 8)
        positions = np.frombuffer(payload, dtype="<i4").reshape(count, 2)
        if count and positions.min() < 0:
            raise WireError("query contains negative positions", offset + 4)
        return QueryMsg(sender, receiver, positions.copy(), scale)

    # reply and broadcast share their frame layout
    _need(blob, offset, 8, "instance counts")
    count, channels = struct.unpack_from("<2I", blob, offset)
    if count and channels < 1:
        raise WireError("instances declared with zero channels", offset)
    offset += 8
    payload, _ = _read_payload(blob, offset, count * (8 + 4 * channels + 4))
    instances = _unpack_instances(payload, count, channels, offset + 4)
    cls = ReplyMsg if kind is MessageKind.INSTANCE_REPLY else BroadcastMsg
    return cls(sender, receiver, instances, scale)
