"""Named forward-only layer weights with a flat binary container format.

The pipeline has no training in scope: every learned layer is a forward pass
whose parameters come from a :class:`WeightSet`. The default construction is
deterministic (identity on leading channels, zero bias), which makes the
analytic unit tests exact while keeping the pipeline runnable end to end.

File layout (little-endian):
    magic ``b"CPWS"`` | u16 version | u32 slot count |
    per slot: u16 name length, utf-8 name, u8 ndim, u32 dims... |
    float32 payloads, one per slot, in declaration order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ShapeError, WireError

MAGIC = b"CPWS"
VERSION = 1


class WeightSet:
    """Mapping of slot name -> float32 tensor with shape checks on access."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self.set(name, value)

    def set(self, name: str, value: np.ndarray) -> None:
        arr = np.ascontiguousarray(value, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise ShapeError(f"weight slot '{name}' contains non-finite values")
        self._tensors[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def get(self, name: str, expect_shape: tuple[int, ...] | None = None) -> np.ndarray:
        if name not in self._tensors:
            raise ShapeError(f"weight slot '{name}' is missing")
        arr = self._tensors[name]
        if expect_shape is not None and arr.shape != tuple(expect_shape):
            raise ShapeError(
                f"weight slot '{name}' has shape {arr.shape}, expected {tuple(expect_shape)}"
            )
        return arr

    def linear(self, prefix: str, c_in: int, c_out: int) -> tuple[np.ndarray, np.ndarray]:
        """(weight, bias) pair for a linear slot ``prefix.weight/.bias``."""
        w = self.get(f"{prefix}.weight", (c_in, c_out))
        b = self.get(f"{prefix}.bias", (c_out,))
        return w, b

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HI", VERSION, len(self._tensors))]
        payloads = []
        for name, arr in self._tensors.items():
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            payloads.append(arr.astype("<f4").tobytes())
        return b"".join(parts) + b"".join(payloads)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightSet":
        if len(blob) < 10:
            raise WireError("weight container shorter than header", 0)
        if blob[:4] != MAGIC:
            raise WireError("bad weight container magic", 0)
        version, count = struct.unpack_from("<HI", blob, 4)
        if version != VERSION:
            raise WireError(f"unsupported weight container version {version}", 4)
        offset = 10
        slots: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            if offset + 2 > len(blob):
                raise WireError("truncated slot table", offset)
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            if offset + 1 > len(blob):
                raise WireError("truncated slot dims", offset)
            ndim = blob[offset]
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            slots.append((name, dims))
        out = cls()
        for name, dims in slots:
            n = int(np.prod(dims)) if dims else 1
            end = offset + 4 * n
            if end > len(blob):
                raise WireError(f"truncated payload for slot '{name}'", offset)
            arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims)
            out.set(name, arr)
            offset = end
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def identity_linear(c_in: int, c_out: int) -> np.ndarray:
    """(c_in, c_out) matrix that copies the leading min(c_in, c_out) channels."""
    w = np.zeros((c_in, c_out), dtype=np.float32)
    k = min(c_in, c_out)
    w[np.arange(k), np.arange(k)] = 1.0
    return w


def identity_conv3x3(c_in: int, c_out: int) -> np.ndarray:
    """(3, 3, c_in, c_out) kernel whose center tap copies leading channels."""
    w = np.zeros((3, 3, c_in, c_out), dtype=np.float32)
    k = min(c_in, c_out)
    w[1, 1, np.arange(k), np.arange(k)] = 1.0
    return w


def default_weights(channels: int, hmf_mlp_depth: int = 1) -> WeightSet:
    """Deterministic identity-style weights for the full pipeline at ``channels``."""
    c = channels
    ws = WeightSet()

    def linear(prefix: str, c_in: int, c_out: int) -> None:
        ws.set(f"{prefix}.weight", identity_linear(c_in, c_out))
        ws.set(f"{prefix}.bias", np.zeros(c_out, dtype=np.float32))

    linear("collapse.img", c, c)
    for name in ("mix.wq", "mix.wk", "mix.wv"):
        ws.set(name, identity_linear(c, c))
    linear("occ", c, 1)
    linear("occ_gate.proj", c, c)
    linear("hmf.expand_lidar", c, c)
    linear("hmf.expand_img", c, c)
    linear("hmf.concat", 2 * c, c)
    for name in ("hmf.attn.wq", "hmf.attn.wk", "hmf.attn.wv"):
        ws.set(name, identity_linear(c, c))
    linear("hmf.mlp.0", c, c)
    for depth in range(1, hmf_mlp_depth):
        linear(f"hmf.mlp.{depth}", c, c)
    for name in ("ic.wq", "ic.wk", "ic.wv"):
        ws.set(name, identity_linear(c, c))
    for name in ("ir.self.wq", "ir.self.wk", "ir.self.wv", "ir.cross.wq", "ir.cross.wk", "ir.cross.wv"):
        ws.set(name, identity_linear(c, c))
    mid = max(1, c // 2)
    ws.set("hm.conv1.weight", identity_conv3x3(c, mid))
    ws.set("hm.conv1.bias", np.zeros(mid, dtype=np.float32))
    ws.set("hm.conv2.weight", identity_conv3x3(mid, 1))
    ws.set("hm.conv2.bias", np.zeros(1, dtype=np.float32))
    return ws
