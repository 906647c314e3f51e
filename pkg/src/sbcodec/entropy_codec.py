"""Context-adaptive bitplane coding of quantization indices.

Indices are coded one feature map at a time, most significant bitplane
first, raster order within a plane. A sample that has not yet produced a
1 bit codes *significance* bits whose context is the 4-neighbor
significance pattern (up, left, right, down -> 16 contexts); once
significant it codes *refinement* bits whose context is the number of set
bits among 4 neighbors in the previous plane and 4 causal neighbors in
the current plane (0..8 -> 9 contexts). Significance state is frozen at
the start of each plane, which keeps context formation identical on the
encoder and decoder sides without multiple coding passes.

The arithmetic coder is a 32-bit carry-propagating binary range coder
with byte-wise renormalization and 16-bit fixed-point probabilities from
per-context (c0, c1) counters.

This module holds the readable reference implementation plus the public
container format; the hot per-bit loops used by :func:`encode` and
:func:`decode` live in ``_kernels`` and are cross-checked byte-exactly
against the reference by the test suite.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels
from .quantizer import QuantIndices

__all__ = [
    "N_SIG_CONTEXTS",
    "N_REF_CONTEXTS",
    "N_MODELS",
    "BitstreamError",
    "BadMagicError",
    "BadVersionError",
    "HeaderFieldError",
    "TruncatedStreamError",
    "ContextId",
    "BinaryContextModel",
    "RangeEncoder",
    "RangeDecoder",
    "significance_context",
    "refinement_context",
    "BitEvent",
    "trace_bits",
    "Bitstream",
    "encode",
    "decode",
    "actual_bpp",
]

N_SIG_CONTEXTS = _kernels.N_SIG_CONTEXTS
N_REF_CONTEXTS = _kernels.N_REF_CONTEXTS
N_MODELS = _kernels.N_MODELS

MAGIC = b"SBC1"
VERSION = 1
HEADER_SIZE = 24
_HEADER_FMT = "<4sBBHIIII"

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class BitstreamError(ValueError):
    """Base class for bitstream decode failures."""


class BadMagicError(BitstreamError):
    """The stream does not start with the SBC1 magic."""


class BadVersionError(BitstreamError):
    """The stream declares an unsupported format version."""


class HeaderFieldError(BitstreamError):
    """Header fields are inconsistent (dimensions, bit depth, channels)."""


class TruncatedStreamError(BitstreamError):
    """The stream ends before the declared tensor is fully decodable."""


@dataclass(frozen=True)
class ContextId:
    """A coding context: kind plus the context value within that kind."""

    kind: str  # "significance" or "refinement"
    value: int

    def __post_init__(self) -> None:
        if self.kind == "significance":
            if not 0 <= self.value < N_SIG_CONTEXTS:
                raise ValueError(f"significance context {self.value} out of range")
        elif self.kind == "refinement":
            if not 0 <= self.value < N_REF_CONTEXTS:
                raise ValueError(f"refinement context {self.value} out of range")
        else:
            raise ValueError(f"unknown context kind {self.kind!r}")

    @property
    def model_index(self) -> int:
        """Flat model index: significance contexts first, then refinement."""
        if self.kind == "significance":
            return self.value
        return N_SIG_CONTEXTS + self.value


class BinaryContextModel:
    """Adaptive binary probability model backed by (c0, c1) counters.

    Counts start at (1, 1) and the matching count increments by one per
    coded bit; when c0 + c1 reaches RESCALE_LIMIT both halve, rounding up.
    """

    __slots__ = ("c0", "c1")

    RESCALE_LIMIT = _kernels.RESCALE_LIMIT

    def __init__(self, c0: int = 1, c1: int = 1):
        if c0 < 1 or c1 < 1:
            raise ValueError("counts must be at least 1")
        self.c0 = c0
        self.c1 = c1

    def prob_one(self) -> int:
        """P(bit=1) in 16-bit fixed point, clamped to [1, 65535]."""
        p = (self.c1 << 16) // (self.c0 + self.c1)
        return min(max(p, 1), 65535)

    def update(self, bit: int) -> None:
        if bit:
            self.c1 += 1
        else:
            self.c0 += 1
        if self.c0 + self.c1 >= self.RESCALE_LIMIT:
            self.c0 = (self.c0 + 1) >> 1
            self.c1 = (self.c1 + 1) >> 1


class RangeEncoder:
    """Reference binary range encoder.

    ``cost_bits`` accumulates -log2 of the probability mass actually
    allocated to each coded bit, so ``len(finish()) * 8`` can be checked
    against it (payload <= cost_bits + small flush overhead).
    """

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._finished = False
        self.cost_bits = 0.0

    def _shift_low(self) -> None:
        if self._low < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            self._out.extend(((0xFF + carry) & 0xFF,) * (self._cache_size - 1))
            self._cache = (self._low >> 24) & 0xFF
            self._cache_size = 0
        self._cache_size += 1
        self._low = (self._low << 8) & _MASK32

    def code_bit(self, model: BinaryContextModel, bit: int) -> None:
        """Code one bit under ``model`` and update the model counts."""
        if self._finished:
            raise RuntimeError("encoder already finished")
        bound = (self._range >> 16) * model.prob_one()
        before = self._range
        if bit:
            self._range = bound
        else:
            self._low += bound
            self._range -= bound
        self.cost_bits -= math.log2(self._range / before)
        while self._range < _TOP:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32
        model.update(bit)

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Reference binary range decoder, inverse of :class:`RangeEncoder`."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        for _ in range(5):
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise TruncatedStreamError("range coder ran out of payload bytes")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_bit(self, model: BinaryContextModel) -> int:
        bound = (self._range >> 16) * model.prob_one()
        if self._code < bound:
            bit = 1
            self._range = bound
        else:
            bit = 0
            self._code -= bound
            self._range -= bound
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range = (self._range << 8) & _MASK32
        model.update(bit)
        return bit


def significance_context(state: np.ndarray, pos: tuple[int, int]) -> ContextId:
    """Significance context at ``pos`` from a frozen significance snapshot.

    ``state`` is the (H, W) boolean significance map as of the start of
    the current bitplane; neighbors out of bounds count as insignificant.
    The value packs the up/left/right/down flags as 8/4/2/1.
    """
    state = np.asarray(state)
    h, w = state.shape
    y, x = pos
    if not (0 <= y < h and 0 <= x < w):
        raise IndexError(f"position {pos} out of bounds for {h}x{w}")
    v = 0
    if y > 0 and state[y - 1, x]:
        v += 8
    if x > 0 and state[y, x - 1]:
        v += 4
    if x + 1 < w and state[y, x + 1]:
        v += 2
    if y + 1 < h and state[y + 1, x]:
        v += 1
    return ContextId("significance", v)


def refinement_context(
    prev_plane_bits: np.ndarray, cur_plane_bits: np.ndarray, pos: tuple[int, int]
) -> ContextId:
    """Refinement context: count of set neighbor bits (0..8).

    Counts up/left/right/down in the previous (more significant) plane
    plus the four already-coded neighbors (up-left, up, up-right, left)
    in the current plane. Out-of-bounds neighbors contribute 0.
    """
    prev_plane_bits = np.asarray(prev_plane_bits)
    cur_plane_bits = np.asarray(cur_plane_bits)
    h, w = prev_plane_bits.shape
    y, x = pos
    if not (0 <= y < h and 0 <= x < w):
        raise IndexError(f"position {pos} out of bounds for {h}x{w}")
    v = 0
    if y > 0 and prev_plane_bits[y - 1, x]:
        v += 1
    if x > 0 and prev_plane_bits[y, x - 1]:
        v += 1
    if x + 1 < w and prev_plane_bits[y, x + 1]:
        v += 1
    if y + 1 < h and prev_plane_bits[y + 1, x]:
        v += 1
    if y > 0 and x > 0 and cur_plane_bits[y - 1, x - 1]:
        v += 1
    if y > 0 and cur_plane_bits[y - 1, x]:
        v += 1
    if y > 0 and x + 1 < w and cur_plane_bits[y - 1, x + 1]:
        v += 1
    if x > 0 and cur_plane_bits[y, x - 1]:
        v += 1
    return ContextId("refinement", v)


class BitEvent(NamedTuple):
    """One coded bit of the traversal: where it sits and how it is coded."""

    channel: int
    plane: int
    y: int
    x: int
    ctx: ContextId
    bit: int


def trace_bits(q: QuantIndices) -> Iterator[BitEvent]:
    """Reference traversal of the coding order, yielding one event per bit.

    Feature maps are visited separately; within a map, planes go from most
    to least significant and positions in raster order. Significance state
    is updated only between planes.
    """
    h, w, c = q.indices.shape
    for ch in range(c):
        qmap = q.indices[:, :, ch]
        sig = np.zeros((h, w), dtype=bool)
        prev_bits = np.zeros((h, w), dtype=np.uint8)
        for k in range(q.b):
            shift = q.b - 1 - k
            cur_bits = np.zeros((h, w), dtype=np.uint8)
            newly_sig = np.zeros((h, w), dtype=bool)
            for y in range(h):
                for x in range(w):
                    bit = int(qmap[y, x] >> shift) & 1
                    if not sig[y, x]:
                        ctx = significance_context(sig, (y, x))
                        if bit:
                            newly_sig[y, x] = True
                    else:
                        ctx = refinement_context(prev_bits, cur_bits, (y, x))
                    cur_bits[y, x] = bit
                    yield BitEvent(ch, k, y, x, ctx, bit)
            sig |= newly_sig
            prev_bits = cur_bits


@dataclass
class Bitstream:
    """Coded tensor container: fixed 24-byte header plus coder payload.

    ``model_bits`` is a diagnostic (the coder's own -log2 probability sum)
    and is not serialized.
    """

    b: int
    channels: int
    padded_width: int
    padded_height: int
    orig_width: int
    orig_height: int
    payload: bytes
    model_bits: float | None = field(default=None, compare=False)

    def to_bytes(self) -> bytes:
        header = struct.pack(
            _HEADER_FMT,
            MAGIC,
            VERSION,
            self.b,
            self.channels,
            self.padded_width,
            self.padded_height,
            self.orig_width,
            self.orig_height,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 4:
            raise TruncatedStreamError(f"stream has only {len(data)} bytes")
        if data[:4] != MAGIC:
            raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        if len(data) < HEADER_SIZE:
            raise TruncatedStreamError(
                f"header needs {HEADER_SIZE} bytes, stream has {len(data)}"
            )
        magic, version, b, channels, pw, ph, ow, oh = struct.unpack(
            _HEADER_FMT, data[:HEADER_SIZE]
        )
        if version != VERSION:
            raise BadVersionError(f"unsupported version {version}")
        bs = cls(b, channels, pw, ph, ow, oh, data[HEADER_SIZE:])
        bs.validate_header()
        return bs

    def validate_header(self) -> None:
        if not 1 <= self.b <= 16:
            raise HeaderFieldError(f"bit depth {self.b} out of range")
        if self.channels < 1:
            raise HeaderFieldError(f"channel count {self.channels} out of range")
        if self.padded_width < 8 or self.padded_height < 8:
            raise HeaderFieldError("padded dimensions must be at least 8")
        if self.padded_width % 8 or self.padded_height % 8:
            raise HeaderFieldError(
                f"padded dimensions {self.padded_width}x{self.padded_height} "
                "not divisible by 8"
            )
        if not 1 <= self.orig_width <= self.padded_width:
            raise HeaderFieldError("original width inconsistent with padded width")
        if not 1 <= self.orig_height <= self.padded_height:
            raise HeaderFieldError("original height inconsistent with padded height")

    @property
    def feature_width(self) -> int:
        return self.padded_width // 8

    @property
    def feature_height(self) -> int:
        return self.padded_height // 8


def encode(q: QuantIndices, orig_size: tuple[int, int] | None = None) -> Bitstream:
    """Losslessly encode quantization indices into a bitstream.

    ``orig_size`` is the pre-padding image size (width, height) in pixels
    and defaults to the padded size implied by the feature grid.
    """
    h, w, c = q.indices.shape
    total_bits = h * w * c * q.b
    # Worst-case coded cost is ~10 bits per input bit (counts are capped
    # at RESCALE_LIMIT), plus flush bytes.
    out = np.empty(total_bits * 2 + 64, dtype=np.uint8)
    nbytes, cost = _kernels.encode_tensor(q.indices, q.b, out)
    padded = (w * 8, h * 8)
    ow, oh = orig_size if orig_size is not None else padded
    return Bitstream(
        b=q.b,
        channels=c,
        padded_width=padded[0],
        padded_height=padded[1],
        orig_width=ow,
        orig_height=oh,
        payload=out[:nbytes].tobytes(),
        model_bits=cost,
    )


def decode(bs: Bitstream) -> QuantIndices:
    """Decode a bitstream back to the exact quantization indices."""
    bs.validate_header()
    h, w, c = bs.feature_height, bs.feature_width, bs.channels
    q = np.zeros((h, w, c), dtype=np.int32)
    data = np.frombuffer(bs.payload, dtype=np.uint8)
    status = _kernels.decode_tensor(data, h, w, c, bs.b, q)
    if status != 0:
        raise TruncatedStreamError(
            f"payload of {len(bs.payload)} bytes too short for "
            f"{h}x{w}x{c} indices at b={bs.b}"
        )
    return QuantIndices(q, bs.b)


def actual_bpp(bs: Bitstream) -> float:
    """Coded size (header + payload) in bits per original-image pixel."""
    return (len(bs.payload) + HEADER_SIZE) * 8 / (bs.orig_width * bs.orig_height)
