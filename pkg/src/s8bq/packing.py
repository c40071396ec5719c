"""Sub-8-bit packed tensor format.

Layout (all multi-byte fields little-endian)::

    offset  size      field
    0       4         magic b"S8BQ"
    4       1         version (1)
    5       1         bit width b, 1..8
    6       1         K - 1 (number of centroids minus one)
    7       8         scale, IEEE-754 double
    15      8         element count n, unsigned
    23      1         rank
    24      8*rank    dims, unsigned
    ..      K         centroid numerators, int8, strictly increasing
    ..      ceil(n*b/8) payload

The payload holds one b-bit codebook position per element, packed LSB-first
within each byte and little-endian across bytes.  Bits past ``n*b`` are zero.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .codebook import Codebook, centroid_values, derive_regions
from .errors import CorruptionError, FormatError, InvalidCodebookError, InvalidInputError

MAGIC = b"S8BQ"
VERSION = 1
_FIXED = struct.Struct("<4sBBBdQB")
_DIM = struct.Struct("<Q")


def header_size(rank: int, k: int) -> int:
    return _FIXED.size + _DIM.size * rank + k


def payload_size(n: int, bit_width: int) -> int:
    return (n * bit_width + 7) // 8


def pack_bits(indices: np.ndarray, bit_width: int) -> bytes:
    """Pack unsigned codes into a little-endian, LSB-first bitstream."""
    idx = np.asarray(indices, dtype=np.uint8).reshape(-1)
    bits = (idx[:, None] >> np.arange(bit_width, dtype=np.uint8)) & 1
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_bits(payload: bytes, n: int, bit_width: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; rejects non-zero padding bits."""
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    used = n * bit_width
    if np.any(bits[used:]):
        raise CorruptionError("non-zero padding bits after the last index")
    weights = (1 << np.arange(bit_width)).astype(np.uint16)
    return (bits[:used].reshape(n, bit_width) @ weights).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class PackedTensor:
    """Decoded contents of a packed stream."""

    bit_width: int
    scale: float
    numerators: tuple[int, ...]
    shape: tuple[int, ...]
    indices: np.ndarray

    @property
    def k(self) -> int:
        return len(self.numerators)

    def codebook(self, lam=0.0) -> Codebook:
        """Codebook rebuilt from the header; regions are re-derived."""
        regions = derive_regions(self.numerators, lam)
        return Codebook(self.bit_width, self.scale, self.numerators, tuple(regions))

    def __eq__(self, other):
        if not isinstance(other, PackedTensor):
            return NotImplemented
        return (
            self.bit_width == other.bit_width
            and self.scale == other.scale
            and self.numerators == other.numerators
            and self.shape == other.shape
            and np.array_equal(self.indices, other.indices)
        )


def pack(indices, codebook: Codebook, shape=None) -> bytes:
    """Serialize codebook positions and their codebook into the packed format.

    Parameters
    ----------
    indices : array_like of int
        Codebook positions ``0..K-1``, one per element.
    codebook : Codebook
        Supplies bit width, scale and numerators.
    shape : sequence of int, optional
        Tensor shape; defaults to the shape of ``indices``.
    """
    idx = np.asarray(indices)
    if shape is None:
        shape = idx.shape
    shape = tuple(int(d) for d in shape)
    idx = idx.reshape(-1)
    b, k = codebook.bit_width, codebook.k
    if k > 2**b:
        raise InvalidCodebookError(f"{k} centroids do not fit in {b} bits")
    if math.prod(shape) != idx.size:
        raise InvalidInputError(f"shape {shape} does not hold {idx.size} indices")
    if len(shape) > 255:
        raise InvalidInputError("rank above 255 is not representable")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise InvalidInputError(f"indices must lie in [0, {k}), got [{idx.min()}, {idx.max()}]")

    head = _FIXED.pack(MAGIC, VERSION, b, k - 1, float(codebook.scale), idx.size, len(shape))
    dims = b"".join(_DIM.pack(d) for d in shape)
    table = np.asarray(codebook.numerators, dtype=np.int8).tobytes()
    return head + dims + table + pack_bits(idx, b)


def unpack(data: bytes) -> PackedTensor:
    """Parse and validate a packed stream."""
    data = bytes(data)
    if len(data) < _FIXED.size:
        if not MAGIC.startswith(data[:4]):
            raise FormatError("bad magic")
        raise CorruptionError("truncated header")
    magic, version, b, k_minus_1, scale, n, rank = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if not 1 <= b <= 8:
        raise FormatError(f"invalid bit width {b}")
    k = k_minus_1 + 1
    if k > 2**b:
        raise FormatError(f"{k} centroids do not fit in {b} bits")
    if not (math.isfinite(scale) and scale > 0):
        raise FormatError(f"invalid scale {scale}")

    offset = _FIXED.size
    need = header_size(rank, k)
    if len(data) < need:
        raise CorruptionError("truncated header")
    shape = tuple(_DIM.unpack_from(data, offset + 8 * i)[0] for i in range(rank))
    offset += 8 * rank
    if math.prod(shape) != n:
        raise FormatError(f"shape {shape} does not match element count {n}")
    numerators = tuple(int(v) for v in np.frombuffer(data, dtype=np.int8, count=k, offset=offset))
    if any(b2 <= a for a, b2 in zip(numerators, numerators[1:])):
        raise FormatError("codebook numerators are not strictly increasing")
    offset += k

    expected = payload_size(n, b)
    payload = data[offset:]
    if len(payload) < expected:
        raise CorruptionError(f"truncated payload: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise CorruptionError(f"{len(payload) - expected} trailing bytes after payload")
    indices = unpack_bits(payload, n, b)
    if n and indices.max() >= k:
        raise CorruptionError(f"payload index {indices.max()} outside codebook of size {k}")
    return PackedTensor(b, scale, numerators, shape, indices)


class Int8Codes(NamedTuple):
    codes: np.ndarray
    scale: float

    def dequantize(self) -> np.ndarray:
        return centroid_values(self.codes, self.scale)


def decompress_to_int8(packed: Union[bytes, PackedTensor]) -> Int8Codes:
    """Expand codebook positions into the INT8 codes an accelerator consumes."""
    if not isinstance(packed, PackedTensor):
        packed = unpack(packed)
    table = np.asarray(packed.numerators, dtype=np.int8)
    return Int8Codes(table[packed.indices].reshape(packed.shape), packed.scale)


def compression_ratio(bit_width: int, n: int, rank: int = 1, k=None) -> float:
    """Packed size relative to one byte per element, same header both ways."""
    if not 1 <= bit_width <= 8:
        raise InvalidInputError(f"bit width must be in [1, 8], got {bit_width}")
    h = header_size(rank, 2**bit_width - 1 if k is None else k)
    return (h + payload_size(n, bit_width)) / (h + n)
