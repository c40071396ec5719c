"""Reading and writing weight files.

Two formats are supported:

``binary``
    Flat little-endian float64 values.  The shape is not stored and must be
    supplied by the caller (flat when omitted).
``text``
    Whitespace-separated numbers.  An optional first line ``# shape: 4,8``
    records the shape; other ``#`` comments are ignored.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .codebook import WeightTensor
from .errors import FormatError, InvalidInputError

FORMATS = ("auto", "binary", "text")
_SHAPE_TAG = "# shape:"


def parse_shape(text: Optional[str]) -> Optional[tuple[int, ...]]:
    """Parse ``"4,8"`` or ``"4x8"`` into a tuple; ``None`` and ``""`` give None."""
    if not text:
        return None
    try:
        dims = tuple(int(d) for d in text.replace("x", ",").split(",") if d.strip())
    except ValueError as exc:
        raise InvalidInputError(f"bad shape {text!r}") from exc
    if any(d < 0 for d in dims):
        raise InvalidInputError(f"negative dimension in shape {text!r}")
    return dims


def resolve_format(path, fmt: str = "auto") -> str:
    if fmt not in FORMATS:
        raise InvalidInputError(f"format must be one of {FORMATS}, got {fmt!r}")
    if fmt != "auto":
        return fmt
    return "text" if Path(path).suffix.lower() in (".txt", ".csv") else "binary"


def read_weights(path, fmt: str = "auto", shape: Optional[Sequence[int]] = None) -> WeightTensor:
    """Load a weight file as a :class:`WeightTensor` named after the file stem.

    An explicit ``shape`` wins over one recorded in a text file.
    """
    path = Path(path)
    kind = resolve_format(path, fmt)
    stored = None
    if kind == "binary":
        raw = path.read_bytes()
        if len(raw) % 8:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of 8 bytes")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        text = path.read_text()
        tokens = []
        for line in text.splitlines():
            stripped = line.strip()
            if stripped.lower().startswith(_SHAPE_TAG):
                stored = parse_shape(stripped[len(_SHAPE_TAG):].strip())
                continue
            tokens.extend(stripped.split("#", 1)[0].replace(",", " ").split())
        try:
            values = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    dims = tuple(shape) if shape is not None else stored
    if dims is None:
        dims = (values.size,)
    if math.prod(dims) != values.size:
        raise InvalidInputError(f"{path}: shape {dims} does not hold {values.size} values")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: weights must be finite")
    return WeightTensor(values, dims, path.stem)


def write_weights(path, weights: WeightTensor, fmt: str = "auto") -> None:
    """Write weights; text output records the shape and uses round-trip precision."""
    path = Path(path)
    if resolve_format(path, fmt) == "binary":
        path.write_bytes(weights.values.astype("<f8").tobytes())
        return
    lines = [f"{_SHAPE_TAG} {','.join(str(d) for d in weights.shape)}"]
    lines.extend(repr(float(v)) for v in weights.values)
    path.write_text("\n".join(lines) + "\n")
