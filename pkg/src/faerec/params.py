"""Named trainable tensors and the FREC checkpoint format.

FREC layout (little-endian): magic ``b"FREC"``, u32 version (1), u32 tensor
count, then per tensor: u16 name length, UTF-8 name, u8 rank, ``rank`` u32
dims, and the float64 values in row-major order.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor
from .errors import FormatError

FREC_MAGIC = b"FREC"
FREC_VERSION = 1


class ParameterStore:
    """Ordered mapping of parameter name to a trainable :class:`Tensor`."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self._params) - set(arrays)
            if missing:
                raise FormatError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, t in self._params.items():
            if name not in arrays:
                continue
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise FormatError(
                    f"parameter {name!r}: checkpoint shape {value.shape} != model shape {t.shape}"
                )
            t.data = value.copy()


def write_frec(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(FREC_MAGIC)
    buf.write(struct.pack("<II", FREC_VERSION, len(tensors)))
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} has too many dimensions")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_frec(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if blob[:4] != FREC_MAGIC:
        raise FormatError(f"{path}: not a FREC file (magic {blob[:4]!r})")
    try:
        version, count = struct.unpack_from("<II", view, 4)
        if version != FREC_VERSION:
            raise FormatError(f"{path}: unsupported FREC version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            nbytes = 8 * n
            if pos + nbytes > len(blob):
                raise FormatError(f"{path}: truncated data for tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"{path}: truncated FREC file") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
