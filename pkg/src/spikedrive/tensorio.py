"""Binary file formats: dense tensors and sparse spike trains.

Tensor files ("SDLT"):
    magic      4 bytes  b"SDLT"
    version    u16      1
    dtype      u8       0 = float64, 1 = int32, 2 = int8
    rank       u8       1..4
    dims       u64 * rank
    payload    row-major values, little-endian

Spike-train files:
    polarity   u8       0 = binary, 1 = ternary
    t_steps    u32
    d_steps    u32
    rows       u64
    cols       u64
    then, for each (t, d) step in order:
        n_events u64
        indices  u64 * n_events   (flat row-major element indices)
        signs    i8  * n_events   (ternary only, after the index block)

Everything is little-endian. Parsers reject bad magic, unknown versions or
dtypes, out-of-range fields, and short or trailing bytes, and never return
partial data.
"""

from __future__ import annotations

import struct

import numpy as np

from .codec import Polarity, SpikeTrain
from .errors import FormatError

__all__ = ["write_tensor", "read_tensor", "write_train", "read_train"]

_MAGIC = b"SDLT"
_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i4"), 2: np.dtype("<i1")}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("int32"): 1, np.dtype("int8"): 2}


def write_tensor(path, arr) -> None:
    """Write an array as a tensor file; dtype must be float64/int32/int8."""
    arr = np.asarray(arr)
    if arr.dtype == np.int64:
        if arr.size and (np.abs(arr).max() > np.iinfo(np.int32).max):
            raise FormatError("int64 tensor exceeds the int32 payload range")
        arr = arr.astype(np.int32)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise FormatError(f"rank must be 1..4, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBB", _VERSION, _DTYPE_CODES[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[_DTYPE_CODES[arr.dtype]]).tobytes())


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what}: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def read_tensor(path) -> np.ndarray:
    """Read a tensor file, validating every header field and the payload size."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), "tensor file")
    if r.take(4) != _MAGIC:
        raise FormatError("bad magic; not a tensor file")
    version, dtype_code, rank = r.unpack("<HBB")
    if version != _VERSION:
        raise FormatError(f"unknown tensor file version {version}")
    if dtype_code not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    if not 1 <= rank <= 4:
        raise FormatError(f"rank must be 1..4, got {rank}")
    dims = r.unpack(f"<{rank}Q")
    count = 1
    for d in dims:
        count *= d
    dt = _DTYPES[dtype_code]
    payload = r.take(count * dt.itemsize)
    r.done()
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_train(path, train: SpikeTrain) -> None:
    """Serialize a spike train (see the module docstring for the layout)."""
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<BIIQQ",
                train.polarity.value,
                train.t_steps,
                train.d_steps,
                train.rows,
                train.cols,
            )
        )
        for t in range(train.t_steps):
            for d in range(train.d_steps):
                idx = train.steps[t][d]
                fh.write(struct.pack("<Q", idx.size))
                fh.write(idx.astype("<u8").tobytes())
                if train.polarity is Polarity.TERNARY:
                    fh.write(train.signs[t][d].astype("<i1").tobytes())


def read_train(path) -> SpikeTrain:
    """Parse a spike-train file, validating indices and sign values."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), "spike-train file")
    pol_code, t_steps, d_steps, rows, cols = r.unpack("<BIIQQ")
    try:
        polarity = Polarity(pol_code)
    except ValueError:
        raise FormatError(f"unknown polarity code {pol_code}") from None
    if t_steps < 1 or d_steps < 1 or rows < 1 or cols < 1:
        raise FormatError("train header fields must all be >= 1")
    n_elems = rows * cols
    steps = []
    signs = [] if polarity is Polarity.TERNARY else None
    for _ in range(t_steps):
        per_t_idx = []
        per_t_signs = [] if polarity is Polarity.TERNARY else None
        for _ in range(d_steps):
            (n_events,) = r.unpack("<Q")
            idx = np.frombuffer(r.take(8 * n_events), dtype="<u8").astype(np.int64)
            if n_events and idx.max() >= n_elems:
                raise FormatError("event index out of range for the train shape")
            idx.flags.writeable = False
            per_t_idx.append(idx)
            if polarity is Polarity.TERNARY:
                s = np.frombuffer(r.take(n_events), dtype="<i1").copy()
                if n_events and not np.isin(s, (-1, 1)).all():
                    raise FormatError("ternary signs must be -1 or +1")
                s.flags.writeable = False
                per_t_signs.append(s)
        steps.append(tuple(per_t_idx))
        if per_t_signs is not None:
            signs.append(tuple(per_t_signs))
    r.done()
    return SpikeTrain(
        rows=rows,
        cols=cols,
        t_steps=t_steps,
        d_steps=d_steps,
        polarity=polarity,
        steps=tuple(steps),
        signs=tuple(signs) if signs is not None else None,
    )
