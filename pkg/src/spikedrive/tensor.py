"""Dense matrix containers and per-tensor uniform quantization.

Matrices are plain 2-D numpy arrays made read-only at construction, so every
operation in the package is pure and safe to share across threads. Real
matrices are float64 and must be finite; integer matrices are int64.

Quantization is per-tensor (one step size and zero point per matrix), with
min-max calibration for the asymmetric scheme and absmax calibration for the
symmetric one. Rounding is half-to-even everywhere so tie-breaking introduces
no systematic bias into downstream firing statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateRangeError, EmptyInputError, OutOfRangeError

__all__ = [
    "Scheme",
    "QuantParams",
    "real_matrix",
    "int_matrix",
    "quantize",
    "apply_params",
    "dequantize",
    "quant_cost",
    "quant_error",
]


class Scheme(Enum):
    """Grid placement: ASYMMETRIC covers [0, 2^B-1], SYMMETRIC is signed."""

    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"


def real_matrix(data) -> np.ndarray:
    """Validate `data` as a finite 2-D float64 matrix and freeze it.

    1-D input is promoted to a single row. NaN and infinity are rejected.
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise EmptyInputError(f"expected a 1-D or 2-D array, got ndim={arr.ndim}")
    if arr.size == 0:
        raise EmptyInputError("empty matrix")
    if not np.isfinite(arr).all():
        raise EmptyInputError("matrix contains NaN or infinite entries")
    arr.flags.writeable = False
    return arr


def int_matrix(data) -> np.ndarray:
    """Validate `data` as a 2-D int64 matrix and freeze it."""
    arr = np.array(data, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise EmptyInputError(f"expected a 1-D or 2-D array, got ndim={arr.ndim}")
    if arr.size == 0:
        raise EmptyInputError("empty matrix")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor grid: step size `delta`, integer `zero_point`, bit width.

    The clamp interval is derived from the scheme:
      asymmetric -> [0, 2^bits - 1]
      symmetric  -> [-2^(bits-1), 2^(bits-1) - 1], zero_point fixed at 0
    """

    bits: int
    scheme: Scheme
    delta: float
    zero_point: int

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bits must be in [1, 16], got {self.bits}")
        if self.delta <= 0 or not np.isfinite(self.delta):
            raise ValueError(f"delta must be a positive finite real, got {self.delta}")
        if self.scheme is Scheme.SYMMETRIC:
            if self.bits < 2:
                raise ValueError("symmetric scheme needs bits >= 2")
            if self.zero_point != 0:
                raise ValueError("symmetric scheme pins zero_point to 0")

    @property
    def lo(self) -> int:
        return 0 if self.scheme is Scheme.ASYMMETRIC else -(1 << (self.bits - 1))

    @property
    def hi(self) -> int:
        if self.scheme is Scheme.ASYMMETRIC:
            return (1 << self.bits) - 1
        return (1 << (self.bits - 1)) - 1


def _round_half_even(x: np.ndarray) -> np.ndarray:
    # np.rint implements IEEE round-half-to-even.
    return np.rint(x)


def quantize(x, bits: int, scheme: Scheme) -> tuple[np.ndarray, QuantParams]:
    """Map a real matrix onto an integer grid calibrated from its own range.

    Asymmetric: delta = (max - min) / (2^B - 1), zero point absorbs the
    minimum, output clamps to [0, 2^B - 1]. Symmetric: delta =
    max(|x|) / (2^(B-1) - 1) with zero point 0, so the positive extreme is
    exactly representable and the whole grid stays centred on zero.

    Raises DegenerateRangeError for a constant (or all-zero, symmetric)
    matrix instead of silently inventing a step size.
    """
    x = real_matrix(x)
    if scheme is Scheme.ASYMMETRIC:
        if not 1 <= bits <= 16:
            raise ValueError(f"asymmetric bits must be in [1, 16], got {bits}")
        x_min = float(x.min())
        x_max = float(x.max())
        if x_max <= x_min:
            raise DegenerateRangeError(
                f"constant matrix (min == max == {x_min}); no asymmetric grid exists"
            )
        delta = (x_max - x_min) / ((1 << bits) - 1)
        zero_point = int(-_round_half_even(np.float64(x_min / delta)))
    elif scheme is Scheme.SYMMETRIC:
        if not 2 <= bits <= 16:
            raise ValueError(f"symmetric bits must be in [2, 16], got {bits}")
        absmax = float(np.abs(x).max())
        if absmax <= 0.0:
            raise DegenerateRangeError("all-zero matrix; no symmetric grid exists")
        delta = absmax / ((1 << (bits - 1)) - 1)
        zero_point = 0
    else:  # pragma: no cover - enum exhausted
        raise ValueError(f"unknown scheme {scheme!r}")
    params = QuantParams(bits=bits, scheme=scheme, delta=delta, zero_point=zero_point)
    return apply_params(x, params), params


def apply_params(x, params: QuantParams) -> np.ndarray:
    """Quantize `x` on an already-calibrated grid (shared-grid encoding)."""
    x = real_matrix(x)
    q = _round_half_even(x / params.delta) + params.zero_point
    q = np.clip(q, params.lo, params.hi)
    return int_matrix(q.astype(np.int64))


def dequantize(q, params: QuantParams) -> np.ndarray:
    """Invert the grid mapping: (q - zero_point) * delta.

    Raises OutOfRangeError if any entry lies outside [lo, hi].
    """
    q = int_matrix(q)
    if q.min() < params.lo or q.max() > params.hi:
        raise OutOfRangeError(
            f"entries outside [{params.lo}, {params.hi}] for {params.bits}-bit "
            f"{params.scheme.value} grid"
        )
    return real_matrix((q - params.zero_point) * params.delta)


def quant_cost(x) -> np.ndarray:
    """Element-wise squared magnitude, the first-order quantization cost."""
    x = real_matrix(x)
    return real_matrix(x * x)


def quant_error(x, bits: int, scheme: Scheme) -> float:
    """Squared Frobenius norm of the quantize-dequantize residual."""
    x = real_matrix(x)
    q, params = quantize(x, bits, scheme)
    r = x - dequantize(q, params)
    return float(np.sum(r * r))
