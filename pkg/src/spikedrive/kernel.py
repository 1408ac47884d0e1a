"""Spike-driven sparse-addition kernels and their dense references.

A binary spike vector turns a matrix-vector product into a gather-sum of the
weight columns at the active indices; a ternary vector adds a sign flip per
event. The matrix form accumulates those gather-adds step by step over a
spike train, never folding the train into a dense operand, and counts each
column add so callers can assert work is proportional to spike events.

Integer inputs accumulate exactly in int64; a conservative bound check
raises IntegerOverflowError up front rather than ever wrapping. Real inputs
accumulate in float64.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .codec import Polarity, SpikeTrain, fold
from .errors import DimMismatchError, IntegerOverflowError
from .tensor import QuantParams

__all__ = [
    "spmv_binary",
    "spmv_ternary",
    "spike_matmul",
    "SpikeMatmulResult",
    "dense_matmul_reference",
    "event_count",
    "dequantize_accumulator",
]

_INT64_SAFE = (1 << 62) - 1


def _as_operand(a) -> np.ndarray:
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.integer):
        return a.astype(np.int64)
    return a.astype(np.float64)


def _check_int_budget(max_abs: int, max_terms: int) -> None:
    # Sound bound: no per-element sum of max_terms values of magnitude
    # max_abs can exceed the int64 range if this passes.
    if max_terms > 0 and max_abs > _INT64_SAFE // max_terms:
        raise IntegerOverflowError(
            f"cannot guarantee exact int64 accumulation: |w|max={max_abs}, "
            f"up to {max_terms} addends per output element"
        )


def spmv_binary(w, x) -> np.ndarray:
    """w @ x for a binary vector x, as a gather-sum of active columns."""
    w = _as_operand(w)
    x = np.asarray(x).reshape(-1)
    if w.ndim != 2 or w.shape[1] != x.size:
        raise DimMismatchError(f"w is {w.shape}, x has {x.size} entries")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("x must contain only 0/1 entries")
    idx = np.flatnonzero(x != 0)
    if np.issubdtype(w.dtype, np.integer):
        _check_int_budget(int(np.abs(w).max(initial=0)), idx.size)
    if idx.size == 0:
        return np.zeros(w.shape[0], dtype=w.dtype)
    return w[:, idx].sum(axis=1)


def spmv_ternary(w, x) -> np.ndarray:
    """w @ x for a ternary vector x, as signed gather-sum of active columns."""
    w = _as_operand(w)
    x = np.asarray(x).reshape(-1)
    if w.ndim != 2 or w.shape[1] != x.size:
        raise DimMismatchError(f"w is {w.shape}, x has {x.size} entries")
    if not np.isin(x, (-1, 0, 1)).all():
        raise ValueError("x must contain only -1/0/1 entries")
    pos = np.flatnonzero(x == 1)
    neg = np.flatnonzero(x == -1)
    if np.issubdtype(w.dtype, np.integer):
        _check_int_budget(int(np.abs(w).max(initial=0)), pos.size + neg.size)
    out = np.zeros(w.shape[0], dtype=w.dtype)
    if pos.size:
        out += w[:, pos].sum(axis=1)
    if neg.size:
        out -= w[:, neg].sum(axis=1)
    return out


class SpikeMatmulResult(NamedTuple):
    values: np.ndarray
    adds: int


def spike_matmul(w, train: SpikeTrain, params: QuantParams | None = None) -> SpikeMatmulResult:
    """Accumulate fold(train) @ w one spike step at a time.

    The train holds the activations (train columns are the contraction
    dimension, matching w's rows); each event contributes one signed row of
    w to the output row of its element. The result equals the dense product
    of the folded counts with w exactly in integer mode, and `adds` reports
    the number of row-add operations performed, which equals the train's
    event count.

    `params` (the count grid) is accepted for callers that immediately
    dequantize; see `dequantize_accumulator`.
    """
    w = _as_operand(w)
    if w.ndim != 2 or w.shape[0] != train.cols:
        raise DimMismatchError(
            f"w is {w.shape}; train contraction dim (cols) is {train.cols}"
        )
    integer = np.issubdtype(w.dtype, np.integer)
    if integer:
        _check_int_budget(
            int(np.abs(w).max(initial=0)), train.cols * train.d_steps * train.t_steps
        )
    acc = np.zeros((train.rows, w.shape[1]), dtype=np.int64 if integer else np.float64)
    adds = 0
    for t in range(train.t_steps):
        for d in range(train.d_steps):
            idx = train.steps[t][d]
            if idx.size == 0:
                continue
            # Group this step's events by output row and add each group's
            # gathered weight rows in one segmented pass.
            order = np.argsort(idx, kind="stable")
            r = idx[order] // train.cols
            contrib = w[idx[order] % train.cols]
            if train.polarity is Polarity.TERNARY:
                contrib = contrib * train.signs[t][d][order, None]
            starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
            acc[r[starts]] += np.add.reduceat(contrib, starts, axis=0)
            adds += idx.size
    return SpikeMatmulResult(values=acc, adds=adds)


def dense_matmul_reference(a, b) -> np.ndarray:
    """Schoolbook triple-loop product, the independent equivalence oracle.

    Integer inputs are summed in Python arbitrary-precision ints, so the
    reference is exact at any magnitude. Quadratic-plus loop cost: keep the
    operands small.
    """
    a = _as_operand(a)
    b = _as_operand(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    n, k = a.shape
    m = b.shape[1]
    integer = np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer)
    out = np.zeros((n, m), dtype=np.int64 if integer else np.float64)
    al = a.tolist()
    bl = b.tolist()
    for i in range(n):
        for j in range(m):
            s = 0
            for p in range(k):
                s += al[i][p] * bl[p][j]
            if integer and not (-_INT64_SAFE <= s <= _INT64_SAFE):
                raise IntegerOverflowError(f"reference sum {s} exceeds the int64 budget")
            out[i, j] = s
    return out


def event_count(train: SpikeTrain) -> int:
    """Total nonzero spikes in the train (equals sum of |count| over elements)."""
    return train.event_count()


def dequantize_accumulator(
    acc,
    act_params: QuantParams,
    w_params: QuantParams,
    w_int,
) -> np.ndarray:
    """Map an integer accumulator back to the real domain.

    acc holds counts @ w_int. With activation grid (delta_a, Z_a) and a
    symmetric weight grid (delta_w, Z=0):

        y = delta_a * delta_w * (acc - Z_a * colsum(w_int))

    The zero-point correction is a single row vector computed outside any
    spike loop, keeping the inner kernel add-only.
    """
    acc = np.asarray(acc, dtype=np.float64)
    w_int = np.asarray(w_int, dtype=np.int64)
    if w_params.zero_point != 0:
        raise ValueError("weight grids are expected to be symmetric (zero point 0)")
    correction = act_params.zero_point * w_int.sum(axis=0, dtype=np.int64)
    return act_params.delta * w_params.delta * (acc - correction)
