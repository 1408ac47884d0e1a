"""Two-step spike encoding: membrane potentials -> counts -> spike trains.

Step one quantizes a (already rotated) membrane-potential matrix to integer
spike counts on a per-tensor grid. Step two unfolds each count over a short
window of virtual steps: a count of k becomes k unit spikes placed as a
front-aligned prefix of the window, with the count's sign carried by every
spike in the ternary case. Folding sums the window back and is exact.

Window lengths per outer step:
  binary (asymmetric counts 0 .. 2^B-1)          -> 2^B - 1 steps
  ternary (symmetric counts -2^(B-1) .. 2^(B-1)-1) -> 2^(B-1) steps
so the ternary window is roughly half the binary one at equal bit width.

Trains are stored sparsely as per-step index lists (plus a sign per event for
ternary) and are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CountOutOfRangeError, ShapeMismatchError
from .tensor import QuantParams, Scheme, int_matrix, quantize, real_matrix

__all__ = [
    "Polarity",
    "EncodingScheme",
    "EncodingConfig",
    "SpikeCountMatrix",
    "SpikeTrain",
    "FiringStats",
    "LIFParams",
    "encode_counts",
    "unfold",
    "fold",
    "firing_stats",
    "lif_step",
]


class Polarity(Enum):
    BINARY = 0
    TERNARY = 1


class EncodingScheme(Enum):
    ASYM_BINARY = "asym-binary"
    SYM_TERNARY = "sym-ternary"

    @property
    def polarity(self) -> Polarity:
        return Polarity.BINARY if self is EncodingScheme.ASYM_BINARY else Polarity.TERNARY

    @property
    def quant_scheme(self) -> Scheme:
        return Scheme.ASYMMETRIC if self is EncodingScheme.ASYM_BINARY else Scheme.SYMMETRIC


@dataclass(frozen=True)
class EncodingConfig:
    """Bit width, count scheme, and outer step count of one encoder."""

    bits: int
    scheme: EncodingScheme
    t_steps: int = 1

    def __post_init__(self):
        if not 2 <= self.bits <= 16:
            raise ValueError(f"bits must be in [2, 16], got {self.bits}")
        if self.t_steps < 1:
            raise ValueError(f"t_steps must be >= 1, got {self.t_steps}")

    @property
    def d_steps(self) -> int:
        """Unfold window length per outer step."""
        if self.scheme is EncodingScheme.ASYM_BINARY:
            return (1 << self.bits) - 1
        return 1 << (self.bits - 1)

    @property
    def count_lo(self) -> int:
        return 0 if self.scheme is EncodingScheme.ASYM_BINARY else -(1 << (self.bits - 1))

    @property
    def count_hi(self) -> int:
        if self.scheme is EncodingScheme.ASYM_BINARY:
            return (1 << self.bits) - 1
        return (1 << (self.bits - 1)) - 1


@dataclass(frozen=True)
class SpikeCountMatrix:
    """Integer spike counts with the grid they were encoded on."""

    counts: np.ndarray
    params: QuantParams
    cfg: EncodingConfig

    def __post_init__(self):
        object.__setattr__(self, "counts", int_matrix(self.counts))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class SpikeTrain:
    """Temporally unfolded spikes, stored as per-(t, d) sparse event lists.

    `steps[t][d]` holds the flat row-major indices (int64) of the elements
    spiking at that step; `signs[t][d]` holds one int8 sign per event for
    ternary trains and is None for binary ones. Per element, spikes occupy
    a contiguous prefix of the window and (ternary) share a single sign, so
    folding reproduces the originating counts exactly.
    """

    rows: int
    cols: int
    t_steps: int
    d_steps: int
    polarity: Polarity
    steps: tuple
    signs: tuple | None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def event_count(self) -> int:
        """Total nonzero spikes, summed over every (t, d) step."""
        return int(sum(idx.size for per_t in self.steps for idx in per_t))


@dataclass(frozen=True)
class FiringStats:
    """Empirical count histogram and the firing rate it implies."""

    count_values: np.ndarray
    probabilities: np.ndarray
    mean_abs_count: float
    rate: float
    d_steps: int

    def histogram(self) -> dict[int, float]:
        return {int(k): float(p) for k, p in zip(self.count_values, self.probabilities)}


@dataclass(frozen=True)
class LIFParams:
    """Threshold, leak, and reset level of the reference spiking neuron."""

    threshold: float
    decay: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")


def encode_counts(u_rot, cfg: EncodingConfig) -> SpikeCountMatrix:
    """Step one: quantize membrane potentials to integer spike counts.

    The input is expected to be pre-rotated by the caller. Binary encoding
    uses the asymmetric grid (counts in [0, 2^B-1]); ternary uses the
    symmetric grid (counts in [-2^(B-1), 2^(B-1)-1]). The returned object
    carries the grid parameters needed to dequantize accumulator outputs.
    """
    u_rot = real_matrix(u_rot)
    counts, params = quantize(u_rot, cfg.bits, cfg.scheme.quant_scheme)
    return SpikeCountMatrix(counts=counts, params=params, cfg=cfg)


def _unfold_single(counts: np.ndarray, cfg: EncodingConfig):
    """Per-step event lists for one outer step of counts."""
    flat = counts.reshape(-1)
    step_idx = []
    step_signs = [] if cfg.scheme.polarity is Polarity.TERNARY else None
    magnitude = np.abs(flat)
    for d in range(1, cfg.d_steps + 1):
        idx = np.flatnonzero(magnitude >= d).astype(np.int64)
        idx.flags.writeable = False
        step_idx.append(idx)
        if step_signs is not None:
            s = np.sign(flat[idx]).astype(np.int8)
            s.flags.writeable = False
            step_signs.append(s)
    return tuple(step_idx), (tuple(step_signs) if step_signs is not None else None)


def unfold(counts, cfg: EncodingConfig | None = None) -> SpikeTrain:
    """Step two: expand counts into a front-aligned prefix spike train.

    A binary count k becomes spikes at window steps 1..k; a ternary count k
    becomes sign(k) spikes at steps 1..|k|. Counts outside the configured
    alphabet raise CountOutOfRangeError.
    """
    if isinstance(counts, SpikeCountMatrix):
        if cfg is None:
            cfg = counts.cfg
        counts = counts.counts
    if cfg is None:
        raise ValueError("an EncodingConfig is required for raw count arrays")
    counts = int_matrix(counts)
    if counts.min() < cfg.count_lo or counts.max() > cfg.count_hi:
        raise CountOutOfRangeError(
            f"counts outside [{cfg.count_lo}, {cfg.count_hi}] for {cfg.bits}-bit "
            f"{cfg.scheme.value} encoding"
        )
    if cfg.scheme.polarity is Polarity.BINARY and counts.min() < 0:
        raise CountOutOfRangeError("binary trains cannot carry negative counts")
    per_t_idx = []
    per_t_signs = []
    for _ in range(cfg.t_steps):
        idx, signs = _unfold_single(counts, cfg)
        per_t_idx.append(idx)
        per_t_signs.append(signs)
    ternary = cfg.scheme.polarity is Polarity.TERNARY
    return SpikeTrain(
        rows=counts.shape[0],
        cols=counts.shape[1],
        t_steps=cfg.t_steps,
        d_steps=cfg.d_steps,
        polarity=cfg.scheme.polarity,
        steps=tuple(per_t_idx),
        signs=tuple(per_t_signs) if ternary else None,
    )


def fold(train: SpikeTrain) -> np.ndarray:
    """Signed sum over the unfold window; exact inverse of `unfold`.

    For t_steps > 1 the result is the sum over all outer steps as well.
    """
    acc = np.zeros(train.rows * train.cols, dtype=np.int64)
    for t in range(train.t_steps):
        for d in range(train.d_steps):
            idx = train.steps[t][d]
            if idx.size == 0:
                continue
            if train.polarity is Polarity.BINARY:
                np.add.at(acc, idx, 1)
            else:
                np.add.at(acc, idx, train.signs[t][d].astype(np.int64))
    return int_matrix(acc.reshape(train.rows, train.cols))


def firing_stats(source, cfg: EncodingConfig | None = None) -> FiringStats:
    """Histogram of count values plus the firing rate mean(|k|) / d_steps.

    Accepts a SpikeCountMatrix or a SpikeTrain; the two give identical
    results because folding is exact. The rate equals the fraction of
    (element, t, d) slots carrying a nonzero spike event.
    """
    if isinstance(source, SpikeTrain):
        counts = fold(source)
        d_steps = source.d_steps
        norm_t = source.t_steps
    elif isinstance(source, SpikeCountMatrix):
        counts = source.counts
        d_steps = source.cfg.d_steps
        norm_t = source.cfg.t_steps
    else:
        if cfg is None:
            raise ValueError("an EncodingConfig is required for raw count arrays")
        counts = int_matrix(source)
        d_steps = cfg.d_steps
        norm_t = cfg.t_steps
    flat = counts.reshape(-1)
    values, freq = np.unique(flat, return_counts=True)
    probs = freq / flat.size
    mean_abs = float(np.abs(flat).mean())
    # Counts aggregate all outer steps, so normalize by the full t*d window.
    rate = mean_abs / (d_steps * norm_t)
    values = values.astype(np.int64)
    values.flags.writeable = False
    probs.flags.writeable = False
    return FiringStats(
        count_values=values,
        probabilities=probs,
        mean_abs_count=mean_abs,
        rate=rate,
        d_steps=d_steps,
    )


def lif_step(u_prev, drive, params: LIFParams) -> tuple[np.ndarray, np.ndarray]:
    """One update of the reference leaky integrate-and-fire neuron.

    u = u_prev + drive; a spike fires wherever u >= threshold (closed
    boundary); the post-step potential decays where quiet and resets where
    fired. Returned spikes are 0/1 integers.
    """
    u_prev = real_matrix(u_prev)
    drive = real_matrix(drive)
    if u_prev.shape != drive.shape:
        raise ShapeMismatchError(f"u_prev {u_prev.shape} vs drive {drive.shape}")
    u = u_prev + drive
    spikes = (u >= params.threshold).astype(np.int64)
    u_next = params.decay * u * (1 - spikes) + params.v_reset * spikes
    return int_matrix(spikes), real_matrix(u_next)
