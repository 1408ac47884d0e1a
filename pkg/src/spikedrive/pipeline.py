"""Toy transformer-block harness wiring the codec and kernels end to end.

One block is RMSNorm -> fused QKV projections -> single-head attention with
an encoded KV cache -> output projection -> gated FFN, with residual
connections. Weights are synthetic but heavy-tailed per output channel, so
rotation-based preprocessing has real outliers to disperse.

Execution modes:
  FP              full-precision reference, plain wiring
  INT_QUANT       plain wiring, per-tensor integer quantization of the
                  selected operators, dense integer matmul (the unrotated
                  low-bit baseline)
  SPIKE_BINARY    rotated wiring, asymmetric counts unfolded to 0/1 trains
  SPIKE_TERNARY   rotated wiring, symmetric counts unfolded to -1/0/1 trains
  SPIKE_CLIPPED   SPIKE_BINARY plus quantile clipping of the linear inputs
                  (thresholds must be calibrated first)

In rotated modes each rotation is pre-fused into the consuming weights, so
the full-precision data path through the rotated wiring matches the plain
wiring to float precision. Spike modes and the dense integer comparison
route share count grids exactly, which makes their block outputs
bit-identical: the sparse-addition kernels are an exact reimplementation of
the integer matmul, not an approximation of it.

Scheduling: SYNCHRONOUS walks the unfold window step by step with batched
gather-adds; ASYNCHRONOUS drains every spike event of a matmul from a
shuffled queue, one signed row-add at a time, tracking per-element
completion. Integer accumulation is order-invariant, so both schedules
produce identical accumulators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clipping import ClipState, calibrate_step, qsrelu
from .codec import (
    EncodingConfig,
    EncodingScheme,
    SpikeCountMatrix,
    SpikeTrain,
    encode_counts,
    firing_stats,
    fold,
    unfold,
)
from .errors import (
    ConfigError,
    DegenerateRangeError,
    NotCalibratedError,
    ShapeMismatchError,
)
from .kernel import spike_matmul
from .rotation import GammaVector, OrthoKind, OrthogonalOp, sample_orthogonal, scale_then_rotate
from .tensor import QuantParams, Scheme, apply_params, quantize, real_matrix

__all__ = [
    "Mode",
    "Schedule",
    "OPERATOR_GROUPS",
    "BlockConfig",
    "Block",
    "OpFidelity",
    "FidelityReport",
    "build_block",
    "calibrate",
    "forward",
    "run_async",
    "sweep",
]


class Mode:
    FP = "fp"
    INT_QUANT = "int-quant"
    SPIKE_BINARY = "spike-binary"
    SPIKE_TERNARY = "spike-ternary"
    SPIKE_CLIPPED = "spike-clipped"

    ALL = (FP, INT_QUANT, SPIKE_BINARY, SPIKE_TERNARY, SPIKE_CLIPPED)


class Schedule:
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"

    ALL = (SYNCHRONOUS, ASYNCHRONOUS)


_QKV_OPS = frozenset({"q_proj", "k_proj", "v_proj"})
_ATT_OPS = frozenset({"attn_scores", "attn_context", "out_proj"})
_FFN_OPS = frozenset({"gate_proj", "up_proj", "down_proj"})

OPERATOR_GROUPS = {
    "none": frozenset(),
    "qkv": _QKV_OPS,
    "qkv+att": _QKV_OPS | _ATT_OPS,
    "qkv+att+ffn": _QKV_OPS | _ATT_OPS | _FFN_OPS,
}

OP_ORDER = (
    "q_proj",
    "k_proj",
    "v_proj",
    "attn_scores",
    "attn_context",
    "out_proj",
    "gate_proj",
    "up_proj",
    "down_proj",
)

# Encoding sites; several operators can share one encoded input.
ENCODE_SITES = ("attn_in", "k_cache", "v_cache", "out_in", "ffn_in", "down_in")
CLIP_SITES = ("attn_in", "out_in", "ffn_in", "down_in")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BlockConfig:
    """Geometry, seeding, and arithmetic configuration of the harness."""

    d_h: int = 64
    d_i: int = 128
    n_blocks: int = 1
    rows: int = 16
    seed: int = 0
    mode: str = Mode.SPIKE_TERNARY
    schedule: str = Schedule.SYNCHRONOUS
    operators: str = "qkv+att+ffn"
    w_bits: int = 4
    a_bits: int = 4
    clip_q: float | None = None
    clip_alpha: float = 0.99
    encoding_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not _is_pow2(self.d_h) or self.d_h < 4:
            raise ConfigError(f"d_h must be a power of two >= 4, got {self.d_h}")
        if not _is_pow2(self.d_i) or self.d_i <= self.d_h:
            raise ConfigError(f"d_i must be a power of two > d_h, got {self.d_i}")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        if self.rows < 2:
            raise ConfigError("rows must be >= 2")
        if self.mode not in Mode.ALL:
            raise ConfigError(f"mode must be one of {Mode.ALL}, got {self.mode!r}")
        if self.schedule not in Schedule.ALL:
            raise ConfigError(f"schedule must be one of {Schedule.ALL}")
        if self.operators not in OPERATOR_GROUPS:
            raise ConfigError(f"operators must be one of {sorted(OPERATOR_GROUPS)}")
        if not 2 <= self.w_bits <= 16 or not 2 <= self.a_bits <= 16:
            raise ConfigError("w_bits and a_bits must lie in [2, 16]")
        if self.mode == Mode.SPIKE_CLIPPED and self.clip_q is None:
            raise ConfigError("spike-clipped mode needs clip_q")
        if self.clip_q is not None and not 0.0 < self.clip_q < 1.0:
            raise ConfigError("clip_q must lie in (0, 1)")
        for site in self.encoding_overrides:
            if site not in ENCODE_SITES:
                raise ConfigError(
                    f"unknown encoding override site {site!r}; sites are {ENCODE_SITES}"
                )

    def base_scheme(self) -> EncodingScheme:
        if self.mode == Mode.SPIKE_TERNARY:
            return EncodingScheme.SYM_TERNARY
        # Clipped inputs are non-negative, and the integer baseline mirrors
        # the binary grid, so everything else encodes asymmetrically.
        return EncodingScheme.ASYM_BINARY

    def site_encoding(self, site: str) -> EncodingConfig:
        override = self.encoding_overrides.get(site)
        if override is not None:
            return override
        return EncodingConfig(bits=self.a_bits, scheme=self.base_scheme())


@dataclass(frozen=True)
class BlockWeights:
    """Per-block parameters plus the rotation ops of each call site."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wg: np.ndarray
    wu: np.ndarray
    wd: np.ndarray
    gamma_attn: GammaVector
    gamma_ffn: GammaVector
    op_attn_in: OrthogonalOp
    op_head: OrthogonalOp
    op_vcache: OrthogonalOp
    op_ffn_in: OrthogonalOp
    op_down: OrthogonalOp


@dataclass
class Block:
    """Immutable weights plus (write-once) clip thresholds."""

    cfg: BlockConfig
    weights: tuple
    clip_states: dict = field(default_factory=dict)

    @property
    def calibrated(self) -> bool:
        return bool(self.clip_states) and all(s.calibrated for s in self.clip_states.values())


def _sample_linear(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    base = rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)
    # Heavy-tailed output channels: log-uniform scales across 1..32. The
    # constant sqrt(32) renormalization keeps layer outputs comparable to the
    # residual stream without touching the 32x per-channel spread.
    scales = np.exp(rng.uniform(0.0, math.log(32.0), size=d_out))
    return real_matrix(base * scales / math.sqrt(32.0))


def _sample_gamma(rng: np.random.Generator, dim: int) -> GammaVector:
    gains = np.exp(rng.uniform(0.0, math.log(16.0), size=dim))
    return GammaVector(gains / 4.0)


def build_block(cfg: BlockConfig) -> Block:
    """Sample deterministic weights, gains, and rotation ops for the stack."""
    ss = np.random.SeedSequence(cfg.seed)
    block_seeds = ss.spawn(cfg.n_blocks)
    weights = []
    for b, child in enumerate(block_seeds):
        rng = np.random.default_rng(child)
        op_seeds = np.random.SeedSequence(cfg.seed + 1).spawn(cfg.n_blocks)[b].generate_state(5)
        weights.append(
            BlockWeights(
                wq=_sample_linear(rng, cfg.d_h, cfg.d_h),
                wk=_sample_linear(rng, cfg.d_h, cfg.d_h),
                wv=_sample_linear(rng, cfg.d_h, cfg.d_h),
                wo=_sample_linear(rng, cfg.d_h, cfg.d_h),
                wg=_sample_linear(rng, cfg.d_h, cfg.d_i),
                wu=_sample_linear(rng, cfg.d_h, cfg.d_i),
                wd=_sample_linear(rng, cfg.d_i, cfg.d_h),
                gamma_attn=_sample_gamma(rng, cfg.d_h),
                gamma_ffn=_sample_gamma(rng, cfg.d_h),
                op_attn_in=sample_orthogonal(cfg.d_h, OrthoKind.HADAMARD_RANDOM_SIGN, int(op_seeds[0])),
                op_head=sample_orthogonal(cfg.d_h, OrthoKind.HADAMARD_RANDOM_SIGN, int(op_seeds[1])),
                op_vcache=sample_orthogonal(cfg.d_h, OrthoKind.HADAMARD_RANDOM_SIGN, int(op_seeds[2])),
                op_ffn_in=sample_orthogonal(cfg.d_h, OrthoKind.HADAMARD_RANDOM_SIGN, int(op_seeds[3])),
                op_down=sample_orthogonal(cfg.d_i, OrthoKind.HADAMARD_RANDOM_SIGN, int(op_seeds[4])),
            )
        )
    return Block(cfg=cfg, weights=tuple(weights))


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + 1e-12)


def _silu(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = x[pos] / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = x[~pos] * ex / (1.0 + ex)
    return out


def _softmax(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _rownorm(a: np.ndarray) -> np.ndarray:
    # Query/key normalization keeps attention logits O(1) for any weight
    # scale, so the softmax stays in its smooth regime.
    return a / np.sqrt(np.mean(a * a, axis=1, keepdims=True) + 1e-12)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a.reshape(-1)
    b = b.reshape(-1)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class OpFidelity:
    block: int
    op: str
    cosine: float
    mse: float
    rate: float | None
    mean_abs_count: float | None
    adds: int | None


@dataclass(frozen=True)
class FidelityReport:
    mode: str
    schedule: str
    operators: str
    rows: tuple
    end_to_end_cosine: float

    def records(self) -> list[dict]:
        recs = []
        for r in self.rows:
            recs.append(
                {
                    "block": r.block,
                    "op": r.op,
                    "cosine": r.cosine,
                    "mse": r.mse,
                    "rate": r.rate,
                    "mean_abs_count": r.mean_abs_count,
                    "adds": r.adds,
                }
            )
        return recs

    def render(self) -> str:
        header = (
            f"{'blk':>4} {'op':<14}{'cosine':>12}{'mse':>14}{'R':>10}"
            f"{'mean|k|':>10}{'adds':>10}"
        )
        lines = [f"mode={self.mode} schedule={self.schedule} operators={self.operators}"]
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.rows:
            rate = f"{r.rate:.4f}" if r.rate is not None else "-"
            mk = f"{r.mean_abs_count:.4f}" if r.mean_abs_count is not None else "-"
            adds = str(r.adds) if r.adds is not None else "-"
            lines.append(
                f"{r.block:>4} {r.op:<14}{r.cosine:>12.6g}{r.mse:>14.6g}{rate:>10}"
                f"{mk:>10}{adds:>10}"
            )
        lines.append(f"end-to-end cosine: {self.end_to_end_cosine:.6g}")
        return "\n".join(lines)


class _EncodedSite:
    """One quantized activation site: counts plus (lazily) its train."""

    def __init__(self, cm: SpikeCountMatrix):
        self.cm = cm
        self._train: SpikeTrain | None = None

    @property
    def counts(self) -> np.ndarray:
        return self.cm.counts

    @property
    def params(self) -> QuantParams:
        return self.cm.params

    def train(self) -> SpikeTrain:
        if self._train is None:
            self._train = unfold(self.cm)
        return self._train

    def stats(self):
        return firing_stats(self.cm)


class _Runner:
    """Per-forward execution context (mode flags, counters, report rows)."""

    def __init__(self, block: Block, mode: str, schedule: str, shuffle_seed: int):
        cfg = block.cfg
        self.block = block
        self.cfg = cfg
        self.mode = mode
        self.schedule = schedule
        self.rotate = mode in (Mode.SPIKE_BINARY, Mode.SPIKE_TERNARY, Mode.SPIKE_CLIPPED)
        self.clip = mode == Mode.SPIKE_CLIPPED
        spiked = OPERATOR_GROUPS[cfg.operators] if mode != Mode.FP else frozenset()
        self.quantized_ops = spiked
        self.use_spike_kernel = self.rotate
        self.dense_reference = False
        self._shuffle_ss = np.random.SeedSequence(shuffle_seed)
        self.rows: list[OpFidelity] = []
        self.capture_sites: dict | None = None
        self.total_adds = 0
        self.processed_events = 0

    # -- quantization helpers -------------------------------------------

    def _encode_site(self, site: str, u: np.ndarray) -> _EncodedSite:
        enc_cfg = self.cfg.site_encoding(site)
        try:
            cm = encode_counts(u, enc_cfg)
        except DegenerateRangeError:
            # Constant site (e.g. fully clipped): all-zero counts on a unit grid.
            params = QuantParams(
                bits=enc_cfg.bits, scheme=enc_cfg.scheme.quant_scheme, delta=1.0, zero_point=0
            )
            cm = SpikeCountMatrix(
                counts=np.zeros(u.shape, dtype=np.int64), params=params, cfg=enc_cfg
            )
        return _EncodedSite(cm)

    def _quantize_weight(self, w: np.ndarray) -> tuple[np.ndarray, QuantParams]:
        return quantize(w, self.cfg.w_bits, Scheme.SYMMETRIC)

    def _accumulate(self, w_int: np.ndarray, site: _EncodedSite) -> tuple[np.ndarray, int | None]:
        """counts @ w_int, through the spike kernel or the dense int route."""
        if not self.use_spike_kernel or self.dense_reference:
            return site.counts @ w_int, None
        train = site.train()
        if self.schedule == Schedule.ASYNCHRONOUS:
            return self._async_accumulate(w_int, train)
        result = spike_matmul(w_int, train)
        self.total_adds += result.adds
        return result.values, result.adds

    def _async_accumulate(self, w_int: np.ndarray, train: SpikeTrain) -> tuple[np.ndarray, int]:
        """Drain all events of one matmul from a shuffled queue.

        Every event is one signed row-add; per-element completion counters
        must match the folded count magnitudes when the queue empties.
        """
        idx_parts = []
        sign_parts = []
        for t in range(train.t_steps):
            for d in range(train.d_steps):
                idx = train.steps[t][d]
                if idx.size == 0:
                    continue
                idx_parts.append(idx)
                if train.signs is not None:
                    sign_parts.append(train.signs[t][d])
        acc = np.zeros((train.rows, w_int.shape[1]), dtype=np.int64)
        if not idx_parts:
            return acc, 0
        flat_idx = np.concatenate(idx_parts)
        signs = (
            np.concatenate(sign_parts).astype(np.int64)
            if sign_parts
            else np.ones(flat_idx.size, dtype=np.int64)
        )
        rng = np.random.default_rng(self._shuffle_ss.spawn(1)[0])
        order = rng.permutation(flat_idx.size)
        done = np.zeros(train.rows * train.cols, dtype=np.int64)
        cols = train.cols
        wl = w_int
        for e in order:
            f = flat_idx[e]
            acc[f // cols] += signs[e] * wl[f % cols]
            done[f] += 1
        expected = np.abs(fold(train)).reshape(-1)
        if not np.array_equal(done, expected):
            raise AssertionError("asynchronous queue lost or duplicated spike events")
        self.total_adds += flat_idx.size
        self.processed_events += flat_idx.size
        return acc, int(flat_idx.size)

    def _linear(self, name: str, site: _EncodedSite | None, u: np.ndarray, w: np.ndarray):
        """One projection: either real matmul or quantized route via `site`."""
        if name not in self.quantized_ops:
            return u @ w, None
        w_int, w_params = self._quantize_weight(w)
        acc, adds = self._accumulate(w_int, site)
        correction = site.params.zero_point * w_int.sum(axis=0, dtype=np.int64)
        y = site.params.delta * w_params.delta * (acc - correction)
        return y, (site, adds)

    # -- reporting -------------------------------------------------------

    def report_op(self, block_idx: int, name: str, got: np.ndarray, ref: np.ndarray, meta):
        rate = mean_abs = adds = None
        if meta is not None:
            site, adds = meta
            st = site.stats()
            rate, mean_abs = st.rate, st.mean_abs_count
        diff = got - ref
        self.rows.append(
            OpFidelity(
                block=block_idx,
                op=name,
                cosine=_cosine(got, ref),
                mse=float(np.mean(diff * diff)),
                rate=rate,
                mean_abs_count=mean_abs,
                adds=adds,
            )
        )


def _fp_block(x: np.ndarray, bw: BlockWeights, trace: dict, b: int) -> np.ndarray:
    """Plain full-precision block, recording per-operator outputs."""
    d_h = x.shape[1]
    h = _rmsnorm(x) * bw.gamma_attn.values
    q = h @ bw.wq
    k = h @ bw.wk
    v = h @ bw.wv
    scores = (_rownorm(q) @ _rownorm(k).T) / math.sqrt(d_h)
    p = _softmax(scores)
    ctx = p @ v
    attn = ctx @ bw.wo
    x1 = x + attn
    h2 = _rmsnorm(x1) * bw.gamma_ffn.values
    g = h2 @ bw.wg
    u = h2 @ bw.wu
    a = _silu(g) * u
    f = a @ bw.wd
    trace[(b, "q_proj")] = q
    trace[(b, "k_proj")] = k
    trace[(b, "v_proj")] = v
    trace[(b, "attn_scores")] = scores
    trace[(b, "attn_context")] = ctx
    trace[(b, "out_proj")] = attn
    trace[(b, "gate_proj")] = g
    trace[(b, "up_proj")] = u
    trace[(b, "down_proj")] = f
    return x1 + f


def _attention_scores(runner: _Runner, qr: np.ndarray, kr: np.ndarray):
    """q @ k^T with the key cache encoded and the query side integer."""
    cfg = runner.cfg
    d_h = qr.shape[1]
    if "attn_scores" not in runner.quantized_ops:
        return (qr @ kr.T) / math.sqrt(d_h), None
    q_int, q_params = quantize(qr, cfg.a_bits, Scheme.ASYMMETRIC)
    site = runner._encode_site("k_cache", kr)
    k_cnt = site.counts
    if runner.use_spike_kernel and not runner.dense_reference:
        if runner.schedule == Schedule.ASYNCHRONOUS:
            acc_t, adds = runner._async_accumulate(q_int.T, site.train())
        else:
            result = spike_matmul(q_int.T, site.train())
            acc_t, adds = result.values, result.adds
            runner.total_adds += adds
        # Match the dense route's memory layout so downstream reductions
        # pair identically and outputs stay bit-for-bit equal.
        acc = np.ascontiguousarray(acc_t.T)
    else:
        acc, adds = q_int @ k_cnt.T, None
    zq, zk = q_params.zero_point, site.params.zero_point
    acc = acc.astype(np.float64)
    acc -= zk * q_int.sum(axis=1, dtype=np.int64)[:, None]
    acc -= zq * k_cnt.sum(axis=1, dtype=np.int64)[None, :]
    acc += d_h * zq * zk
    scores = (q_params.delta * site.params.delta * acc) / math.sqrt(d_h)
    return scores, (site, adds)


def _attention_context(runner: _Runner, p: np.ndarray, vr: np.ndarray):
    """softmax probabilities @ v with the value cache encoded."""
    cfg = runner.cfg
    if "attn_context" not in runner.quantized_ops:
        return p @ vr, None
    n = p.shape[1]
    p_int, p_params = quantize(p, cfg.a_bits, Scheme.ASYMMETRIC)
    # The value cache is encoded token-major: contraction runs over tokens.
    site = runner._encode_site("v_cache", vr.T)
    v_cnt_t = site.counts
    if runner.use_spike_kernel and not runner.dense_reference:
        if runner.schedule == Schedule.ASYNCHRONOUS:
            acc_t, adds = runner._async_accumulate(p_int.T, site.train())
        else:
            result = spike_matmul(p_int.T, site.train())
            acc_t, adds = result.values, result.adds
            runner.total_adds += adds
        acc = np.ascontiguousarray(acc_t.T)
    else:
        acc, adds = p_int @ v_cnt_t.T, None
    zp, zv = p_params.zero_point, site.params.zero_point
    acc = acc.astype(np.float64)
    acc -= zv * p_int.sum(axis=1, dtype=np.int64)[:, None]
    acc -= zp * v_cnt_t.sum(axis=1, dtype=np.int64)[None, :]
    acc += n * zp * zv
    ctx = p_params.delta * site.params.delta * acc
    return ctx, (site, adds)


def _clip_site(runner: _Runner, site: str, u: np.ndarray) -> np.ndarray:
    if not runner.clip or site not in CLIP_SITES:
        return u
    state = runner.block.clip_states.get(site)
    if state is None or not state.calibrated:
        raise NotCalibratedError(
            f"clip site {site!r} has no calibrated threshold; run calibrate() first"
        )
    return qsrelu(u, state.tau)


def _mode_block(runner: _Runner, x: np.ndarray, bw: BlockWeights, b: int, trace: dict) -> np.ndarray:
    """One block in the runner's mode, reporting fidelity per operator."""
    cfg = runner.cfg
    d_h = cfg.d_h
    rotate = runner.rotate

    h0 = _rmsnorm(x)
    if rotate:
        attn_in = scale_then_rotate(h0, bw.gamma_attn, bw.op_attn_in)
        wq, wk, wv = (bw.op_attn_in.rotate_weights(w) for w in (bw.wq, bw.wk, bw.wv))
    else:
        attn_in = h0 * bw.gamma_attn.values
        wq, wk, wv = bw.wq, bw.wk, bw.wv
    attn_in = _clip_site(runner, "attn_in", attn_in)
    if runner.capture_sites is not None:
        runner.capture_sites.setdefault("attn_in", []).append(attn_in)

    site_attn = (
        runner._encode_site("attn_in", attn_in)
        if _QKV_OPS & runner.quantized_ops
        else None
    )
    q, meta_q = runner._linear("q_proj", site_attn, attn_in, wq)
    k, meta_k = runner._linear("k_proj", site_attn, attn_in, wk)
    v, meta_v = runner._linear("v_proj", site_attn, attn_in, wv)
    runner.report_op(b, "q_proj", q, trace[(b, "q_proj")], meta_q)
    runner.report_op(b, "k_proj", k, trace[(b, "k_proj")], meta_k)
    runner.report_op(b, "v_proj", v, trace[(b, "v_proj")], meta_v)

    qn, kn = _rownorm(q), _rownorm(k)
    if rotate:
        qr = bw.op_head.apply(qn)
        kr = bw.op_head.apply(kn)
    else:
        qr, kr = qn, kn
    scores, meta_s = _attention_scores(runner, qr, kr)
    runner.report_op(b, "attn_scores", scores, trace[(b, "attn_scores")], meta_s)

    p = _softmax(scores)
    vr = bw.op_vcache.apply(v) if rotate else v
    ctx_r, meta_c = _attention_context(runner, p, vr)
    ctx_plain = bw.op_vcache.apply_transpose(ctx_r) if rotate else ctx_r
    runner.report_op(b, "attn_context", ctx_plain, trace[(b, "attn_context")], meta_c)

    out_in = _clip_site(runner, "out_in", ctx_r)
    if runner.capture_sites is not None:
        runner.capture_sites.setdefault("out_in", []).append(out_in)
    wo = bw.op_vcache.rotate_weights(bw.wo) if rotate else bw.wo
    site_out = (
        runner._encode_site("out_in", out_in) if "out_proj" in runner.quantized_ops else None
    )
    attn, meta_o = runner._linear("out_proj", site_out, out_in, wo)
    runner.report_op(b, "out_proj", attn, trace[(b, "out_proj")], meta_o)

    x1 = x + attn

    h2 = _rmsnorm(x1)
    if rotate:
        ffn_in = scale_then_rotate(h2, bw.gamma_ffn, bw.op_ffn_in)
        wg, wu = (bw.op_ffn_in.rotate_weights(w) for w in (bw.wg, bw.wu))
    else:
        ffn_in = h2 * bw.gamma_ffn.values
        wg, wu = bw.wg, bw.wu
    ffn_in = _clip_site(runner, "ffn_in", ffn_in)
    if runner.capture_sites is not None:
        runner.capture_sites.setdefault("ffn_in", []).append(ffn_in)
    site_ffn = (
        runner._encode_site("ffn_in", ffn_in)
        if {"gate_proj", "up_proj"} & runner.quantized_ops
        else None
    )
    g, meta_g = runner._linear("gate_proj", site_ffn, ffn_in, wg)
    u, meta_u = runner._linear("up_proj", site_ffn, ffn_in, wu)
    runner.report_op(b, "gate_proj", g, trace[(b, "gate_proj")], meta_g)
    runner.report_op(b, "up_proj", u, trace[(b, "up_proj")], meta_u)

    a = _silu(g) * u
    down_in = bw.op_down.apply(a) if rotate else a
    down_in = _clip_site(runner, "down_in", down_in)
    if runner.capture_sites is not None:
        runner.capture_sites.setdefault("down_in", []).append(down_in)
    wd = bw.op_down.rotate_weights(bw.wd) if rotate else bw.wd
    site_down = (
        runner._encode_site("down_in", down_in) if "down_proj" in runner.quantized_ops else None
    )
    f, meta_d = runner._linear("down_proj", site_down, down_in, wd)
    runner.report_op(b, "down_proj", f, trace[(b, "down_proj")], meta_d)

    return x1 + f


def forward(
    block: Block,
    x,
    mode: str | None = None,
    schedule: str | None = None,
    dense_reference: bool = False,
    shuffle_seed: int = 0,
) -> tuple[np.ndarray, FidelityReport]:
    """Run the stack on `x`, returning the output and a fidelity report.

    `mode` and `schedule` default to the block config. `dense_reference`
    replaces the spike kernels with exact dense integer matmuls on the same
    count grids; by the sparse-addition equivalence the output must be
    bit-identical to the spike route.
    """
    cfg = block.cfg
    mode = mode if mode is not None else cfg.mode
    schedule = schedule if schedule is not None else cfg.schedule
    x = real_matrix(x)
    if x.shape[1] != cfg.d_h:
        raise ShapeMismatchError(f"x has {x.shape[1]} cols, block d_h is {cfg.d_h}")

    trace: dict = {}
    ref = x
    for b, bw in enumerate(block.weights):
        ref = _fp_block(ref, bw, trace, b)

    if mode == Mode.FP:
        rows = tuple(
            OpFidelity(block=b, op=op, cosine=1.0, mse=0.0, rate=None, mean_abs_count=None, adds=None)
            for b in range(cfg.n_blocks)
            for op in OP_ORDER
        )
        return ref, FidelityReport(
            mode=mode, schedule=schedule, operators=cfg.operators, rows=rows, end_to_end_cosine=1.0
        )

    runner = _Runner(block, mode, schedule, shuffle_seed)
    runner.dense_reference = dense_reference
    out = x
    for b, bw in enumerate(block.weights):
        out = _mode_block(runner, out, bw, b, trace)
    report = FidelityReport(
        mode=mode,
        schedule=schedule,
        operators=cfg.operators,
        rows=tuple(runner.rows),
        end_to_end_cosine=_cosine(out, ref),
    )
    return out, report


def calibrate(block: Block, batches) -> Block:
    """Record clip thresholds from calibration batches, then freeze them.

    Runs the rotated full-precision wiring per batch, captures the activation
    feeding each clippable site, and folds its quantile into the site's EMA.
    Must complete before any spike-clipped forward; calibration is the only
    mutation a Block ever sees.
    """
    cfg = block.cfg
    if cfg.clip_q is None:
        raise ConfigError("block config has no clip_q to calibrate")
    states = {
        site: ClipState(q=cfg.clip_q, alpha=cfg.clip_alpha) for site in CLIP_SITES
    }
    for x in batches:
        x = real_matrix(x)
        runner = _Runner(block, Mode.SPIKE_BINARY, Schedule.SYNCHRONOUS, shuffle_seed=0)
        runner.quantized_ops = frozenset()
        runner.capture_sites = {}
        trace: dict = {}
        refx = x
        for b, bw in enumerate(block.weights):
            refx = _fp_block(refx, bw, trace, b)
        out = x
        for b, bw in enumerate(block.weights):
            out = _mode_block(runner, out, bw, b, trace)
        for site, tensors in runner.capture_sites.items():
            for u in tensors:
                states[site] = calibrate_step(states[site], u)
    block.clip_states = {site: st.freeze() for site, st in states.items()}
    return block


def run_async(block: Block, x, shuffle_seed: int = 0) -> np.ndarray:
    """Asynchronous-schedule forward; output only (identical to synchronous)."""
    out, _ = forward(block, x, schedule=Schedule.ASYNCHRONOUS, shuffle_seed=shuffle_seed)
    return out


def sweep(cfgs, x) -> list[tuple[str, FidelityReport]]:
    """Run one input through many configs, auto-calibrating clipped ones.

    Configs sharing a seed share weights, so mode comparisons are direct.
    Returns (label, report) pairs in input order.
    """
    results = []
    for cfg in cfgs:
        block = build_block(cfg)
        if cfg.mode == Mode.SPIKE_CLIPPED:
            calibrate(block, [x])
        _, report = forward(block, x)
        label = f"{cfg.mode}/B{cfg.a_bits}" + (
            f"/q{cfg.clip_q}" if cfg.clip_q is not None and cfg.mode == Mode.SPIKE_CLIPPED else ""
        )
        results.append((label, report))
    return results
