"""Bit-decomposition FLOPs accounting and MAC/AC energy estimation.

FLOP units are full-precision multiply-accumulates. A w-bit by a-bit product
decomposes into 2-bit-by-2-bit units, each worth 1/32 of a full-precision
MAC: ceil(b/2) units per operand for b >= 2, and half a unit for a 1-bit
operand (a binary spike carries half the payload of a 2-bit value). Ternary
spikes occupy one 2-bit unit and are labeled "1.58" (log2 3) in reports.

Spike execution repeats the gather work over the unfolded window scaled by
the firing rate:

    flops_spike = macs_fp * T * D * R * factor(w_bits, spike_bits)

Energy charges 4.6 pJ per MAC-class FLOP for dense layers and 0.9 pJ per
accumulate for spike-driven ones (45 nm estimates).

Model shape catalogs (hidden size, FFN size, layer count, sequence length)
ship as JSON data files next to this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from importlib import resources

from .errors import ConfigError, MissingRateError

__all__ = [
    "E_MAC_JOULES",
    "E_AC_JOULES",
    "LayerRole",
    "LayerShape",
    "BitConfig",
    "LayerCost",
    "CostReport",
    "decomposition_factor",
    "flops_dense",
    "flops_spike",
    "energy",
    "model_report",
    "ModelCatalog",
    "load_catalog",
    "catalog_entries",
]

E_MAC_JOULES = 4.6e-12
E_AC_JOULES = 0.9e-12


class LayerRole(Enum):
    LINEAR = "linear"
    ATTENTION = "attention"


@dataclass(frozen=True)
class LayerShape:
    """One matmul site: its name and dense full-precision MAC count."""

    name: str
    macs_fp: int
    role: LayerRole = LayerRole.LINEAR

    def __post_init__(self):
        if self.macs_fp <= 0:
            raise ValueError(f"macs_fp must be positive, got {self.macs_fp}")


@dataclass(frozen=True)
class BitConfig:
    """Arithmetic configuration of one layer.

    Dense: w_bits and a_bits are real bit widths (None means full precision).
    Spike: a_bits is the polarity code (1 = binary, 2 = ternary), d_steps is
    the unfold window (real-valued to admit mixed per-operator windows), and
    rate is the firing rate in [0, 1].
    """

    w_bits: int | None = None
    a_bits: int | None = None
    is_spike: bool = False
    t_steps: int = 1
    d_steps: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.is_spike:
            if self.a_bits not in (1, 2):
                raise ValueError("spike configs need a_bits in {1, 2} (binary/ternary)")
            if self.d_steps is None or self.d_steps <= 0:
                raise ValueError("spike configs need a positive d_steps")
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")

    @property
    def label(self) -> str:
        if self.w_bits is None and self.a_bits is None:
            return "FP"
        a = "1.58" if (self.is_spike and self.a_bits == 2) else str(self.a_bits)
        return f"{self.w_bits}-{a}"


def _unit_count(bits: int) -> Fraction:
    if bits < 1:
        raise ValueError(f"bit width must be >= 1, got {bits}")
    if bits == 1:
        return Fraction(1, 2)
    return Fraction(math.ceil(bits / 2))


def decomposition_factor(w_bits: int, a_bits: int) -> Fraction:
    """Cost of a w-bit by a-bit MAC relative to a full-precision one.

    ceil(w/2) * ceil(a/2) two-bit units at 1/32 each; a 1-bit operand counts
    as half a unit. Examples: (4, 4) -> 1/8, (6, 6) -> 9/32, (4, 2) -> 1/16,
    (4, 1) -> 1/32.
    """
    return _unit_count(w_bits) * _unit_count(a_bits) / 32


def flops_dense(shape: LayerShape, w_bits: int | None, a_bits: int | None) -> float:
    """Dense-layer FLOPs: macs_fp scaled by the decomposition factor."""
    if w_bits is None or a_bits is None:
        return float(shape.macs_fp)
    return float(shape.macs_fp * decomposition_factor(w_bits, a_bits))


def flops_spike(shape: LayerShape, cfg: BitConfig) -> float:
    """Spike-layer FLOPs: dense low-bit cost times the active window T*D*R."""
    if not cfg.is_spike:
        raise ValueError("flops_spike requires a spike BitConfig")
    if cfg.rate is None:
        raise MissingRateError(f"layer {shape.name!r}: spike config has no firing rate")
    factor = decomposition_factor(cfg.w_bits, cfg.a_bits)
    return float(shape.macs_fp * cfg.t_steps * cfg.d_steps * cfg.rate * factor)


def energy(flops: float, kind: str) -> float:
    """Joules for `flops` operations of the given kind ("mac" or "ac")."""
    if flops < 0:
        raise ValueError("flops must be >= 0")
    if kind == "mac":
        return flops * E_MAC_JOULES
    if kind == "ac":
        return flops * E_AC_JOULES
    raise ValueError(f"unknown energy kind {kind!r}")


@dataclass(frozen=True)
class LayerCost:
    name: str
    label: str
    flops: float
    energy_joules: float
    rate: float | None
    d_steps: float | None
    instances: int = 1

    def record(self) -> dict:
        return {
            "name": self.name,
            "label": self.label,
            "flops": self.flops,
            "energy_joules": self.energy_joules,
            "rate": self.rate,
            "d_steps": self.d_steps,
            "instances": self.instances,
        }


@dataclass(frozen=True)
class CostReport:
    rows: tuple
    total_flops: float
    total_energy_joules: float

    def records(self) -> list[dict]:
        recs = [r.record() for r in self.rows]
        recs.append(
            {
                "name": "total",
                "label": "",
                "flops": self.total_flops,
                "energy_joules": self.total_energy_joules,
                "rate": None,
                "d_steps": None,
                "instances": 1,
            }
        )
        return recs

    def render(self) -> str:
        """Aligned-column text table with 6 significant digits."""
        header = f"{'layer':<14}{'bits':>8}{'x n':>6}{'R':>10}{'D':>8}{'FLOPs':>14}{'energy (J)':>14}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            rate = f"{r.rate:.4f}" if r.rate is not None else "-"
            d = f"{r.d_steps:g}" if r.d_steps is not None else "-"
            lines.append(
                f"{r.name:<14}{r.label:>8}{r.instances:>6}{rate:>10}{d:>8}"
                f"{r.flops:>14.6g}{r.energy_joules:>14.6g}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'total':<14}{'':>8}{'':>6}{'':>10}{'':>8}"
            f"{self.total_flops:>14.6g}{self.total_energy_joules:>14.6g}"
        )
        return "\n".join(lines)


def model_report(entries) -> CostReport:
    """Per-layer FLOPs/energy plus totals for (LayerShape, BitConfig[, n]) rows.

    Each entry is (shape, cfg) or (shape, cfg, instances); `instances`
    multiplies the layer into the totals (e.g. once per transformer block)
    while the per-layer row keeps single-instance values. Spike layers are
    charged accumulate energy, everything else MAC energy.
    """
    rows = []
    total_f = 0.0
    total_e = 0.0
    for entry in entries:
        shape, cfg, *rest = entry
        instances = rest[0] if rest else 1
        if cfg.is_spike:
            f = flops_spike(shape, cfg)
            e = energy(f, "ac")
        else:
            f = flops_dense(shape, cfg.w_bits, cfg.a_bits)
            e = energy(f, "mac")
        rows.append(
            LayerCost(
                name=shape.name,
                label=cfg.label,
                flops=f,
                energy_joules=e,
                rate=cfg.rate if cfg.is_spike else None,
                d_steps=cfg.d_steps if cfg.is_spike else None,
                instances=instances,
            )
        )
        total_f += f * instances
        total_e += e * instances
    return CostReport(rows=tuple(rows), total_flops=total_f, total_energy_joules=total_e)


_CATALOG_LAYER_KINDS = {"attn_proj", "ffn_proj", "attention"}


@dataclass(frozen=True)
class ModelCatalog:
    """Shape catalog of a transformer stack.

    Keys: name, d_h (hidden size), d_i (FFN size), n_layers, seq_len, and
    layers[] of {name, kind} with kind one of attn_proj (seq * d_h^2 MACs),
    ffn_proj (seq * d_h * d_i), attention (2 * seq^2 * d_h, the score and
    context products).
    """

    name: str
    d_h: int
    d_i: int
    n_layers: int
    seq_len: int
    layers: tuple

    def layer_shapes(self) -> list[LayerShape]:
        shapes = []
        for layer in self.layers:
            kind = layer["kind"]
            if kind == "attn_proj":
                macs = self.seq_len * self.d_h * self.d_h
                role = LayerRole.LINEAR
            elif kind == "ffn_proj":
                macs = self.seq_len * self.d_h * self.d_i
                role = LayerRole.LINEAR
            elif kind == "attention":
                macs = 2 * self.seq_len * self.seq_len * self.d_h
                role = LayerRole.ATTENTION
            else:  # pragma: no cover - validated at load
                raise ConfigError(f"unknown layer kind {kind!r}")
            shapes.append(LayerShape(name=layer["name"], macs_fp=macs, role=role))
        return shapes


def load_catalog(name_or_path: str) -> ModelCatalog:
    """Load a bundled catalog by name (e.g. "llama2-7b") or a JSON file path."""
    pkg_files = resources.files(__package__).joinpath("catalogs")
    bundled = pkg_files.joinpath(f"{name_or_path}.json")
    if bundled.is_file():
        raw = json.loads(bundled.read_text())
    else:
        try:
            with open(name_or_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as e:
            available = sorted(p.name[:-5] for p in pkg_files.iterdir() if p.name.endswith(".json"))
            raise ConfigError(
                f"no catalog {name_or_path!r}: not bundled ({', '.join(available)}) "
                f"and not a readable file ({e})"
            ) from e
    required = {"name", "d_h", "d_i", "n_layers", "seq_len", "layers"}
    missing = required - raw.keys()
    unknown = raw.keys() - required
    if missing or unknown:
        raise ConfigError(f"catalog keys: missing={sorted(missing)}, unknown={sorted(unknown)}")
    layers = []
    for layer in raw["layers"]:
        if set(layer) != {"name", "kind"} or layer["kind"] not in _CATALOG_LAYER_KINDS:
            raise ConfigError(f"bad catalog layer entry {layer!r}")
        layers.append(dict(layer))
    return ModelCatalog(
        name=raw["name"],
        d_h=int(raw["d_h"]),
        d_i=int(raw["d_i"]),
        n_layers=int(raw["n_layers"]),
        seq_len=int(raw["seq_len"]),
        layers=tuple(layers),
    )


def catalog_entries(
    catalog: ModelCatalog,
    w_bits: int | None,
    a_bits: int | None,
    is_spike: bool = False,
    t_steps: int = 1,
    d_steps: float | None = None,
    rates=None,
) -> list[tuple]:
    """Build model_report entries for a whole stack under one bit setting.

    `rates` is a scalar firing rate or a {layer name: rate} mapping (used
    only for spike configs); each layer appears once with instances=n_layers.
    """
    entries = []
    for shape in catalog.layer_shapes():
        if is_spike:
            if rates is None:
                rate = None
            elif isinstance(rates, dict):
                if shape.name not in rates:
                    raise MissingRateError(f"no firing rate for layer {shape.name!r}")
                rate = float(rates[shape.name])
            else:
                rate = float(rates)
            cfg = BitConfig(
                w_bits=w_bits,
                a_bits=a_bits,
                is_spike=True,
                t_steps=t_steps,
                d_steps=d_steps,
                rate=rate,
            )
        else:
            cfg = BitConfig(w_bits=w_bits, a_bits=a_bits)
        entries.append((shape, cfg, catalog.n_layers))
    return entries
