"""Run configuration files for the pipeline command.

Configs are JSON with strict key checking: validation walks the whole
document and reports every unknown or missing key at once. Each run writes
its fully resolved configuration (defaults filled in) next to its outputs,
so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .codec import EncodingConfig, EncodingScheme
from .errors import ConfigError
from .pipeline import ENCODE_SITES, OPERATOR_GROUPS, BlockConfig, Mode, Schedule

__all__ = ["RunConfig", "load_run_config", "resolved_dict"]

_SCHEME_NAMES = {s.value: s for s in EncodingScheme}

_TOP_KEYS = {
    "seed": True,
    "out_dir": True,
    "block": True,
    "modes": True,
    "schedule": False,
    "operators": False,
    "bits": False,
    "clip": False,
    "encoding_overrides": False,
    "shuffle_seed": False,
    "input": False,
}
_BLOCK_KEYS = {"d_h": True, "d_i": True, "n_blocks": False, "rows": False}
_BITS_KEYS = {"weights": False, "activations": False}
_CLIP_KEYS = {"q": True, "alpha": False}
_OVERRIDE_KEYS = {"bits": True, "scheme": True}


@dataclass(frozen=True)
class RunConfig:
    """Validated pipeline run: one input, one or more execution modes."""

    seed: int
    out_dir: str
    modes: tuple
    block: BlockConfig
    shuffle_seed: int = 0
    input_path: str | None = None
    clip_q: float | None = None
    clip_alpha: float = 0.99

    def block_for_mode(self, mode: str) -> BlockConfig:
        from dataclasses import replace

        return replace(self.block, mode=mode)


def _check_keys(section: str, obj: dict, spec: dict, problems: list) -> None:
    for key in obj:
        if key not in spec:
            problems.append(f"{section}: unknown key {key!r}")
    for key, required in spec.items():
        if required and key not in obj:
            problems.append(f"{section}: missing required key {key!r}")


def load_run_config(path) -> RunConfig:
    """Parse and validate a config file, listing every bad key on failure."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    problems: list[str] = []
    _check_keys("config", raw, _TOP_KEYS, problems)
    block_raw = raw.get("block", {})
    if isinstance(block_raw, dict):
        _check_keys("config.block", block_raw, _BLOCK_KEYS, problems)
    else:
        problems.append("config.block: must be an object")
        block_raw = {}
    bits_raw = raw.get("bits", {})
    if isinstance(bits_raw, dict):
        _check_keys("config.bits", bits_raw, _BITS_KEYS, problems)
    else:
        problems.append("config.bits: must be an object")
        bits_raw = {}
    clip_raw = raw.get("clip")
    if clip_raw is not None:
        if isinstance(clip_raw, dict):
            _check_keys("config.clip", clip_raw, _CLIP_KEYS, problems)
        else:
            problems.append("config.clip: must be an object")
            clip_raw = None
    overrides_raw = raw.get("encoding_overrides", {})
    overrides: dict[str, EncodingConfig] = {}
    if isinstance(overrides_raw, dict):
        for site, ov in overrides_raw.items():
            if site not in ENCODE_SITES:
                problems.append(
                    f"config.encoding_overrides: unknown site {site!r} (sites: {ENCODE_SITES})"
                )
                continue
            if not isinstance(ov, dict):
                problems.append(f"config.encoding_overrides.{site}: must be an object")
                continue
            _check_keys(f"config.encoding_overrides.{site}", ov, _OVERRIDE_KEYS, problems)
            scheme = ov.get("scheme")
            if scheme is not None and scheme not in _SCHEME_NAMES:
                problems.append(
                    f"config.encoding_overrides.{site}: scheme must be one of "
                    f"{sorted(_SCHEME_NAMES)}"
                )
            elif "bits" in ov and scheme is not None:
                overrides[site] = EncodingConfig(bits=int(ov["bits"]), scheme=_SCHEME_NAMES[scheme])
    else:
        problems.append("config.encoding_overrides: must be an object")

    modes = raw.get("modes", [])
    if isinstance(modes, str):
        modes = [modes]
    if not isinstance(modes, list) or not modes:
        problems.append("config.modes: must be a mode name or a non-empty list of them")
        modes = []
    for m in modes:
        if m not in Mode.ALL:
            problems.append(f"config.modes: unknown mode {m!r} (modes: {Mode.ALL})")
    schedule = raw.get("schedule", Schedule.SYNCHRONOUS)
    if schedule not in Schedule.ALL:
        problems.append(f"config.schedule: must be one of {Schedule.ALL}")
    operators = raw.get("operators", "qkv+att+ffn")
    if operators not in OPERATOR_GROUPS:
        problems.append(f"config.operators: must be one of {sorted(OPERATOR_GROUPS)}")

    if problems:
        raise ConfigError("invalid run config:\n  " + "\n  ".join(problems))

    clip_q = float(clip_raw["q"]) if clip_raw else None
    clip_alpha = float(clip_raw.get("alpha", 0.99)) if clip_raw else 0.99
    try:
        block = BlockConfig(
            d_h=int(block_raw["d_h"]),
            d_i=int(block_raw["d_i"]),
            n_blocks=int(block_raw.get("n_blocks", 1)),
            rows=int(block_raw.get("rows", 16)),
            seed=int(raw["seed"]),
            mode=modes[0],
            schedule=schedule,
            operators=operators,
            w_bits=int(bits_raw.get("weights", 4)),
            a_bits=int(bits_raw.get("activations", 4)),
            clip_q=clip_q,
            clip_alpha=clip_alpha,
            encoding_overrides=overrides,
        )
    except ConfigError as e:
        raise ConfigError(f"invalid run config: {e}") from e
    return RunConfig(
        seed=int(raw["seed"]),
        out_dir=str(raw["out_dir"]),
        modes=tuple(modes),
        block=block,
        shuffle_seed=int(raw.get("shuffle_seed", 0)),
        input_path=raw.get("input"),
        clip_q=clip_q,
        clip_alpha=clip_alpha,
    )


def resolved_dict(rc: RunConfig) -> dict:
    """Fully resolved config (defaults included) for the run snapshot."""
    block = rc.block
    overrides = {
        site: {"bits": enc.bits, "scheme": enc.scheme.value}
        for site, enc in block.encoding_overrides.items()
    }
    out = {
        "seed": rc.seed,
        "out_dir": rc.out_dir,
        "modes": list(rc.modes),
        "schedule": block.schedule,
        "operators": block.operators,
        "block": {
            "d_h": block.d_h,
            "d_i": block.d_i,
            "n_blocks": block.n_blocks,
            "rows": block.rows,
        },
        "bits": {"weights": block.w_bits, "activations": block.a_bits},
        "encoding_overrides": overrides,
        "shuffle_seed": rc.shuffle_seed,
        "input": rc.input_path,
    }
    if rc.clip_q is not None:
        out["clip"] = {"q": rc.clip_q, "alpha": rc.clip_alpha}
    return out
