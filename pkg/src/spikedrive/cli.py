"""Command-line surface.

Subcommands:
    encode        tensor -> spike train (+ stats sidecar)
    fold          spike train -> counts tensor
    matmul-check  exact sparse-addition vs dense-integer equivalence
    cost          FLOPs/energy report for a model catalog (+ golden compare)
    pipeline      run the block harness from a config file
    dispersion    Monte Carlo check of cost dispersion under rotation

Exit codes: 0 success, 1 check failure, 2 usage or parse errors. All
randomness flows from explicit seeds, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import costmodel, pipeline, tensorio
from .clipping import ClipState, calibrate_step, qsrelu
from .codec import EncodingConfig, EncodingScheme, encode_counts, firing_stats, fold, unfold
from .errors import SpikeDriveError
from .kernel import dense_matmul_reference, event_count, spike_matmul
from .rotation import GammaVector, OrthoKind, dispersion_estimate, sample_orthogonal, scale_then_rotate
from .runconfig import load_run_config, resolved_dict
from .tensor import real_matrix

_SCHEMES = {"asym": EncodingScheme.ASYM_BINARY, "sym": EncodingScheme.SYM_TERNARY}


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _load_matrix(path: str) -> np.ndarray:
    arr = tensorio.read_tensor(path)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise SpikeDriveError(f"{path}: expected a rank-1 or rank-2 tensor, got rank {arr.ndim}")
    return arr


def _cmd_encode(args) -> int:
    x = real_matrix(_load_matrix(args.infile).astype(np.float64))
    scheme = _SCHEMES[args.scheme]
    if args.clip_q is not None and scheme is not EncodingScheme.ASYM_BINARY:
        raise SpikeDriveError("--clip-q requires --scheme asym (clipped inputs are non-negative)")

    gamma = None
    if args.gamma:
        gvals = tensorio.read_tensor(args.gamma).reshape(-1).astype(np.float64)
        gamma = GammaVector(gvals)
    u = x
    if args.rotate:
        op = sample_orthogonal(x.shape[1], OrthoKind.HADAMARD_RANDOM_SIGN, seed=args.seed)
        u = scale_then_rotate(u, gamma or GammaVector.ones(x.shape[1]), op)
    elif gamma is not None:
        u = real_matrix(u * gamma.values)

    tau = None
    if args.clip_q is not None:
        state = calibrate_step(ClipState(q=args.clip_q), u)
        tau = state.tau
        u = qsrelu(u, tau)

    cfg = EncodingConfig(bits=args.bits, scheme=scheme)
    cm = encode_counts(u, cfg)
    train = unfold(cm)
    tensorio.write_train(args.out, train)
    stats = firing_stats(cm)
    sidecar = {
        "rate": stats.rate,
        "mean_abs_count": stats.mean_abs_count,
        "histogram": {str(k): v for k, v in stats.histogram().items()},
        "bits": args.bits,
        "scheme": args.scheme,
        "t_steps": cfg.t_steps,
        "d_steps": cfg.d_steps,
        "polarity": train.polarity.name.lower(),
        "delta": cm.params.delta,
        "zero_point": cm.params.zero_point,
        "rows": train.rows,
        "cols": train.cols,
        "seed": args.seed,
        "rotate": bool(args.rotate),
        "clip_q": args.clip_q,
        "tau": tau,
    }
    with open(args.out + ".stats.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"encoded {train.rows}x{train.cols} -> {args.out} "
        f"(D={cfg.d_steps}, R={_fmt(stats.rate)}, events={event_count(train)})"
    )
    return 0


def _cmd_fold(args) -> int:
    train = tensorio.read_train(args.train)
    counts = fold(train)
    tensorio.write_tensor(args.out, counts.astype(np.int32))
    print(f"folded {train.rows}x{train.cols} train -> {args.out}")
    return 0


def _cmd_matmul_check(args) -> int:
    w = _load_matrix(args.w)
    train = tensorio.read_train(args.train)
    if w.shape[0] != train.cols:
        raise SpikeDriveError(
            f"dim mismatch: weight rows {w.shape[0]} vs train contraction dim {train.cols}"
        )
    counts = fold(train)
    result = spike_matmul(w, train)
    dense = counts @ w
    ok = np.array_equal(result.values, dense)
    if args.dense_ref:
        ref = dense_matmul_reference(counts, w)
        ok = ok and np.array_equal(ref, dense)
    events = event_count(train)
    status = "PASS" if ok else "FAIL"
    print(f"{status}: events={events} adds={result.adds} shape={result.values.shape}")
    return 0 if ok else 1


def _parse_bits(spec: str):
    """Return (w_bits, a_bits, is_spike) from e.g. fp, 4-4, 4-1, 4-1.58."""
    if spec.lower() == "fp":
        return None, None, False
    try:
        w_s, a_s = spec.split("-", 1)
        w = int(w_s)
    except ValueError:
        raise SpikeDriveError(f"bad --bits {spec!r}; expected fp or W-A like 4-4 or 4-1.58")
    if a_s == "1.58":
        return w, 2, True
    if a_s == "1":
        return w, 1, True
    try:
        return w, int(a_s), False
    except ValueError:
        raise SpikeDriveError(f"bad activation bits {a_s!r} in --bits {spec!r}")


def _parse_td(spec: str) -> tuple[int, float]:
    parts = spec.lower().replace(" ", "").split("x")
    if len(parts) != 2:
        raise SpikeDriveError(f"bad --tD {spec!r}; expected like '1x8'")
    try:
        return int(parts[0]), float(parts[1])
    except ValueError:
        raise SpikeDriveError(f"bad --tD {spec!r}; expected like '1x8'")


def _cmd_cost(args) -> int:
    catalog = costmodel.load_catalog(args.model)
    w_bits, a_bits, is_spike = _parse_bits(args.bits)
    t_steps, d_steps, rates = 1, None, None
    if is_spike:
        if not args.tD:
            raise SpikeDriveError("spike bit settings need --tD")
        if args.rates is None:
            raise SpikeDriveError("spike bit settings need --rates (scalar or JSON file)")
        t_steps, d_steps = _parse_td(args.tD)
        try:
            rates = float(args.rates)
        except ValueError:
            with open(args.rates, "r", encoding="utf-8") as fh:
                rates = {k: float(v) for k, v in json.load(fh).items()}
    entries = costmodel.catalog_entries(
        catalog, w_bits, a_bits, is_spike=is_spike, t_steps=t_steps, d_steps=d_steps, rates=rates
    )
    report = costmodel.model_report(entries)
    print(f"model: {catalog.name} (n_layers={catalog.n_layers}, seq={catalog.seq_len})")
    print(report.render())
    if args.golden:
        failures = _compare_golden(report, args.golden)
        if failures:
            for f in failures:
                print(f"GOLDEN FAIL: {f}")
            return 1
        print("GOLDEN PASS")
    return 0


def _compare_golden(report, golden_path: str) -> list[str]:
    with open(golden_path, "r", encoding="utf-8") as fh:
        golden = json.load(fh)
    failures = []
    layer_tol = float(golden.get("layer_tolerance", 0.01))
    total_tol = float(golden.get("total_tolerance", 0.05))
    by_name = {r.name: r for r in report.rows}
    for name, expect in golden.get("layers", {}).items():
        row = by_name.get(name)
        if row is None:
            failures.append(f"layer {name!r} missing from report")
            continue
        for key, got in (("flops", row.flops), ("energy_joules", row.energy_joules)):
            if key in expect:
                want = float(expect[key])
                if abs(got - want) > layer_tol * abs(want):
                    failures.append(f"{name}.{key}: got {_fmt(got)}, want {_fmt(want)}")
    for key, got in (
        ("total_flops", report.total_flops),
        ("total_energy_joules", report.total_energy_joules),
    ):
        if key in golden:
            want = float(golden[key])
            if abs(got - want) > total_tol * abs(want):
                failures.append(f"{key}: got {_fmt(got)}, want {_fmt(want)}")
    return failures


def _cmd_pipeline(args) -> int:
    rc = load_run_config(args.config)
    out_dir = Path(rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.resolved.json", "w", encoding="utf-8") as fh:
        json.dump(resolved_dict(rc), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if rc.input_path:
        x = real_matrix(_load_matrix(rc.input_path).astype(np.float64))
    else:
        rng = np.random.default_rng(np.random.SeedSequence(rc.seed).spawn(1)[0])
        x = real_matrix(rng.standard_normal((rc.block.rows, rc.block.d_h)))

    for mode in rc.modes:
        cfg = rc.block_for_mode(mode)
        block = pipeline.build_block(cfg)
        if mode == pipeline.Mode.SPIKE_CLIPPED:
            pipeline.calibrate(block, [x])
        out, report = pipeline.forward(block, x, shuffle_seed=rc.shuffle_seed)
        digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()
        tag = mode.replace("/", "-")
        (out_dir / f"fidelity-{tag}.txt").write_text(report.render() + "\n", encoding="utf-8")
        with open(out_dir / f"fidelity-{tag}.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "mode": mode,
                    "schedule": report.schedule,
                    "operators": report.operators,
                    "end_to_end_cosine": report.end_to_end_cosine,
                    "output_sha256": digest,
                    "rows": report.records(),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        print(
            f"{mode}: end-to-end cosine {_fmt(report.end_to_end_cosine)} "
            f"output sha256 {digest[:16]}..."
        )
    return 0


def _cmd_dispersion(args) -> int:
    if args.subset > args.dim:
        raise SpikeDriveError(f"subset size {args.subset} exceeds dim {args.dim}")
    kind = OrthoKind.HAAR_QR if args.kind == "haar" else OrthoKind.HADAMARD_RANDOM_SIGN
    rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
    x = rng.standard_normal((1, args.dim))
    measured, predicted = dispersion_estimate(
        x, np.arange(args.subset), kind=kind, trials=args.trials, seed=args.seed
    )
    rel = abs(measured - predicted) / predicted
    print(f"measured  {_fmt(measured)}")
    print(f"predicted {_fmt(predicted)}")
    print(f"relative error {_fmt(rel)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikedrive", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a tensor into a spike train")
    p.add_argument("--in", dest="infile", required=True, help="input tensor file")
    p.add_argument("--bits", type=int, required=True, help="count bit width (2..16)")
    p.add_argument("--scheme", choices=sorted(_SCHEMES), required=True)
    p.add_argument("--gamma", help="per-dimension scale tensor (rank 1)")
    p.add_argument("--rotate", action="store_true", help="apply a seeded sign-randomized rotation")
    p.add_argument("--clip-q", type=float, default=None, help="quantile clip before encoding")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output spike-train file")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("fold", help="fold a spike train back into counts")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True, help="output tensor file (int32 counts)")
    p.set_defaults(func=_cmd_fold)

    p = sub.add_parser("matmul-check", help="verify sparse-addition matmul exactness")
    p.add_argument("--w", required=True, help="weight tensor file")
    p.add_argument("--train", required=True, help="spike-train file")
    p.add_argument("--dense-ref", action="store_true", help="also run the schoolbook reference")
    p.set_defaults(func=_cmd_matmul_check)

    p = sub.add_parser("cost", help="FLOPs/energy report for a model catalog")
    p.add_argument("--model", required=True, help="catalog name or JSON path")
    p.add_argument("--bits", required=True, help="fp, W-A (dense), W-1 or W-1.58 (spike)")
    p.add_argument("--tD", default=None, help="outer x unfolded steps, e.g. '1x8'")
    p.add_argument("--rates", default=None, help="scalar firing rate or JSON {layer: rate}")
    p.add_argument("--golden", default=None, help="compare against pinned cells")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("pipeline", help="run the block harness from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("dispersion", help="Monte Carlo dispersion check")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--subset", type=int, required=True, help="subset size m")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("haar", "hadamard"), default="haar")
    p.set_defaults(func=_cmd_dispersion)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpikeDriveError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
