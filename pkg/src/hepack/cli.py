"""Command-line front end: key setup, image encryption, compact and
interleaved inference, the packing comparison report, and a small encrypted
matmul demo.

Exit codes: 0 success, 2 usage, 3 capacity/depth refusal, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models, report, serialize
from .engine import SimBackend, centered
from .errors import CapacityError, FormatError, HepackError
from .fv import FvBackend, FvParams, keygen
from .inference import (
    compact_input_cts,
    compact_peak_cts,
    decrypt_logits,
    infer,
    interleaved_infer,
    interleaved_input_cts,
    interleaved_peak_cts,
    pack_image,
    pack_image_interleaved,
)
from .matrix import Layout, PlainMatrix, mat_mul, pack_matrix, unpack_matrix
from .models import load_model, quantize_image, range_check, read_image
from .params import profile, profile_names

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_IO = 4

DEFAULT_MEM_CAP_GB = 188.0


@dataclass
class RunConfig:
    """Resolved and validated knobs for one CLI run."""

    profile: str
    params: object
    backend: str = "sim"
    packing: str = "compact"
    slots_used: int = None
    threads: int = 1
    mem_cap_bytes: float = DEFAULT_MEM_CAP_GB * 1e9
    model_path: str = None
    image_path: str = None
    keys_path: str = None
    out_dir: str = None
    seed: int = 0

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        params = profile(args.profile)
        s = args.slots_used if args.slots_used is not None else params.slot_count
        if not (1 <= s <= params.slot_count):
            raise ValueError(
                f"slots_used {s} outside [1, {params.slot_count}] for profile "
                f"{args.profile!r}"
            )
        cap = args.mem_cap_gb * 1e9
        if cap <= 0:
            raise ValueError("memory cap must be positive")
        return cls(
            profile=args.profile,
            params=params,
            backend=getattr(args, "backend", "sim"),
            packing=getattr(args, "packing", "compact"),
            slots_used=s,
            threads=_threads(args),
            mem_cap_bytes=cap,
            model_path=getattr(args, "model", None),
            image_path=getattr(args, "image", None),
            keys_path=getattr(args, "keys", None),
            out_dir=args.out,
            seed=args.seed,
        )


def _add_common(sp, model=False, backend=False, packing=False):
    sp.add_argument("--profile", default="desk", choices=profile_names())
    sp.add_argument("--slots-used", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None,
                    help="defaults to HEPACK_THREADS or 1")
    sp.add_argument("--mem-cap-gb", type=float, default=DEFAULT_MEM_CAP_GB)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    if backend:
        sp.add_argument("--backend", default="sim", choices=["sim", "fv"])
        sp.add_argument("--keys", default=None, help="key directory (fv backend)")
    if packing:
        sp.add_argument("--packing", default="compact", choices=["compact", "interleaved"])
    if model:
        sp.add_argument("--model", required=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hepack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("keygen", help="generate lattice keys for a profile")
    _add_common(kg)
    kg.set_defaults(func=cmd_keygen)

    ei = sub.add_parser("encrypt-image", help="pack and encrypt an image file")
    _add_common(ei, backend=True)
    ei.add_argument("--image", required=True)
    ei.set_defaults(func=cmd_encrypt_image)

    inf = sub.add_parser("infer", help="run encrypted inference on one image")
    _add_common(inf, model=True, backend=True, packing=True)
    inf.add_argument("--image", required=True)
    inf.add_argument("--allow-overflow", action="store_true",
                     help="skip the range certificate gate")
    inf.set_defaults(func=cmd_infer)

    cmp_ = sub.add_parser("compare", help="compact vs interleaved cost table")
    _add_common(cmp_, model=True)
    cmp_.add_argument("--image", default=None)
    cmp_.add_argument("--run", action="store_true",
                      help="execute both packings instead of estimating only")
    cmp_.set_defaults(func=cmd_compare)

    mm = sub.add_parser("matmul", help="encrypted matrix multiply demo")
    _add_common(mm)
    mm.add_argument("--dim", type=int, default=4)
    mm.set_defaults(func=cmd_matmul)
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("HEPACK_THREADS", "1")))


def _make_backend(cfg: RunConfig):
    if cfg.backend == "sim":
        return SimBackend(cfg.params)
    rng = np.random.default_rng(cfg.seed)
    if cfg.keys_path:
        keys = serialize.read_keyset(cfg.keys_path)
        return FvBackend(cfg.params, keys=keys, rng=rng)
    return FvBackend(cfg.params, rng=rng)


def _sniff_encrypted(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == serialize.MAGIC
    except OSError:
        return False


def _out_dir(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- subcommands ---------------------------------------------------------------


def cmd_keygen(args) -> int:
    params = profile(args.profile)
    out = Path(args.out or f"keys-{args.profile}")
    rng = np.random.default_rng(args.seed)
    fp = FvParams.from_backend(params)
    t0 = time.perf_counter()
    keys = keygen(fp, rng=rng)
    serialize.write_keyset(out, keys, fp, params)
    wall = time.perf_counter() - t0
    # self check: decrypt after encrypt must round trip
    be = FvBackend(params, keys=keys, rng=rng)
    probe = rng.integers(0, params.plain_modulus, params.slot_count)
    ok = np.array_equal(be.decrypt(be.encrypt(probe)), probe % params.plain_modulus)
    if not ok:
        print("keygen self-check failed", file=sys.stderr)
        return 1
    print(f"wrote keys for profile {args.profile!r} to {out}")
    report.print_metrics(
        {
            "profile": args.profile,
            "galois_keys": len(keys.galois),
            "q_primes": len(fp.q_primes),
            "roundtrip_ok": 1,
            "wall_s": wall,
        }
    )
    return EXIT_OK


def cmd_encrypt_image(args) -> int:
    cfg = RunConfig.from_args(args)
    params = cfg.params
    be = _make_backend(cfg)
    img = read_image(args.image)
    s = cfg.slots_used
    pv = pack_image(be, img, slots_used=s)
    out = Path(args.out or (Path(args.image).stem + ".enc"))
    serialize.write_encrypted_image(out, pv, params)
    print(f"encrypted {args.image} -> {out} ({pv.k} ciphertexts)")
    report.print_metrics(
        {"shape": "x".join(map(str, pv.shape)), "slots_used": s, "ciphertexts": pv.k}
    )
    return EXIT_OK


def _gate_depth_and_range(cfg: RunConfig, model, allow_overflow=False):
    params = cfg.params
    depth = model.network.depth_cost()
    if depth > params.depth_budget:
        raise CapacityError(
            f"network needs {depth} levels but depth_budget is {params.depth_budget}"
        )
    if cfg.backend == "fv" and params.fv_safe_depth and depth > params.fv_safe_depth:
        raise CapacityError(
            f"network needs {depth} levels but the fv backend is verified to "
            f"depth {params.fv_safe_depth} at this profile"
        )
    if not allow_overflow:
        cert = range_check(model.network, model.input_bits, params.plain_modulus)
        if not cert.passed:
            raise CapacityError(
                f"range certificate failed: bound {cert.per_layer_bounds[-1]} "
                f"exceeds {cert.limit} (use --allow-overflow to bypass)"
            )


def cmd_infer(args) -> int:
    cfg = RunConfig.from_args(args)
    params = cfg.params
    model = load_model(cfg.model_path)
    _gate_depth_and_range(cfg, model, args.allow_overflow)
    be = _make_backend(cfg)
    s = cfg.slots_used
    threads = cfg.threads

    encrypted_input = _sniff_encrypted(args.image)
    if encrypted_input:
        pv_or_img = serialize.read_encrypted_image(args.image, be)
        img = None
    else:
        img = read_image(args.image)
        if tuple(img.shape) != tuple(model.network.input_shape):
            raise FormatError(
                f"image shape {img.shape} does not match model input "
                f"{model.network.input_shape}"
            )
        img = quantize_image(img, model.input_bits)

    before = be.cost_report()
    t0 = time.perf_counter()
    if args.packing == "compact":
        pv = pv_or_img if encrypted_input else pack_image(be, img, slots_used=s)
        result = infer(be, model.network, pv, threads=threads)
        cts, slot_map = result.cts, [(i // s, i % s) for i in range(result.logical_length)]
    else:
        if encrypted_input:
            raise FormatError("interleaved inference needs a plaintext image input")
        px = pack_image_interleaved(be, img)
        cts = interleaved_infer(be, model.network, px, mem_cap_bytes=cfg.mem_cap_bytes)
        slot_map = [(i, 0) for i in range(len(cts))]
        result = cts
    wall = time.perf_counter() - t0
    delta = be.cost_report().delta(before)

    prediction = None
    try:
        logits = decrypt_logits(be, result)
        prediction = int(np.argmax(logits))
    except HepackError:
        logits = None  # no secret key present
    out = _out_dir(args)
    if out is not None:
        serialize.write_logits(out / "logits.bin", cts, slot_map, params)
    metrics = {
        "packing": args.packing,
        "profile": args.profile,
        "backend": args.backend,
        "input_cts": compact_input_cts(model.network.input_shape, s)
        if args.packing == "compact"
        else interleaved_input_cts(model.network.input_shape),
        "wall_s": wall,
        "depth_used": delta.max_level_used,
        "peak_live_cts": delta.peak_live_ciphertexts,
        "est_bytes": delta.estimated_ciphertext_bytes,
        "mult": delta.mult_count,
        "cmult": delta.cmult_count,
        "add": delta.add_count,
        "rotation": delta.rotation_count,
        "encrypt": delta.encrypt_count,
    }
    if prediction is not None:
        metrics["prediction"] = prediction
    print(f"prediction: {prediction}" if prediction is not None else "prediction: n/a")
    if logits is not None:
        print(f"logits: {logits.tolist()}")
    report.print_metrics(metrics)
    if out is not None:
        rows = [{"metric": k, "value": v} for k, v in metrics.items()]
        report.write_csv_report(out / "report.csv", rows, ["metric", "value"])
        report.render_op_figure(
            out / "report.png", delta.as_dict(), f"{args.packing} inference ops"
        )
    return EXIT_OK


def _estimate_row(net, params, s, packing):
    if packing == "compact":
        in_cts = compact_input_cts(net.input_shape, s)
        peak = compact_peak_cts(net, s)
    else:
        in_cts = interleaved_input_cts(net.input_shape)
        peak = interleaved_peak_cts(net)
    per_ct = (
        params.ciphertext_bytes if packing == "compact"
        else params.interleaved_ciphertext_bytes
    )
    return {
        "packing": packing,
        "input_cts": in_cts,
        "est_peak_cts": peak,
        "est_bytes": peak * per_ct,
    }


def cmd_compare(args) -> int:
    cfg = RunConfig.from_args(args)
    params = cfg.params
    model = load_model(cfg.model_path)
    net = model.network
    s = cfg.slots_used
    cap_bytes = cfg.mem_cap_bytes
    threads = cfg.threads

    comp = _estimate_row(net, params, s, "compact")
    inter = _estimate_row(net, params, s, "interleaved")
    refused = inter["est_bytes"] > cap_bytes
    ratio_inputs = inter["input_cts"] / comp["input_cts"]
    ratio_bytes = inter["est_bytes"] / comp["est_bytes"]

    rows = [dict(comp), dict(inter)]
    walls = {}
    predictions = {}
    if args.run:
        rng = np.random.default_rng(args.seed)
        if args.image:
            img = quantize_image(read_image(args.image), model.input_bits)
        else:
            img = models.random_image(rng, net.input_shape, model.input_bits)
        be_c = SimBackend(params)
        before = be_c.cost_report()
        t0 = time.perf_counter()
        out_c = infer(be_c, net, pack_image(be_c, img, slots_used=s), threads=threads)
        walls["compact"] = time.perf_counter() - t0
        delta_c = be_c.cost_report().delta(before)
        predictions["compact"] = int(np.argmax(decrypt_logits(be_c, out_c)))
        rows[0].update(
            wall_s=walls["compact"],
            peak_live_cts=delta_c.peak_live_ciphertexts,
            cmult=delta_c.cmult_count,
            mult=delta_c.mult_count,
            rotation=delta_c.rotation_count,
            prediction=predictions["compact"],
        )
        if not refused:
            be_i = SimBackend(params)
            before = be_i.cost_report()
            t0 = time.perf_counter()
            out_i = interleaved_infer(
                be_i, net, pack_image_interleaved(be_i, img), mem_cap_bytes=cap_bytes
            )
            walls["interleaved"] = time.perf_counter() - t0
            delta_i = be_i.cost_report().delta(before)
            predictions["interleaved"] = int(np.argmax(decrypt_logits(be_i, out_i)))
            rows[1].update(
                wall_s=walls["interleaved"],
                peak_live_cts=delta_i.peak_live_ciphertexts,
                cmult=delta_i.cmult_count,
                mult=delta_i.mult_count,
                rotation=delta_i.rotation_count,
                prediction=predictions["interleaved"],
            )

    cap_gb = args.mem_cap_gb
    print(f"packing comparison, profile {args.profile!r}, slots_used {s}")
    print(f"{'packing':<13}{'input cts':>10}{'est peak cts':>14}{'est memory':>14}")
    for row in rows:
        if row["packing"] == "interleaved" and refused:
            mem = f"> {cap_gb:g} GB"
        else:
            mem = f"{row['est_bytes'] / 1e9:.3f} GB"
        print(f"{row['packing']:<13}{row['input_cts']:>10}{row['est_peak_cts']:>14}{mem:>14}")
    if walls:
        agree = (
            predictions.get("compact") == predictions.get("interleaved")
            if "interleaved" in predictions
            else None
        )
        for packing, wall in walls.items():
            print(f"{packing} wall time: {wall:.3f} s (prediction {predictions[packing]})")
        if agree is not None:
            print(f"predictions agree: {agree}")

    metrics = {
        "profile": args.profile,
        "slots_used": s,
        "input_cts_compact": comp["input_cts"],
        "input_cts_interleaved": inter["input_cts"],
        "input_ct_ratio": ratio_inputs,
        "est_peak_cts_compact": comp["est_peak_cts"],
        "est_peak_cts_interleaved": inter["est_peak_cts"],
        "est_bytes_compact": comp["est_bytes"],
        "est_bytes_interleaved": inter["est_bytes"],
        "est_bytes_ratio": ratio_bytes,
        "mem_cap_gb": cap_gb,
        "interleaved_refused": int(refused),
    }
    if walls:
        metrics["wall_s_compact"] = walls["compact"]
        if "interleaved" in walls:
            metrics["wall_s_interleaved"] = walls["interleaved"]
            metrics["predictions_agree"] = int(
                predictions["compact"] == predictions["interleaved"]
            )
    report.print_metrics(metrics)

    out = _out_dir(args)
    if out is not None:
        fields = sorted({k for row in rows for k in row})
        report.write_csv_report(out / "compare.csv", rows, fields)
        fig_c = {
            "input cts": comp["input_cts"],
            "est peak cts": comp["est_peak_cts"],
            "est GB": comp["est_bytes"] / 1e9,
        }
        fig_i = {
            "input cts": inter["input_cts"],
            "est peak cts": inter["est_peak_cts"],
            "est GB": inter["est_bytes"] / 1e9,
        }
        if walls.get("compact") is not None and walls.get("interleaved") is not None:
            fig_c["wall s"] = walls["compact"]
            fig_i["wall s"] = walls["interleaved"]
        report.render_compare_figure(
            out / "compare.png", fig_c, fig_i,
            f"compact vs interleaved ({args.profile})",
        )
    return EXIT_OK


def cmd_matmul(args) -> int:
    params = profile(args.profile)
    be = SimBackend(params)
    d = args.dim
    rng = np.random.default_rng(args.seed)
    a = rng.integers(-7, 8, (d, d))
    b = rng.integers(-7, 8, (d, d))
    ea = pack_matrix(be, PlainMatrix(d, d, a), Layout.RCP, args.slots_used)
    eb = pack_matrix(be, PlainMatrix(d, d, b), Layout.CCP, args.slots_used)
    before = be.cost_report()
    level_in = max(ct.level_used for ct in ea.cts + eb.cts)
    t0 = time.perf_counter()
    ec = mat_mul(be, ea, eb)
    wall = time.perf_counter() - t0
    delta = be.cost_report().delta(before)
    got = centered(unpack_matrix(be, ec).entries, params.plain_modulus)
    want = a @ b
    exact = np.array_equal(got % params.plain_modulus, want % params.plain_modulus)
    print(f"A @ B ({d}x{d}) on encrypted operands:")
    print(got)
    print(f"matches plaintext product mod t: {exact}")
    metrics = {
        "dim": d,
        "exact": int(exact),
        "mult_delta": delta.mult_count,
        "cmult_delta": delta.cmult_count,
        "rotation_delta": delta.rotation_count,
        "add_delta": delta.add_count,
        "depth_delta": max(ct.level_used for ct in ec.cts) - level_in,
        "wall_s": wall,
    }
    report.print_metrics(metrics)
    out = _out_dir(args)
    if out is not None:
        rows = [{"metric": k, "value": v} for k, v in metrics.items()]
        report.write_csv_report(out / "matmul.csv", rows, ["metric", "value"])
        report.render_op_figure(out / "matmul.png", delta.as_dict(), f"matmul d={d}")
    return EXIT_OK if exact else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
