"""Command-line surface: train / encode / decode / sweep / report / probe / compare."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .analysis import (compare_curves, curve_from_points, latent_report, probe,
                       rd_sweep, read_rd_csv, write_gaps_csv, write_hist_csv,
                       write_latent_csv, write_rd_csv, write_scales_csv)
from .bitstream import decode_image, encode_image
from .errors import CodecError, UsageError
from .imageio import read_image_luma, write_pgm
from .model import load_model
from .train import TrainConfig, train

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def parse_config_file(path) -> TrainConfig:
    """key = value lines; '#' starts a comment; types follow TrainConfig."""
    values: dict[str, object] = {}
    fields = {f.name: f.type for f in TrainConfig.__dataclass_fields__.values()}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in fields:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            kind = fields[key]
            if kind in ("bool", bool):
                if val.lower() not in _BOOL:
                    raise UsageError(f"{path}:{lineno}: bad boolean {val!r}")
                values[key] = _BOOL[val.lower()]
            elif kind in ("int", int):
                values[key] = int(val)
            elif kind in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
    return TrainConfig(**values)


def _load_images(directory: str) -> list[tuple[str, np.ndarray]]:
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith((".pgm", ".png")))
    if not names:
        raise UsageError(f"no images found in {directory}")
    return [(n, read_image_luma(os.path.join(directory, n))) for n in names]


def _cmd_train(args) -> int:
    config = parse_config_file(args.config)
    base, _ = os.path.splitext(args.out)
    train(config, out_path=args.out, log_path=base + "_log.csv",
          delta_log_path=base + "_delta.csv")
    print(f"wrote {args.out}")
    return 0


def _cmd_encode(args) -> int:
    model = load_model(args.model)
    image = read_image_luma(args.input)
    blob = encode_image(image, model, args.beta)
    with open(args.output, "wb") as f:
        f.write(blob)
    bpp = len(blob) * 8.0 / image.size
    print(f"wrote {args.output} ({len(blob)} bytes, {bpp:.4f} bpp)")
    return 0


def _cmd_decode(args) -> int:
    model = load_model(args.model)
    with open(args.input, "rb") as f:
        blob = f.read()
    rec = decode_image(blob, model)
    write_pgm(args.output, rec)
    print(f"wrote {args.output} ({rec.shape[1]}x{rec.shape[0]})")
    return 0


def _cmd_sweep(args) -> int:
    model = load_model(args.model)
    images = _load_images(args.images)
    betas = [float(b) for b in args.betas.split(",")]
    points = rd_sweep(model, images, betas)
    write_rd_csv(args.out, points)
    print(f"wrote {args.out} ({len(points)} rows)")
    return 0


def _cmd_report(args) -> int:
    model = load_model(args.model)
    images = _load_images(args.images)
    reports, hist_rows, scales = latent_report(model, images)
    write_latent_csv(args.out, reports)
    base, _ = os.path.splitext(args.out)
    write_hist_csv(base + "_hist.csv", hist_rows)
    write_scales_csv(base + "_scales.csv", scales)
    n_deg = sum(r.degenerate for r in reports)
    n_out = sum(r.outlier for r in reports)
    print(f"wrote {args.out} ({len(reports)} maps, {n_deg} degenerate, {n_out} outliers)")
    return 0


def _cmd_probe(args) -> int:
    model = load_model(args.model)
    r, c = (int(v) for v in args.pos.split(","))
    lh, lw = (int(v) for v in args.size.split("x"))
    result = probe(model, args.map, (r, c), args.alpha, latent_hw=(lh, lw))
    write_pgm(args.out, result.image)
    base, ext = os.path.splitext(args.out)
    baseline_path = base + "_baseline" + (ext or ".pgm")
    write_pgm(baseline_path, result.baseline)
    print(f"wrote {args.out} and {baseline_path} "
          f"locality={result.locality:.4f} diff_energy={result.diff_energy:.4f}")
    return 0


def _cmd_compare(args) -> int:
    curves: dict[str, list[tuple[float, float]]] = {}
    pooled: list[tuple[float, float]] = []
    for path in args.tables:
        points = read_rd_csv(path)
        curve = curve_from_points(points)
        label = os.path.splitext(os.path.basename(path))[0]
        if len(curve) == 1:
            pooled.append(curve[0])  # single-rate tables merge into one curve
        else:
            curves[label] = curve
    if pooled:
        curves["pooled_points"] = sorted(pooled)
    rows = compare_curves(curves)
    write_gaps_csv(args.out, rows)
    for row in rows:
        print(f"{row['curve_a']} vs {row['curve_b']}: "
              f"mean {row['mean_gap_db']:.3f} dB, max {row['max_gap_db']:.3f} dB "
              f"over [{row['rate_lo']:.4f}, {row['rate_hi']:.4f}] bpp")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltcodec",
                                 description="learned-transform image codec")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output model file (.ltm)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="compress a luminance image to .ltc")
    p.add_argument("--model", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decompress a .ltc file to PGM")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("sweep", help="rate-distortion sweep over beta")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--betas", default="1.0,1.25,1.5,2.0,3.0,4.0,6.0,8.0,10.0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="per-map latent distribution report")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("probe", help="decode a single-coefficient latent probe")
    p.add_argument("--model", required=True)
    p.add_argument("--map", type=int, required=True)
    p.add_argument("--pos", required=True, help="row,col in the latent grid")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--size", default="8x8", help="latent grid extent (HxW)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("compare", help="PSNR gaps between rate-distortion tables")
    p.add_argument("--out", required=True)
    p.add_argument("tables", nargs="+", help="rd CSVs; single-point tables pool "
                                             "into one curve")
    p.set_defaults(func=_cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CodecError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
