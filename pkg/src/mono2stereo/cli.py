"""Command-line interface.

Subcommands:

* ``convert``    - full monocular-to-stereo conversion of a frame directory
* ``rectify``    - fundamental matrix + rectification from a match CSV
* ``metrics``    - PSNR / MS-SSIM between two clips, optionally per region
* ``attn-check`` - attention cost and gradient verification sweep as CSV

A JSON config file can pre-set any ``convert`` flag (keys are the flag
names with dashes replaced by underscores); explicit flags override the
file.  Exit codes: 0 success, 1 internal error, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import attention, metrics, rectify
from .core import (
    InputError,
    PipelineError,
    read_clip,
    read_depth_dir,
    read_mask_clip,
    write_mask_clip,
)
from .pipeline import (
    OUTPUT_FORMATS,
    PipelineConfig,
    make_tiled_refiner,
    pack_stereo,
    plan_chunks,
    plan_tiles,
    run_chunked,
)
from .refine import CODECS, REFINERS, get_codec, get_refiner
from .warp import SPLAT_MODES, WarpConfig, warp_clip

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


def _parse_pair(value, flag: str) -> tuple[int, int]:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return int(value[0]), int(value[1])
    try:
        h, w = str(value).lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise InputError(f"{flag} expects HxW (e.g. 64x64), got {value!r}") from None


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------

def _add_convert_parser(sub) -> None:
    p = sub.add_parser("convert", help="convert a monocular clip to stereo")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file pre-setting any flag (flags override it)")
    p.add_argument("--left", type=Path, help="directory of left-view PNG frames")
    p.add_argument("--depth", type=Path, help="directory of per-frame PFM depth maps")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--max-disparity", type=float, default=None)
    p.add_argument("--splat-mode", choices=SPLAT_MODES, default=None)
    p.add_argument("--closing-kernel", type=int, default=None)
    p.add_argument("--refiner", default=None, help=f"one of {sorted(REFINERS)}")
    p.add_argument("--codec", default=None, help=f"one of {sorted(CODECS)}")
    p.add_argument("--chunk-len", type=int, default=None)
    p.add_argument("--chunk-overlap", type=int, default=None)
    p.add_argument("--tile", default=None, help="tile size as HxW")
    p.add_argument("--tile-overlap", default=None, help="tile overlap as HxW")
    p.add_argument("--format", dest="output_format", choices=OUTPUT_FORMATS, default=None)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--manifest", type=Path, default=None,
                   help="where to write the JSON run manifest")
    p.add_argument("--save-masks", action="store_true",
                   help="also write the disocclusion masks as PGM files")


_CONVERT_DEFAULTS = {
    "max_disparity": 8.0,
    "splat_mode": "nearest",
    "closing_kernel": 11,
    "refiner": "farplane",
    "codec": "identity",
    "chunk_len": 16,
    "chunk_overlap": 7,
    "tile": None,
    "tile_overlap": "0x0",
    "output_format": "frames",
    "fps": 24.0,
    "seed": 0,
    # forwarded to the selected refiner; the baseline ignores them but
    # single-pass diffusion backends read their schedule from here
    "diffusion.T": 1000,
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
}


def _merge_config(args: argparse.Namespace) -> dict:
    """Layer defaults < config file < explicit flags."""
    merged = dict(_CONVERT_DEFAULTS)
    merged.update({"left": None, "depth": None, "out": None, "manifest": None})
    if args.config is not None:
        if not args.config.exists():
            raise InputError(f"config file not found: {args.config}")
        try:
            loaded = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if "format" in loaded:  # config keys mirror the flag names
            loaded["output_format"] = loaded.pop("format")
        unknown = set(loaded) - set(merged)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key in ("left", "depth", "out"):
        if merged[key] is None:
            raise InputError(f"--{key} is required (flag or config file)")
        merged[key] = Path(merged[key])
    if merged["manifest"] is not None:
        merged["manifest"] = Path(merged["manifest"])
    return merged


def _cmd_convert(args: argparse.Namespace) -> int:
    opts = _merge_config(args)
    tile = _parse_pair(opts["tile"], "--tile") if opts["tile"] else None
    tile_overlap = _parse_pair(opts["tile_overlap"], "--tile-overlap")
    config = PipelineConfig(
        max_disparity=float(opts["max_disparity"]),
        splat_mode=opts["splat_mode"],
        closing_kernel=int(opts["closing_kernel"]),
        refiner=opts["refiner"],
        codec=opts["codec"],
        chunk_length=int(opts["chunk_len"]),
        chunk_overlap=int(opts["chunk_overlap"]),
        tile=tile,
        tile_overlap=tile_overlap,
        output_format=opts["output_format"],
        fps=float(opts["fps"]),
        seed=int(opts["seed"]),
    )

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    left = read_clip(opts["left"], fps=config.fps)
    depths = read_depth_dir(opts["depth"], left.n_frames)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    warp_cfg = WarpConfig(
        max_disparity=config.max_disparity,
        splat_mode=config.splat_mode,
        closing_kernel=config.closing_kernel,
        normalization=config.normalization,
    )
    warp_result = warp_clip(left, depths, warp_cfg)
    timings["warp"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    refiner = get_refiner(config.refiner)
    codec = get_codec(config.codec)
    if config.tile is not None:
        tile_plan = plan_tiles(
            left.height, left.width,
            config.tile[0], config.tile[1],
            config.tile_overlap[0], config.tile_overlap[1],
        )
        refiner = make_tiled_refiner(tile_plan, refiner, codec)
    chunk_plan = plan_chunks(left.n_frames, config.chunk_length, config.chunk_overlap)
    refiner_cfg = {
        "seed": config.seed,
        "diffusion.T": int(opts["diffusion.T"]),
        "diffusion.beta_start": float(opts["diffusion.beta_start"]),
        "diffusion.beta_end": float(opts["diffusion.beta_end"]),
    }
    right = run_chunked(
        left, warp_result.warped, warp_result.mask, chunk_plan, refiner,
        cfg=refiner_cfg,
    )
    timings["refine"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out_dir = opts["out"]
    written = pack_stereo(left, right, config.output_format, out_dir)
    if args.save_masks:
        write_mask_clip(warp_result.mask, out_dir / "masks")
    timings["write"] = time.perf_counter() - t0

    manifest = {
        "config": {
            "left": str(opts["left"]),
            "depth": str(opts["depth"]),
            "out": str(out_dir),
            "max_disparity": config.max_disparity,
            "splat_mode": config.splat_mode,
            "closing_kernel": config.closing_kernel,
            "refiner": config.refiner,
            "codec": config.codec,
            "chunk_len": config.chunk_length,
            "chunk_overlap": config.chunk_overlap,
            "tile": list(config.tile) if config.tile else None,
            "tile_overlap": list(config.tile_overlap),
            "format": config.output_format,
            "fps": config.fps,
            "seed": config.seed,
            "diffusion.T": refiner_cfg["diffusion.T"],
            "diffusion.beta_start": refiner_cfg["diffusion.beta_start"],
            "diffusion.beta_end": refiner_cfg["diffusion.beta_end"],
        },
        "frames": left.n_frames,
        "resolution": [left.height, left.width],
        "mask": {
            "masked_fraction": float(warp_result.mask.mean()),
            "masked_pixels": int(warp_result.mask.sum()),
        },
        "chunks": len(chunk_plan.windows),
        "outputs": [str(p) for p in written],
        "timings_s": {k: round(v, 6) for k, v in timings.items()},
    }
    manifest_path = opts["manifest"] or out_dir / "manifest.json"
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(written)} frames to {out_dir} (manifest: {manifest_path})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rectify
# ---------------------------------------------------------------------------

def _add_rectify_parser(sub) -> None:
    p = sub.add_parser("rectify", help="estimate rectification from a match CSV")
    p.add_argument("--matches", type=Path, required=True,
                   help="CSV with header xl,yl,xr,yr")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--threshold", type=float, default=rectify.DEFAULT_SAMPSON_THRESHOLD)
    p.add_argument("--max-iters", type=int, default=rectify.DEFAULT_MAX_ITERS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertical-limit", type=float,
                   default=rectify.VERTICAL_DISPARITY_LIMIT)
    p.add_argument("--out", type=Path, required=True, help="output JSON path")


def _cmd_rectify(args: argparse.Namespace) -> int:
    matches = rectify.load_matches_csv(args.matches, args.width, args.height)
    fundamental, inliers = rectify.estimate_fundamental_ransac(
        matches, threshold=args.threshold, max_iters=args.max_iters, seed=args.seed
    )
    inlier_set = matches.subset(inliers)
    h_left, h_right = rectify.compute_rectifying_homographies(fundamental, inlier_set)
    result = rectify.normalize_shift_and_crop(h_left, h_right, inlier_set)
    accepted = rectify.vertical_disparity_filter(result, limit=args.vertical_limit)

    payload = json.loads(result.to_json())
    payload["accepted"] = bool(accepted)
    payload["vertical_limit"] = args.vertical_limit
    payload["fundamental"] = fundamental.matrix.tolist()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(payload, indent=2) + "\n")
    status = "accepted" if accepted else "rejected"
    print(
        f"{status}: {result.inlier_count}/{len(matches)} inliers, "
        f"max vertical disparity {result.vertical_disparity_max:.3f} px"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _add_metrics_parser(sub) -> None:
    p = sub.add_parser("metrics", help="PSNR / MS-SSIM between two clips")
    p.add_argument("--ref", type=Path, required=True, help="reference frame directory")
    p.add_argument("--pred", type=Path, required=True, help="predicted frame directory")
    p.add_argument("--mask", type=Path, default=None,
                   help="PGM mask directory (required for inside/outside regions)")
    p.add_argument("--region", action="append", choices=("full", "inside", "outside"),
                   default=None, help="repeatable; defaults to full")
    p.add_argument("--fps", type=float, default=24.0)
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")


def _metric_pair(ref, pred, mask, region):
    if region == "full":
        return metrics.psnr(ref, pred), metrics.ms_ssim(ref, pred).score
    psnr_db = metrics.masked_metric(ref, pred, mask, region, metrics.psnr)
    ms = metrics.masked_metric(
        ref, pred, mask, region, lambda a, b: metrics.ms_ssim(a, b).score
    )
    return psnr_db, ms


def _cmd_metrics(args: argparse.Namespace) -> int:
    regions = args.region or ["full"]
    if any(r != "full" for r in regions) and args.mask is None:
        raise InputError("--mask is required for inside/outside regions")
    ref = read_clip(args.ref, fps=args.fps)
    pred = read_clip(args.pred, fps=args.fps)
    mask = read_mask_clip(args.mask) if args.mask else None

    rows = []
    video_id = args.pred.name
    for region in regions:
        psnr_db, ms = _metric_pair(ref, pred, mask, region)
        rows.append(
            {
                "video_id": video_id,
                "region": region,
                "psnr_db": f"{min(psnr_db, metrics.PSNR_CAP_DB):.6f}",
                "ms_ssim": f"{ms:.6f}",
            }
        )

    out = args.out.open("w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=["video_id", "region", "psnr_db", "ms_ssim"])
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# attn-check
# ---------------------------------------------------------------------------

def _add_attn_parser(sub) -> None:
    p = sub.add_parser("attn-check",
                       help="verify attention costs and gradients over a sweep")
    p.add_argument("--max-dim", type=int, default=3,
                   help="sweep N, h, w over 1..max-dim")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masked-fraction", type=float, default=0.25,
                   help="target fraction of masked tokens for masked_full rows")
    p.add_argument("--skip-grads", action="store_true",
                   help="only check costs (much faster)")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")


def _cmd_attn_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    fields = [
        "pattern", "N", "h", "w", "masked_fraction",
        "predicted_cost", "measured_cost", "max_grad_rel_err",
    ]
    rows = []
    dims = range(1, args.max_dim + 1)
    for n in dims:
        for h in dims:
            for w in dims:
                x = rng.standard_normal((n, h, w, args.channels))
                params = attention.AttentionParams.random(args.channels, rng)
                upstream = rng.standard_normal(x.shape)
                mask = (rng.random((n, h, w)) < args.masked_fraction).astype(np.uint8)
                for pattern in attention.PATTERNS:
                    pattern_mask = mask if pattern == "masked_full" else None
                    _, report = attention.attend(x, params, pattern, pattern_mask)
                    n_masked = int(mask.sum()) if pattern == "masked_full" else 0
                    predicted = attention.predicted_cost(pattern, n, h, w, n_masked)
                    if args.skip_grads:
                        err = ""
                    else:
                        err = f"{attention.max_gradient_relative_error(x, params, pattern, upstream, pattern_mask):.3e}"
                    rows.append(
                        {
                            "pattern": pattern,
                            "N": n, "h": h, "w": w,
                            "masked_fraction": f"{n_masked / (n * h * w):.4f}",
                            "predicted_cost": predicted,
                            "measured_cost": report.qk_dot_products,
                            "max_grad_rel_err": err,
                        }
                    )

    out = args.out.open("w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    mismatches = [r for r in rows if r["predicted_cost"] != r["measured_cost"]]
    if mismatches:
        raise PipelineError(f"{len(mismatches)} cost mismatches in the sweep")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mono2stereo",
        description="Monocular-to-stereo video conversion toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_convert_parser(sub)
    _add_rectify_parser(sub)
    _add_metrics_parser(sub)
    _add_attn_parser(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "convert": _cmd_convert,
        "rectify": _cmd_rectify,
        "metrics": _cmd_metrics,
        "attn-check": _cmd_attn_check,
    }
    try:
        return handlers[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
