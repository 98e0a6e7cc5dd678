"""End-to-end orchestration pieces: chunk plans, tile plans, packaging.

Long clips are refined in overlapping windows: the last ``m`` generated
frames of one window are substituted into the next window's warped input
(with their mask zeroed) so the refiner conditions on already-generated
content.  High resolutions are refined in overlapping tiles whose
outputs are blended in latent space under a partition-of-unity weight
field before a single decode per frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PipelineError, ValidationError, VideoClip, write_clip
from .refine import CODECS, REFINERS, LatentCodec, Refiner
from .warp import NORMALIZATION_MODES, SPLAT_MODES

DEFAULT_CHUNK_LENGTH = 16
DEFAULT_CHUNK_OVERLAP = 7

OUTPUT_FORMATS = ("frames", "sbs", "anaglyph")


@dataclass(frozen=True)
class PipelineConfig:
    """Validated end-to-end conversion settings.

    Refiner and codec are referenced by registry name so external
    implementations can plug in; construction fails if a name does not
    resolve or a numeric parameter is out of range.
    """

    max_disparity: float
    splat_mode: str = "nearest"
    closing_kernel: int = 11
    normalization: str = "global"
    refiner: str = "farplane"
    codec: str = "identity"
    chunk_length: int = DEFAULT_CHUNK_LENGTH
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP
    tile: tuple[int, int] | None = None
    tile_overlap: tuple[int, int] = (0, 0)
    output_format: str = "frames"
    fps: float = 24.0
    seed: int = 0

    def __post_init__(self):
        if self.refiner not in REFINERS:
            raise ValidationError(
                f"unknown refiner {self.refiner!r}; registered: {sorted(REFINERS)}"
            )
        if self.codec not in CODECS:
            raise ValidationError(
                f"unknown codec {self.codec!r}; registered: {sorted(CODECS)}"
            )
        if self.output_format not in OUTPUT_FORMATS:
            raise ValidationError(
                f"output format must be one of {OUTPUT_FORMATS}, got {self.output_format!r}"
            )
        if self.splat_mode not in SPLAT_MODES:
            raise ValidationError(f"splat_mode must be one of {SPLAT_MODES}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ValidationError(f"normalization must be one of {NORMALIZATION_MODES}")
        if not 0 <= self.chunk_overlap < self.chunk_length:
            raise ValidationError(
                f"need 0 <= chunk_overlap < chunk_length, got "
                f"{self.chunk_overlap} and {self.chunk_length}"
            )


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChunkWindow:
    start: int
    end: int
    carryover: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ChunkPlan:
    """Windows covering a clip; each frame is newly generated exactly once."""

    total_frames: int
    chunk_length: int
    overlap: int
    windows: tuple[ChunkWindow, ...]


def plan_chunks(
    total_frames: int,
    chunk_length: int = DEFAULT_CHUNK_LENGTH,
    overlap: int = DEFAULT_CHUNK_OVERLAP,
) -> ChunkPlan:
    """Cover ``total_frames`` with windows advancing by chunk_length - overlap.

    The first window starts at 0 with no carryover; every later window
    re-enters with exactly ``overlap`` already-generated frames, and the
    last window shrinks so it ends exactly at the final frame.  A clip
    shorter than one chunk gets a single window.
    """
    if total_frames < 1:
        raise ValidationError(f"total_frames must be >= 1, got {total_frames}")
    if chunk_length < 1:
        raise ValidationError(f"chunk_length must be >= 1, got {chunk_length}")
    if not 0 <= overlap < chunk_length:
        raise ValidationError(
            f"need 0 <= overlap < chunk_length, got overlap={overlap}, "
            f"chunk_length={chunk_length}"
        )
    if total_frames <= chunk_length:
        return ChunkPlan(
            total_frames=total_frames,
            chunk_length=chunk_length,
            overlap=overlap,
            windows=(ChunkWindow(0, total_frames, 0),),
        )
    windows = [ChunkWindow(0, chunk_length, 0)]
    covered = chunk_length
    while covered < total_frames:
        start = covered - overlap
        end = min(start + chunk_length, total_frames)
        windows.append(ChunkWindow(start, end, overlap))
        covered = end
    return ChunkPlan(
        total_frames=total_frames,
        chunk_length=chunk_length,
        overlap=overlap,
        windows=tuple(windows),
    )


def run_chunked(
    left: VideoClip,
    warped: VideoClip,
    mask: np.ndarray,
    plan: ChunkPlan,
    refiner: Refiner,
    cfg: dict | None = None,
) -> VideoClip:
    """Refine a clip window by window with carryover substitution.

    For each window after the first, the first ``carryover`` frames of
    the warped input are replaced by the frames generated in the previous
    window and their mask is zeroed; only the window's new frames are
    appended to the output.
    """
    n = left.n_frames
    if warped.n_frames != n or mask.shape[0] != n:
        raise ValidationError("left, warped, and mask frame counts differ")
    if plan.total_frames != n:
        raise ValidationError(
            f"plan covers {plan.total_frames} frames, clip has {n}"
        )
    generated: list[np.ndarray] = []
    for win in plan.windows:
        window_left = VideoClip(frames=left.frames[win.start:win.end], fps=left.fps)
        window_warp = warped.frames[win.start:win.end].copy()
        window_mask = mask[win.start:win.end].copy()
        if win.carryover:
            prev = np.stack(generated[win.start:win.start + win.carryover])
            window_warp[:win.carryover] = prev
            window_mask[:win.carryover] = 0
        try:
            refined = refiner(
                window_left,
                VideoClip(frames=window_warp, fps=warped.fps),
                window_mask,
                cfg or {},
            )
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(
                f"refiner failed on window [{win.start}, {win.end}): {exc}"
            ) from exc
        if refined.frames.shape != window_warp.shape:
            raise ValidationError(
                f"refiner returned shape {refined.frames.shape} for window "
                f"of shape {window_warp.shape}"
            )
        generated.extend(refined.frames[win.carryover:])
    return VideoClip(frames=np.stack(generated), fps=warped.fps)


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TilePlan:
    """Tile rectangles plus per-tile blend weights summing to 1 per pixel."""

    height: int
    width: int
    tile_h: int
    tile_w: int
    overlap_h: int
    overlap_w: int
    rects: tuple[tuple[int, int, int, int], ...]  # (y0, x0, h, w)
    weights: tuple[np.ndarray, ...]


def _tile_origins(size: int, tile: int, overlap: int) -> list[int]:
    step = tile - overlap
    origins = list(range(0, size - tile + 1, step))
    if origins[-1] + tile < size:
        origins.append(size - tile)
    return origins


def _axis_ramp(tile: int, prev_overlap: int, next_overlap: int) -> np.ndarray:
    ramp = np.ones(tile, dtype=np.float64)
    for i in range(prev_overlap):
        ramp[i] *= (i + 1) / (prev_overlap + 1)
    for i in range(next_overlap):
        ramp[tile - next_overlap + i] *= 1.0 - (i + 1) / (next_overlap + 1)
    return ramp


def plan_tiles(
    height: int,
    width: int,
    tile_h: int,
    tile_w: int,
    overlap_h: int = 0,
    overlap_w: int = 0,
) -> TilePlan:
    """Cover a frame with overlapping tiles and partition-of-unity weights.

    Tiles advance by (tile - overlap); the last row/column is clamped to
    the frame edge, which can enlarge its effective overlap.  Weights are
    separable linear ramps of length (actual overlap) built as
    (i+1)/(overlap+1), normalized per pixel so covering weights sum to 1.
    """
    if tile_h > height or tile_w > width:
        raise ValidationError(
            f"tile ({tile_h}, {tile_w}) larger than frame ({height}, {width})"
        )
    if not (0 <= overlap_h < tile_h and 0 <= overlap_w < tile_w):
        raise ValidationError(
            f"need 0 <= overlap < tile, got overlaps ({overlap_h}, {overlap_w}) "
            f"for tiles ({tile_h}, {tile_w})"
        )
    ys = _tile_origins(height, tile_h, overlap_h)
    xs = _tile_origins(width, tile_w, overlap_w)

    def overlaps(origins, tile):
        prev = [0] + [
            max(0, origins[i - 1] + tile - origins[i]) for i in range(1, len(origins))
        ]
        nxt = [
            max(0, origins[i] + tile - origins[i + 1]) for i in range(len(origins) - 1)
        ] + [0]
        return prev, nxt

    prev_y, next_y = overlaps(ys, tile_h)
    prev_x, next_x = overlaps(xs, tile_w)

    rects = []
    raw_weights = []
    for iy, y0 in enumerate(ys):
        wy = _axis_ramp(tile_h, prev_y[iy], next_y[iy])
        for ix, x0 in enumerate(xs):
            wx = _axis_ramp(tile_w, prev_x[ix], next_x[ix])
            rects.append((y0, x0, tile_h, tile_w))
            raw_weights.append(np.outer(wy, wx))

    total = np.zeros((height, width), dtype=np.float64)
    for (y0, x0, th, tw), w in zip(rects, raw_weights):
        total[y0:y0 + th, x0:x0 + tw] += w
    weights = tuple(
        w / total[y0:y0 + th, x0:x0 + tw]
        for (y0, x0, th, tw), w in zip(rects, raw_weights)
    )
    return TilePlan(
        height=height, width=width,
        tile_h=tile_h, tile_w=tile_w,
        overlap_h=overlap_h, overlap_w=overlap_w,
        rects=tuple(rects), weights=weights,
    )


def run_tiled(
    left: VideoClip,
    warped: VideoClip,
    mask: np.ndarray,
    plan: TilePlan,
    refiner: Refiner,
    codec: LatentCodec,
    cfg: dict | None = None,
) -> VideoClip:
    """Refine tiles independently and blend their encodings seamlessly.

    Each refined tile is encoded, accumulated into a latent canvas as an
    incremental weighted mean (so pixels where all tiles agree come out
    bit-exactly), and the canvas is decoded once per frame.  With the
    identity codec this equals pixel-space blending.
    """
    if (plan.height, plan.width) != (left.height, left.width):
        raise ValidationError(
            f"plan is for ({plan.height}, {plan.width}), clip is "
            f"({left.height}, {left.width})"
        )
    f = codec.factor
    if f > 1:
        for y0, x0, th, tw in plan.rects:
            if y0 % f or x0 % f or th % f or tw % f:
                raise ValidationError(
                    f"tile ({y0}, {x0}, {th}, {tw}) not aligned to codec factor {f}"
                )

    n = left.n_frames
    canvas = np.zeros((n, plan.height // f, plan.width // f, 4), dtype=np.float64)
    weight_sum = np.zeros((plan.height // f, plan.width // f), dtype=np.float64)

    for (y0, x0, th, tw), weight in zip(plan.rects, plan.weights):
        tile_left = VideoClip(frames=left.frames[:, y0:y0 + th, x0:x0 + tw], fps=left.fps)
        tile_warp = VideoClip(frames=warped.frames[:, y0:y0 + th, x0:x0 + tw], fps=warped.fps)
        tile_mask = mask[:, y0:y0 + th, x0:x0 + tw]
        try:
            refined = refiner(tile_left, tile_warp, tile_mask, cfg or {})
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(
                f"refiner failed on tile ({y0}, {x0}, {th}, {tw}): {exc}"
            ) from exc
        if refined.frames.shape != tile_warp.frames.shape:
            raise ValidationError(
                f"refiner returned shape {refined.frames.shape} for tile "
                f"of shape {tile_warp.frames.shape}"
            )
        latent = codec.encode(refined)
        if f > 1:
            w_lat = weight.reshape(th // f, f, tw // f, f).mean(axis=(1, 3))
        else:
            w_lat = weight
        sy, sx = y0 // f, x0 // f
        region = (slice(sy, sy + th // f), slice(sx, sx + tw // f))
        new_sum = weight_sum[region] + w_lat
        coeff = (w_lat / new_sum)[None, :, :, None]
        canvas[:, region[0], region[1], :] += coeff * (latent - canvas[:, region[0], region[1], :])
        weight_sum[region] = new_sum

    return codec.decode(canvas, fps=warped.fps)


def make_tiled_refiner(plan: TilePlan, refiner: Refiner, codec: LatentCodec) -> Refiner:
    """Wrap a refiner so each call runs tiled over the given plan."""

    def tiled(left, warped, mask, cfg=None):
        return run_tiled(left, warped, mask, plan, refiner, codec, cfg)

    return tiled


# ---------------------------------------------------------------------------
# Stereo packaging
# ---------------------------------------------------------------------------

def pack_stereo(
    left: VideoClip,
    right: VideoClip,
    output_format: str,
    out_dir: str | Path,
) -> list[Path]:
    """Write the stereo result in one of three deliverable layouts.

    ``frames``: the right view as a PNG directory.  ``sbs``: width-2W
    frames with left|right side by side.  ``anaglyph``: red channel from
    the left view, green and blue from the right.
    """
    if left.frames.shape != right.frames.shape:
        raise ValidationError(
            f"left {left.frames.shape} and right {right.frames.shape} differ"
        )
    if output_format == "frames":
        out = right
    elif output_format == "sbs":
        out = VideoClip(
            frames=np.concatenate([left.frames, right.frames], axis=2), fps=left.fps
        )
    elif output_format == "anaglyph":
        frames = right.frames.copy()
        frames[..., 0] = left.frames[..., 0]
        out = VideoClip(frames=frames, fps=left.fps)
    else:
        raise ValidationError(
            f"output format must be one of {OUTPUT_FORMATS}, got {output_format!r}"
        )
    return write_clip(out, out_dir)
