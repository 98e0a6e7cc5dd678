"""Depth-driven left-to-right view warping.

Depth maps are converted to horizontal disparities under a user-chosen
maximum, every source pixel is forward-splatted to a virtual right camera
(content shifts left, ``x' = x - d``), and the uncovered target pixels
become the disocclusion mask.  A morphological closing then fills pinholes
in the mask before it is handed to a refiner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError, VideoClip, validate_depth

SPLAT_MODES = ("nearest", "bilinear")
NORMALIZATION_MODES = ("global", "per_frame")

HOLE_SENTINEL = 0.0  # fill value for uncovered target pixels


@dataclass(frozen=True)
class WarpConfig:
    """Parameters of the warping stage.

    ``max_disparity`` is the upper bound (in pixels) that the nearest scene
    content is pushed by; ``closing_kernel`` is the side of the square
    structuring element used to close the disocclusion mask.
    ``normalization`` selects whether inverse depth is normalized over the
    whole clip (default, temporally stable) or per frame.
    """

    max_disparity: float
    splat_mode: str = "nearest"
    closing_kernel: int = 11
    normalization: str = "global"

    def __post_init__(self):
        if self.max_disparity < 0:
            raise ValidationError(f"max_disparity must be >= 0, got {self.max_disparity}")
        if self.splat_mode not in SPLAT_MODES:
            raise ValidationError(f"splat_mode must be one of {SPLAT_MODES}")
        if self.closing_kernel < 1 or self.closing_kernel % 2 == 0:
            raise ValidationError(
                f"closing_kernel must be odd and >= 1, got {self.closing_kernel}"
            )
        if self.normalization not in NORMALIZATION_MODES:
            raise ValidationError(f"normalization must be one of {NORMALIZATION_MODES}")


@dataclass(frozen=True)
class WarpResult:
    """Warped right view, its disocclusion mask, and the disparities used.

    ``mask`` is the closed mask actually handed downstream; ``warped``
    holds the sentinel value 0 wherever ``mask`` is 1.  ``disparity`` is
    the source-view disparity field, one (H, W) plane per frame.
    """

    warped: VideoClip
    mask: np.ndarray
    disparity: np.ndarray


def depth_to_disparity(
    depth: np.ndarray,
    max_disparity: float,
    inverse_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Convert one depth map to disparities in [0, max_disparity].

    Inverse depth is normalized linearly so its minimum maps to 0 and its
    maximum to ``max_disparity``.  ``inverse_range`` overrides the (min,
    max) of inverse depth, which is how clip-global normalization is
    threaded through; when the range collapses (constant depth) the whole
    map gets ``max_disparity``.
    """
    depth = validate_depth(depth)
    if max_disparity < 0:
        raise ValidationError(f"max_disparity must be >= 0, got {max_disparity}")
    inv = 1.0 / depth
    if inverse_range is None:
        lo, hi = float(inv.min()), float(inv.max())
    else:
        lo, hi = inverse_range
    if hi <= lo:
        return np.full_like(inv, float(max_disparity))
    disparity = max_disparity * (inv - lo) / (hi - lo)
    return np.clip(disparity, 0.0, max_disparity)


def forward_splat(
    frame: np.ndarray,
    disparity: np.ndarray,
    cfg: WarpConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Splat a left frame to the right view under per-pixel disparities.

    Each source pixel (x, y) lands at x' = x - d(x, y).  Conflicts resolve
    by a hard z-buffer: the largest disparity (nearest content) wins, ties
    go to the smaller source x.  In "bilinear" mode a source distributes
    its weight to the two nearest integer columns and any nonzero-weight
    contribution counts as coverage; the winning contribution still
    supplies the color unblended.  Targets left uncovered get mask=1 and
    the sentinel value 0.

    Returns (warped_frame, mask) where mask is (H, W) uint8.
    """
    frame = np.asarray(frame, dtype=np.float64)
    disparity = np.asarray(disparity, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"frame must be (H, W, 3), got {frame.shape}")
    if disparity.shape != frame.shape[:2]:
        raise ValidationError(
            f"disparity shape {disparity.shape} != frame shape {frame.shape[:2]}"
        )
    h, w = disparity.shape
    ys, xs = np.mgrid[0:h, 0:w]
    ys = ys.ravel()
    xs = xs.ravel()
    d = disparity.ravel()
    t = xs - d

    if cfg.splat_mode == "nearest":
        tgt_x = np.floor(t + 0.5)
        src_y, src_x, disp = ys, xs, d
    else:
        x0 = np.floor(t)
        frac = t - x0
        # two candidate columns per source; zero-weight ones are dropped so
        # an integer shift never marks phantom coverage
        tgt_x = np.concatenate([x0, x0 + 1.0])
        weight = np.concatenate([1.0 - frac, frac])
        src_y = np.concatenate([ys, ys])
        src_x = np.concatenate([xs, xs])
        disp = np.concatenate([d, d])
        live = weight > 0.0
        tgt_x, src_y, src_x, disp = tgt_x[live], src_y[live], src_x[live], disp[live]

    inside = (tgt_x >= 0) & (tgt_x <= w - 1)
    tgt_x = tgt_x[inside].astype(np.intp)
    src_y = src_y[inside]
    src_x = src_x[inside]
    disp = disp[inside]

    target = src_y * w + tgt_x
    # z-buffer: sort so the last writer per target has max disparity, then
    # min source x among equals; np.maximum.at picks that writer robustly
    order = np.lexsort((-src_x, disp))
    priority = np.empty(order.shape[0], dtype=np.int64)
    priority[order] = np.arange(order.shape[0])
    best = np.full(h * w, -1, dtype=np.int64)
    np.maximum.at(best, target, priority)
    winner = priority == best[target]

    warped = np.full((h * w, 3), HOLE_SENTINEL, dtype=np.float64)
    src_flat = (src_y * w + src_x).astype(np.intp)
    warped[target[winner]] = frame.reshape(-1, 3)[src_flat[winner]]
    mask = (best < 0).astype(np.uint8)
    return warped.reshape(h, w, 3), mask.reshape(h, w)


def close_mask(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Morphological closing (dilate then erode) with a square element.

    Outside the image counts as 0 for the dilation and as 1 for the
    erosion; with that pairing the closing is extensive and idempotent on
    the bounded image domain.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValidationError(f"kernel must be odd and >= 1, got {kernel}")
    mask = np.asarray(mask).astype(bool)
    if kernel == 1:
        return mask.astype(np.uint8)
    h, w = mask.shape
    pad = kernel // 2

    padded = np.pad(mask, pad, constant_values=False)
    dilated = np.zeros_like(mask)
    for dy in range(kernel):
        for dx in range(kernel):
            dilated |= padded[dy:dy + h, dx:dx + w]

    padded = np.pad(dilated, pad, constant_values=True)
    closed = np.ones_like(mask)
    for dy in range(kernel):
        for dx in range(kernel):
            closed &= padded[dy:dy + h, dx:dx + w]
    return closed.astype(np.uint8)


def warp_clip(
    left: VideoClip,
    depths: list[np.ndarray] | np.ndarray,
    cfg: WarpConfig,
) -> WarpResult:
    """Warp every frame of a clip: disparity, splat, mask closing.

    ``depths`` provides one (H, W) depth map per frame.  With the default
    clip-global normalization the inverse-depth range is taken over the
    whole clip so max_disparity stays an exact clip-wide bound.
    """
    depths = [validate_depth(np.asarray(d)) for d in depths]
    if len(depths) != left.n_frames:
        raise ValidationError(
            f"{len(depths)} depth maps for {left.n_frames} frames"
        )
    for i, d in enumerate(depths):
        if d.shape != (left.height, left.width):
            raise ValidationError(
                f"depth map {i} has shape {d.shape}, frames are "
                f"({left.height}, {left.width})"
            )

    inverse_range = None
    if cfg.normalization == "global":
        inv_min = min(float((1.0 / d).min()) for d in depths)
        inv_max = max(float((1.0 / d).max()) for d in depths)
        inverse_range = (inv_min, inv_max)

    warped_frames = np.empty_like(left.frames)
    masks = np.empty((left.n_frames, left.height, left.width), dtype=np.uint8)
    disparities = np.empty((left.n_frames, left.height, left.width), dtype=np.float64)
    for i in range(left.n_frames):
        disparity = depth_to_disparity(depths[i], cfg.max_disparity, inverse_range)
        warped, mask = forward_splat(left.frames[i], disparity, cfg)
        mask = close_mask(mask, cfg.closing_kernel)
        # keep the sentinel invariant against the closed mask
        warped[mask.astype(bool)] = HOLE_SENTINEL
        warped_frames[i] = warped
        masks[i] = mask
        disparities[i] = disparity

    return WarpResult(
        warped=VideoClip(frames=warped_frames, fps=left.fps),
        mask=masks,
        disparity=disparities,
    )
