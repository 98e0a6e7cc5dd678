"""Video quality metrics with a masked-region evaluation protocol.

PSNR and multi-scale SSIM are computed on [0, 1] floats before any 8-bit
quantization.  Region-restricted scores follow a white-fill protocol:
both clips have every pixel outside the considered region replaced by
white, and the plain metric runs on the modified clips.  Identical clips
yield infinite PSNR; for dataset averaging the infinity enters at a
100 dB cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import convolve2d

from .core import ValidationError, VideoClip, validate_mask

PSNR_CAP_DB = 100.0

MS_SSIM_SCALES = 5
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Rec.601 luma coefficients
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MetricReport:
    video_id: str
    region: str
    psnr_db: float
    ms_ssim: float


@dataclass(frozen=True)
class DatasetSummary:
    """Arithmetic means over a homogeneous-region batch of reports."""

    region: str
    psnr_db: float
    ms_ssim: float
    n_videos: int
    capped_psnr_count: int


def _check_pair(a: VideoClip, b: VideoClip) -> None:
    if a.frames.shape != b.frames.shape:
        raise ValidationError(
            f"clip shapes differ: {a.frames.shape} vs {b.frames.shape}"
        )


def psnr(a: VideoClip, b: VideoClip) -> float:
    """Peak signal-to-noise ratio in dB over all pixels of the clip.

    Inputs are in [0, 1], so the peak is 1; identical clips return
    ``inf`` (callers cap it at 100 dB when averaging).
    """
    _check_pair(a, b)
    mse = float(np.mean((a.frames - b.frames) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return g


def _luminance(frames: np.ndarray) -> np.ndarray:
    return frames @ LUMA_WEIGHTS


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: (h // 2) * 2, : (w // 2) * 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # the Gaussian window is separable: two 1-D passes instead of an 11x11
    rows = convolve2d(img, taps[None, :], mode="valid")
    return convolve2d(rows, taps[:, None], mode="valid")


def _ssim_terms(x: np.ndarray, y: np.ndarray, taps: np.ndarray):
    """Mean luminance and contrast-structure comparison at one scale."""
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    xx = _filter_valid(x * x, taps) - mu_x * mu_x
    yy = _filter_valid(y * y, taps) - mu_y * mu_y
    xy = _filter_valid(x * y, taps) - mu_x * mu_y
    luminance = (2.0 * mu_x * mu_y + SSIM_C1) / (mu_x ** 2 + mu_y ** 2 + SSIM_C1)
    contrast = (2.0 * xy + SSIM_C2) / (xx + yy + SSIM_C2)
    return float(luminance.mean()), float(contrast.mean())


def feasible_scales(height: int, width: int) -> int:
    """Largest scale count (up to 5) whose coarsest level still fits the window."""
    scales = 0
    size = min(height, width)
    while scales < MS_SSIM_SCALES and size >= SSIM_WINDOW:
        scales += 1
        size //= 2
    return scales


@dataclass(frozen=True)
class MsSsimResult:
    score: float
    scales_used: int
    reduced: bool  # True when fewer than 5 scales were feasible


def ms_ssim(a: VideoClip, b: VideoClip) -> MsSsimResult:
    """Multi-scale SSIM on Rec.601 luminance, averaged over frames.

    Standard construction: 11x11 Gaussian window (sigma 1.5), dyadic
    downsampling by 2x2 averaging, scale weights {0.0448, 0.2856, 0.3001,
    0.2363, 0.1333}.  Frames smaller than 176 pixels on a side get the
    largest feasible scale count with renormalized weights (flagged via
    ``reduced``).  Negative comparison terms are clamped to 0 before the
    weighted geometric combination.
    """
    _check_pair(a, b)
    scales = feasible_scales(a.height, a.width)
    if scales == 0:
        raise ValidationError(
            f"frames of size ({a.height}, {a.width}) are smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    weights = MS_SSIM_WEIGHTS[:scales]
    weights = weights / weights.sum()
    taps = _gaussian_taps()

    scores = []
    for i in range(a.n_frames):
        x = _luminance(a.frames[i])
        y = _luminance(b.frames[i])
        score = 1.0
        for level in range(scales):
            luminance, contrast = _ssim_terms(x, y, taps)
            if level == scales - 1:
                score *= max(luminance, 0.0) ** weights[level]
            score *= max(contrast, 0.0) ** weights[level]
            if level < scales - 1:
                x = _halve(x)
                y = _halve(y)
        scores.append(score)
    return MsSsimResult(
        score=float(np.mean(scores)),
        scales_used=scales,
        reduced=scales < MS_SSIM_SCALES,
    )


def masked_metric(
    a: VideoClip,
    b: VideoClip,
    mask: np.ndarray,
    region: str,
    metric: Callable[[VideoClip, VideoClip], float],
):
    """Score only inside (or only outside) the mask via white-filling.

    Pixels outside the considered region are replaced by white (1.0) in
    both clips, then ``metric`` runs on the modified clips, which makes
    the score invariant to whatever the unconsidered region contains.
    """
    _check_pair(a, b)
    mask = validate_mask(mask)
    if mask.shape != a.frames.shape[:3]:
        raise ValidationError(
            f"mask shape {mask.shape} does not match clips {a.frames.shape[:3]}"
        )
    if region == "inside":
        considered = mask.astype(bool)
    elif region == "outside":
        considered = ~mask.astype(bool)
    else:
        raise ValidationError(f"region must be 'inside' or 'outside', got {region!r}")
    fill = ~considered
    af = a.frames.copy()
    bf = b.frames.copy()
    af[fill] = 1.0
    bf[fill] = 1.0
    return metric(VideoClip(frames=af, fps=a.fps), VideoClip(frames=bf, fps=b.fps))


def dataset_aggregate(reports: list[MetricReport]) -> DatasetSummary:
    """Mean PSNR/MS-SSIM over reports of one region; inf PSNR enters at the cap."""
    if not reports:
        raise ValidationError("cannot aggregate an empty report list")
    regions = {r.region for r in reports}
    if len(regions) != 1:
        raise ValidationError(f"reports mix regions: {sorted(regions)}")
    capped = [min(r.psnr_db, PSNR_CAP_DB) for r in reports]
    n_capped = sum(1 for r in reports if r.psnr_db > PSNR_CAP_DB)
    return DatasetSummary(
        region=reports[0].region,
        psnr_db=float(np.mean(capped)),
        ms_ssim=float(np.mean([r.ms_ssim for r in reports])),
        n_videos=len(reports),
        capped_psnr_count=n_capped,
    )
