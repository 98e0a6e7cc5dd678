"""Refinement-stage numerics and the pluggable refiner interface.

This module houses the noise-schedule arithmetic, the single-pass
prediction contract, the conditioning layout, the training losses, a
latent codec abstraction standing in for a frozen autoencoder, and the
deterministic far-plane inpainting baseline that lets the full pipeline
run end to end without any learned weights.

The model input layout is fixed at 13 channels: 4 initial-latent
channels (all zeros in feed-forward mode), 4 encoded left-view channels,
4 encoded warped-view channels, and 1 resized disocclusion-mask channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .core import ValidationError, VideoClip, validate_mask

LATENT_CHANNELS = 4
CONDITIONING_CHANNELS = 13
FEEDFORWARD_ALPHA_BAR_MAX = 1e-4

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


# ---------------------------------------------------------------------------
# Noise schedule and forward process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise variances and their running signal coefficient.

    ``alpha_bar[t-1]`` is the cumulative product of (1 - beta) up to step
    t (1-indexed).  ``feedforward_ready`` reports whether the terminal
    coefficient is small enough for the single-pass regime.
    """

    timesteps: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.timesteps < 1:
            raise ValidationError(f"timesteps must be >= 1, got {self.timesteps}")
        if beta.shape != (self.timesteps,) or alpha_bar.shape != (self.timesteps,):
            raise ValidationError("beta and alpha_bar must have length = timesteps")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValidationError("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(alpha_bar) >= 0.0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def feedforward_ready(self) -> bool:
        return float(self.alpha_bar[-1]) < FEEDFORWARD_ALPHA_BAR_MAX


def make_schedule(
    timesteps: int = DEFAULT_TIMESTEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> DiffusionSchedule:
    """Linear beta schedule with cumulative-product signal coefficients."""
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if timesteps < 1:
        raise ValidationError(f"timesteps must be >= 1, got {timesteps}")
    beta = np.linspace(beta_start, beta_end, timesteps)
    alpha_bar = np.cumprod(1.0 - beta)
    return DiffusionSchedule(timesteps=timesteps, beta=beta, alpha_bar=alpha_bar)


def _check_step(t: int, schedule: DiffusionSchedule) -> float:
    if not 1 <= t <= schedule.timesteps:
        raise ValidationError(
            f"timestep {t} outside [1, {schedule.timesteps}]"
        )
    return float(schedule.alpha_bar[t - 1])


def forward_diffuse(
    z: np.ndarray, eps: np.ndarray, t: int, schedule: DiffusionSchedule
) -> np.ndarray:
    """Noisy latent at step t: sqrt(a)z + sqrt(1-a)eps with a = alpha_bar_t."""
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z.shape != eps.shape:
        raise ValidationError(f"shape mismatch: z {z.shape} vs eps {eps.shape}")
    a = _check_step(t, schedule)
    return np.sqrt(a) * z + np.sqrt(1.0 - a) * eps


def v_target(
    z: np.ndarray, eps: np.ndarray, t: int, schedule: DiffusionSchedule
) -> np.ndarray:
    """Velocity prediction target: sqrt(a)eps - sqrt(1-a)z.

    At the terminal step a ~ 0 this collapses to -z, which is what the
    single-pass prediction decodes.
    """
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z.shape != eps.shape:
        raise ValidationError(f"shape mismatch: z {z.shape} vs eps {eps.shape}")
    a = _check_step(t, schedule)
    return np.sqrt(a) * eps - np.sqrt(1.0 - a) * z


# ---------------------------------------------------------------------------
# Latent codecs
# ---------------------------------------------------------------------------

class LatentCodec(Protocol):
    """Encode/decode pair defining the image <-> latent shape contract."""

    name: str
    factor: int

    def encode(self, clip: VideoClip) -> np.ndarray: ...

    def decode(self, latent: np.ndarray, fps: float) -> VideoClip: ...


class IdentityCodec:
    """Factor-1 codec: RGB channels pass through, padded with a zero channel.

    Exact round trip, used for oracle tests where latent space must equal
    pixel space.
    """

    name = "identity"
    factor = 1

    def encode(self, clip: VideoClip) -> np.ndarray:
        n, h, w, _ = clip.frames.shape
        latent = np.zeros((n, h, w, LATENT_CHANNELS), dtype=np.float64)
        latent[..., :3] = clip.frames
        return latent

    def decode(self, latent: np.ndarray, fps: float) -> VideoClip:
        frames = np.clip(np.asarray(latent, dtype=np.float64)[..., :3], 0.0, 1.0)
        return VideoClip(frames=frames, fps=fps)


class Patch8Codec:
    """Factor-8 codec: 8x8 block means per RGB channel plus block luminance.

    Decoding upsamples the three mean channels by nearest (block)
    replication; the luminance channel only exercises the 4-channel
    bookkeeping and is dropped on decode.
    """

    name = "patch8"
    factor = 8

    def encode(self, clip: VideoClip) -> np.ndarray:
        f = self.factor
        n, h, w, _ = clip.frames.shape
        if h % f or w % f:
            raise ValidationError(
                f"frame size ({h}, {w}) not divisible by codec factor {f}"
            )
        blocks = clip.frames.reshape(n, h // f, f, w // f, f, 3).mean(axis=(2, 4))
        latent = np.empty((n, h // f, w // f, LATENT_CHANNELS), dtype=np.float64)
        latent[..., :3] = blocks
        latent[..., 3] = (
            0.299 * blocks[..., 0] + 0.587 * blocks[..., 1] + 0.114 * blocks[..., 2]
        )
        return latent

    def decode(self, latent: np.ndarray, fps: float) -> VideoClip:
        f = self.factor
        rgb = np.asarray(latent, dtype=np.float64)[..., :3]
        frames = rgb.repeat(f, axis=1).repeat(f, axis=2)
        return VideoClip(frames=np.clip(frames, 0.0, 1.0), fps=fps)


CODECS: dict[str, Callable[[], LatentCodec]] = {
    "identity": IdentityCodec,
    "patch8": Patch8Codec,
}


def get_codec(name: str) -> LatentCodec:
    try:
        return CODECS[name]()
    except KeyError:
        raise ValidationError(
            f"unknown codec {name!r}; registered: {sorted(CODECS)}"
        ) from None


# ---------------------------------------------------------------------------
# Conditioning layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditioningTensor:
    """Assembled 13-channel model input.

    Channel order is fixed: 0-3 initial latent, 4-7 encoded left view,
    8-11 encoded warped view, 12 resized mask.
    """

    data: np.ndarray
    fps: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[3] != CONDITIONING_CHANNELS:
            raise ValidationError(
                f"conditioning must be (N, h, w, {CONDITIONING_CHANNELS}), got {data.shape}"
            )
        object.__setattr__(self, "data", data)

    @property
    def initial_latent(self) -> np.ndarray:
        return self.data[..., 0:4]

    @property
    def left_latent(self) -> np.ndarray:
        return self.data[..., 4:8]

    @property
    def warp_latent(self) -> np.ndarray:
        return self.data[..., 8:12]

    @property
    def mask_channel(self) -> np.ndarray:
        return self.data[..., 12]


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Area-average a binary (N, H, W) mask by ``factor`` and rebinarize.

    A cell becomes 1 when at least half of its source pixels are masked.
    """
    mask = validate_mask(mask)
    if factor == 1:
        return mask.astype(np.float64)
    n, h, w = mask.shape
    if h % factor or w % factor:
        raise ValidationError(
            f"mask size ({h}, {w}) not divisible by factor {factor}"
        )
    pooled = mask.astype(np.float64).reshape(
        n, h // factor, factor, w // factor, factor
    ).mean(axis=(2, 4))
    return (pooled >= 0.5).astype(np.float64)


def assemble_conditioning(
    left: VideoClip,
    warped: VideoClip,
    mask: np.ndarray,
    codec: LatentCodec,
) -> ConditioningTensor:
    """Encode both views, resize the mask, and concatenate the channels.

    The initial-latent block is all zeros: single-pass prediction starts
    from the mean of the noise distribution.
    """
    if left.frames.shape != warped.frames.shape:
        raise ValidationError(
            f"left {left.frames.shape} and warped {warped.frames.shape} differ"
        )
    mask = validate_mask(mask)
    if mask.shape != (left.n_frames, left.height, left.width):
        raise ValidationError(
            f"mask shape {mask.shape} does not match clip "
            f"{(left.n_frames, left.height, left.width)}"
        )
    left_lat = codec.encode(left)
    warp_lat = codec.encode(warped)
    mask_small = downsample_mask(mask, codec.factor)
    n, h, w, _ = left_lat.shape
    data = np.zeros((n, h, w, CONDITIONING_CHANNELS), dtype=np.float64)
    data[..., 4:8] = left_lat
    data[..., 8:12] = warp_lat
    data[..., 12] = mask_small
    return ConditioningTensor(data=data, fps=left.fps)


def disassemble_conditioning(
    cond: ConditioningTensor,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Split an assembled input back into its four blocks (copies)."""
    return (
        cond.initial_latent.copy(),
        cond.left_latent.copy(),
        cond.warp_latent.copy(),
        cond.mask_channel.copy(),
    )


# ---------------------------------------------------------------------------
# Single-pass prediction
# ---------------------------------------------------------------------------

RefinerBackend = Callable[[ConditioningTensor, int], np.ndarray]
"""A learned or stub denoiser: (13-channel conditioning, terminal step) ->
predicted velocity latents of shape (N, h, w, 4)."""


def predict_single_step(
    cond: ConditioningTensor,
    backend: RefinerBackend,
    codec: LatentCodec,
    t: int = DEFAULT_TIMESTEPS,
) -> VideoClip:
    """One backend evaluation, negate, decode, clamp to [0, 1].

    The feed-forward contract: the backend is called exactly once per
    conditioning tensor and its negated output is decoded directly.
    """
    try:
        v_hat = backend(cond, t)
    except Exception as exc:
        raise ValidationError(f"refiner backend failed: {exc}") from exc
    v_hat = np.asarray(v_hat, dtype=np.float64)
    expected = cond.data.shape[:3] + (LATENT_CHANNELS,)
    if v_hat.shape != expected:
        raise ValidationError(
            f"backend returned shape {v_hat.shape}, expected {expected}"
        )
    decoded = codec.decode(-v_hat, fps=cond.fps)
    return VideoClip(frames=np.clip(decoded.frames, 0.0, 1.0), fps=cond.fps)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def loss_latent(z_gt: np.ndarray, v_hat: np.ndarray) -> float:
    """Mean squared error between the negated clean latents and v_hat."""
    z_gt = np.asarray(z_gt, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if z_gt.shape != v_hat.shape:
        raise ValidationError(f"shape mismatch: {z_gt.shape} vs {v_hat.shape}")
    return float(np.mean(((-z_gt) - v_hat) ** 2))


PerceptualLoss = Callable[[VideoClip, VideoClip], float]


@dataclass(frozen=True)
class ImageLoss:
    """Image-space training loss components.

    ``perceptual_absent`` is True when no perceptual plug-in was supplied;
    the component is then reported as 0 and the total omits it.
    """

    l1: float
    perceptual: float
    perceptual_absent: bool

    @property
    def total(self) -> float:
        return self.l1 + self.perceptual


def loss_image(
    gt: VideoClip, pred: VideoClip, perceptual: PerceptualLoss | None = None
) -> ImageLoss:
    """L1 plus an optional perceptual plug-in, reported per component."""
    if gt.frames.shape != pred.frames.shape:
        raise ValidationError(
            f"shape mismatch: {gt.frames.shape} vs {pred.frames.shape}"
        )
    l1 = float(np.mean(np.abs(gt.frames - pred.frames)))
    if perceptual is None:
        return ImageLoss(l1=l1, perceptual=0.0, perceptual_absent=True)
    return ImageLoss(l1=l1, perceptual=float(perceptual(gt, pred)), perceptual_absent=False)


# ---------------------------------------------------------------------------
# Refiner interface and the far-plane baseline
# ---------------------------------------------------------------------------

Refiner = Callable[[VideoClip, VideoClip, np.ndarray, dict], VideoClip]
"""(left view, warped right view, disocclusion mask, config) -> refined right view.

Implementations must be safe to call concurrently on disjoint clips; the
shipped baseline is stateless."""


def baseline_farplane_refine(
    left: VideoClip,
    warped: VideoClip,
    mask: np.ndarray,
    cfg: dict | None = None,
) -> VideoClip:
    """Fill holes by horizontal propagation from the far-plane side.

    Unmasked pixels pass through bit-exactly.  A masked pixel takes the
    value of the nearest unmasked pixel to its right in the same row
    (holes open toward the background, whose content sits on the right
    edge of the hole); if the whole row to the right is masked it falls
    back to the nearest unmasked pixel on the left, and a fully masked
    row becomes 0.5 gray.  The left view is unused; it is part of the
    refiner signature for conditioning-aware implementations.
    """
    del left, cfg
    mask = validate_mask(mask)
    n, h, w = mask.shape
    if warped.frames.shape[:3] != (n, h, w):
        raise ValidationError(
            f"mask shape {mask.shape} does not match clip {warped.frames.shape[:3]}"
        )
    out = np.empty_like(warped.frames)
    cols = np.arange(w)
    for f in range(n):
        visible = mask[f] == 0
        right_idx = np.where(visible, cols, w)
        right_near = np.minimum.accumulate(right_idx[:, ::-1], axis=1)[:, ::-1]
        left_idx = np.where(visible, cols, -1)
        left_near = np.maximum.accumulate(left_idx, axis=1)
        source = np.where(right_near < w, right_near, left_near)
        dead_rows = source[:, 0] < 0  # no visible pixel anywhere in the row
        gather = np.clip(source, 0, w - 1)
        out[f] = np.take_along_axis(warped.frames[f], gather[..., None], axis=1)
        out[f][dead_rows] = 0.5
        out[f][visible] = warped.frames[f][visible]
    return VideoClip(frames=out, fps=warped.fps)


REFINERS: dict[str, Refiner] = {
    "farplane": baseline_farplane_refine,
}


def register_refiner(name: str, refiner: Refiner) -> None:
    """Add a refiner under a CLI-selectable name."""
    REFINERS[name] = refiner


def get_refiner(name: str) -> Refiner:
    try:
        return REFINERS[name]
    except KeyError:
        raise ValidationError(
            f"unknown refiner {name!r}; registered: {sorted(REFINERS)}"
        ) from None


def make_backend_refiner(
    backend: RefinerBackend,
    codec: LatentCodec,
    t: int = DEFAULT_TIMESTEPS,
) -> Refiner:
    """Adapt a single-pass backend to the refiner call signature."""

    def refine(left, warped, mask, cfg=None):
        del cfg
        cond = assemble_conditioning(left, warped, mask, codec)
        return predict_single_step(cond, backend, codec, t)

    return refine
