"""Shared domain types and deterministic image/video I/O.

Pixel data lives as float64 in [0, 1] everywhere inside the package.
Conversion to 8 bits always uses round-half-up of ``v * 255`` clamped to
[0, 255], so written files are reproducible across platforms.  Float maps
(depth, disparity) travel as PFM, binary masks as PGM, frames as 8-bit
RGB PNG.  Video clips are directories of zero-padded numbered frames
(``000000.png``, ``000001.png``, ...) starting at index 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""


class InputError(PipelineError):
    """Missing or unusable input (file, parameter, dimension mismatch)."""


class FormatError(InputError):
    """A file exists but is not in the expected container format."""


class ValidationError(InputError):
    """Data violates a declared invariant (range, sign, shape)."""


FRAME_PATTERN = "{:06d}.png"
DEPTH_PATTERN = "{:06d}.pfm"
MASK_PATTERN = "{:06d}.pgm"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoClip:
    """An ordered stack of RGB frames plus a frame rate.

    ``frames`` has shape (N, H, W, 3), float64, all values finite and in
    [0, 1].  All frames share the same spatial dimensions by construction.
    Instances are treated as immutable value objects.
    """

    frames: np.ndarray
    fps: float = 24.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise ValidationError(
                f"clip frames must have shape (N, H, W, 3), got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ValidationError("clip must contain at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("clip contains non-finite pixel values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValidationError(
                f"pixel values outside [0, 1]: min={frames.min()}, max={frames.max()}"
            )
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def validate_depth(depth: np.ndarray, *, name: str = "depth") -> np.ndarray:
    """Check that a depth map is 2-D, finite and strictly positive.

    Reports the first offending pixel as (row, col) in the error message.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {depth.shape}")
    bad = ~np.isfinite(depth) | (depth <= 0.0)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ValidationError(
            f"{name} has invalid value {depth[row, col]!r} at pixel ({row}, {col}); "
            "depth must be finite and > 0"
        )
    return depth


def validate_mask(mask: np.ndarray, *, name: str = "mask") -> np.ndarray:
    """Check that a mask contains only 0/1 values; returns it as uint8."""
    mask = np.asarray(mask)
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValidationError(f"{name} must be binary, found values {values[:8]}")
    return mask.astype(np.uint8)


# ---------------------------------------------------------------------------
# 8-bit quantization
# ---------------------------------------------------------------------------

def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 by round-half-up of ``v * 255``."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.floor(v * 255.0 + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PNG frames
# ---------------------------------------------------------------------------

def read_frame_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB PNG into an (H, W, 3) float64 array in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"frame file not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, got {img.format}")
    if img.mode != "RGB":
        raise FormatError(f"{path}: expected 8-bit RGB, got mode {img.mode!r}")
    data = np.asarray(img, dtype=np.float64) / 255.0
    return data


def write_frame_png(frame: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 3) float frame in [0, 1] as an 8-bit RGB PNG."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"frame must have shape (H, W, 3), got {frame.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize_u8(frame), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# PFM float maps
# ---------------------------------------------------------------------------

def write_pfm(data: np.ndarray, path: str | Path, *, little_endian: bool = True) -> None:
    """Write a 2-D float array as grayscale 32-bit PFM.

    The PFM convention stores rows bottom-to-top; the sign of the scale
    line encodes endianness (negative = little endian).
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValidationError(f"PFM data must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    scale = -1.0 if little_endian else 1.0
    dtype = "<f4" if little_endian else ">f4"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n{scale:.6g}\n".encode("ascii"))
        fh.write(np.flipud(arr).astype(dtype).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale 32-bit PFM into an (H, W) float array, top-to-bottom."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"PFM file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic == b"PF":
            raise FormatError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
        if magic != b"Pf":
            raise FormatError(f"{path}: bad PFM magic {magic!r}")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        try:
            scale = float(fh.readline().strip())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM scale line") from exc
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read(w * h * 4)
        if len(raw) != w * h * 4:
            raise FormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def read_depth_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM depth map and validate it (finite, strictly positive)."""
    data = read_pfm(path).astype(np.float64)
    return validate_depth(data, name=f"depth map {path}")


# ---------------------------------------------------------------------------
# PGM masks
# ---------------------------------------------------------------------------

def write_mask_pgm(mask: np.ndarray, path: str | Path) -> None:
    """Write a binary (H, W) mask as binary PGM (P5), mapping 1 -> 255."""
    mask = validate_mask(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask * 255).astype(np.uint8).tobytes())


def _read_pgm_token(fh) -> bytes:
    # Tokens are whitespace separated; '#' starts a comment until end of line.
    token = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise FormatError("unexpected end of PGM header")
        if ch == b"#":
            fh.readline()
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_mask_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM; values >= 128 map to 1, the rest to 0."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"PGM file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise FormatError(f"{path}: bad PGM magic {magic!r}, expected P5")
        w = int(_read_pgm_token(fh))
        h = int(_read_pgm_token(fh))
        maxval = int(_read_pgm_token(fh))
        if maxval != 255:
            raise FormatError(f"{path}: expected maxval 255, got {maxval}")
        raw = fh.read(w * h)
        if len(raw) != w * h:
            raise FormatError(f"{path}: truncated PGM payload")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return (data >= 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# Clip directories
# ---------------------------------------------------------------------------

def read_clip(directory: str | Path, fps: float = 24.0) -> VideoClip:
    """Read a clip from a directory of ``%06d.png`` frames starting at 0."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"clip directory not found: {directory}")
    frames = []
    index = 0
    while True:
        path = directory / FRAME_PATTERN.format(index)
        if not path.exists():
            break
        frames.append(read_frame_png(path))
        index += 1
    if not frames:
        raise InputError(f"no {FRAME_PATTERN.format(0)!r}-style frames in {directory}")
    stack = np.stack(frames, axis=0)
    return VideoClip(frames=stack, fps=fps)


def write_clip(clip: VideoClip, directory: str | Path) -> list[Path]:
    """Write a clip as numbered PNG frames; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(clip.n_frames):
        path = directory / FRAME_PATTERN.format(i)
        write_frame_png(clip.frames[i], path)
        paths.append(path)
    return paths


def read_depth_dir(directory: str | Path, count: int) -> list[np.ndarray]:
    """Read ``count`` depth maps named ``%06d.pfm`` from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"depth directory not found: {directory}")
    depths = []
    for i in range(count):
        path = directory / DEPTH_PATTERN.format(i)
        if not path.exists():
            raise InputError(f"missing depth file: {path}")
        depths.append(read_depth_pfm(path))
    return depths


def write_mask_clip(mask: np.ndarray, directory: str | Path) -> list[Path]:
    """Write an (N, H, W) binary mask stack as numbered PGM files."""
    mask = validate_mask(mask)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(mask.shape[0]):
        path = directory / MASK_PATTERN.format(i)
        write_mask_pgm(mask[i], path)
        paths.append(path)
    return paths


def read_mask_clip(directory: str | Path) -> np.ndarray:
    """Read numbered PGM masks from a directory into an (N, H, W) stack."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"mask directory not found: {directory}")
    masks = []
    index = 0
    while True:
        path = directory / MASK_PATTERN.format(index)
        if not path.exists():
            break
        masks.append(read_mask_pgm(path))
        index += 1
    if not masks:
        raise InputError(f"no PGM masks in {directory}")
    return np.stack(masks, axis=0)
