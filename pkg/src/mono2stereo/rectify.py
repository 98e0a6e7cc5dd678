"""Stereo preprocessing: fundamental-matrix fitting and rectification.

Point matches are ingested from CSV (feature matching itself is external
to this package).  A seeded RANSAC around the normalized 8-point solver
produces the fundamental matrix; projective rectifying homographies send
the right epipole to infinity and align the left view to it with a
disparity-minimizing affine correction; a horizontal shift then makes the
smallest inlier disparity zero, and clips whose residual vertical
disparity exceeds a limit are rejected.

All randomness flows through one seeded generator, so identical inputs
and seed give bit-identical results.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InputError, PipelineError, ValidationError

MIN_MATCHES = 8

DEFAULT_SAMPSON_THRESHOLD = 1.0   # pixels
DEFAULT_MAX_ITERS = 2000
DEFAULT_CONFIDENCE = 0.999
VERTICAL_DISPARITY_LIMIT = 2.0    # pixels
SHIFT_TOLERANCE = 0.5             # pixels

RANK_TOLERANCE = 1e-10


class EstimationError(PipelineError):
    """Too few matches or no consensus for the fundamental matrix."""


class DegenerateGeometryError(PipelineError):
    """Epipole placement makes projective rectification unstable."""


class CropError(PipelineError):
    """No valid common crop remains after rectification."""


# ---------------------------------------------------------------------------
# Match ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchSet:
    """Point correspondences between a left and a right frame."""

    xl: np.ndarray
    yl: np.ndarray
    xr: np.ndarray
    yr: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        arrays = {}
        length = None
        for name in ("xl", "yl", "xr", "yr"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ValidationError(f"{name} must be 1-D")
            if length is None:
                length = a.shape[0]
            elif a.shape[0] != length:
                raise ValidationError("match coordinate arrays differ in length")
            arrays[name] = a
        for name in ("xl", "xr"):
            if np.any(arrays[name] < 0) or np.any(arrays[name] > self.width - 1):
                raise ValidationError(f"{name} coordinates outside [0, {self.width - 1}]")
        for name in ("yl", "yr"):
            if np.any(arrays[name] < 0) or np.any(arrays[name] > self.height - 1):
                raise ValidationError(f"{name} coordinates outside [0, {self.height - 1}]")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.xl.shape[0]

    def subset(self, keep: np.ndarray) -> "MatchSet":
        return MatchSet(
            xl=self.xl[keep], yl=self.yl[keep],
            xr=self.xr[keep], yr=self.yr[keep],
            width=self.width, height=self.height,
        )


def load_matches_csv(path: str | Path, width: int, height: int) -> MatchSet:
    """Read a ``xl,yl,xr,yr`` CSV of matches for a frame of given size."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"match file not found: {path}")
    xl, yl, xr, yr = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"xl", "yl", "xr", "yr"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise InputError(
                f"{path}: expected header with columns xl,yl,xr,yr, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            xl.append(float(row["xl"]))
            yl.append(float(row["yl"]))
            xr.append(float(row["xr"]))
            yr.append(float(row["yr"]))
    return MatchSet(
        xl=np.array(xl), yl=np.array(yl), xr=np.array(xr), yr=np.array(yr),
        width=width, height=height,
    )


# ---------------------------------------------------------------------------
# Fundamental matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2, Frobenius-normalized 3x3 matrix with x_r' F x_l = 0."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError(f"fundamental matrix must be 3x3, got {m.shape}")
        object.__setattr__(self, "matrix", canonicalize_fundamental(m))


def canonicalize_fundamental(m: np.ndarray) -> np.ndarray:
    """Force rank 2, unit Frobenius norm, and a deterministic sign."""
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    s = s.copy()
    s[2] = 0.0
    out = u @ np.diag(s) @ vt
    norm = np.linalg.norm(out)
    if norm == 0.0:
        raise ValidationError("fundamental matrix is identically zero")
    out = out / norm
    flat = out.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    if lead < 0:
        out = -out
    return out


def sampson_distance(f: np.ndarray, xl, yl, xr, yr) -> np.ndarray:
    """First-order geometric distance (pixels) to the epipolar constraint.

    d = |x_r' F x_l| / sqrt((F x_l)_1^2 + (F x_l)_2^2
                            + (F' x_r)_1^2 + (F' x_r)_2^2)
    """
    f = np.asarray(f, dtype=np.float64)
    ones = np.ones_like(np.asarray(xl, dtype=np.float64))
    pl = np.stack([xl, yl, ones], axis=0)
    pr = np.stack([xr, yr, ones], axis=0)
    f_pl = f @ pl
    ft_pr = f.T @ pr
    residual = np.sum(pr * f_pl, axis=0)
    denom = f_pl[0] ** 2 + f_pl[1] ** 2 + ft_pr[0] ** 2 + ft_pr[1] ** 2
    denom = np.maximum(denom, 1e-300)
    return np.abs(residual) / np.sqrt(denom)


def _isotropic_normalization(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Translation+scale sending the centroid to 0 and mean radius to sqrt(2)."""
    mx, my = x.mean(), y.mean()
    dist = np.sqrt((x - mx) ** 2 + (y - my) ** 2).mean()
    if dist < 1e-12:
        raise EstimationError("degenerate point configuration (coincident points)")
    s = math.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * mx], [0.0, s, -s * my], [0.0, 0.0, 1.0]])


def _eight_point(xl, yl, xr, yr) -> np.ndarray:
    """Normalized 8-point (least-squares for > 8 matches), rank-2 enforced."""
    t1 = _isotropic_normalization(xl, yl)
    t2 = _isotropic_normalization(xr, yr)
    nxl = t1[0, 0] * xl + t1[0, 2]
    nyl = t1[1, 1] * yl + t1[1, 2]
    nxr = t2[0, 0] * xr + t2[0, 2]
    nyr = t2[1, 1] * yr + t2[1, 2]
    ones = np.ones_like(nxl)
    a = np.stack(
        [nxr * nxl, nxr * nyl, nxr, nyr * nxl, nyr * nyl, nyr, nxl, nyl, ones],
        axis=1,
    )
    _, _, vt = np.linalg.svd(a)
    f_norm = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f_norm)
    s = s.copy()
    s[2] = 0.0
    f_norm = u @ np.diag(s) @ vt
    return t2.T @ f_norm @ t1


def estimate_fundamental_ransac(
    matches: MatchSet,
    threshold: float = DEFAULT_SAMPSON_THRESHOLD,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> tuple[FundamentalMatrix, np.ndarray]:
    """Robust fundamental-matrix fit; returns the matrix and inlier flags.

    Minimal 8-point hypotheses are scored by the number of matches whose
    Sampson distance stays within ``threshold``; the iteration count
    adapts to the best inlier ratio (capped at ``max_iters``) and the
    winner is refit on its full consensus set.  Inlier flags are reported
    under the refit matrix.
    """
    n = len(matches)
    if n < MIN_MATCHES:
        raise EstimationError(f"need at least {MIN_MATCHES} matches, got {n}")
    rng = np.random.default_rng(seed)
    best_inliers: np.ndarray | None = None
    best_count = -1
    cap = max_iters
    it = 0
    while it < cap:
        it += 1
        pick = rng.choice(n, size=MIN_MATCHES, replace=False)
        try:
            f = _eight_point(
                matches.xl[pick], matches.yl[pick],
                matches.xr[pick], matches.yr[pick],
            )
        except EstimationError:
            continue
        d = sampson_distance(f, matches.xl, matches.yl, matches.xr, matches.yr)
        inl = d <= threshold
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inliers = inl
            ratio = count / n
            if ratio > 0:
                misses = 1.0 - ratio ** MIN_MATCHES
                if misses <= 0:
                    cap = it
                else:
                    needed = math.log(1.0 - confidence) / math.log(misses)
                    cap = min(max_iters, max(it, int(math.ceil(needed))))
    if best_inliers is None or best_count < MIN_MATCHES:
        raise EstimationError(
            f"no consensus set of >= {MIN_MATCHES} matches (best {max(best_count, 0)})"
        )
    keep = np.flatnonzero(best_inliers)
    f = _eight_point(
        matches.xl[keep], matches.yl[keep], matches.xr[keep], matches.yr[keep]
    )
    fm = FundamentalMatrix(matrix=f)
    d = sampson_distance(fm.matrix, matches.xl, matches.yl, matches.xr, matches.yr)
    inliers = d <= threshold
    if int(inliers.sum()) < MIN_MATCHES:
        raise EstimationError("consensus collapsed below 8 matches after refit")
    return fm, inliers


# ---------------------------------------------------------------------------
# Rectifying homographies
# ---------------------------------------------------------------------------

def apply_homography(h: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Map inhomogeneous points through a 3x3 homography."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    denom = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    xn = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / denom
    yn = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / denom
    return xn, yn


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _epipole_inside_image(e: np.ndarray, width: int, height: int) -> bool:
    planar = math.hypot(e[0], e[1])
    if abs(e[2]) <= 1e-12 * max(planar, 1.0):
        return False  # at infinity
    px, py = e[0] / e[2], e[1] / e[2]
    return 0.0 <= px <= width - 1 and 0.0 <= py <= height - 1


def _normalize_h(h: np.ndarray) -> np.ndarray:
    if abs(h[2, 2]) > 1e-12:
        return h / h[2, 2]
    return h


def compute_rectifying_homographies(
    f: FundamentalMatrix | np.ndarray,
    matches: MatchSet,
) -> tuple[np.ndarray, np.ndarray]:
    """Projective rectification from F and inlier matches.

    The right homography rotates the right epipole onto the x-axis about
    the image center and pushes it to infinity; the left view follows via
    a homography compatible with F, corrected by the affine x-transform
    that minimizes squared horizontal disparity over the matches.  Exact
    correspondences end up on identical rows.
    """
    fm = f.matrix if isinstance(f, FundamentalMatrix) else canonicalize_fundamental(f)
    if len(matches) < MIN_MATCHES:
        raise EstimationError(f"need >= {MIN_MATCHES} inlier matches for rectification")
    w, h = matches.width, matches.height

    u, _, vt = np.linalg.svd(fm)
    e_left = vt[-1]
    e_right = u[:, -1]
    if _epipole_inside_image(e_right, w, h) or _epipole_inside_image(e_left, w, h):
        raise DegenerateGeometryError(
            "an epipole lies inside the image; projective rectification is unstable"
        )

    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    t = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    t_inv = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])

    e = t @ e_right
    # the homogeneous sign of the epipole is arbitrary; pick the one whose
    # rotation onto the +x axis is minimal so the output is not flipped
    if e[0] < 0:
        e = -e
        e_right = -e_right
    planar = math.hypot(e[0], e[1])
    if planar <= 0.0:
        raise DegenerateGeometryError("right epipole coincides with the image center")
    c, s = e[0] / planar, e[1] / planar
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    if abs(e[2]) <= 1e-12 * planar:
        push = np.eye(3)  # epipole already at infinity
    else:
        focal = planar / e[2]
        push = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0 / focal, 0.0, 1.0]])
    h_right = t_inv @ push @ rot @ t

    e_unit = e_right / np.linalg.norm(e_right)
    compatible = _skew(e_unit) @ fm + np.outer(e_unit, np.ones(3))
    h0 = h_right @ compatible

    xl0, yl0 = apply_homography(h0, matches.xl, matches.yl)
    xr0, _ = apply_homography(h_right, matches.xr, matches.yr)
    design = np.stack([xl0, yl0, np.ones_like(xl0)], axis=1)
    coef, *_ = np.linalg.lstsq(design, xr0, rcond=None)
    if abs(coef[0]) < 1e-12:
        raise DegenerateGeometryError("disparity-minimizing affine correction collapsed")
    affine = np.array([
        [coef[0], coef[1], coef[2]],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    h_left = affine @ h0
    return _normalize_h(h_left), _normalize_h(h_right)


# ---------------------------------------------------------------------------
# Shift, crop, filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectificationResult:
    """Homographies, crop window, shift, and residual statistics.

    ``shift`` is s = -min(disparity); the right view's x-coordinates are
    translated by -s (see ``shifted_right_homography``), after which all
    inlier disparities are >= 0 with minimum 0.  ``crop`` is (x0, y0,
    width, height) in the shared rectified canvas.
    """

    h_left: np.ndarray
    h_right: np.ndarray
    crop: tuple[int, int, int, int]
    shift: float
    inlier_count: int
    vertical_disparity_max: float
    vertical_disparity_mean: float

    def shifted_right_homography(self) -> np.ndarray:
        t = np.array([[1.0, 0.0, -self.shift], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return t @ self.h_right

    def to_json(self) -> str:
        return json.dumps(
            {
                "h_left": np.asarray(self.h_left).tolist(),
                "h_right": np.asarray(self.h_right).tolist(),
                "crop": {
                    "x0": self.crop[0],
                    "y0": self.crop[1],
                    "width": self.crop[2],
                    "height": self.crop[3],
                },
                "shift": self.shift,
                "inlier_count": self.inlier_count,
                "vertical_disparity": {
                    "max": self.vertical_disparity_max,
                    "mean": self.vertical_disparity_mean,
                },
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "RectificationResult":
        obj = json.loads(text)
        return cls(
            h_left=np.array(obj["h_left"], dtype=np.float64),
            h_right=np.array(obj["h_right"], dtype=np.float64),
            crop=(
                obj["crop"]["x0"], obj["crop"]["y0"],
                obj["crop"]["width"], obj["crop"]["height"],
            ),
            shift=float(obj["shift"]),
            inlier_count=int(obj["inlier_count"]),
            vertical_disparity_max=float(obj["vertical_disparity"]["max"]),
            vertical_disparity_mean=float(obj["vertical_disparity"]["mean"]),
        )


def _inner_rect(h: np.ndarray, width: int, height: int):
    """Conservative axis-aligned rectangle inside a warped image footprint.

    Bounds each side by the extreme corner of the corresponding warped
    edge; since homographies map edges to straight segments this rectangle
    is interior to the footprint whenever the corner order survives.
    """
    corners = np.array([
        [0.0, 0.0],
        [width - 1.0, 0.0],
        [width - 1.0, height - 1.0],
        [0.0, height - 1.0],
    ])
    x, y = apply_homography(h, corners[:, 0], corners[:, 1])
    tl, tr, br, bl = zip(x, y)
    x0 = max(tl[0], bl[0])
    x1 = min(tr[0], br[0])
    y0 = max(tl[1], tr[1])
    y1 = min(bl[1], br[1])
    return x0, y0, x1, y1


def normalize_shift_and_crop(
    h_left: np.ndarray,
    h_right: np.ndarray,
    matches: MatchSet,
) -> RectificationResult:
    """Zero the minimum disparity and compute the common valid crop.

    Disparity is x'_left - x'_right over the supplied (inlier) matches.
    The crop is the integer axis-aligned rectangle interior to both
    warped footprints and the original canvas; an empty intersection is a
    crop failure.
    """
    xl, yl = apply_homography(h_left, matches.xl, matches.yl)
    xr, yr = apply_homography(h_right, matches.xr, matches.yr)
    disparity = xl - xr
    shift = -float(disparity.min())
    vertical = np.abs(yl - yr)

    result_h_right = np.asarray(h_right, dtype=np.float64)
    shifted = np.array([[1.0, 0.0, -shift], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]) @ result_h_right

    w, h = matches.width, matches.height
    lx0, ly0, lx1, ly1 = _inner_rect(np.asarray(h_left), w, h)
    rx0, ry0, rx1, ry1 = _inner_rect(shifted, w, h)
    x0 = max(lx0, rx0, 0.0)
    y0 = max(ly0, ry0, 0.0)
    x1 = min(lx1, rx1, w - 1.0)
    y1 = min(ly1, ry1, h - 1.0)
    xi0, yi0 = int(math.ceil(x0)), int(math.ceil(y0))
    xi1, yi1 = int(math.floor(x1)), int(math.floor(y1))
    if xi1 < xi0 or yi1 < yi0:
        raise CropError("rectified footprints share no valid axis-aligned crop")

    return RectificationResult(
        h_left=np.asarray(h_left, dtype=np.float64),
        h_right=result_h_right,
        crop=(xi0, yi0, xi1 - xi0 + 1, yi1 - yi0 + 1),
        shift=shift,
        inlier_count=len(matches),
        vertical_disparity_max=float(vertical.max()),
        vertical_disparity_mean=float(vertical.mean()),
    )


def vertical_disparity_filter(
    result: RectificationResult, limit: float = VERTICAL_DISPARITY_LIMIT
) -> bool:
    """Accept a clip unless its max residual vertical disparity exceeds ``limit``."""
    return result.vertical_disparity_max <= limit


def sample_frames_uniform(clip_length: int, k: int = 200) -> np.ndarray:
    """Evenly spaced frame indices over [0, clip_length - 1], deduplicated."""
    if clip_length < 1:
        raise ValidationError(f"clip_length must be >= 1, got {clip_length}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if clip_length == 1 or k == 1:
        return np.array([0], dtype=np.int64)
    positions = np.arange(k, dtype=np.float64) * (clip_length - 1) / (k - 1)
    indices = np.floor(positions + 0.5).astype(np.int64)
    return np.unique(indices)
