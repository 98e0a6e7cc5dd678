"""Shared synthetic scenes and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np

from mono2stereo.core import VideoClip
from mono2stereo.rectify import MatchSet


def gradient_clip(n=2, h=8, w=12, fps=24.0) -> VideoClip:
    """Deterministic clip with distinct values per pixel and frame."""
    ramp = np.linspace(0.05, 0.95, n * h * w * 3).reshape(n, h, w, 3)
    return VideoClip(frames=ramp, fps=fps)


def random_clip(rng: np.random.Generator, n=2, h=8, w=12, fps=24.0) -> VideoClip:
    return VideoClip(frames=rng.random((n, h, w, 3)), fps=fps)


# ---------------------------------------------------------------------------
# Forward-splat oracle: enumerate every source pixel's destination by hand
# ---------------------------------------------------------------------------

def splat_oracle(frame: np.ndarray, disparity: np.ndarray):
    """Reference nearest-mode splat via explicit per-pixel enumeration.

    Independent of the vectorized implementation: visits source pixels one
    by one and keeps, per target, the contribution with the largest
    disparity (ties to the smaller source x).
    """
    h, w = disparity.shape
    out = np.zeros((h, w, 3))
    best_disp = np.full((h, w), -np.inf)
    best_src = np.full((h, w), np.inf)
    covered = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            d = disparity[y, x]
            tx = int(np.floor(x - d + 0.5))
            if tx < 0 or tx > w - 1:
                continue
            better = d > best_disp[y, tx] or (d == best_disp[y, tx] and x < best_src[y, tx])
            if better:
                best_disp[y, tx] = d
                best_src[y, tx] = x
                out[y, tx] = frame[y, x]
                covered[y, tx] = True
    mask = (~covered).astype(np.uint8)
    return out, mask


# ---------------------------------------------------------------------------
# Dense attention oracle: per-query softmax with explicit key sets
# ---------------------------------------------------------------------------

def attention_oracle(x, w_q, w_k, w_v, allowed):
    """Brute-force attention with an arbitrary per-query key set.

    ``allowed`` is a (K, K) boolean matrix over flattened tokens; row i
    lists the keys query i may attend to.  Uses plain loops and explicit
    exp-normalization, no shared code with the implementation.
    """
    n, h, w, c = x.shape
    tokens = x.reshape(-1, c)
    k_count = tokens.shape[0]
    scale = 1.0 / np.sqrt(c)
    out = np.zeros_like(tokens)
    for i in range(k_count):
        q = tokens[i] @ w_q
        keys = np.flatnonzero(allowed[i])
        scores = np.array([float(q @ (w_k.T @ tokens[j])) * scale for j in keys])
        scores -= scores.max()
        e = np.exp(scores)
        weights = e / e.sum()
        acc = np.zeros(c)
        for wgt, j in zip(weights, keys):
            acc += wgt * (tokens[j] @ w_v)
        out[i] = acc
    return out.reshape(n, h, w, c)


def allowed_spatial(n, h, w):
    hw = h * w
    allowed = np.zeros((n * hw, n * hw), dtype=bool)
    for f in range(n):
        allowed[f * hw:(f + 1) * hw, f * hw:(f + 1) * hw] = True
    return allowed


def allowed_temporal(n, h, w):
    hw = h * w
    allowed = np.zeros((n * hw, n * hw), dtype=bool)
    for loc in range(hw):
        ids = np.arange(loc, n * hw, hw)
        allowed[np.ix_(ids, ids)] = True
    return allowed


def allowed_masked_full(n, h, w, mask):
    allowed = allowed_spatial(n, h, w)
    flags = np.asarray(mask).reshape(-1).astype(bool)
    allowed[flags, :] = True
    return allowed


# ---------------------------------------------------------------------------
# Synthetic two-view scenes for rectification
# ---------------------------------------------------------------------------

def _rotation(ax, ay, az):
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _skew(v):
    return np.array([
        [0, -v[2], v[1]],
        [v[2], 0, -v[0]],
        [-v[1], v[0], 0],
    ])


def two_view_scene(seed, n_pts=200, outlier_frac=0.0, width=640, height=480):
    """Project random 3-D points into a slightly rotated stereo pair.

    Returns (MatchSet possibly with outliers, true F, clean flags,
    clean left points, clean right points).
    """
    rng = np.random.default_rng(seed)
    focal = 500.0
    k = np.array([
        [focal, 0, (width - 1) / 2],
        [0, focal, (height - 1) / 2],
        [0, 0, 1.0],
    ])
    r = _rotation(*rng.uniform(-0.04, 0.04, 3))
    t = np.array([rng.uniform(-0.3, -0.1), rng.uniform(-0.02, 0.02), 0.0])
    f_true = np.linalg.inv(k).T @ _skew(t) @ r @ np.linalg.inv(k)

    pts = np.stack(
        [rng.uniform(-2, 2, n_pts), rng.uniform(-1.5, 1.5, n_pts), rng.uniform(4, 12, n_pts)],
        axis=1,
    )
    pl = (k @ pts.T).T
    pl = pl[:, :2] / pl[:, 2:3]
    pr3 = (k @ (r @ pts.T + t[:, None])).T
    pr = pr3[:, :2] / pr3[:, 2:3]
    keep = (
        (pl[:, 0] >= 0) & (pl[:, 0] <= width - 1)
        & (pl[:, 1] >= 0) & (pl[:, 1] <= height - 1)
        & (pr[:, 0] >= 0) & (pr[:, 0] <= width - 1)
        & (pr[:, 1] >= 0) & (pr[:, 1] <= height - 1)
    )
    pl, pr = pl[keep], pr[keep]

    clean = np.ones(len(pl), dtype=bool)
    pr_obs = pr.copy()
    n_out = int(outlier_frac * len(pl))
    if n_out:
        out_idx = rng.choice(len(pl), n_out, replace=False)
        clean[out_idx] = False
        pr_obs[out_idx] += rng.uniform(15, 80, (n_out, 2)) * rng.choice([-1, 1], (n_out, 2))
        pr_obs = np.clip(pr_obs, 0, [width - 1, height - 1])

    matches = MatchSet(
        xl=pl[:, 0], yl=pl[:, 1], xr=pr_obs[:, 0], yr=pr_obs[:, 1],
        width=width, height=height,
    )
    return matches, f_true, clean, pl, pr


def rectified_matches(seed, n_pts=60, width=320, height=240, constant_shift=6.0):
    """Matches of an already-rectified pair: y_l = y_r, x_r = x_l - d_i.

    The per-point disparities are a constant plus a component orthogonal
    to {1, x, y} (in the sample sense), so the disparity-minimizing
    affine fit of the rectification recovers exactly the constant and the
    output differs from the input by a global horizontal shift only.
    """
    rng = np.random.default_rng(seed)
    xl = rng.uniform(40, width - 40, n_pts)
    yl = rng.uniform(10, height - 10, n_pts)
    raw = rng.uniform(0, 4.0, n_pts)
    basis = np.stack([np.ones(n_pts), xl, yl], axis=1)
    coef, *_ = np.linalg.lstsq(basis, raw, rcond=None)
    ortho = raw - basis @ coef  # orthogonal to the affine fit space
    disparity = constant_shift + ortho
    return MatchSet(
        xl=xl, yl=yl, xr=xl - disparity, yr=yl.copy(),
        width=width, height=height,
    ), disparity
