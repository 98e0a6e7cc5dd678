"""Desk-scale reference kernels for factorized and masked token attention.

A token grid is an (N, h, w, c) float64 array; token index and (frame,
row, col) are related by ``idx = frame*h*w + row*w + col``.  Four
single-head patterns are provided:

* ``spatial``     - queries attend to the tokens of their own frame,
* ``temporal``    - queries attend across frames at their own location,
* ``full``        - every query attends to every token (dense, guarded),
* ``masked_full`` - flagged queries attend to every token, the rest do
                    spatial attention.

Each forward reports its cost as the number of query.key dot products,
which is what the closed-form complexity expressions count.  Analytic
gradients are provided for all patterns and checked against central
finite differences in the test suite.  Everything here is float64: the
gradient tolerances are not reachable at 32 bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError

PATTERNS = ("spatial", "temporal", "full", "masked_full")

FULL_ATTENTION_TOKEN_GUARD = 4096


@dataclass(frozen=True)
class AttentionParams:
    """Projection matrices of a single attention head (no output proj)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValidationError(f"{name} must be square, got shape {m.shape}")
            object.__setattr__(self, name, m)
        if not (self.w_q.shape == self.w_k.shape == self.w_v.shape):
            raise ValidationError("projection matrices must share one dimension")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.channels)

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(
            w_q=rng.standard_normal((channels, channels)),
            w_k=rng.standard_normal((channels, channels)),
            w_v=rng.standard_normal((channels, channels)),
        )


@dataclass(frozen=True)
class CostReport:
    """Number of query.key dot products spent by one forward pass."""

    qk_dot_products: int
    pattern: str


def predicted_cost(pattern: str, n: int, h: int, w: int, masked: int = 0) -> int:
    """Closed-form dot-product count for a pattern on an (n, h, w) grid."""
    hw = h * w
    if pattern == "spatial":
        return n * hw * hw
    if pattern == "temporal":
        return n * n * hw
    if pattern == "full":
        return n * n * hw * hw
    if pattern == "masked_full":
        return (n * hw - masked) * hw + masked * n * hw
    raise ValidationError(f"unknown pattern {pattern!r}")


def _check_grid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValidationError(f"token grid must be (N, h, w, c), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("token grid contains non-finite values")
    return x


def _check_params(x: np.ndarray, p: AttentionParams) -> None:
    if x.shape[3] != p.channels:
        raise ValidationError(
            f"grid channel dim {x.shape[3]} != projection dim {p.channels}"
        )


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _dense_rows(q_tokens, k_tokens, p: AttentionParams):
    """Attend a block of query tokens over a block of key tokens.

    All four patterns funnel through this one primitive so that pattern
    reductions (empty/full mask) are bit-identical, not merely close.
    Returns (output rows, dot-product count).
    """
    q = q_tokens @ p.w_q
    k = k_tokens @ p.w_k
    v = k_tokens @ p.w_v
    weights = _softmax_rows((q @ k.T) * p.scale)
    return weights @ v, q.shape[0] * k.shape[0]


def attention_weight_rows(q_tokens, k_tokens, p: AttentionParams) -> np.ndarray:
    """Softmax row matrix for one query/key block (diagnostic helper)."""
    q = q_tokens @ p.w_q
    k = k_tokens @ p.w_k
    return _softmax_rows((q @ k.T) * p.scale)


def attend_spatial(x: np.ndarray, p: AttentionParams) -> tuple[np.ndarray, CostReport]:
    """Per-frame attention: tokens only see tokens of the same frame."""
    x = _check_grid(x)
    _check_params(x, p)
    n, h, w, c = x.shape
    out = np.empty_like(x)
    cost = 0
    for f in range(n):
        rows, spent = _dense_rows(x[f].reshape(h * w, c), x[f].reshape(h * w, c), p)
        out[f] = rows.reshape(h, w, c)
        cost += spent
    return out, CostReport(cost, "spatial")


def attend_temporal(x: np.ndarray, p: AttentionParams) -> tuple[np.ndarray, CostReport]:
    """Per-location attention: tokens see the same pixel across frames."""
    x = _check_grid(x)
    _check_params(x, p)
    n, h, w, c = x.shape
    out = np.empty_like(x)
    cost = 0
    for r in range(h):
        for col in range(w):
            rows, spent = _dense_rows(x[:, r, col, :], x[:, r, col, :], p)
            out[:, r, col, :] = rows
            cost += spent
    return out, CostReport(cost, "temporal")


def attend_full(x: np.ndarray, p: AttentionParams) -> tuple[np.ndarray, CostReport]:
    """Dense attention over all tokens of all frames (desk scale only)."""
    x = _check_grid(x)
    _check_params(x, p)
    n, h, w, c = x.shape
    tokens = n * h * w
    if tokens > FULL_ATTENTION_TOKEN_GUARD:
        raise ValidationError(
            f"{tokens} tokens exceed the dense guard of {FULL_ATTENTION_TOKEN_GUARD}"
        )
    rows, cost = _dense_rows(x.reshape(tokens, c), x.reshape(tokens, c), p)
    return rows.reshape(n, h, w, c), CostReport(cost, "full")


def attend_masked_full(
    x: np.ndarray, p: AttentionParams, mask: np.ndarray
) -> tuple[np.ndarray, CostReport]:
    """Flagged queries attend over all tokens, the rest stay per-frame.

    With an all-zero mask this reduces bit-exactly to ``attend_spatial``;
    with an all-one mask, to ``attend_full``.
    """
    x = _check_grid(x)
    _check_params(x, p)
    n, h, w, c = x.shape
    mask = np.asarray(mask)
    if mask.shape != (n, h, w):
        raise ValidationError(
            f"mask shape {mask.shape} does not match grid {(n, h, w)}"
        )
    flags = mask.reshape(n, h * w).astype(bool)
    out_flat = np.empty((n, h * w, c), dtype=np.float64)
    cost = 0
    for f in range(n):
        keys = x[f].reshape(h * w, c)
        un = ~flags[f]
        if un.all():
            rows, spent = _dense_rows(keys, keys, p)
            out_flat[f] = rows
            cost += spent
        elif un.any():
            rows, spent = _dense_rows(keys[un], keys, p)
            out_flat[f][un] = rows
            cost += spent
    n_masked = int(flags.sum())
    if n_masked:
        tokens = n * h * w
        if tokens > FULL_ATTENTION_TOKEN_GUARD:
            raise ValidationError(
                f"{tokens} tokens exceed the dense guard of {FULL_ATTENTION_TOKEN_GUARD}"
            )
        all_tokens = x.reshape(tokens, c)
        flat_flags = flags.reshape(tokens)
        rows, spent = _dense_rows(all_tokens[flat_flags], all_tokens, p)
        out_flat.reshape(tokens, c)[flat_flags] = rows
        cost += spent
    return out_flat.reshape(n, h, w, c), CostReport(cost, "masked_full")


def attend(
    x: np.ndarray,
    p: AttentionParams,
    pattern: str,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, CostReport]:
    """Dispatch to one of the four patterns by name."""
    if pattern == "spatial":
        return attend_spatial(x, p)
    if pattern == "temporal":
        return attend_temporal(x, p)
    if pattern == "full":
        return attend_full(x, p)
    if pattern == "masked_full":
        if mask is None:
            raise ValidationError("masked_full requires a mask")
        return attend_masked_full(x, p, mask)
    raise ValidationError(f"unknown pattern {pattern!r}")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionGrads:
    d_x: np.ndarray
    d_wq: np.ndarray
    d_wk: np.ndarray
    d_wv: np.ndarray


def _attention_groups(n, h, w, pattern, mask):
    """Index groups (query ids, key ids) that realize a pattern."""
    hw = h * w
    tokens = n * hw
    if pattern == "spatial":
        return [(np.arange(f * hw, (f + 1) * hw),) * 2 for f in range(n)]
    if pattern == "temporal":
        return [
            (np.arange(loc, tokens, hw),) * 2
            for loc in range(hw)
        ]
    if pattern == "full":
        return [(np.arange(tokens),) * 2]
    if pattern == "masked_full":
        flags = np.asarray(mask).reshape(tokens).astype(bool)
        groups = []
        for f in range(n):
            frame_ids = np.arange(f * hw, (f + 1) * hw)
            un = frame_ids[~flags[frame_ids]]
            if un.size:
                groups.append((un, frame_ids))
        masked_ids = np.flatnonzero(flags)
        if masked_ids.size:
            groups.append((masked_ids, np.arange(tokens)))
        return groups
    raise ValidationError(f"unknown pattern {pattern!r}")


def attention_backward(
    x: np.ndarray,
    p: AttentionParams,
    pattern: str,
    upstream: np.ndarray,
    mask: np.ndarray | None = None,
) -> AttentionGrads:
    """Analytic gradients of the forward map contracted with ``upstream``.

    ``upstream`` is dL/d(output) with the same (N, h, w, c) shape; the
    returned gradients are dL/dx and dL/dW for the three projections.
    """
    x = _check_grid(x)
    _check_params(x, p)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ValidationError(
            f"upstream shape {upstream.shape} != grid shape {x.shape}"
        )
    n, h, w, c = x.shape
    if pattern == "masked_full" and mask is None:
        raise ValidationError("masked_full requires a mask")

    tokens = x.reshape(-1, c)
    grad_out = upstream.reshape(-1, c)
    d_tokens = np.zeros_like(tokens)
    d_wq = np.zeros_like(p.w_q)
    d_wk = np.zeros_like(p.w_k)
    d_wv = np.zeros_like(p.w_v)

    for q_ids, k_ids in _attention_groups(n, h, w, pattern, mask):
        xq = tokens[q_ids]
        xk = tokens[k_ids]
        q = xq @ p.w_q
        k = xk @ p.w_k
        v = xk @ p.w_v
        weights = _softmax_rows((q @ k.T) * p.scale)
        g = grad_out[q_ids]

        d_v = weights.T @ g
        d_weights = g @ v.T
        d_scores = weights * (d_weights - (d_weights * weights).sum(axis=1, keepdims=True))
        d_q = (d_scores @ k) * p.scale
        d_k = (d_scores.T @ q) * p.scale

        d_wq += xq.T @ d_q
        d_wk += xk.T @ d_k
        d_wv += xk.T @ d_v
        d_tokens[q_ids] += d_q @ p.w_q.T
        d_tokens[k_ids] += d_k @ p.w_k.T + d_v @ p.w_v.T

    return AttentionGrads(
        d_x=d_tokens.reshape(x.shape), d_wq=d_wq, d_wk=d_wk, d_wv=d_wv
    )


def max_gradient_relative_error(
    x: np.ndarray,
    p: AttentionParams,
    pattern: str,
    upstream: np.ndarray,
    mask: np.ndarray | None = None,
    step: float = 1e-5,
) -> float:
    """Worst relative mismatch between analytic and central-difference grads.

    The scalar probed is L = sum(forward(x) * upstream).  The relative
    error of one component is |a - n| / max(|a| + |n|, 1e-3); the floor
    keeps central-difference roundoff (~1e-10 absolute at this step size)
    from registering as error on near-zero components while still
    flagging any real defect, which perturbs gradients at O(1).
    """
    grads = attention_backward(x, p, pattern, upstream, mask)

    def loss(x_val, wq, wk, wv):
        params = AttentionParams(w_q=wq, w_k=wk, w_v=wv)
        out, _ = attend(x_val, params, pattern, mask)
        return float(np.sum(out * upstream))

    worst = 0.0
    base = [np.array(x, dtype=np.float64), np.array(p.w_q), np.array(p.w_k), np.array(p.w_v)]
    analytic_by_slot = [grads.d_x, grads.d_wq, grads.d_wk, grads.d_wv]
    for slot, analytic in enumerate(analytic_by_slot):
        for i in range(base[slot].size):
            args = [b.copy() for b in base]
            orig = args[slot].reshape(-1)[i]
            args[slot].reshape(-1)[i] = orig + step
            hi = loss(*args)
            args[slot].reshape(-1)[i] = orig - step
            lo = loss(*args)
            numeric = (hi - lo) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
