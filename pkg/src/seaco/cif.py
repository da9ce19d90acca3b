"""Continuous integrate-and-fire.

Firing is computed in closed form: with ``c_t`` the running sum of the
weights, frame ``t`` covers the interval ``[c_{t-1}, c_t]`` and firing
``j`` collects ``[j*thr, (j+1)*thr]``.  The contribution of frame ``t`` to
firing ``j`` is the overlap of the two intervals, which reproduces the
sequential accumulate/split/fire loop exactly (a crossing frame is split
between two firings) while staying vectorised and differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import init_linear, linear
from .numerics import (
    DimensionError,
    ModelParams,
    Tensor,
    _result,
    concat,
    relu,
    grad_enabled,
    mul,
    reshape,
    sigmoid,
    tabs,
    tsum,
    mean,
    sub,
)


class DegenerateInputError(ValueError):
    """CIF weights that cannot be scaled or integrated."""


@dataclass
class FiredEmbedding:
    E: Tensor
    fired_count: int


def init_predictor(params: ModelParams, d: int, rng: np.random.Generator,
                   name: str = "backbone.cif") -> None:
    init_linear(params, f"{name}.conv", 5 * d, d, rng)
    init_linear(params, f"{name}.proj", d, 1, rng)


def _context3(x: Tensor) -> Tensor:
    """Concatenate each frame with its left and right neighbours (zero padded)."""
    B, T, d = x.shape
    z = Tensor(np.zeros((B, 1, d)))
    left = concat([z, x[:, :T - 1, :]], axis=1)
    right = concat([x[:, 1:, :], z], axis=1)
    return concat([left, x, right], axis=-1)


def _boundary_features(x: Tensor) -> Tensor:
    """Neighbour context plus squared differences to both neighbours.

    The squared differences make a change of segment a linear function of
    the features, which a sum-only training signal can find quickly.
    """
    d = x.shape[-1]
    ctx = _context3(x)
    back = sub(x, ctx[..., :d])
    ahead = sub(ctx[..., 2 * d:], x)
    return concat([ctx, mul(back, back), mul(ahead, ahead)], axis=-1)


def predict_weights(e: Tensor, params: ModelParams, name: str = "backbone.cif",
                    lengths=None) -> Tensor:
    """Per-frame firing weights in (0, 1).

    A width-3 convolution (over the frames and their squared differences to
    both neighbours) with ReLU, then ``sigmoid(linear(.))``.  ``e`` is
    (T, d) or (B, T, d); frames beyond ``lengths`` are zeroed before the
    convolution and get weight 0.
    """
    if e.shape[-2] < 1:
        raise DimensionError("predict_weights needs at least one frame")
    single = e.ndim == 2
    if single:
        e = reshape(e, (1, *e.shape))
    B, T, _ = e.shape
    mask = None
    if lengths is not None:
        mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
        e = mul(e, mask[..., None])
    h = relu(linear(_boundary_features(e), params, f"{name}.conv"))
    a = sigmoid(linear(h, params, f"{name}.proj"))
    a = reshape(a, (B, T))
    if mask is not None:
        a = mul(a, mask)
    return reshape(a, (T,)) if single else a


def fire_counts(alpha: np.ndarray, threshold: float = 1.0,
                tail_threshold: float | None = None) -> np.ndarray:
    """Number of firings per row.

    The trailing residual is dropped unless it reaches ``tail_threshold``
    (as a fraction of ``threshold``), in which case it fires once more.
    """
    total = np.asarray(alpha, dtype=np.float64).sum(axis=-1) / threshold
    # absorb cumulative rounding so that e.g. 0.7+0.3 fires once
    full = np.floor(total + 1e-9)
    if tail_threshold is not None:
        full = full + (total - full >= tail_threshold)
    return full.astype(np.int64)


def cif_weights(alpha: np.ndarray, n_fire: np.ndarray, threshold: float = 1.0
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integration matrix W (B, L, T) with ``E = W @ e``.

    Also returns the masks used by the backward pass: where W's upper
    bound is set by ``c_t`` and where its lower bound is set by ``c_{t-1}``.
    A firing past the completed ones (tail firing) holds only the residual
    weight; :func:`integrate_and_fire_batch` renormalises it.
    """
    B, T = alpha.shape
    L = int(n_fire.max()) if n_fire.size else 0
    c = np.cumsum(alpha, axis=1)
    c_prev = c - alpha
    lo = (np.arange(L) * threshold)[None, :, None]
    hi = lo + threshold
    upper = np.minimum(c[:, None, :], hi)
    lower = np.maximum(c_prev[:, None, :], lo)
    W = upper - lower
    live = (W > 0) & (np.arange(L)[None, :, None] < n_fire[:, None, None])
    W = np.where(live, W, 0.0)
    up_is_c = live & (c[:, None, :] < hi)
    low_is_c = live & (c_prev[:, None, :] > lo)
    return W, up_is_c, low_is_c


def integrate_and_fire_batch(e: Tensor, alpha: Tensor, n_fire=None,
                             threshold: float = 1.0, tail_threshold: float | None = None
                             ) -> tuple[Tensor, np.ndarray]:
    """Batched CIF: ``e`` (B, T, d), ``alpha`` (B, T) -> (E (B, L, d), counts).

    ``n_fire`` forces the number of firings per row (training, after
    :func:`scale_weights`); by default it is the number of completed
    integrations.  With ``tail_threshold`` a trailing residual of at least
    that fraction of the threshold fires too, its frame weights rescaled to
    sum to the threshold; this path is inference-only (no gradient).
    """
    a = alpha.data
    if np.any(a < 0):
        raise ValueError("integrate_and_fire: negative weight")
    if a.shape != e.shape[:2]:
        raise DimensionError(f"alpha shape {a.shape} does not match frames {e.shape[:2]}")
    if n_fire is None:
        n_fire = fire_counts(a, threshold, tail_threshold)
    n_fire = np.asarray(n_fire, dtype=np.int64)
    W, up_is_c, low_is_c = cif_weights(a, n_fire, threshold)
    if tail_threshold is not None:
        if alpha.requires_grad and grad_enabled():
            raise ValueError("tail firing is inference-only; run under no_grad()")
        mass = W.sum(axis=2, keepdims=True)
        W = np.where(mass > 0, W * (threshold / np.where(mass > 0, mass, 1.0)), 0.0)
    out = np.matmul(W, e.data)

    def back(g):
        if e.requires_grad:
            e._accum(np.matmul(np.swapaxes(W, 1, 2), g))
        if alpha.requires_grad:
            gW = np.matmul(g, np.swapaxes(e.data, 1, 2))
            g_c = (gW * up_is_c).sum(axis=1)
            g_cprev = -(gW * low_is_c).sum(axis=1)
            # c_t = sum_{s<=t} a_s ; c_{t-1} = sum_{s<t} a_s
            rev_c = np.cumsum(g_c[:, ::-1], axis=1)[:, ::-1]
            rev_cp = np.cumsum(g_cprev[:, ::-1], axis=1)[:, ::-1]
            ga = rev_c.copy()
            ga[:, :-1] += rev_cp[:, 1:]
            alpha._accum(ga)

    return _result(out, (e, alpha), back), n_fire


def integrate_and_fire(e: Tensor, alpha: Tensor, threshold: float = 1.0,
                       n_fire: int | None = None, tail_threshold: float | None = None
                       ) -> FiredEmbedding:
    """Single-sequence CIF over ``e`` (T, d) with weights ``alpha`` (T,)."""
    if alpha.shape != (e.shape[0],):
        raise DimensionError(f"len(alpha)={alpha.shape} but T={e.shape[0]}")
    E, counts = integrate_and_fire_batch(
        reshape(e, (1, *e.shape)), reshape(alpha, (1, -1)),
        None if n_fire is None else [n_fire], threshold, tail_threshold)
    return FiredEmbedding(reshape(E, E.shape[1:]), int(counts[0]))


def scale_weights(alpha: Tensor, target_len) -> Tensor:
    """Rescale weights so each row sums to its target length.

    The scale factor stays in the graph, so gradients flow through it.
    """
    target = np.asarray(target_len, dtype=np.float64)
    if np.any(target < 1):
        raise ValueError("scale_weights: target length must be >= 1")
    total = alpha.data.sum(axis=-1)
    if np.any(total <= 0):
        raise DegenerateInputError("scale_weights: weights sum to zero")
    s = tsum(alpha, axis=-1, keepdims=True)
    inv = _reciprocal(s)
    return mul(alpha, mul(inv, target[..., None] if target.ndim else target))


def _reciprocal(x: Tensor) -> Tensor:
    y = 1.0 / x.data
    return _result(y, (x,), lambda g: x._accum(-g * y * y))


def quantity_loss(alpha: Tensor, target_len) -> Tensor:
    """``|sum(alpha) - target_len|``, averaged over rows for batched input."""
    target = np.asarray(target_len, dtype=np.float64)
    diff = tabs(sub(tsum(alpha, axis=-1), target))
    return mean(diff) if diff.ndim else diff
