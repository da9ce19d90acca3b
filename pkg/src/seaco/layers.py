"""Parameterised building blocks: linear, feed-forward, attention, LSTM.

Layers are plain functions over a :class:`ModelParams` and a name prefix;
``init_*`` helpers register the parameters a layer reads.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import (
    ConfigurationError,
    DimensionError,
    ModelParams,
    Tensor,
    add,
    concat,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    swap_last,
    tanh,
    transpose,
    xavier,
)

NEG_INF = -1e9


def init_linear(params: ModelParams, name: str, d_in: int, d_out: int,
                rng: np.random.Generator, bias: bool = True) -> None:
    params.new(f"{name}.w", xavier(rng, d_in, d_out))
    if bias:
        params.new(f"{name}.b", np.zeros(d_out))


def linear(x: Tensor, params: ModelParams, name: str) -> Tensor:
    y = matmul(x, params[f"{name}.w"])
    bname = f"{name}.b"
    return add(y, params[bname]) if bname in params else y


def init_norm(params: ModelParams, name: str, d: int) -> None:
    params.new(f"{name}.g", np.ones(d))
    params.new(f"{name}.b", np.zeros(d))


def norm(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_ffn(params: ModelParams, name: str, d: int, hidden: int,
             rng: np.random.Generator) -> None:
    init_linear(params, f"{name}.fc1", d, hidden, rng)
    init_linear(params, f"{name}.fc2", hidden, d, rng)


def ffn(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return linear(relu(linear(x, params, f"{name}.fc1")), params, f"{name}.fc2")


def init_mha(params: ModelParams, name: str, d: int, n_heads: int,
             rng: np.random.Generator) -> None:
    if d % n_heads:
        raise ConfigurationError(f"model dim {d} not divisible by {n_heads} heads")
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", d, d, rng)


def key_mask(lengths, max_len: int) -> np.ndarray:
    """Additive mask of shape (B, 1, 1, max_len): 0 on valid keys, -1e9 on padding."""
    lengths = np.asarray(lengths)
    valid = np.arange(max_len)[None, :] < lengths[:, None]
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, L, d = x.shape
    x = reshape(x, (*lead, L, n_heads, d // n_heads))
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = transpose(x, axes)
    *lead, L, h, dh = x.shape
    return reshape(x, (*lead, L, h * dh))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: ModelParams, name: str,
                         n_heads: int, mask: np.ndarray | None = None
                         ) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over ``n_heads`` heads.

    ``q`` is (..., Lq, d); ``k`` and ``v`` are (..., Lk, d) and may omit the
    batch dimension, in which case they are shared across the batch.
    ``mask`` is added to the scores (see :func:`key_mask`).
    Returns ``(context, weights)`` with weights of shape (..., heads, Lq, Lk).
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ConfigurationError(f"model dim {d} not divisible by {n_heads} heads")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key length {k.shape[-2]} != value length {v.shape[-2]}")
    qh = _split_heads(linear(q, params, f"{name}.q"), n_heads)
    kh = _split_heads(linear(k, params, f"{name}.k"), n_heads)
    vh = _split_heads(linear(v, params, f"{name}.v"), n_heads)
    scores = mul(matmul(qh, swap_last(kh)), 1.0 / math.sqrt(d // n_heads))
    if mask is not None:
        scores = add(scores, mask)
    weights = softmax(scores, axis=-1)
    ctx = _merge_heads(matmul(weights, vh))
    return linear(ctx, params, f"{name}.o"), weights


def sinusoid_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# -- LSTM ----------------------------------------------------------------------

def init_lstm(params: ModelParams, name: str, d_in: int, d_hidden: int,
              rng: np.random.Generator) -> None:
    """Gate order along the 4*H axis: input, forget, cell, output."""
    params.new(f"{name}.w_ih", rng.uniform(-0.1, 0.1, (d_in, 4 * d_hidden)))
    params.new(f"{name}.w_hh", rng.uniform(-0.1, 0.1, (d_hidden, 4 * d_hidden)))
    b = np.zeros(4 * d_hidden)
    b[d_hidden:2 * d_hidden] = 1.0
    params.new(f"{name}.b", b)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: ModelParams, name: str
              ) -> tuple[Tensor, Tensor]:
    H = h.shape[-1]
    gates = add(add(matmul(x, params[f"{name}.w_ih"]), matmul(h, params[f"{name}.w_hh"])),
                params[f"{name}.b"])
    i = sigmoid(gates[..., :H])
    f = sigmoid(gates[..., H:2 * H])
    g = tanh(gates[..., 2 * H:3 * H])
    o = sigmoid(gates[..., 3 * H:])
    c = add(mul(f, c), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_forward(x: Tensor, params: ModelParams, name: str,
                 lengths=None) -> tuple[Tensor, Tensor]:
    """Run an LSTM over ``x`` of shape (steps, d) or (batch, steps, d).

    Returns ``(hidden_states, final_hidden)``.  With ``lengths`` the state
    of a sequence stops updating once its length is reached, so
    ``final_hidden`` is the hidden state at each sequence's last step.
    """
    batched = x.ndim == 3
    if not batched:
        x = reshape(x, (1, *x.shape))
    B, S, _ = x.shape
    H = params[f"{name}.w_hh"].shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    lengths = np.full(B, S) if lengths is None else np.asarray(lengths)
    outs = []
    for t in range(S):
        h_new, c_new = lstm_cell(x[:, t, :], h, c, params, name)
        live = (t < lengths).astype(np.float64)[:, None]
        if live.all():
            h, c = h_new, c_new
        else:
            h = add(mul(h_new, live), mul(h, 1.0 - live))
            c = add(mul(c_new, live), mul(c, 1.0 - live))
        outs.append(reshape(h, (B, 1, H)))
    hs = concat(outs, axis=1) if outs else Tensor(np.zeros((B, 0, H)))
    if not batched:
        return reshape(hs, (S, H)), reshape(h, (H,))
    return hs, h
