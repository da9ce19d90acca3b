"""Non-autoregressive recogniser: encoder, CIF predictor, two-pass sampler, parallel decoder."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cif import init_predictor, integrate_and_fire_batch, predict_weights, quantity_loss, scale_weights
from .corpus import PAD, RESERVED
from .layers import (
    ffn,
    init_ffn,
    init_linear,
    init_mha,
    init_norm,
    key_mask,
    linear,
    multi_head_attention,
    norm,
    sinusoid_positions,
)
from .numerics import (
    Adam,
    ConfigurationError,
    ModelParams,
    NumericError,
    Tensor,
    add,
    cross_entropy,
    embedding,
    mul,
    no_grad,
    softmax,
)

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class BackboneConfig:
    vocab_size: int
    feature_dim: int = 16
    d_model: int = 64
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 128
    max_frames: int = 512
    # inference-time CIF tail firing; None drops any residual below 1.0
    tail_threshold: float | None = 0.5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.vocab_size < len(RESERVED) + 1:
            raise ConfigurationError("vocabulary has no content tokens")


@dataclass
class BackboneOutput:
    E: Tensor            # CIF output (B, L', d)
    D: Tensor            # decoder hidden state before the output layer (B, L', d)
    logits: Tensor       # (B, L', V)
    lengths: np.ndarray  # L' per utterance
    e: Tensor            # encoder output (B, T, d)
    frame_lengths: np.ndarray
    alpha: Tensor | None = None

    @property
    def p_asr(self) -> np.ndarray:
        with no_grad():
            return softmax(self.logits, axis=-1).data


def init_backbone(cfg: BackboneConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    p = ModelParams()
    d = cfg.d_model
    p.new("backbone.embed", rng.standard_normal((cfg.vocab_size, d)))
    init_linear(p, "backbone.enc.in", cfg.feature_dim, d, rng)
    for i in range(cfg.encoder_layers):
        pre = f"backbone.enc.{i}"
        init_norm(p, f"{pre}.ln1", d)
        init_mha(p, f"{pre}.att", d, cfg.n_heads, rng)
        init_norm(p, f"{pre}.ln2", d)
        init_ffn(p, f"{pre}.ffn", d, cfg.ffn_dim, rng)
    init_norm(p, "backbone.enc.ln_out", d)
    init_predictor(p, d, rng)
    for i in range(cfg.decoder_layers):
        pre = f"backbone.dec.{i}"
        init_norm(p, f"{pre}.ln1", d)
        init_mha(p, f"{pre}.self", d, cfg.n_heads, rng)
        init_norm(p, f"{pre}.ln2", d)
        init_mha(p, f"{pre}.src", d, cfg.n_heads, rng)
        init_norm(p, f"{pre}.ln3", d)
        init_ffn(p, f"{pre}.ffn", d, cfg.ffn_dim, rng)
    init_norm(p, "backbone.dec.ln_out", d)
    init_linear(p, "backbone.out", d, cfg.vocab_size, rng)
    return p


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    return x, False


def encode(x: Tensor, params: ModelParams, cfg: BackboneConfig, lengths=None) -> Tensor:
    """Encoder over features (T, F) or (B, T, F); returns (.., T, d_model)."""
    x, single = _batched(x)
    B, T, _ = x.shape
    if T < 1:
        raise ValueError("encode: empty input")
    if T > cfg.max_frames:
        raise CapacityError(f"{T} frames exceed max_frames={cfg.max_frames}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    mask = key_mask(lengths, T)
    h = add(linear(x, params, "backbone.enc.in"), sinusoid_positions(T, cfg.d_model))
    for i in range(cfg.encoder_layers):
        pre = f"backbone.enc.{i}"
        a, _ = multi_head_attention(*(norm(h, params, f"{pre}.ln1"),) * 3, params,
                                    f"{pre}.att", cfg.n_heads, mask)
        h = add(h, a)
        h = add(h, ffn(norm(h, params, f"{pre}.ln2"), params, f"{pre}.ffn"))
    h = norm(h, params, "backbone.enc.ln_out")
    return h.reshape(h.shape[1:]) if single else h


def decode_parallel(s: Tensor, e: Tensor, params: ModelParams, cfg: BackboneConfig,
                    lengths=None, frame_lengths=None) -> tuple[Tensor, Tensor]:
    """Non-causal decoder: returns ``(D, logits)``; ``p_asr = softmax(logits)``."""
    s, single = _batched(s)
    e, _ = _batched(e)
    B, L, _ = s.shape
    T = e.shape[1]
    self_mask = key_mask(np.full(B, L) if lengths is None else lengths, L)
    src_mask = key_mask(np.full(B, T) if frame_lengths is None else frame_lengths, T)
    h = add(s, sinusoid_positions(L, cfg.d_model))
    for i in range(cfg.decoder_layers):
        pre = f"backbone.dec.{i}"
        q = norm(h, params, f"{pre}.ln1")
        a, _ = multi_head_attention(q, q, q, params, f"{pre}.self", cfg.n_heads, self_mask)
        h = add(h, a)
        a, _ = multi_head_attention(norm(h, params, f"{pre}.ln2"), e, e, params,
                                    f"{pre}.src", cfg.n_heads, src_mask)
        h = add(h, a)
        h = add(h, ffn(norm(h, params, f"{pre}.ln3"), params, f"{pre}.ffn"))
    D = norm(h, params, "backbone.dec.ln_out")
    logits = linear(D, params, "backbone.out")
    if single:
        return D.reshape(D.shape[1:]), logits.reshape(logits.shape[1:])
    return D, logits


def greedy(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


def sample_semantic_embedding(E: Tensor, y: np.ndarray, params: ModelParams,
                              cfg: BackboneConfig, sampling_factor: float,
                              rng: np.random.Generator, e: Tensor, lengths=None,
                              frame_lengths=None) -> tuple[Tensor, np.ndarray]:
    """Two-pass sampler.

    Pass 1 decodes ``E`` without gradient; at ``floor(factor * #errors)``
    randomly chosen error positions the row of ``E`` is swapped for the
    char embedding of the true token.  Returns ``(S, replaced_mask)``.

    Rounding down matters: a lone error is then never replaced, so every
    position keeps receiving gradient through its acoustic embedding.
    """
    E, single = _batched(E)
    e, _ = _batched(e)
    y = np.atleast_2d(np.asarray(y, dtype=np.int64))
    B, L, _ = E.shape
    if y.shape != (B, L):
        raise AlignmentError(f"CIF produced {L} steps for targets of shape {y.shape}; "
                             "scale the weights during training")
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    with no_grad():
        _, logits = decode_parallel(Tensor(E.data), Tensor(e.data), params, cfg,
                                    lengths, frame_lengths)
    pred = greedy(logits.data)
    replace = np.zeros((B, L))
    if sampling_factor > 0:
        for b in range(B):
            wrong = np.nonzero(pred[b, :lengths[b]] != y[b, :lengths[b]])[0]
            n = min(len(wrong), math.floor(sampling_factor * len(wrong) + 1e-9))
            if n:
                replace[b, rng.choice(wrong, size=n, replace=False)] = 1.0
    if not replace.any():
        S = E
    else:
        m = replace[..., None]
        S = add(mul(E, 1.0 - m), mul(embedding(params["backbone.embed"], y), m))
    if single:
        S = S.reshape(S.shape[1:])
    return S, replace


# -- batching ------------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray          # (B, T, F)
    frame_lengths: np.ndarray
    y: np.ndarray          # (B, L) padded with PAD
    lengths: np.ndarray
    ids: list[str] = field(default_factory=list)


def make_batch(features: Sequence[np.ndarray], targets: Sequence[Sequence[int]],
               ids: Sequence[str] = ()) -> Batch:
    B = len(features)
    T = max(f.shape[0] for f in features)
    F = features[0].shape[1]
    x = np.zeros((B, T, F))
    for b, f in enumerate(features):
        x[b, :len(f)] = f
    L = max(1, max(len(t) for t in targets))
    y = np.full((B, L), PAD, dtype=np.int64)
    for b, t in enumerate(targets):
        y[b, :len(t)] = t
    return Batch(x, np.array([len(f) for f in features]), y,
                 np.array([len(t) for t in targets]), list(ids))


def forward_train(batch: Batch, params: ModelParams, cfg: BackboneConfig,
                  sampling_factor: float, rng: np.random.Generator,
                  semantic: str = "sampled") -> BackboneOutput:
    """Training-time forward with CIF scaled to the target lengths.

    ``semantic`` chooses the decoder input: ``"sampled"`` (two-pass
    sampler), ``"acoustic"`` (scaled CIF output) or ``"char"`` (ground-truth
    char embeddings).
    """
    e = encode(Tensor(batch.x), params, cfg, batch.frame_lengths)
    alpha = predict_weights(e, params, lengths=batch.frame_lengths)
    scaled = scale_weights(alpha, batch.lengths)
    E, _ = integrate_and_fire_batch(e, scaled, batch.lengths)
    if E.shape[1] < batch.y.shape[1]:
        raise AlignmentError("CIF fired fewer steps than the target length")
    if semantic == "sampled":
        S, _ = sample_semantic_embedding(E, batch.y, params, cfg, sampling_factor, rng, e,
                                         batch.lengths, batch.frame_lengths)
    elif semantic == "acoustic":
        S = E
    elif semantic == "char":
        S = embedding(params["backbone.embed"], batch.y)
    else:
        raise ValueError(f"unknown semantic input {semantic!r}")
    D, logits = decode_parallel(S, e, params, cfg, batch.lengths, batch.frame_lengths)
    return BackboneOutput(E, D, logits, batch.lengths, e, batch.frame_lengths, alpha)


def backbone_loss(out: BackboneOutput, batch: Batch, qua_weight: float = 1.0
                  ) -> tuple[Tensor, float, float]:
    ce = cross_entropy(out.logits, batch.y, ignore_index=PAD)
    qua = quantity_loss(out.alpha, batch.lengths)
    return add(ce, mul(qua, qua_weight)), float(ce.data), float(qua.data)


def infer(x: Tensor | np.ndarray, params: ModelParams, cfg: BackboneConfig,
          frame_lengths=None) -> BackboneOutput:
    """Inference path: unscaled CIF, decoder fed with the acoustic embedding."""
    with no_grad():
        x = x if isinstance(x, Tensor) else Tensor(x)
        x, single = _batched(x)
        B, T, _ = x.shape
        frame_lengths = np.full(B, T) if frame_lengths is None else np.asarray(frame_lengths)
        e = encode(x, params, cfg, frame_lengths)
        alpha = predict_weights(e, params, lengths=frame_lengths)
        E, counts = integrate_and_fire_batch(e, alpha, tail_threshold=cfg.tail_threshold)
        if E.shape[1] == 0:
            D = Tensor(np.zeros((B, 0, cfg.d_model)))
            logits = Tensor(np.zeros((B, 0, cfg.vocab_size)))
        else:
            D, logits = decode_parallel(E, e, params, cfg, counts, frame_lengths)
    return BackboneOutput(E, D, logits, counts, e, frame_lengths, alpha)


def recognize(features: Sequence[np.ndarray], params: ModelParams, cfg: BackboneConfig,
              batch_size: int = 64) -> list[list[int]]:
    hyps: list[list[int]] = []
    for i in range(0, len(features), batch_size):
        chunk = features[i:i + batch_size]
        b = make_batch(chunk, [[PAD]] * len(chunk))
        out = infer(b.x, params, cfg, b.frame_lengths)
        pred = greedy(out.logits.data) if out.logits.shape[1] else np.zeros((len(chunk), 0), int)
        hyps.extend(pred[j, :out.lengths[j]].tolist() for j in range(len(chunk)))
    return hyps


# -- training ------------------------------------------------------------------

@dataclass
class Schedule:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.98)
    sampling_factor: float = 0.75
    final_lr_scale: float = 0.05     # linear decay of lr down to lr * this
    max_steps: int | None = None
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]
    steps: int
    seconds: float


def planned_steps(n: int, schedule) -> int:
    total = schedule.epochs * math.ceil(n / schedule.batch_size)
    return min(total, schedule.max_steps) if schedule.max_steps else total


def decayed_lr(lr: float, final_scale: float, step: int, total: int) -> float:
    frac = min(step / max(total, 1), 1.0)
    return lr * (1.0 - (1.0 - final_scale) * frac)


def train_backbone(features: Sequence[np.ndarray], targets: Sequence[Sequence[int]],
                   cfg: BackboneConfig, schedule: Schedule, params: ModelParams | None = None,
                   on_epoch: Callable[[int, ModelParams], bool] | None = None) -> TrainResult:
    """Minimise CE + quantity loss with Adam; returns trained params and loss trace.

    ``on_epoch(epoch, params)`` may return True to stop early.
    """
    if not len(features):
        raise ValueError("empty training corpus")
    for t in targets:
        if any(tok < len(RESERVED) or tok >= cfg.vocab_size for tok in t):
            raise ConfigurationError("targets must be content tokens inside the vocabulary")
    params = init_backbone(cfg, schedule.seed) if params is None else params
    opt = Adam([p for p in params.group("backbone") if p.trainable], schedule.lr,
               schedule.betas)
    rng = np.random.default_rng([schedule.seed, 7])
    losses: list[float] = []
    step = 0
    start = time.perf_counter()
    n = len(features)
    total = planned_steps(n, schedule)
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        for i in range(0, n, schedule.batch_size):
            idx = order[i:i + schedule.batch_size]
            batch = make_batch([features[j] for j in idx], [targets[j] for j in idx])
            opt.lr = decayed_lr(schedule.lr, schedule.final_lr_scale, step, total)
            out = forward_train(batch, params, cfg, schedule.sampling_factor, rng)
            loss, ce, qua = backbone_loss(out, batch)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"non-finite loss at step {step} (ce={ce}, qua={qua})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            step += 1
            if schedule.log_every and step % schedule.log_every == 0:
                log.info("asr step %d epoch %d loss %.4f (ce %.4f qua %.4f)",
                         step, epoch, losses[-1], ce, qua)
            if schedule.max_steps and step >= schedule.max_steps:
                return TrainResult(params, losses, step, time.perf_counter() - start)
        if on_epoch is not None and on_epoch(epoch, params):
            break
    return TrainResult(params, losses, step, time.perf_counter() - start)

