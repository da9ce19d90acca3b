"""Bias encoder, bias decoder and bias output layer, plus their training loop.

The bias decoder attends from the backbone's decoder hidden state ``D``
and from the CIF output ``E`` to the encoded hotword list ``Z``.  The
ablation variants change which of the two streams is attended and where
they are summed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backbone import BackboneConfig, Batch, forward_train, make_batch
from .corpus import NO_BIAS, PAD
from .hotwords import HotwordList, SamplingConfig, build_bias_target, sample_hotwords
from .layers import (
    ffn,
    init_ffn,
    init_linear,
    init_lstm,
    init_mha,
    init_norm,
    key_mask,
    linear,
    lstm_forward,
    multi_head_attention,
    norm,
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
    no_grad,
    softmax,
)

log = logging.getLogger(__name__)

VARIANTS = ("default", "A1_merge_first", "A2_no_cif_attn", "A3_no_dec_attn")
VARIANT_ALIASES = {"default": "default", "a1": "A1_merge_first", "a2": "A2_no_cif_attn",
                   "a3": "A3_no_dec_attn"}
# branch name -> (uses D, uses E)
_BRANCHES = {
    "default": ("dec", "cif"),
    "A1_merge_first": ("merge",),
    "A2_no_cif_attn": ("dec",),
    "A3_no_dec_attn": ("cif",),
}


class FreezingError(RuntimeError):
    """A frozen backbone parameter received a gradient or changed."""


@dataclass
class BiasConfig:
    vocab_size: int
    variant: str = "default"
    bias_decoder_layers: int = 2
    lstm_layers: int = 1
    d_model: int = 64
    n_heads: int = 4
    ffn_dim: int = 128

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown bias variant {self.variant!r}; "
                                     f"choose from {VARIANTS}")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")

    @classmethod
    def for_backbone(cls, bcfg: BackboneConfig, **kw) -> "BiasConfig":
        return cls(vocab_size=bcfg.vocab_size, d_model=bcfg.d_model, n_heads=bcfg.n_heads,
                   ffn_dim=bcfg.ffn_dim, **kw)


@dataclass
class BiasOutput:
    logits: Tensor                       # (B, L, V)
    attn: np.ndarray                     # heads-averaged last-layer scores (B, L, n)
    branch_attn: dict[str, np.ndarray]   # raw last-layer weights per branch (B, h, L, n)

    @property
    def p_b(self) -> np.ndarray:
        with no_grad():
            return softmax(self.logits, axis=-1).data


def init_bias(cfg: BiasConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng([seed, 11])
    p = ModelParams()
    d = cfg.d_model
    for l in range(cfg.lstm_layers):
        init_lstm(p, f"bias.lstm.{l}", d, d, rng)
    for branch in _BRANCHES[cfg.variant]:
        for i in range(cfg.bias_decoder_layers):
            pre = f"bias.{branch}.{i}"
            init_mha(p, f"{pre}.att", d, cfg.n_heads, rng)
            init_norm(p, f"{pre}.ln1", d)
            init_ffn(p, f"{pre}.ffn", d, cfg.ffn_dim, rng)
            init_norm(p, f"{pre}.ln2", d)
    init_linear(p, "bias.out", d, cfg.vocab_size, rng)
    return p


def encode_hotwords(hotwords: HotwordList | Sequence[Sequence[int]], params: ModelParams,
                    cfg: BiasConfig) -> Tensor:
    """Shared char embedding then LSTM; row ``i`` is hotword ``i``'s final hidden state."""
    entries = list(hotwords)
    if not entries:
        raise ValueError("encode_hotwords: empty hotword list")
    n = len(entries)
    lengths = np.array([len(h) for h in entries])
    ids = np.full((n, int(lengths.max())), PAD, dtype=np.int64)
    for i, h in enumerate(entries):
        ids[i, :len(h)] = h
    x = embedding(params["backbone.embed"], ids)
    h = None
    for l in range(cfg.lstm_layers):
        x, h = lstm_forward(x, params, f"bias.lstm.{l}", lengths)
    return h


def _branch(x: Tensor, Z: Tensor, params: ModelParams, name: str, cfg: BiasConfig
            ) -> tuple[Tensor, Tensor]:
    w = None
    for i in range(cfg.bias_decoder_layers):
        pre = f"bias.{name}.{i}"
        a, w = multi_head_attention(x, Z, Z, params, f"{pre}.att", cfg.n_heads)
        x = norm(add(x, a), params, f"{pre}.ln1")
        x = norm(add(x, ffn(x, params, f"{pre}.ffn")), params, f"{pre}.ln2")
    return x, w


def bias_decode(D: Tensor, E: Tensor, Z: Tensor, params: ModelParams, cfg: BiasConfig
                ) -> BiasOutput:
    """Attend ``D`` (B, L, d) and/or ``E`` (B, L, d) over hotword encodings ``Z`` (n, d).

    Unbatched (L, d) inputs are accepted and give unbatched outputs.
    """
    if D.shape != E.shape:
        from .backbone import AlignmentError
        raise AlignmentError(f"D {D.shape} and E {E.shape} differ in length")
    single = D.ndim == 2
    if single:
        D, E = D.reshape(1, *D.shape), E.reshape(1, *E.shape)
    branch_attn: dict[str, np.ndarray] = {}
    if cfg.variant == "default":
        Dp, wd = _branch(D, Z, params, "dec", cfg)
        Ep, we = _branch(E, Z, params, "cif", cfg)
        h = add(Dp, Ep)
        branch_attn = {"dec": wd.data, "cif": we.data}
        main = wd.data
    else:
        name = _BRANCHES[cfg.variant][0]
        src = {"merge": lambda: add(D, E), "dec": lambda: D, "cif": lambda: E}[name]()
        h, w = _branch(src, Z, params, name, cfg)
        branch_attn = {name: w.data}
        main = w.data
    logits = linear(h, params, "bias.out")
    attn = main.mean(axis=1)
    if single:
        logits = logits.reshape(logits.shape[1:])
        attn = attn[0]
        branch_attn = {k: v[0] for k, v in branch_attn.items()}
    return BiasOutput(logits, attn, branch_attn)


def bias_targets(batch: Batch, hotwords: HotwordList) -> np.ndarray:
    tgt = np.full(batch.y.shape, PAD, dtype=np.int64)
    for b, n in enumerate(batch.lengths):
        tgt[b, :n] = build_bias_target(batch.y[b, :n].tolist(), hotwords, NO_BIAS)
    return tgt


@dataclass
class BiasSchedule:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.98)
    max_steps: int | None = None
    seed: int = 0
    log_every: int = 50
    # decoder input while extracting D: "char" (ground-truth embeddings) or
    # "acoustic" (scaled CIF output)
    semantic: str = "char"


@dataclass
class BiasTrainResult:
    params: ModelParams     # backbone + bias
    losses: list[float]
    steps: int
    seconds: float


def backbone_states(batch: Batch, backbone: ModelParams, bcfg: BackboneConfig,
                    semantic: str) -> tuple[Tensor, Tensor]:
    """Frozen-backbone D and E for a training batch (CIF scaled to target lengths)."""
    with no_grad():
        out = forward_train(batch, backbone, bcfg, 0.0, np.random.default_rng(0), semantic)
    return Tensor(out.D.data), Tensor(out.E.data)


def train_bias(features: Sequence[np.ndarray], targets: Sequence[Sequence[int]],
               backbone: ModelParams, bcfg: BackboneConfig, cfg: BiasConfig,
               sampling: SamplingConfig, schedule: BiasSchedule,
               params: ModelParams | None = None,
               hotword_fn: Callable[[Batch, np.random.Generator], HotwordList] | None = None,
               on_epoch: Callable[[int, ModelParams], bool] | None = None
               ) -> BiasTrainResult:
    """Train the bias group against hotword-position-aware targets, backbone frozen.

    ``hotword_fn`` overrides random sampling (used for overfit checks).
    """
    for p in backbone.group("backbone"):
        p.trainable = False
    before = backbone.snapshot("backbone")
    bias = init_bias(cfg, schedule.seed) if params is None else params
    combined = backbone.merged(bias)
    opt = Adam(bias.trainable(), schedule.lr, schedule.betas)
    rng = np.random.default_rng([sampling.seed, schedule.seed, 13])
    losses: list[float] = []
    step = 0
    start = time.perf_counter()
    n = len(features)
    frozen = backbone.group("backbone")

    def sample(batch: Batch) -> HotwordList:
        if hotword_fn is not None:
            return hotword_fn(batch, rng)
        rows = [batch.y[b, :k].tolist() for b, k in enumerate(batch.lengths)]
        return sample_hotwords(rows, sampling, rng)

    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        for i in range(0, n, schedule.batch_size):
            idx = order[i:i + schedule.batch_size]
            batch = make_batch([features[j] for j in idx], [targets[j] for j in idx])
            D, E = backbone_states(batch, backbone, bcfg, schedule.semantic)
            hotwords = sample(batch)
            tgt = bias_targets(batch, hotwords)
            Z = encode_hotwords(hotwords, combined, cfg)
            out = bias_decode(D, E, Z, combined, cfg)
            loss = cross_entropy(out.logits, tgt, ignore_index=PAD)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"non-finite bias loss at step {step}")
            opt.zero_grad()
            loss.backward()
            for p in frozen:
                if p.grad is not None and np.any(p.grad != 0):
                    raise FreezingError(f"backbone parameter {p.name} received a gradient")
            opt.step()
            losses.append(float(loss.data))
            step += 1
            if schedule.log_every and step % schedule.log_every == 0:
                log.info("bias step %d epoch %d loss %.4f (n_hot %d)", step, epoch,
                         losses[-1], len(hotwords))
            if schedule.max_steps and step >= schedule.max_steps:
                break
        if schedule.max_steps and step >= schedule.max_steps:
            break
        if on_epoch is not None and on_epoch(epoch, combined):
            break
    for name, value in before.items():
        if not np.array_equal(backbone[name].data, value):
            raise FreezingError(f"backbone parameter {name} changed during bias training")
    return BiasTrainResult(combined, losses, step, time.perf_counter() - start)


def hotword_key_mask(n: int, batch: int) -> np.ndarray:
    return key_mask(np.full(batch, n), n)
