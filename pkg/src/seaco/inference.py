"""Contextual decoding: probability merging and attention score filtering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import AlignmentError, BackboneConfig, greedy, infer, make_batch
from .bias import BiasConfig, bias_decode, encode_hotwords
from .corpus import NO_BIAS, PAD, RESERVED, Vocab, VocabularyError
from .hotwords import HotwordList
from .numerics import ConfigurationError, ModelParams, Tensor, no_grad


@dataclass
class MergeConfig:
    lam: float = 1.0
    asf_enabled: bool = True
    asf_k: int = 50

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("lambda must lie in [0, 1]")
        if self.asf_k < 1:
            raise ConfigurationError("asf_k must be >= 1")


@dataclass
class AttentionScoreMatrix:
    scores: np.ndarray          # (L, n)
    hotword_labels: list[str]

    def column_sums(self) -> np.ndarray:
        return self.scores.sum(axis=0)

    def format(self) -> str:
        lines = ["\t".join(self.hotword_labels)]
        lines += ["\t".join(f"{v:.6g}" for v in row) for row in self.scores]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AttentionScoreMatrix":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        labels = lines[0].split("\t")
        rows = [[float(v) for v in line.split("\t")] for line in lines[1:] if line]
        return cls(np.array(rows).reshape(len(rows), len(labels)), labels)


def merge_probabilities(p_asr: np.ndarray, p_b: np.ndarray, lam: float,
                        no_bias: int = NO_BIAS) -> np.ndarray:
    """Use ``p_b`` where the bias stack detects a hotword, ``p_asr`` elsewhere.

    Where ``argmax p_b`` is the no-bias token the ASR row is passed through
    untouched; otherwise the row is ``lam * p_b + (1 - lam) * p_asr``.
    """
    p_asr = np.asarray(p_asr)
    p_b = np.asarray(p_b)
    if p_asr.shape != p_b.shape:
        raise AlignmentError(f"p_asr {p_asr.shape} and p_b {p_b.shape} differ")
    detected = (np.argmax(p_b, axis=-1) != no_bias)[..., None]
    return np.where(detected, lam * p_b + (1.0 - lam) * p_asr, p_asr)


def select_top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` best non-default entries plus entry 0, in list order.

    Ties go to the lower index.
    """
    n = len(scores)
    ranked = sorted(range(1, n), key=lambda i: (-scores[i], i))[:k]
    return [0] + sorted(ranked)


def asf_filter(D: Tensor, E: Tensor, Z: Tensor, hotwords: HotwordList, params: ModelParams,
               cfg: BiasConfig, k: int) -> tuple[HotwordList, np.ndarray, list[int]]:
    """First bias pass over the full list; keep the ``k`` most attended hotwords.

    ``D`` and ``E`` are one utterance (L, d).  Returns the filtered list,
    the per-hotword attention mass (column sums over steps) and the kept
    indices into ``hotwords``.
    """
    if k < 1:
        raise ConfigurationError("asf k must be >= 1")
    with no_grad():
        out = bias_decode(D, E, Z, params, cfg)
    scores = out.attn.sum(axis=0)
    keep = select_top_k(scores, k)
    return hotwords.subset(keep), scores, keep


@dataclass
class ContextualResult:
    tokens: list[int]
    attention: AttentionScoreMatrix
    kept: list[int]                 # indices into the full hotword list
    asr_tokens: list[int]           # plain backbone hypothesis
    p_asr: np.ndarray
    p_b: np.ndarray
    p_m: np.ndarray


def check_hotwords(hotwords: HotwordList, vocab_size: int) -> None:
    for h in hotwords.user_entries:
        if any(t < len(RESERVED) or t >= vocab_size for t in h):
            raise VocabularyError(f"hotword {h} has tokens outside the content vocabulary")


def decode_contextual_batch(features: Sequence[np.ndarray], hotwords: HotwordList,
                            params: ModelParams, bcfg: BackboneConfig, cfg: BiasConfig,
                            mcfg: MergeConfig, labels: Sequence[str] | None = None,
                            batch_size: int = 64) -> list[ContextualResult]:
    """Contextual decoding of several utterances with one hotword list.

    Backbone inference (unscaled CIF, decoder fed with the acoustic
    embedding), optional attention score filtering, bias decoding with the
    (filtered) list, probability merging and per-step argmax.
    """
    check_hotwords(hotwords, bcfg.vocab_size)
    if labels is None:
        labels = [" ".join(map(str, h)) for h in hotwords]
    results: list[ContextualResult] = []
    with no_grad():
        Z = encode_hotwords(hotwords, params, cfg)
        for i in range(0, len(features), batch_size):
            chunk = list(features[i:i + batch_size])
            if any(len(f) == 0 for f in chunk):
                raise ValueError("empty input audio")
            b = make_batch(chunk, [[PAD]] * len(chunk))
            out = infer(b.x, params, bcfg, b.frame_lengths)
            if out.logits.shape[1] == 0:
                for _ in chunk:
                    empty = np.zeros((0, bcfg.vocab_size))
                    results.append(ContextualResult(
                        [], AttentionScoreMatrix(np.zeros((0, len(hotwords))), list(labels)),
                        list(range(len(hotwords))), [], empty, empty, empty))
                continue
            p_asr_all = out.p_asr
            full = None
            if not mcfg.asf_enabled:
                full = bias_decode(out.D, out.E, Z, params, cfg)
            for j in range(len(chunk)):
                L = int(out.lengths[j])
                D = Tensor(out.D.data[j, :L])
                E = Tensor(out.E.data[j, :L])
                p_asr = p_asr_all[j, :L]
                if mcfg.asf_enabled and L > 0:
                    _, _, keep = asf_filter(D, E, Z, hotwords, params, cfg, mcfg.asf_k)
                    bo = bias_decode(D, E, Tensor(Z.data[keep]), params, cfg)
                    p_b, attn = bo.p_b, bo.attn
                elif full is not None:
                    keep = list(range(len(hotwords)))
                    p_b = full.p_b[j, :L]
                    attn = full.attn[j, :L]
                else:
                    keep = list(range(len(hotwords)))
                    p_b = np.zeros_like(p_asr)
                    attn = np.zeros((0, len(hotwords)))
                p_m = merge_probabilities(p_asr, p_b, mcfg.lam) if L else p_asr
                results.append(ContextualResult(
                    greedy(p_m).tolist(),
                    AttentionScoreMatrix(attn, [labels[k] for k in keep]),
                    keep, greedy(p_asr).tolist(), p_asr, p_b, p_m))
    return results


def decode_contextual(x: np.ndarray, hotwords: HotwordList, params: ModelParams,
                      bcfg: BackboneConfig, cfg: BiasConfig, mcfg: MergeConfig,
                      labels: Sequence[str] | None = None
                      ) -> tuple[list[int], AttentionScoreMatrix]:
    """Single-utterance contextual decoding: ``(tokens, attention matrix)``."""
    r = decode_contextual_batch([x], hotwords, params, bcfg, cfg, mcfg, labels)[0]
    return r.tokens, r.attention


def hotword_labels(hotwords: HotwordList, vocab: Vocab) -> list[str]:
    return [" ".join(vocab.decode(h)) for h in hotwords]
