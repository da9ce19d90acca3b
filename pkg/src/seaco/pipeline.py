"""Experiment plumbing shared by the command line, the demos and the acceptance suite.

A trained model is stored as a checkpoint plus a JSON sidecar holding the
configs needed to rebuild the forward pass.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import BackboneConfig, Schedule, TrainResult, recognize, train_backbone
from .bias import BiasConfig, BiasSchedule, BiasTrainResult, train_bias
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import RESERVED, SyntheticCorpus, Utterance
from .evaluation import EvalReport, count_occurrences, evaluate
from .hotwords import HotwordList, SamplingConfig
from .inference import ContextualResult, MergeConfig, decode_contextual_batch
from .numerics import ModelParams


@dataclass
class Model:
    params: ModelParams
    backbone: BackboneConfig
    bias: BiasConfig | None = None


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(model: Model, path) -> None:
    save_checkpoint(model.params, path)
    meta = {"backbone": dataclasses.asdict(model.backbone),
            "bias": dataclasses.asdict(model.bias) if model.bias else None}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n",
                                  encoding="utf-8")


def load_model(path) -> Model:
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"model config {side} not found next to the checkpoint")
    meta = json.loads(side.read_text(encoding="utf-8"))
    bias = BiasConfig(**meta["bias"]) if meta.get("bias") else None
    return Model(load_checkpoint(path), BackboneConfig(**meta["backbone"]), bias)


def features_of(corpus: SyntheticCorpus, utts: Sequence[Utterance]) -> list[np.ndarray]:
    return [corpus.features(u) for u in utts]


def train_asr(corpus: SyntheticCorpus, bcfg: BackboneConfig | None = None,
              schedule: Schedule | None = None, on_epoch=None) -> tuple[Model, TrainResult]:
    bcfg = bcfg or BackboneConfig(vocab_size=len(corpus.world.vocab),
                                  feature_dim=corpus.world.spec.feature_dim)
    res = train_backbone(features_of(corpus, corpus.train), [u.tokens for u in corpus.train],
                         bcfg, schedule or Schedule(), on_epoch=on_epoch)
    return Model(res.params, bcfg), res


def train_bias_stack(corpus: SyntheticCorpus, backbone: Model, variant: str = "default",
                     sampling: SamplingConfig | None = None,
                     schedule: BiasSchedule | None = None, on_epoch=None
                     ) -> tuple[Model, BiasTrainResult]:
    cfg = BiasConfig.for_backbone(backbone.backbone, variant=variant)
    res = train_bias(features_of(corpus, corpus.train), [u.tokens for u in corpus.train],
                     backbone.params, backbone.backbone, cfg, sampling or SamplingConfig(),
                     schedule or BiasSchedule(), on_epoch=on_epoch)
    return Model(res.params, backbone.backbone, cfg), res


def recognize_split(model: Model, corpus: SyntheticCorpus, utts: Sequence[Utterance]
                    ) -> dict[str, list[int]]:
    hyps = recognize(features_of(corpus, utts), model.params, model.backbone)
    return {u.id: h for u, h in zip(utts, hyps)}


def decode_split(model: Model, corpus: SyntheticCorpus, utts: Sequence[Utterance],
                 hotwords: HotwordList, mcfg: MergeConfig | None = None
                 ) -> list[ContextualResult]:
    if model.bias is None:
        raise ValueError("contextual decoding needs a checkpoint with a bias stack")
    return decode_contextual_batch(features_of(corpus, utts), hotwords, model.params,
                                   model.backbone, model.bias, mcfg or MergeConfig())


@dataclass
class BiasingEffect:
    base: EvalReport
    biased: EvalReport

    @property
    def recall_gain(self) -> float:
        return self.biased.r1[0] - self.base.r1[0]


def biasing_effect(model: Model, corpus: SyntheticCorpus, utts: Sequence[Utterance],
                   hotwords: Sequence[Sequence[int]], mcfg: MergeConfig | None = None
                   ) -> BiasingEffect:
    """Score plain and contextual decoding of ``utts`` against the same references.

    R1 flags on both reports come from the plain decoding.
    """
    results = decode_split(model, corpus, utts, HotwordList(hotwords), mcfg)
    refs = {u.id: u.tokens for u in utts}
    base = {u.id: r.asr_tokens for u, r in zip(utts, results)}
    hyp = {u.id: r.tokens for u, r in zip(utts, results)}
    return BiasingEffect(evaluate(refs, base, hotwords, base), evaluate(refs, hyp, hotwords, base))


def make_distractors(count: int, references: Sequence[Sequence[int]], vocab_size: int,
                     rng: np.random.Generator, exclude: Sequence[Sequence[int]] = (),
                     length: tuple[int, int] = (2, 4)) -> list[tuple[int, ...]]:
    """Random content-token spans that occur in none of ``references``."""
    seen = {tuple(h) for h in exclude}
    out: list[tuple[int, ...]] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000 * (count + 1):
            raise RuntimeError("could not find enough distractor hotwords")
        n = int(rng.integers(length[0], length[1] + 1))
        h = tuple(int(t) for t in rng.integers(len(RESERVED), vocab_size, n))
        if h in seen or any(count_occurrences(r, h) for r in references):
            continue
        seen.add(h)
        out.append(h)
    return out


@dataclass
class SweepRow:
    size: int
    asf: bool
    cer: float
    recall: float

    def csv(self) -> str:
        return f"{self.size},{int(self.asf)},{self.cer:.6f},{self.recall:.6f}"


SWEEP_HEADER = "size,asf,cer,recall"


def sweep_hotword_count(model: Model, corpus: SyntheticCorpus, utts: Sequence[Utterance],
                        hotwords: Sequence[Sequence[int]], sizes: Sequence[int],
                        asf_k: int | None = None, lam: float = 1.0, seed: int = 0
                        ) -> list[SweepRow]:
    """Pad ``hotwords`` with distractors to each size; decode with and without ASF.

    Distractors are nested: every larger list extends the smaller one.
    Recall is the mean over the original hotwords.
    """
    hotwords = [tuple(h) for h in hotwords]
    n = len(hotwords)
    if any(s < n for s in sizes):
        raise ValueError(f"every size must be >= the original list size {n}")
    rng = np.random.default_rng([seed, 17])
    refs = [u.tokens for u in utts]
    pool = make_distractors(max(sizes) - n, refs, model.backbone.vocab_size, rng, hotwords)
    # distractors are spread through the list so ASF cannot rely on position
    positions = rng.permutation(max(sizes))
    ref_map = {u.id: u.tokens for u in utts}
    rows = []
    for size in sizes:
        merged = _interleave(hotwords, pool[:size - n], positions[:size])
        for asf in (False, True):
            mcfg = MergeConfig(lam=lam, asf_enabled=asf, asf_k=asf_k or n)
            results = decode_split(model, corpus, utts, HotwordList(merged), mcfg)
            hyp = {u.id: r.tokens for u, r in zip(utts, results)}
            rep = evaluate(ref_map, hyp, hotwords)
            rows.append(SweepRow(size, asf, rep.cer, rep.overall[0]))
    return rows


def _interleave(originals, distractors, order) -> list[tuple[int, ...]]:
    """Place originals and distractors at the slots given by the ranks in ``order``."""
    items = list(originals) + list(distractors)
    ranked = np.argsort(order[:len(items)], kind="stable")
    return [items[i] for i in ranked]
