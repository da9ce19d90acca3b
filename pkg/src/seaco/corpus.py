"""Synthetic speech corpus: vocabulary, token sequences, on-demand frames.

Each content token owns a Gaussian prototype vector; an utterance is a
token sequence plus a seed, and its frames are the prototypes repeated
2-4 times with additive noise.  A handful of *rare* tokens appear only
inside the designated hotword phrases.  Every rare token has a common
"twin" whose prototype it nearly shares, so the plain recogniser prefers
the frequent twin and under-recalls the phrases -- the desk-scale
analogue of hard-to-recall names that sound like ordinary words.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import ConfigurationError

PAD, BLANK, NO_BIAS = 0, 1, 2
RESERVED = ("<pad>", "<blank>", "<no-bias>")


class VocabularyError(KeyError):
    pass


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate vocabulary entries")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, n_content: int) -> "Vocab":
        return cls(list(RESERVED) + [f"w{i:02d}" for i in range(n_content)])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, words: Sequence[str]) -> list[int]:
        try:
            return [self.index[w] for w in words]
        except KeyError as exc:
            raise VocabularyError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").split())


@dataclass
class Utterance:
    id: str
    tokens: list[int]
    seed: int


@dataclass
class SyntheticSpec:
    vocab_size: int = 60
    feature_dim: int = 16
    frames_per_token: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.1
    utterance_length: tuple[int, int] = (3, 12)
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    hotword_phrases: list[list[str]] | None = None
    n_phrases: int = 10
    phrase_length: tuple[int, int] = (2, 4)
    rare_rate: float = 0.02
    test_phrase_rate: float = 0.5
    # per-dimension std of a rare token's offset from its twin's prototype
    confusion: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rare_rate <= 1.0:
            raise ConfigurationError("rare_rate must lie in [0, 1]")
        if self.vocab_size < len(RESERVED) + 2 * self.n_phrases + 1:
            raise ConfigurationError("vocab_size too small for the requested phrases")
        self.frames_per_token = tuple(self.frames_per_token)
        self.utterance_length = tuple(self.utterance_length)
        self.phrase_length = tuple(self.phrase_length)

    @property
    def n_content(self) -> int:
        return self.vocab_size - len(RESERVED)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls(**json.loads(text))


@dataclass
class SyntheticWorld:
    """Everything needed to synthesise frames: spec, vocab and prototypes."""

    spec: SyntheticSpec
    vocab: Vocab
    prototypes: np.ndarray
    rare_ids: list[int] = field(default_factory=list)
    twin_of: dict[int, int] = field(default_factory=dict)

    @property
    def common_ids(self) -> list[int]:
        rare = set(self.rare_ids)
        return [i for i in range(len(RESERVED), len(self.vocab)) if i not in rare]


def build_world(spec: SyntheticSpec) -> SyntheticWorld:
    vocab = Vocab.build(spec.n_content)
    rng = np.random.default_rng([spec.seed, 1])
    protos = rng.standard_normal((len(vocab), spec.feature_dim))
    protos[:len(RESERVED)] = 0.0
    rare_ids = list(range(len(vocab) - spec.n_phrases, len(vocab)))
    common = list(range(len(RESERVED), len(vocab) - spec.n_phrases))
    twins = rng.choice(common, size=spec.n_phrases, replace=False)
    twin_of = {}
    for r, t in zip(rare_ids, twins):
        protos[r] = protos[t] + spec.confusion * rng.standard_normal(spec.feature_dim)
        twin_of[r] = int(t)
    return SyntheticWorld(spec, vocab, protos, rare_ids, twin_of)


def synthesize_features(utt: Utterance, prototypes: np.ndarray, spec: SyntheticSpec
                        ) -> np.ndarray:
    """Frames (T, feature_dim) for one utterance, reproducible from its seed."""
    rng = np.random.default_rng(utt.seed)
    lo, hi = spec.frames_per_token
    counts = rng.integers(lo, hi + 1, size=len(utt.tokens))
    frames = np.repeat(prototypes[np.asarray(utt.tokens, dtype=np.int64)], counts, axis=0)
    if spec.noise_sigma:
        frames = frames + spec.noise_sigma * rng.standard_normal(frames.shape)
    return frames


def _designated_phrases(spec: SyntheticSpec, world: SyntheticWorld,
                        rng: np.random.Generator) -> list[list[int]]:
    if spec.hotword_phrases is not None:
        phrases = []
        for words in spec.hotword_phrases:
            try:
                ids = world.vocab.encode(words)
            except VocabularyError as exc:
                raise ConfigurationError(f"hotword phrase {words}: {exc}") from None
            if any(i < len(RESERVED) for i in ids):
                raise ConfigurationError(f"hotword phrase {words} uses a reserved token")
            phrases.append(ids)
        return phrases
    common = world.common_ids
    lo, hi = spec.phrase_length
    phrases = []
    for r in world.rare_ids:
        n = int(rng.integers(lo, hi + 1))
        ids = [int(x) for x in rng.choice(common, size=n)]
        ids[int(rng.integers(n))] = r
        phrases.append(ids)
    return phrases


def _make_split(prefix: str, n: int, phrase_rate: float, phrases: list[list[int]],
                world: SyntheticWorld, rng: np.random.Generator) -> list[Utterance]:
    spec = world.spec
    common = np.asarray(world.common_ids)
    lo, hi = spec.utterance_length
    n_phrase = int(round(phrase_rate * n)) if phrases else 0
    carriers = set(rng.choice(n, size=n_phrase, replace=False).tolist()) if n_phrase else set()
    order = rng.permutation(len(phrases)) if phrases else []
    utts = []
    k = 0
    for i in range(n):
        length = int(rng.integers(lo, hi + 1))
        toks = [int(x) for x in rng.choice(common, size=length)]
        if i in carriers:
            ph = phrases[order[k % len(phrases)]]
            k += 1
            if length < len(ph):
                toks += [int(x) for x in rng.choice(common, size=len(ph) - length)]
            start = int(rng.integers(len(toks) - len(ph) + 1))
            toks[start:start + len(ph)] = ph
        seed = int(rng.integers(2**31 - 1))
        utts.append(Utterance(f"{prefix}-{i:05d}", toks, seed))
    return utts


@dataclass
class SyntheticCorpus:
    world: SyntheticWorld
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]
    hotwords: list[list[int]]

    def features(self, utt: Utterance) -> np.ndarray:
        return synthesize_features(utt, self.world.prototypes, self.world.spec)


def generate_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    world = build_world(spec)
    rng = np.random.default_rng([spec.seed, 2])
    phrases = _designated_phrases(spec, world, rng)
    train = _make_split("train", spec.n_train, spec.rare_rate, phrases, world, rng)
    dev = _make_split("dev", spec.n_dev, spec.rare_rate, phrases, world, rng)
    test = _make_split("test", spec.n_test, spec.test_phrase_rate, phrases, world, rng)
    return SyntheticCorpus(world, train, dev, test, phrases)


# -- text formats --------------------------------------------------------------

def write_corpus(path, utts: Sequence[Utterance], vocab: Vocab) -> None:
    lines = [f"{u.id}\t{u.seed}\t{' '.join(vocab.decode(u.tokens))}\n" for u in utts]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path, vocab: Vocab) -> list[Utterance]:
    utts = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected id<TAB>seed<TAB>tokens")
        utts.append(Utterance(parts[0], vocab.encode(parts[2].split()), int(parts[1])))
    return utts


def write_hotwords(path, hotwords: Sequence[Sequence[int]], vocab: Vocab) -> None:
    """One hotword per line; the implicit default ``<blank>`` entry is never written."""
    lines = [" ".join(vocab.decode(h)) + "\n" for h in hotwords if list(h) != [BLANK]]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_hotwords(path, vocab: Vocab) -> list[list[int]]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        words = line.split()
        if not words:
            continue
        if RESERVED[BLANK] in words:
            raise ValueError(f"{path}:{n}: the default <blank> hotword is implicit")
        out.append(vocab.encode(words))
    return out


def read_transcripts(path, vocab: Vocab) -> dict[str, list[int]]:
    """``id<TAB>tokens`` lines (hypothesis files), or corpus lines with a seed column."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        words = parts[-1].split() if len(parts) > 1 else []
        out[parts[0]] = vocab.encode(words)
    return out


def write_transcripts(path, items: Sequence[tuple[str, Sequence[int]]], vocab: Vocab) -> None:
    lines = [f"{uid}\t{' '.join(vocab.decode(toks))}\n" for uid, toks in items]
    Path(path).write_text("".join(lines), encoding="utf-8")


def save_corpus_dir(corpus: SyntheticCorpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = corpus.world.vocab
    vocab.save(out / "vocab.txt")
    (out / "spec.json").write_text(corpus.world.spec.to_json() + "\n", encoding="utf-8")
    for name in ("train", "dev", "test"):
        write_corpus(out / f"{name}.tsv", getattr(corpus, name), vocab)
    write_hotwords(out / "hotwords.txt", corpus.hotwords, vocab)


def load_corpus_dir(data_dir) -> SyntheticCorpus:
    d = Path(data_dir)
    spec = SyntheticSpec.from_json((d / "spec.json").read_text(encoding="utf-8"))
    world = build_world(spec)
    vocab = Vocab.load(d / "vocab.txt")
    if vocab != world.vocab:
        raise VocabularyError(f"{d / 'vocab.txt'} does not match spec.json")
    splits = {n: read_corpus(d / f"{n}.tsv", vocab) for n in ("train", "dev", "test")}
    hotwords = read_hotwords(d / "hotwords.txt", vocab)
    return SyntheticCorpus(world, splits["train"], splits["dev"], splits["test"], hotwords)
