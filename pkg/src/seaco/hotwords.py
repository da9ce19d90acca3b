"""Random hotword sampling and hotword-position-aware bias targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BLANK, NO_BIAS
from .numerics import ConfigurationError

DEFAULT_HOTWORD = (BLANK,)


@dataclass
class SamplingConfig:
    r_b: float = 0.75
    r_u: float = 0.75
    l_min: int = 2
    l_max: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.r_b <= 1.0 and 0.0 <= self.r_u <= 1.0):
            raise ConfigurationError("sampling ratios must lie in [0, 1]")
        if not 1 <= self.l_min <= self.l_max:
            raise ConfigurationError("need 1 <= l_min <= l_max")


class HotwordList:
    """Ordered, duplicate-free hotwords; entry 0 is always the default ``<blank>``."""

    def __init__(self, entries: Sequence[Sequence[int]] = ()):
        self.entries: list[tuple[int, ...]] = [DEFAULT_HOTWORD]
        seen = {DEFAULT_HOTWORD}
        for h in entries:
            h = tuple(int(t) for t in h)
            if not h or h in seen:
                continue
            seen.add(h)
            self.entries.append(h)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, HotwordList) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"HotwordList({self.entries!r})"

    @property
    def user_entries(self) -> list[tuple[int, ...]]:
        return self.entries[1:]

    def subset(self, indices: Sequence[int]) -> "HotwordList":
        """Keep the listed entry indices (the default entry is always kept)."""
        keep = sorted(set(int(i) for i in indices) - {0})
        return HotwordList([self.entries[i] for i in keep])


def sample_hotwords(batch_targets: Sequence[Sequence[int]], cfg: SamplingConfig,
                    rng: np.random.Generator, dedup: bool = True
                    ) -> HotwordList | list[tuple[int, ...]]:
    """Sample spans from a batch of transcripts.

    The batch is active with probability ``r_b``; inside an active batch
    each utterance contributes one contiguous span with probability
    ``r_u``, of uniform length in ``[l_min, min(l_max, len)]`` and uniform
    start.  Utterances shorter than ``l_min`` contribute nothing.  With
    ``dedup=False`` the raw sampled list (including the default entry) is
    returned for inspection.
    """
    if not len(batch_targets):
        raise ValueError("sample_hotwords: empty batch")
    sampled: list[tuple[int, ...]] = [DEFAULT_HOTWORD]
    if rng.random() < cfg.r_b:
        for y in batch_targets:
            if rng.random() >= cfg.r_u:
                continue
            hi = min(cfg.l_max, len(y))
            if hi < cfg.l_min:
                continue
            n = int(rng.integers(cfg.l_min, hi + 1))
            start = int(rng.integers(0, len(y) - n + 1))
            sampled.append(tuple(int(t) for t in y[start:start + n]))
    return HotwordList(sampled[1:]) if dedup else sampled


def build_bias_target(y: Sequence[int], hotwords: HotwordList | Sequence[Sequence[int]],
                      no_bias: int = NO_BIAS) -> list[int]:
    """Keep tokens covered by a matching hotword span, replace the rest by ``no_bias``.

    Greedy left-to-right: at each position the longest matching
    non-default hotword wins (earlier list index on ties) and the scan
    jumps past it.
    """
    entries = hotwords.user_entries if isinstance(hotwords, HotwordList) else [
        tuple(h) for h in hotwords if tuple(h) != DEFAULT_HOTWORD]
    y = list(y)
    out = [no_bias] * len(y)
    i = 0
    while i < len(y):
        best = None
        for h in entries:
            n = len(h)
            if n and (best is None or n > len(best)) and tuple(y[i:i + n]) == h:
                best = h
        if best is None:
            i += 1
            continue
        out[i:i + len(best)] = best
        i += len(best)
    return out

