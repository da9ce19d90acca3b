"""CER and hotword recall / precision / F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

R1_THRESHOLD = 0.40


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer(ref: Sequence, hyp: Sequence) -> float:
    return edit_distance(ref, hyp) / max(1, len(ref))


def corpus_cer(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    """Total edits over total reference tokens."""
    errors = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return errors / max(1, sum(len(r) for r in refs))


def count_occurrences(seq: Sequence, phrase: Sequence) -> int:
    """Contiguous, possibly overlapping, exact occurrences of ``phrase`` in ``seq``."""
    n, m = len(seq), len(phrase)
    if m == 0 or m > n:
        return 0
    seq, phrase = list(seq), list(phrase)
    return sum(seq[i:i + m] == phrase for i in range(n - m + 1))


@dataclass
class HotwordRow:
    hotword: tuple
    ref_count: int
    recalled_count: int
    hyp_count: int
    matched_hyp_count: int
    r1: bool = False

    @property
    def recall(self) -> float:
        return self.recalled_count / self.ref_count if self.ref_count else 0.0

    @property
    def precision(self) -> float:
        return self.matched_hyp_count / self.hyp_count if self.hyp_count else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class EvalReport:
    cer: float
    rows: list[HotwordRow] = field(default_factory=list)

    def _avg(self, rows) -> tuple[float, float, float]:
        rec = [r.recall for r in rows if r.ref_count > 0]
        pre = [r.precision for r in rows if r.hyp_count > 0]
        f1 = [r.f1 for r in rows if r.ref_count > 0 or r.hyp_count > 0]
        mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
        return mean(rec), mean(pre), mean(f1)

    @property
    def overall(self) -> tuple[float, float, float]:
        return self._avg(self.rows)

    @property
    def r1(self) -> tuple[float, float, float]:
        return self._avg([r for r in self.rows if r.r1])

    def format(self, decode=lambda h: " ".join(map(str, h))) -> str:
        r, p, f = self.overall
        r1r, r1p, r1f = self.r1
        n_r1 = sum(r.r1 for r in self.rows)
        lines = [
            f"CER\t{self.cer:.6f}",
            f"hotwords\t{len(self.rows)}",
            f"avg_R/P/F\t{r:.4f}\t{p:.4f}\t{f:.4f}",
            f"r1_hotwords\t{n_r1}",
            f"r1_avg_R/P/F\t{r1r:.4f}\t{r1p:.4f}\t{r1f:.4f}",
            "# precision = hyp occurrences matched (per utterance, min with ref count) / hyp occurrences",
            "hotword\tref\trecalled\thyp\tmatched_hyp\trecall\tprecision\tf1\tr1",
        ]
        for row in self.rows:
            lines.append(f"{decode(row.hotword)}\t{row.ref_count}\t{row.recalled_count}\t"
                         f"{row.hyp_count}\t{row.matched_hyp_count}\t{row.recall:.4f}\t"
                         f"{row.precision:.4f}\t{row.f1:.4f}\t{int(row.r1)}")
        return "\n".join(lines) + "\n"


def hotword_rpf(refs: Mapping[str, Sequence], hyps: Mapping[str, Sequence],
                hotwords: Sequence[Sequence]) -> list[HotwordRow]:
    """Per-hotword counts; only fully predicted occurrences count as recalled.

    Per utterance, ``min(ref, hyp)`` occurrences are both recalled and
    matched, so one reference occurrence cannot justify two hypothesis ones.
    """
    rows = []
    for hw in hotwords:
        rc = rec = hc = mh = 0
        for uid, ref in refs.items():
            hyp = hyps.get(uid, [])
            nr, nh = count_occurrences(ref, hw), count_occurrences(hyp, hw)
            rc += nr
            hc += nh
            rec += min(nr, nh)
            mh += min(nr, nh)
        for uid, hyp in hyps.items():
            if uid not in refs:
                hc += count_occurrences(hyp, hw)
        rows.append(HotwordRow(tuple(hw), rc, rec, hc, mh))
    return rows


def classify_r1(base_recalls: Sequence[float], threshold: float = R1_THRESHOLD) -> list[bool]:
    return [r < threshold for r in base_recalls]


def evaluate(refs: Mapping[str, Sequence], hyps: Mapping[str, Sequence],
             hotwords: Sequence[Sequence], base_hyps: Mapping[str, Sequence] | None = None
             ) -> EvalReport:
    """CER over ``refs`` plus hotword rows; R1 flags come from ``base_hyps``."""
    ids = list(refs)
    report = EvalReport(corpus_cer([refs[i] for i in ids], [hyps.get(i, []) for i in ids]),
                        hotword_rpf(refs, hyps, hotwords))
    if base_hyps is not None:
        base = hotword_rpf(refs, base_hyps, hotwords)
        for row, flag in zip(report.rows, classify_r1([b.recall for b in base])):
            row.r1 = flag
    return report
