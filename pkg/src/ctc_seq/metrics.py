"""Character and syllable error rates via token-level edit distance."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, List, Sequence, Tuple

from .errors import DataError
from .tokenize import char_tokenize, syllable_tokenize


class UndefinedRateError(DataError, ValueError):
    """Error rate requested against an empty reference."""


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )

    def rate(self) -> float:
        if self.ref_len == 0:
            raise UndefinedRateError("error rate is undefined for an empty reference")
        return self.errors / self.ref_len

    def to_dict(self) -> dict:
        return asdict(self)


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost Levenshtein alignment of two token sequences.

    Among minimum-cost alignments the one with the fewest insertions, then
    the fewest deletions, is reported.
    """
    n, m = len(ref), len(hyp)
    # each cell holds (cost, insertions, deletions); tuples compare lexicographically
    prev = [(j, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i)]
        r = ref[i - 1]
        for j in range(1, m + 1):
            c, ins, dels = prev[j - 1]
            diag = (c + (r != hyp[j - 1]), ins, dels)
            c, ins, dels = prev[j]
            up = (c + 1, ins, dels + 1)
            c, ins, dels = cur[j - 1]
            left = (c + 1, ins + 1, dels)
            cur.append(min(diag, up, left))
        prev = cur
    cost, ins, dels = prev[m]
    return EditCounts(cost - ins - dels, dels, ins, n)


def _counts(ref_text: str, hyp_text: str, tokenize) -> EditCounts:
    ref = tokenize(ref_text)
    if not ref:
        raise UndefinedRateError("reference text is empty")
    return edit_distance(ref, tokenize(hyp_text))


def char_counts(ref_text: str, hyp_text: str) -> EditCounts:
    return _counts(ref_text, hyp_text, char_tokenize)


def syllable_counts(ref_text: str, hyp_text: str) -> EditCounts:
    return _counts(ref_text, hyp_text, syllable_tokenize)


def cer(ref_text: str, hyp_text: str) -> float:
    """Character error rate; spaces count as characters. Not clamped to 1."""
    return char_counts(ref_text, hyp_text).rate()


def ser(ref_text: str, hyp_text: str) -> float:
    return syllable_counts(ref_text, hyp_text).rate()


def corpus_rates(pairs: Iterable[Tuple[str, str]]) -> Tuple[float, float]:
    """Pooled (CER, SER) over (reference, hypothesis) pairs: total errors / total reference tokens."""
    c_total, s_total = EditCounts(), EditCounts()
    for ref, hyp in pairs:
        c_total = c_total + char_counts(ref, hyp)
        s_total = s_total + syllable_counts(ref, hyp)
    return c_total.rate(), s_total.rate()


def evaluation_report(items: Iterable[Tuple[str, str, str]]) -> dict:
    """Build the JSON-ready report for ``(clip_id, reference, hypothesis)`` triples."""
    per_utt: List[dict] = []
    c_total, s_total = EditCounts(), EditCounts()
    for clip_id, ref, hyp in items:
        cc, sc = char_counts(ref, hyp), syllable_counts(ref, hyp)
        c_total, s_total = c_total + cc, s_total + sc
        per_utt.append({
            "clip_id": clip_id,
            "cer": cc.rate(),
            "ser": sc.rate(),
            "counts": {"char": cc.to_dict(), "syllable": sc.to_dict()},
            "reference": ref,
            "hypothesis": hyp,
        })
    if not per_utt:
        raise UndefinedRateError("no utterances to evaluate")
    return {
        "cer": c_total.rate(),
        "ser": s_total.rate(),
        "totals": {"char": c_total.to_dict(), "syllable": s_total.to_dict()},
        "num_utterances": len(per_utt),
        "utterances": per_utt,
    }
