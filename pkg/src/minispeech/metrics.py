"""Word and character error rates with a substitution/deletion/insertion split.

Unit-cost Levenshtein alignment; ties in the backtrace prefer match or
substitution, then deletion, then insertion, so the split is deterministic
(the total S+D+I always equals the edit distance either way).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorBreakdown:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def error_rate(self) -> float:
        if self.ref_length == 0:
            raise ValueError("error rate undefined for empty reference")
        return self.errors / self.ref_length

    @property
    def deletion_rate(self) -> float:
        if self.ref_length == 0:
            raise ValueError("deletion rate undefined for empty reference")
        return self.deletions / self.ref_length

    def __add__(self, other: "ErrorBreakdown") -> "ErrorBreakdown":
        return ErrorBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_length + other.ref_length,
        )


def edit_breakdown(reference, hypothesis) -> ErrorBreakdown:
    """Align two token sequences and count substitutions/deletions/insertions."""
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise ValueError("empty reference: error rate undefined")
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)
    out = ErrorBreakdown(ref_length=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                out.substitutions += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            out.deletions += 1
            i -= 1
        else:
            out.insertions += 1
            j -= 1
    return out


def wer(reference_words, hypothesis_words) -> float:
    """Word error rate: edit distance over words / reference word count."""
    return edit_breakdown(reference_words, hypothesis_words).error_rate


def cer(reference: str, hypothesis: str) -> float:
    """Character error rate; whitespace runs collapse to single spaces first."""
    return edit_breakdown(normalize_chars(reference), normalize_chars(hypothesis)).error_rate


def normalize_chars(text: str) -> list[str]:
    return list(" ".join(text.split()))
