"""CTC loss over the blank-interleaved lattice, its brute-force oracle, and
greedy decoding.

Everything is log-space with log-add-exp; there is no probability-space
path. Blank is always id 0. An impossible target (more symbols than frames
after accounting for repeated labels, which need a separating blank) yields
an infinite loss carrying no gradient, not an exception; ctc_feasible lets
callers screen first.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, _make

BLANK_ID = 0


@dataclass(frozen=True)
class TokenVocab:
    """Grapheme inventory; id 0 is reserved for blank, graphemes start at 1."""

    symbols: tuple

    def __init__(self, symbols):
        syms = tuple(symbols)
        if len(set(syms)) != len(syms):
            raise ValueError("vocab symbols must be unique")
        if any(len(s) != 1 for s in syms):
            raise ValueError("vocab symbols must be single graphemes")
        object.__setattr__(self, "symbols", syms)

    @property
    def size(self) -> int:
        """Model output dimension: graphemes plus the blank."""
        return len(self.symbols) + 1

    def encode(self, text: str) -> "LabelSequence":
        table = {s: i + 1 for i, s in enumerate(self.symbols)}
        try:
            return LabelSequence([table[ch] for ch in text])
        except KeyError as e:
            raise ValueError(f"grapheme {e.args[0]!r} not in vocab") from None

    def decode(self, labels: "LabelSequence") -> str:
        return "".join(self.symbols[i - 1] for i in labels.ids)


@dataclass
class LabelSequence:
    """Blank-free token ids (each >= 1)."""

    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if any(i < 1 for i in self.ids):
            raise ValueError(f"label ids must be >= 1 (blank is reserved), got {self.ids}")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return isinstance(other, LabelSequence) and self.ids == other.ids


def collapse(path, blank: int = BLANK_ID) -> list:
    """Merge consecutive repeats, then drop blanks (the CTC path-to-label map)."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank]


def min_frames(target: LabelSequence) -> int:
    """Shortest path length that can emit the target (repeats need a blank)."""
    reps = sum(1 for a, b in zip(target.ids, target.ids[1:]) if a == b)
    return len(target) + reps


def ctc_feasible(num_frames: int, target: LabelSequence) -> bool:
    return num_frames >= min_frames(target)


def ctc_brute_force(log_probs: np.ndarray, target: LabelSequence) -> float:
    """Exact negative log likelihood by enumerating all V^T paths.

    Test oracle only; rejects T > 8 or V > 5.
    """
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    T, V = lp.shape
    if T > 8 or V > 5:
        raise ValueError(f"brute force limited to T<=8, V<=5; got T={T}, V={V}")
    want = list(target.ids)
    total = -np.inf
    for path in itertools.product(range(V), repeat=T):
        if collapse(path) == want:
            total = np.logaddexp(total, sum(lp[t, v] for t, v in enumerate(path)))
    return float(-total)


def _extended(target: LabelSequence) -> np.ndarray:
    """Blank-interleaved label string: blank, y1, blank, ..., yL, blank."""
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target.ids
    return ext


def ctc_loss(log_probs: Tensor, target: LabelSequence) -> Tensor:
    """Negative log likelihood of target under per-frame log distributions.

    log_probs is (T, V) with rows summing to one in probability space; the
    gradient is the standard alpha-beta occupancy result, computed here
    rather than by graph traversal.
    """
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss: expected (T, V) log_probs, got {log_probs.shape}")
    lp = log_probs.data
    T, V = lp.shape
    if any(i >= V for i in target.ids):
        raise ValueError(f"target ids {target.ids} exceed vocab size {V}")
    sums = np.exp(lp).sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-3):
        raise ValueError("ctc_loss: rows of exp(log_probs) must sum to 1")
    if not ctc_feasible(T, target):
        return Tensor(np.inf)

    ext = _extended(target)
    S = len(ext)
    # skip transition s-2 -> s is legal when the state is a label differing
    # from the label two back
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK_ID) & (ext[2:] != ext[:-2])

    def shift_right(v, k):
        out = np.full_like(v, -np.inf)
        if k < len(v):
            out[k:] = v[: len(v) - k]
        return out

    def shift_left(v, k):
        out = np.full_like(v, -np.inf)
        if k < len(v):
            out[: len(v) - k] = v[k:]
        return out

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        stay = alpha[t - 1]
        prev1 = shift_right(alpha[t - 1], 1)
        prev2 = np.where(can_skip, shift_right(alpha[t - 1], 2), -np.inf)
        alpha[t] = np.logaddexp(np.logaddexp(stay, prev1), prev2) + lp[t, ext]

    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    loss_val = np.array(-log_p)

    def backward():
        beta = np.full((T, S), -np.inf)
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        skip_from = np.zeros(S, dtype=bool)  # s may skip into s+2
        if S > 2:
            skip_from[:-2] = can_skip[2:]
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1] + lp[t + 1, ext]
            nxt1 = shift_left(nxt, 1)
            nxt2 = np.where(skip_from, shift_left(nxt, 2), -np.inf)
            beta[t] = np.logaddexp(np.logaddexp(nxt, nxt1), nxt2)
        occ = alpha + beta  # log joint of passing through state s at frame t
        acc = np.full((T, V), -np.inf)
        for s in range(S):
            acc[:, ext[s]] = np.logaddexp(acc[:, ext[s]], occ[:, s])
        grad = -np.exp(acc - log_p)
        log_probs.grad += out.grad * grad

    out = _make(loss_val, (log_probs,), backward)
    return out


def ctc_greedy_decode(log_probs) -> LabelSequence:
    """Frame-wise argmax, collapse repeats, drop blanks."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    path = np.argmax(lp, axis=1)
    return LabelSequence(collapse(path))
