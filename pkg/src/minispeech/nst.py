"""Noisy student training: pseudo-labeling, rate filtering, quota mixing.

A trained teacher greedy-decodes unlabeled audio; hypotheses pass a
words-per-second plausibility filter (empty hypotheses always drop); the
surviving pseudo-labeled items mix with supervised data under an exact
cumulative quota, not random sampling, so two runs produce byte-identical
manifests and identical training streams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import LabelSequence, TokenVocab
from .data import ManifestEntry, read_manifest
from .features import AudioClip, FeatureConfig, log_mel, read_wav
from .models import AsrModel
from .rng import make_rng

logger = logging.getLogger(__name__)

DEFAULT_MIN_WPS = 0.5
DEFAULT_MAX_WPS = 6.0


@dataclass
class PseudoLabeledItem:
    entry: ManifestEntry
    hypothesis: LabelSequence
    text: str
    duration_s: float
    words_per_second: float
    kept: bool = True


def pseudo_label(teacher: AsrModel, vocab: TokenVocab, manifest_path,
                 fcfg: FeatureConfig = FeatureConfig()) -> list:
    """Greedy-decode every clip in the manifest. Unreadable clips are logged
    and skipped; the run continues."""
    items = []
    for entry in read_manifest(manifest_path):
        if entry.duration_s <= 0:
            logger.warning("skipping %s: nonpositive duration", entry.path)
            continue
        try:
            clip = read_entry_audio(entry, manifest_path)
            feats = log_mel(clip, fcfg)
        except (OSError, ValueError, EOFError) as exc:
            logger.warning("skipping %s: %s", entry.path, exc)
            continue
        hyp = teacher.decode(feats.data)
        text = vocab.decode(hyp)
        wps = len(text.split()) / entry.duration_s
        items.append(PseudoLabeledItem(entry, hyp, text, entry.duration_s, wps))
    return items


def filter_pseudo(items, min_wps: float = DEFAULT_MIN_WPS,
                  max_wps: float = DEFAULT_MAX_WPS) -> list:
    """Keep items with min_wps <= rate <= max_wps (inclusive); empty
    hypotheses always drop. Marks `kept` on every item, returns the kept."""
    if not min_wps < max_wps:
        raise ValueError(f"need min_wps < max_wps, got {min_wps} >= {max_wps}")
    for item in items:
        item.kept = bool(item.text.strip()) and min_wps <= item.words_per_second <= max_wps
    return [i for i in items if i.kept]


def pseudo_manifest_lines(items) -> str:
    lines = []
    for i in items:
        text = i.text if i.text else "-"
        lines.append(f"{i.entry.path}\t{i.duration_s:.3f}\t{text}\t"
                     f"{i.words_per_second:.6f}\t{'true' if i.kept else 'false'}")
    return "".join(line + "\n" for line in lines)


def write_pseudo_manifest(items, path) -> None:
    Path(path).write_text(pseudo_manifest_lines(items))


def kept_entries(items, manifest_path=None) -> list:
    """Kept pseudo-labels as ordinary manifest entries for training. With a
    manifest_path, audio paths absolutize against it so the result loads from
    anywhere (any `#start:end` suffix is preserved)."""
    out = []
    for i in items:
        if not i.kept:
            continue
        path = i.entry.path
        if manifest_path is not None:
            base, _, span = path.partition("#")
            p = Path(base)
            if not p.is_absolute():
                p = (Path(manifest_path).parent / p).resolve()
            path = str(p) + (f"#{span}" if span else "")
        out.append(ManifestEntry(path, i.duration_s, i.text, i.entry.language))
    return out


def segment_entries(manifest_path, min_s: float, max_s: float, seed: int) -> list:
    """Optional pre-labeling step: split long clips into random-length
    unlabeled segments within [min_s, max_s]. Returns virtual entries whose
    paths carry a `#start:end` seconds-range suffix understood by
    read_entry_audio(); a trailing remainder shorter than min_s is dropped."""
    if not 0 < min_s <= max_s:
        raise ValueError("need 0 < min_s <= max_s")
    out = []
    for k, entry in enumerate(read_manifest(manifest_path)):
        rng = make_rng(seed, "segment", k)
        start = 0.0
        while entry.duration_s - start >= min_s:
            length = min(float(rng.uniform(min_s, max_s)), entry.duration_s - start)
            out.append(ManifestEntry(f"{entry.path}#{start:.3f}:{start + length:.3f}",
                                     length, None, entry.language))
            start += length
    return out


def read_entry_audio(entry: ManifestEntry, manifest_path):
    """Read an entry's audio; paths may carry a `#start:end` seconds suffix
    selecting a sub-range."""
    path, _, span = entry.path.partition("#")
    p = Path(path)
    if not p.is_absolute():
        p = Path(manifest_path).parent / p
    clip = read_wav(p)
    if span:
        a, b = span.split(":")
        i0 = int(round(float(a) * clip.sample_rate))
        i1 = int(round(float(b) * clip.sample_rate))
        clip = AudioClip(clip.samples[i0:i1], clip.sample_rate)
    return clip


class MixStream:
    """Deterministic two-source batch stream with exact cumulative quotas.

    After b batches, the supervised count is round(ratio * batch_size * b)
    exactly; each source reshuffles per epoch from its own seeded stream and
    cycles when exhausted, counting epochs.
    """

    def __init__(self, supervised: list, pseudo: list, mixing_ratio: float,
                 batch_size: int, seed: int):
        if not 0 < mixing_ratio <= 1:
            raise ValueError(f"mixing_ratio must be in (0, 1], got {mixing_ratio}")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not supervised:
            raise ValueError("supervised source is empty")
        if mixing_ratio < 1 and not pseudo:
            raise ValueError("pseudo source is empty but mixing_ratio < 1")
        self.sources = {"supervised": supervised, "pseudo": pseudo}
        self.ratio = mixing_ratio
        self.batch_size = batch_size
        self.seed = seed
        self.epochs = {"supervised": 0, "pseudo": 0}
        self._pos = {"supervised": 0, "pseudo": 0}
        self._perm = {name: self._shuffle(name, 0)
                      for name in self.sources if self.sources[name]}
        self._batches = 0
        self._supervised_emitted = 0

    def _shuffle(self, name: str, epoch: int) -> np.ndarray:
        return make_rng(self.seed, f"mix-{name}", epoch).permutation(
            len(self.sources[name]))

    def _next(self, name: str):
        items = self.sources[name]
        if self._pos[name] == len(items):
            self.epochs[name] += 1
            self._pos[name] = 0
            self._perm[name] = self._shuffle(name, self.epochs[name])
        item = items[self._perm[name][self._pos[name]]]
        self._pos[name] += 1
        return item

    def next_batch(self) -> list:
        self._batches += 1
        quota = round(self.ratio * self.batch_size * self._batches)
        n_sup = min(self.batch_size, quota - self._supervised_emitted)
        self._supervised_emitted += n_sup
        batch = [self._next("supervised") for _ in range(n_sup)]
        batch += [self._next("pseudo") for _ in range(self.batch_size - n_sup)]
        return batch

    def batches(self, n: int) -> list:
        return [self.next_batch() for _ in range(n)]
