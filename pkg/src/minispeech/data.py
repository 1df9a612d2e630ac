"""Corpus manifests and utterance loading.

A manifest is one record per line, tab-separated: audio path, duration in
seconds, transcript (or "-" when unlabeled), language tag. Paths are
relative to the manifest's directory unless absolute, so a corpus directory
can be moved wholesale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .ctc import LabelSequence, TokenVocab
from .features import FeatureConfig, FeatureSequence, log_mel, read_wav


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    duration_s: float
    transcript: str | None
    language: str

    def line(self) -> str:
        text = "-" if self.transcript is None else self.transcript
        return f"{self.path}\t{self.duration_s:.3f}\t{text}\t{self.language}"


def read_manifest(path) -> list:
    path = Path(path)
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, "
                             f"got {len(parts)}")
        audio, dur, text, lang = parts
        transcript = None if text == "-" else text
        entries.append(ManifestEntry(audio, float(dur), transcript, lang))
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(e.line() + "\n" for e in entries))


def resolve_audio_path(entry: ManifestEntry, manifest_path) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


@dataclass
class Utterance:
    entry: ManifestEntry
    features: FeatureSequence
    labels: LabelSequence | None


def load_utterances(manifest_path, feature_config: FeatureConfig,
                    vocab: TokenVocab | None = None) -> list:
    """Featurize every clip in a manifest; transcripts encode when a
    vocabulary is given, otherwise labels stay None."""
    out = []
    for entry in read_manifest(manifest_path):
        clip = read_wav(resolve_audio_path(entry, manifest_path))
        feats = log_mel(clip, feature_config)
        labels = None
        if vocab is not None and entry.transcript is not None:
            labels = vocab.encode(entry.transcript)
        out.append(Utterance(entry, feats, labels))
    return out
