"""Deterministic synthetic "spoken token" corpus.

Each grapheme owns a fixed acoustic signature: even-indexed letters are pure
tones, odd-indexed letters are upward chirps, the space is a low hum. A clip
is the concatenation of its transcript's token waveforms plus additive
Gaussian noise, so the transcript of a concatenation is the concatenation of
the transcripts. Words never contain adjacent repeated letters, which keeps
every target CTC-feasible at any subsampling the encoder applies.

A clip can optionally model a recording channel: one random gain applied to
every token in the clip, plus off-transcript distractor tones rendered at a
fixed fraction of that gain. Against a spread of clip gains an absolute
amplitude threshold cannot separate letters from distractors (a distractor
in a loud clip is louder than a letter in a quiet one), so a model has to
read each token's level relative to its own clip, the way real recognizers
lean on per-utterance channel statistics.

A clip can also come from one of two speakers whose ladders are offset by
speaker_shift_steps rungs: the second speaker's letter i sounds exactly like
the first speaker's letter i + shift. Mid-ladder tones are then ambiguous in
isolation; reading them requires inferring the clip's speaker from tones
only one ladder reaches, which is whole-utterance evidence, not a per-frame
cue. The shift must be even so tones map to tones and chirps to chirps. In
this mode the space moves onto the ladder as well, two rungs below each
speaker's base, so word boundaries carry the same ambiguity as letters (the
second speaker's space is the first speaker's lowest letter) and a wrong
speaker read merges or splits words instead of only substituting letters.

Everything derives from (spec, seed): the same call writes byte-identical
WAV files and manifests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import TokenVocab
from .data import ManifestEntry, read_manifest, resolve_audio_path, write_manifest
from .features import AudioClip, read_wav, write_wav
from .rng import make_rng

_BASE_FREQ = 320.0
_FREQ_STEP = 1.25
_CHIRP_RISE = 1.4
_SPACE_FREQ = 150.0
_FADE_S = 0.005


@dataclass(frozen=True)
class SynthSpec:
    graphemes: str = "abcde"
    min_duration_s: float = 0.6
    max_duration_s: float = 2.4
    noise_level: float = 0.02
    sample_rate: int = 16000
    token_duration_s: float = 0.12
    language: str = "syn"
    gain_min: float = 1.0
    gain_max: float = 1.0
    distractor_level: float = 0.0
    distractor_rate: float = 0.0
    speaker_shift_steps: int = 0

    def __post_init__(self):
        if not self.graphemes or len(set(self.graphemes)) != len(self.graphemes):
            raise ValueError("graphemes must be non-empty and unique")
        if " " in self.graphemes:
            raise ValueError("the space token is implicit, list letters only")
        if self.speaker_shift_steps < 0 or self.speaker_shift_steps % 2:
            raise ValueError("speaker_shift_steps must be even and >= 0")
        top_step = len(self.graphemes) - 1 + self.speaker_shift_steps
        top = _BASE_FREQ * _FREQ_STEP ** top_step * _CHIRP_RISE
        if top >= self.sample_rate / 2:
            raise ValueError(f"too many graphemes: top frequency {top:.0f} Hz "
                             f"exceeds Nyquist")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ValueError("need 0 < min_duration_s <= max_duration_s")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if not 0 < self.gain_min <= self.gain_max:
            raise ValueError("need 0 < gain_min <= gain_max")
        if not 0 <= self.distractor_level < 1:
            raise ValueError("distractor_level must be in [0, 1)")
        if self.distractor_rate < 0:
            raise ValueError("distractor_rate must be nonnegative")


def vocab_for(spec: SynthSpec) -> TokenVocab:
    return TokenVocab(tuple(spec.graphemes) + (" ",))


def _fade(n: int, sample_rate: int) -> np.ndarray:
    k = min(n // 2, max(1, int(round(_FADE_S * sample_rate))))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, k))
    env[:k] = ramp
    env[-k:] = ramp[::-1]
    return env


def render_token(symbol: str, spec: SynthSpec, ladder_offset: int = 0) -> np.ndarray:
    n = int(round(spec.token_duration_s * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    if symbol == " " and not spec.speaker_shift_steps:
        wave = 0.3 * np.sin(2 * np.pi * _SPACE_FREQ * t)
    else:
        if symbol == " ":
            i = ladder_offset - 2
        else:
            i = spec.graphemes.index(symbol) + ladder_offset
        f0 = _BASE_FREQ * _FREQ_STEP ** i
        if i % 2 == 0:
            phase = f0 * t
        else:
            # linear sweep f0 -> rise*f0 over the token
            rate = (_CHIRP_RISE - 1.0) * f0 / (2 * spec.token_duration_s)
            phase = f0 * t + rate * t * t
        wave = 0.45 * np.sin(2 * np.pi * phase)
    return wave * _fade(n, spec.sample_rate)


def render_text(text: str, spec: SynthSpec, ladder_offset: int = 0) -> np.ndarray:
    if not text:
        raise ValueError("cannot render an empty transcript")
    return np.concatenate([render_token(ch, spec, ladder_offset) for ch in text])


def _draw_gain(rng, spec: SynthSpec) -> float:
    if spec.gain_min == spec.gain_max:
        return spec.gain_min
    return float(np.exp(rng.uniform(np.log(spec.gain_min),
                                    np.log(spec.gain_max))))


def _overlay_distractors(wave: np.ndarray, rng, gain: float,
                         spec: SynthSpec, ladder_offset: int = 0) -> np.ndarray:
    """Scatter off-transcript letter tones at distractor_level of the clip
    gain; they may overlap real tokens."""
    out = wave.copy()
    n_tok = int(round(spec.token_duration_s * spec.sample_rate))
    duration_s = wave.size / spec.sample_rate
    count = int(rng.poisson(spec.distractor_rate * duration_s))
    for _ in range(count):
        sym = spec.graphemes[int(rng.integers(len(spec.graphemes)))]
        start = int(rng.integers(0, max(1, wave.size - n_tok + 1)))
        tok = gain * spec.distractor_level * render_token(sym, spec, ladder_offset)
        end = min(out.size, start + tok.size)
        out[start:end] += tok[:end - start]
    return out


def sample_transcript(rng, num_tokens: int, spec: SynthSpec) -> str:
    """Words of 1-4 letters joined by single spaces, `num_tokens` characters
    total (spaces count); adjacent letters within a word never repeat."""
    letters = spec.graphemes
    words = []
    used = 0
    while used < num_tokens:
        budget = num_tokens - used - (1 if words else 0)
        if budget < 1:
            break
        length = min(int(rng.integers(1, 5)), budget)
        word = [letters[rng.integers(len(letters))]]
        while len(word) < length:
            c = letters[rng.integers(len(letters))]
            if c != word[-1]:
                word.append(c)
        words.append("".join(word))
        used += length + (1 if len(words) > 1 else 0)
    return " ".join(words)


def generate_corpus(spec: SynthSpec, num_clips: int, out_dir, seed: int,
                    prefix: str = "clip", manifest_name: str = "manifest.tsv") -> Path:
    """Write WAV clips plus their manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(num_clips):
        rng = make_rng(seed, "synth-clip", i)
        dur = rng.uniform(spec.min_duration_s, spec.max_duration_s)
        num_tokens = max(1, int(round(dur / spec.token_duration_s)))
        text = sample_transcript(rng, num_tokens, spec)
        gain = _draw_gain(rng, spec)
        offset = 0
        if spec.speaker_shift_steps:
            offset = int(rng.integers(2)) * spec.speaker_shift_steps
        wave = gain * render_text(text, spec, offset)
        if spec.distractor_rate > 0:
            wave = _overlay_distractors(wave, rng, gain, spec, offset)
        wave = wave + spec.noise_level * rng.normal(size=wave.shape)
        name = f"{prefix}{i:04d}.wav"
        clip = AudioClip(wave, spec.sample_rate)
        write_wav(out_dir / name, clip)
        entries.append(ManifestEntry(name, clip.duration_s, text, spec.language))
    manifest = out_dir / manifest_name
    write_manifest(entries, manifest)
    return manifest


def concatenate_corpus(manifest_path, k: int, out_dir,
                       manifest_name: str = "manifest.tsv",
                       spec: SynthSpec = SynthSpec(), seed: int = 0) -> Path:
    """Long-form evaluation set: consecutive groups of k clips joined with a
    spoken space between them; transcripts join with a space. A trailing
    group smaller than k is dropped.

    Separators carry the same noise level as the clips; a clean seam would
    be an audible tell that breaks models trained on noisy audio for reasons
    unrelated to sequence length."""
    if k < 1:
        raise ValueError("k must be >= 1")
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(manifest_path)
    out_entries = []
    for g in range(len(entries) // k):
        group = entries[g * k:(g + 1) * k]
        rng = make_rng(seed, "synth-concat", g)
        waves, texts = [], []
        for j, e in enumerate(group):
            if j:
                offset = 0
                if spec.speaker_shift_steps:
                    offset = int(rng.integers(2)) * spec.speaker_shift_steps
                sep = render_token(" ", spec, offset)
                waves.append(_draw_gain(rng, spec) * sep
                             + spec.noise_level * rng.normal(size=sep.size))
            waves.append(read_wav(resolve_audio_path(e, manifest_path)).samples)
            texts.append(e.transcript or "")
        name = f"long{g:04d}.wav"
        clip = AudioClip(np.concatenate(waves), spec.sample_rate)
        write_wav(out_dir / name, clip)
        out_entries.append(ManifestEntry(name, clip.duration_s,
                                         " ".join(texts), group[0].language))
    manifest = out_dir / manifest_name
    write_manifest(out_entries, manifest)
    return manifest
