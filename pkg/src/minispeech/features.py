"""Waveform handling and the log-mel frontend.

Frames are 25 ms Hann windows hopped every 10 ms; a clip of n samples yields
1 + floor((n - window) / hop) frames. Filterbank: triangular filters spaced
evenly on the HTK mel scale (2595 * log10(1 + f/700)) between 125 and 7600 Hz,
applied to the one-sided power spectrum of each zero-padded 1024-point frame.
Energies are floored at 1e-10 before the natural log, so scaling a waveform
by a > 0 shifts every above-floor coefficient by exactly 2*log(a).

Feature dump format (cache files): a text header of "key=value" lines,
one per line, terminated by a line reading "data", followed by the feature
matrix as raw row-major little-endian float64. Header keys: format (always
msfeat1), frames, dim, hop_ms.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal


@dataclass
class AudioClip:
    """Mono waveform, float64 samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioClip expects mono 1-D samples, got shape {self.samples.shape}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    """Log-mel frames, shape (num_frames, num_mels)."""

    data: np.ndarray
    hop_s: float

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    num_mels: int = 128
    fmin_hz: float = 125.0
    fmax_hz: float = 7600.0
    n_fft: int = 1024
    floor: float = 1e-10


def read_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM WAV file."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip):
    """Write a mono 16-bit PCM WAV file; samples are clipped to the int16 range."""
    scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(scaled.tobytes())


def resample(clip: AudioClip, new_rate: int) -> AudioClip:
    """Polyphase resample; output has round(n * new_rate / old_rate) samples."""
    if new_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), new_rate)
    g = gcd(new_rate, clip.sample_rate)
    out = signal.resample_poly(clip.samples, new_rate // g, clip.sample_rate // g)
    target = int(round(len(clip.samples) * new_rate / clip.sample_rate))
    if len(out) < target:
        out = np.pad(out, (0, target - len(out)))
    return AudioClip(out[:target], new_rate)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular HTK-mel filters as a (num_mels, n_fft//2 + 1) matrix."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    if not 0 < cfg.fmin_hz < cfg.fmax_hz <= cfg.sample_rate / 2:
        raise ValueError(f"bad mel band edges {cfg.fmin_hz}..{cfg.fmax_hz} at rate {cfg.sample_rate}")
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.num_mels + 2))
    bin_hz = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    fb = np.zeros((cfg.num_mels, len(bin_hz)))
    for m in range(cfg.num_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def num_frames(num_samples: int, cfg: FeatureConfig) -> int:
    win = int(round(cfg.window_ms * cfg.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * cfg.sample_rate / 1000.0))
    if num_samples < win:
        return 0
    return 1 + (num_samples - win) // hop


def log_mel(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    """Log-mel features of a clip already at cfg.sample_rate."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != config rate {cfg.sample_rate}; resample first")
    win = int(round(cfg.window_ms * cfg.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * cfg.sample_rate / 1000.0))
    if win > cfg.n_fft:
        raise ValueError(f"window {win} exceeds n_fft {cfg.n_fft}")
    T = num_frames(len(clip.samples), cfg)
    if T == 0:
        raise ValueError(f"clip of {len(clip.samples)} samples is shorter than one {win}-sample window")
    window = signal.get_window("hann", win, fftbins=True)
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    frames = clip.samples[idx] * window
    spec = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    mel = spec @ mel_filterbank(cfg).T
    out = np.log(np.maximum(mel, cfg.floor))
    return FeatureSequence(out, hop_s=cfg.hop_ms / 1000.0)


def stack_frames(feats: FeatureSequence, factor: int) -> FeatureSequence:
    """Concatenate non-overlapping groups of `factor` frames along the feature
    axis; trailing frames that do not fill a group are dropped."""
    if factor < 1:
        raise ValueError(f"stack factor must be >= 1, got {factor}")
    T = (feats.num_frames // factor) * factor
    if T == 0:
        raise ValueError(f"{feats.num_frames} frames cannot fill one stack of {factor}")
    stacked = feats.data[:T].reshape(T // factor, factor * feats.dim)
    return FeatureSequence(stacked.copy(), hop_s=feats.hop_s * factor)


def save_features(path, feats: FeatureSequence):
    with open(path, "wb") as f:
        header = (f"format=msfeat1\nframes={feats.num_frames}\ndim={feats.dim}\n"
                  f"hop_ms={feats.hop_s * 1000.0:g}\ndata\n")
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(feats.data, dtype="<f8").tobytes())


def load_features(path) -> FeatureSequence:
    with open(path, "rb") as f:
        fields = {}
        while True:
            line = f.readline().decode("ascii").strip()
            if line == "data":
                break
            if not line:
                raise ValueError(f"{path}: truncated feature header")
            key, _, value = line.partition("=")
            fields[key] = value
        if fields.get("format") != "msfeat1":
            raise ValueError(f"{path}: unrecognized feature format {fields.get('format')!r}")
        T, D = int(fields["frames"]), int(fields["dim"])
        blob = f.read(T * D * 8)
    data = np.frombuffer(blob, dtype="<f8").reshape(T, D).copy()
    return FeatureSequence(data, hop_s=float(fields["hop_ms"]) / 1000.0)
