"""Inference throughput: audio seconds processed per wall-clock second.

The convention is speed = 1 / RTF, so bigger is better and 1.0 means real
time. Batches are fully packed: every sequence in the batch has the same
frame count, so reported throughput reflects sustained compute, not padding.
Numbers are hardware-bound; the report records the platform and the spread
across repeats so readers can judge the noise band.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .encoder import ConformerEncoder
from .rng import make_rng


@dataclass
class RtfReport:
    pattern: str
    batch_size: int
    param_count: int
    clip_seconds: float
    audio_seconds: float
    wall_seconds: float
    speed: float
    runs: tuple
    noise_band: float
    hardware: str

    def lines(self) -> list:
        per_run = ", ".join(f"{s:.3f}" for s in self.runs)
        return [
            f"pattern          {self.pattern}",
            f"batch_size       {self.batch_size}",
            f"param_count      {self.param_count}",
            f"clip_seconds     {self.clip_seconds:g}",
            f"audio_seconds    {self.audio_seconds:g}",
            f"wall_seconds     {self.wall_seconds:.4f}",
            f"speed_1_over_rtf {self.speed:.3f}",
            f"per_run_speeds   {per_run}",
            f"noise_band       {self.noise_band:.3f}",
            f"hardware         {self.hardware}",
        ]

    def machine_line(self) -> str:
        return (f"rtf pattern={self.pattern} batch_size={self.batch_size} "
                f"param_count={self.param_count} clip_seconds={self.clip_seconds:g} "
                f"speed={self.speed:.6f} noise_band={self.noise_band:.6f}")


def rtf_bench(encoder: ConformerEncoder, clip_seconds: float, batch_size: int,
              repeats: int = 3, hop_s: float = 0.01, seed: int = 0) -> RtfReport:
    """Time `repeats` forward passes over one packed batch of random feature
    sequences; reports the median speed and the relative spread."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    frames = int(round(clip_seconds / hop_s))
    rng = make_rng(seed, "rtf-features")
    batch = [rng.normal(size=(frames, encoder.input_dim)) for _ in range(batch_size)]
    audio_seconds = batch_size * frames * hop_s

    with no_grad():
        encoder.forward(batch[0])  # warm caches before timing
        speeds = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for feats in batch:
                encoder.forward(feats)
            wall = time.perf_counter() - t0
            speeds.append(audio_seconds / wall)
    speeds_arr = np.array(speeds)
    median = float(np.median(speeds_arr))
    band = float((speeds_arr.max() - speeds_arr.min()) / median) if repeats > 1 else 0.0
    params = sum(p.data.size for p in encoder.params().values())
    return RtfReport(
        pattern=str(encoder.pattern),
        batch_size=batch_size,
        param_count=params,
        clip_seconds=clip_seconds,
        audio_seconds=audio_seconds,
        wall_seconds=audio_seconds / median,
        speed=median,
        runs=tuple(float(s) for s in speeds),
        noise_band=band,
        hardware=f"{platform.platform()} / {platform.processor() or 'unknown-cpu'}",
    )
