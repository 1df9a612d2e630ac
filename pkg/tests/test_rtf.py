"""Throughput benchmark report shape and arithmetic."""

import pytest

from minispeech.encoder import AttentionPattern, ConformerConfig, ConformerEncoder
from minispeech.rtf import rtf_bench


def tiny_encoder(pattern="local:4,4"):
    cfg = ConformerConfig(num_layers=1, model_dim=16, attention_heads=2,
                          conv_kernel_size=3, subsampling_factor=4, stem="stack")
    return ConformerEncoder(cfg, AttentionPattern.parse(pattern), 16, seed=0)


def test_report_arithmetic():
    report = rtf_bench(tiny_encoder(), clip_seconds=0.4, batch_size=2, repeats=3)
    assert report.audio_seconds == pytest.approx(0.8)
    assert report.speed > 0
    assert report.wall_seconds == pytest.approx(report.audio_seconds / report.speed)
    assert len(report.runs) == 3
    assert min(report.runs) <= report.speed <= max(report.runs)
    assert report.noise_band >= 0
    assert report.param_count == sum(
        p.data.size for p in tiny_encoder().params().values())


def test_single_repeat_has_zero_band():
    report = rtf_bench(tiny_encoder(), clip_seconds=0.4, batch_size=1, repeats=1)
    assert report.noise_band == 0.0
    assert report.runs == (report.speed,)


def test_report_lines_and_machine_line():
    report = rtf_bench(tiny_encoder("chunk:8"), clip_seconds=0.4, batch_size=1,
                       repeats=2)
    text = "\n".join(report.lines())
    assert "speed_1_over_rtf" in text
    assert report.hardware in text
    machine = report.machine_line()
    assert machine.startswith("rtf pattern=")
    fields = dict(p.split("=", 1) for p in machine.split(" ")[1:])
    assert float(fields["speed"]) == pytest.approx(report.speed, abs=1e-6)
    assert int(fields["param_count"]) == report.param_count


def test_rejects_zero_repeats():
    with pytest.raises(ValueError):
        rtf_bench(tiny_encoder(), 0.4, 1, repeats=0)
