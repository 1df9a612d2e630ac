import numpy as np
import pytest

from minispeech.features import (
    AudioClip,
    FeatureConfig,
    load_features,
    log_mel,
    mel_filterbank,
    num_frames,
    read_wav,
    resample,
    save_features,
    stack_frames,
    write_wav,
)


def tone(freq, dur_s=1.0, rate=16000, amp=0.4):
    t = np.arange(int(dur_s * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


def test_one_second_at_16k_gives_98_frames():
    clip = tone(440.0, dur_s=1.0)
    feats = log_mel(clip)
    assert feats.num_frames == 98
    assert feats.dim == 128
    assert num_frames(16000, FeatureConfig()) == 98


def test_frame_count_formula_at_odd_lengths():
    cfg = FeatureConfig()
    for n in (400, 401, 559, 560, 561, 12345):
        expect = 1 + (n - 400) // 160
        assert num_frames(n, cfg) == expect


def test_too_short_clip_raises():
    with pytest.raises(ValueError):
        log_mel(AudioClip(np.zeros(399), 16000))


def test_scaling_waveform_shifts_logs_by_2_log_alpha():
    clip = tone(1000.0)
    alpha = 3.0
    a = log_mel(clip).data
    b = log_mel(AudioClip(clip.samples * alpha, clip.sample_rate)).data
    floor = np.log(1e-10)
    above = a > floor + 1e-6
    assert above.mean() > 0.5
    np.testing.assert_allclose(b[above] - a[above], 2.0 * np.log(alpha), atol=1e-9)
    assert (b >= floor - 1e-12).all()


def test_hop_shift_moves_frames_by_one():
    rng = np.random.default_rng(3)
    x = rng.normal(scale=0.1, size=16000)
    a = log_mel(AudioClip(x, 16000)).data
    b = log_mel(AudioClip(x[160:], 16000)).data
    np.testing.assert_allclose(a[1:1 + len(b)], b, atol=1e-12)


def test_mel_filterbank_against_direct_construction():
    cfg = FeatureConfig(num_mels=8, n_fft=256, fmin_hz=300.0, fmax_hz=4000.0)
    fb = mel_filterbank(cfg)

    def m(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def inv(mm):
        return 700.0 * (10 ** (mm / 2595.0) - 1.0)

    mel_pts = np.linspace(m(300.0), m(4000.0), 10)
    hz = inv(mel_pts)
    freqs = np.arange(129) * 16000 / 256
    for i in range(8):
        for k in (5, 20, 40, 80, 128):
            f = freqs[k]
            lo, c, hi = hz[i], hz[i + 1], hz[i + 2]
            if lo < f < c:
                expect = (f - lo) / (c - lo)
            elif c <= f < hi:
                expect = (hi - f) / (hi - c)
            else:
                expect = 0.0
            assert fb[i, k] == pytest.approx(expect, abs=1e-12)
    assert fb.shape == (8, 129)


def test_tone_energy_lands_in_matching_filter():
    cfg = FeatureConfig()
    fb = mel_filterbank(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    centers = np.array([freqs[np.argmax(row)] for row in fb])
    for f0 in (300.0, 1000.0, 3000.0, 6000.0):
        feats = log_mel(tone(f0)).data.mean(axis=0)
        hit = centers[np.argmax(feats)]
        assert abs(hit - f0) < 400.0, f"{f0} Hz peaked at filter near {hit} Hz"


def test_wav_round_trip(tmp_path):
    clip = tone(523.25, dur_s=0.3)
    p = tmp_path / "t.wav"
    write_wav(p, clip)
    back = read_wav(p)
    assert back.sample_rate == 16000
    assert len(back.samples) == len(clip.samples)
    assert np.abs(back.samples - clip.samples).max() <= 1.0 / 32768.0


def test_read_wav_rejects_stereo(tmp_path):
    import wave

    p = tmp_path / "stereo.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.zeros(400, dtype="<i2").tobytes())
    with pytest.raises(ValueError, match="mono"):
        read_wav(p)


def test_resample_length_and_tone_preserved():
    clip = tone(440.0, dur_s=0.5, rate=22050)
    out = resample(clip, 16000)
    assert out.sample_rate == 16000
    assert len(out.samples) == round(len(clip.samples) * 16000 / 22050)
    # dominant frequency survives the rate change
    spec = np.abs(np.fft.rfft(out.samples * np.hanning(len(out.samples))))
    peak_hz = np.argmax(spec) * 16000 / len(out.samples)
    assert abs(peak_hz - 440.0) < 10.0


def test_resample_identity_rate_is_copy():
    clip = tone(440.0, dur_s=0.1)
    out = resample(clip, 16000)
    np.testing.assert_array_equal(out.samples, clip.samples)
    out.samples[0] = 9.0
    assert clip.samples[0] != 9.0


def test_stack_frames_shapes_and_truncation():
    feats = log_mel(tone(440.0))
    stacked = stack_frames(feats, 4)
    assert stacked.num_frames == 98 // 4
    assert stacked.dim == 4 * 128
    assert stacked.hop_s == pytest.approx(0.04)
    np.testing.assert_array_equal(stacked.data[0], feats.data[:4].ravel())


def test_feature_dump_round_trip_bit_identical(tmp_path):
    feats = log_mel(tone(880.0, dur_s=0.2))
    p = tmp_path / "f.msfeat"
    save_features(p, feats)
    back = load_features(p)
    assert back.hop_s == feats.hop_s
    assert np.array_equal(back.data, feats.data)
    assert back.data.dtype == np.float64


def test_feature_dump_header_is_text(tmp_path):
    feats = log_mel(tone(880.0, dur_s=0.1))
    p = tmp_path / "f.msfeat"
    save_features(p, feats)
    head = p.read_bytes()[:64].split(b"data")[0].decode("ascii")
    assert "format=msfeat1" in head
    assert f"frames={feats.num_frames}" in head
    assert "dim=128" in head
