"""Pseudo-labeling, plausibility filtering, and quota mixing."""

import numpy as np
import pytest

from minispeech.config import Config
from minispeech.ctc import LabelSequence, TokenVocab
from minispeech.data import ManifestEntry, read_manifest, write_manifest
from minispeech.features import FeatureConfig
from minispeech.nst import (
    MixStream,
    PseudoLabeledItem,
    filter_pseudo,
    kept_entries,
    pseudo_label,
    pseudo_manifest_lines,
    read_entry_audio,
    segment_entries,
)
from minispeech.synth import SynthSpec, generate_corpus
from minispeech.train import finetune, load_asr_model, run_nst


def item(text, duration_s=2.0, path="a.wav"):
    words = len(text.split())
    return PseudoLabeledItem(
        ManifestEntry(path, duration_s, None, "xx"),
        LabelSequence(()), text, duration_s, words / duration_s)


# -- filtering ----------------------------------------------------------------

def test_filter_bounds_are_inclusive():
    lo = item("a", duration_s=2.0)            # 0.5 wps, at the minimum
    hi = item("a b c d e f", duration_s=1.0)  # 6.0 wps, at the maximum
    kept = filter_pseudo([lo, hi], 0.5, 6.0)
    assert kept == [lo, hi]


def test_filter_drops_out_of_band_rates():
    slow = item("a", duration_s=3.0)                 # 0.33 wps
    fast = item("a b c d e f g", duration_s=1.0)     # 7 wps
    ok = item("a b", duration_s=1.0)                 # 2 wps
    kept = filter_pseudo([slow, fast, ok], 0.5, 6.0)
    assert kept == [ok]
    assert slow.kept is False and fast.kept is False


def test_filter_always_drops_empty_hypotheses():
    empty = item("", duration_s=0.001)  # technically infinite-rate free pass
    assert filter_pseudo([empty], 0.0001, 1e9) == []


def test_filter_is_idempotent():
    items = [item("a b", 1.0), item("", 1.0), item("a", 9.0)]
    once = filter_pseudo(items, 0.5, 6.0)
    twice = filter_pseudo(list(once), 0.5, 6.0)
    assert twice == once
    assert [i.kept for i in items] == [True, False, False]


def test_filter_rejects_bad_band():
    with pytest.raises(ValueError):
        filter_pseudo([], 2.0, 1.0)


# -- audit manifest -----------------------------------------------------------

def test_pseudo_manifest_format():
    items = [item("a b", 2.0, "x.wav"), item("", 1.0, "y.wav")]
    filter_pseudo(items, 0.5, 6.0)
    lines = pseudo_manifest_lines(items).splitlines()
    assert lines[0] == "x.wav\t2.000\ta b\t1.000000\ttrue"
    assert lines[1] == "y.wav\t1.000\t-\t0.000000\tfalse"


def test_kept_entries_absolutize_paths(tmp_path):
    items = [item("a b", 2.0, "clips/x.wav"),
             item("c", 2.0, "clips/y.wav#1.000:2.000")]
    filter_pseudo(items, 0.5, 6.0)
    entries = kept_entries(items, tmp_path / "m.tsv")
    assert entries[0].path == str((tmp_path / "clips" / "x.wav").resolve())
    assert entries[1].path.endswith("y.wav#1.000:2.000")
    assert entries[1].path.startswith("/")
    assert entries[0].transcript == "a b"


# -- segmentation -------------------------------------------------------------

def test_segment_entries_cover_without_slivers(tmp_path):
    write_manifest([ManifestEntry("long.wav", 10.0, None, "xx")],
                   tmp_path / "m.tsv")
    segs = segment_entries(tmp_path / "m.tsv", 2.0, 4.0, seed=0)
    assert segs
    total = sum(e.duration_s for e in segs)
    assert total <= 10.0
    assert 10.0 - total < 2.0  # dropped remainder is shorter than min_s
    for e in segs:
        assert 2.0 <= e.duration_s <= 4.0
        base, _, span = e.path.partition("#")
        assert base == "long.wav"
        a, b = map(float, span.split(":"))
        # span endpoints are written at millisecond precision
        assert b - a == pytest.approx(e.duration_s, abs=1.1e-3)


def test_segment_entries_deterministic(tmp_path):
    write_manifest([ManifestEntry("long.wav", 30.0, None, "xx")],
                   tmp_path / "m.tsv")
    a = segment_entries(tmp_path / "m.tsv", 1.0, 3.0, seed=5)
    b = segment_entries(tmp_path / "m.tsv", 1.0, 3.0, seed=5)
    assert a == b
    assert a != segment_entries(tmp_path / "m.tsv", 1.0, 3.0, seed=6)


def test_read_entry_audio_honors_span(tmp_path):
    spec = SynthSpec(min_duration_s=1.2, max_duration_s=1.6)
    manifest = generate_corpus(spec, 1, tmp_path, seed=0)
    entry = read_manifest(manifest)[0]
    whole = read_entry_audio(entry, manifest)
    part = read_entry_audio(
        ManifestEntry(entry.path + "#0.250:0.750", 0.5, None, "xx"), manifest)
    assert part.samples.shape[0] == int(0.5 * whole.sample_rate)
    i0 = int(0.25 * whole.sample_rate)
    np.testing.assert_array_equal(part.samples,
                                  whole.samples[i0:i0 + part.samples.shape[0]])


# -- mixing -------------------------------------------------------------------

def test_mix_quota_exact_over_many_batches():
    stream = MixStream(list(range(10)), list(range(100, 120)), 0.7, 8, seed=0)
    emitted_sup = 0
    for b in range(1, 101):
        batch = stream.next_batch()
        assert len(batch) == 8
        emitted_sup += sum(1 for x in batch if x < 100)
        assert emitted_sup == round(0.7 * 8 * b)


def test_mix_ratio_one_is_all_supervised():
    stream = MixStream([1, 2, 3], [], 1.0, 4, seed=0)
    assert all(x in (1, 2, 3) for batch in stream.batches(5) for x in batch)


def test_mix_deterministic_and_seed_sensitive():
    make = lambda seed: MixStream(list(range(7)), list(range(100, 105)),
                                  0.5, 4, seed).batches(6)
    assert make(3) == make(3)
    assert make(3) != make(4)


def test_mix_epoch_counters():
    stream = MixStream([1, 2], [10, 20, 30], 0.5, 2, seed=0)
    stream.batches(6)  # 6 supervised draws from 2 items, 6 pseudo from 3
    assert stream.epochs["supervised"] == 2
    assert stream.epochs["pseudo"] == 1


def test_mix_epochs_reshuffle():
    n = 16
    stream = MixStream(list(range(n)), [99], 0.99, n, seed=0)
    first = stream.next_batch()
    second = stream.next_batch()
    assert sorted(first) == sorted(second)
    assert first != second


def test_mix_rejects_empty_pseudo_when_needed():
    with pytest.raises(ValueError):
        MixStream([1], [], 0.5, 4, seed=0)


# -- end-to-end ---------------------------------------------------------------

@pytest.fixture(scope="module")
def nst_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("nst")
    spec = SynthSpec(min_duration_s=0.4, max_duration_s=0.8)
    train_m = generate_corpus(spec, 6, root / "train", seed=11)
    unlab_m = generate_corpus(spec, 5, root / "unlab", seed=77)
    cfg = Config({
        "seed": "3", "steps": "2", "batch_size": "2",
        "model.layers": "1", "model.dim": "16", "model.heads": "2",
        "model.kernel": "3", "model.stem": "stack", "model.subsample": "4",
        "model.pattern": "local:4,4", "features.mels": "16",
        "vocab.graphemes": spec.graphemes,
        "data.train_manifest": str(train_m),
        "data.unlabeled_manifest": str(unlab_m),
        "optim.encoder.lr": "1e-3", "optim.encoder.warmup": "2",
        "optim.decoder.lr": "1e-3", "optim.decoder.warmup": "2",
        "nst.min_wps": "0.0001", "nst.max_wps": "1000",
    })
    teacher = finetune(cfg, root / "teacher")
    return {"cfg": cfg, "teacher": teacher, "root": root,
            "unlab": unlab_m, "spec": spec}


def test_pseudo_label_decodes_every_clip(nst_setup):
    cfg = nst_setup["cfg"]
    vocab = TokenVocab(tuple(nst_setup["spec"].graphemes) + (" ",))
    fcfg = FeatureConfig(num_mels=16)
    teacher = load_asr_model(cfg, nst_setup["teacher"], 16)
    items = pseudo_label(teacher, vocab, nst_setup["unlab"], fcfg)
    assert len(items) == len(read_manifest(nst_setup["unlab"]))
    for i in items:
        assert i.text == vocab.decode(i.hypothesis)


def test_run_nst_writes_byte_identical_manifests(nst_setup, tmp_path):
    cfg = nst_setup["cfg"]
    run_nst(cfg, tmp_path / "a", nst_setup["teacher"])
    run_nst(cfg, tmp_path / "b", nst_setup["teacher"])
    for name in ("pseudo.tsv", "pseudo_train.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()
    kept = read_manifest(tmp_path / "a" / "pseudo_train.tsv")
    for e in kept:
        assert e.transcript is None or isinstance(e.transcript, str)
