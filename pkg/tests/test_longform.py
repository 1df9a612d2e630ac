"""Long-form experiment scaffolding: geometry, corpora, report files."""

import pytest

from minispeech.data import ManifestEntry, read_manifest, write_manifest
from minispeech.longform import (
    LongFormExperimentSpec,
    LongFormReport,
    PatternSeedResult,
    check_geometry,
    prepare_corpora,
    write_report_files,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        LongFormExperimentSpec(patterns=("global",))
    with pytest.raises(ValueError):
        LongFormExperimentSpec(seeds=(0, 1))
    with pytest.raises(ValueError):
        LongFormExperimentSpec(concat_k=0)
    with pytest.raises(ValueError):
        LongFormExperimentSpec(patterns=("bogus:1", "chunk:8"))


def test_prepare_corpora_builds_three_sets(tmp_path):
    spec = LongFormExperimentSpec(concat_k=3, train_clips=4, eval_clips=7,
                                  min_clip_s=0.4, max_clip_s=0.8)
    train_m, dev_m, long_m = prepare_corpora(spec, tmp_path)
    assert len(read_manifest(train_m)) == 4
    devs = read_manifest(dev_m)
    longs = read_manifest(long_m)
    assert len(devs) == 7
    assert len(longs) == 2  # consecutive groups of k, remainder dropped
    for e in longs:
        assert e.duration_s > 2.5 * min(d.duration_s for d in devs)
        assert e.transcript.count(" ") >= 2  # at least k-1 joins

    again = prepare_corpora(spec, tmp_path)
    assert again == (train_m, dev_m, long_m)


def test_geometry_rejects_short_eval(tmp_path):
    spec = LongFormExperimentSpec(num_layers=4)
    # local:64,64 over 4 layers spans >500 encoder frames; 1 s is ~25
    write_manifest([ManifestEntry("x.wav", 1.0, "a", "syn")], tmp_path / "m.tsv")
    with pytest.raises(ValueError, match="receptive field"):
        check_geometry(spec, tmp_path / "m.tsv")


def test_geometry_accepts_long_eval(tmp_path):
    spec = LongFormExperimentSpec(num_layers=4)
    write_manifest([ManifestEntry("x.wav", 60.0, "a", "syn")], tmp_path / "m.tsv")
    check_geometry(spec, tmp_path / "m.tsv")


def test_geometry_requires_entries(tmp_path):
    (tmp_path / "m.tsv").write_text("")
    with pytest.raises(ValueError, match="empty"):
        check_geometry(LongFormExperimentSpec(), tmp_path / "m.tsv")


def fake_report():
    spec = LongFormExperimentSpec()
    a, b = spec.patterns
    results = [
        PatternSeedResult(a, 0, True, 0.02, 0.40, 0.0, 0.21,
                          curve=[(100, 0.9), (200, 0.5)]),
        PatternSeedResult(a, 1, True, 0.03, 0.35, 0.01, 0.18,
                          curve=[(100, 0.8), (200, 0.4)]),
        PatternSeedResult(b, 0, True, 0.02, 0.04, 0.0, 0.01,
                          curve=[(100, 0.7), (200, 0.06)]),
        PatternSeedResult(b, 1, False),
    ]
    return LongFormReport(spec, results, [(b, 1, "non-finite loss at step 7")],
                          {a: 0.025, b: 0.02}, {a: 0.375, b: 0.04})


def test_report_plot_rows_and_deletion_shares():
    report = fake_report()
    rows = report.plot_rows()
    assert (100, report.spec.patterns[0], 0, 0.9) in rows
    assert len(rows) == 6  # failed run contributes no curve
    shares = report.deletion_shares(report.spec.patterns[0])
    assert shares == [(0.0, 0.21), (0.01, 0.18)]


def test_report_files(tmp_path):
    report = fake_report()
    write_report_files(report, tmp_path)
    plot_data = (tmp_path / "longform_plot.tsv").read_text().splitlines()
    assert plot_data[0] == "step\tpattern\tseed\tlongform_wer"
    assert len(plot_data) == 1 + 6
    assert all(len(line.split("\t")) == 4 for line in plot_data[1:])
    text = (tmp_path / "longform_report.txt").read_text()
    assert "median" in text and "flagged" in text
    png = tmp_path / "longform_wer.png"
    assert png.stat().st_size > 0
    machine = report.machine_line()
    assert "median_long_" in machine and machine.endswith("flagged=1")
