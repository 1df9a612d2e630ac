"""Long-form degradation experiment.

Models trained on short clips can collapse, deletion-first, when decoding
audio far longer than anything seen in training; attention whose receptive
field is depth-independent (chunked) should not. This module trains one
small model per (attention pattern, seed) on short synthetic clips,
evaluates each on k-fold concatenations, and reports WER with the deletion
share broken out, plus a step-versus-long-form-WER data file and figure.

Geometry matters: the local pattern's receptive field must exceed the
training clip length (so training never saturates it) while the evaluation
length must exceed the receptive field (so inference does). Both are checked
at run time against the generated corpus.

The shipped corpus draws each clip from one of two speakers whose tone
ladders overlap (speaker_shift_steps=2), so decoding a mid-ladder tone
requires evidence pooled across the utterance. Short clips keep that
evidence inside one utterance; concatenations put other speakers' audio
inside the local window, which is what drives the degradation.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .config import Config
from .encoder import AttentionPattern, receptive_field
from .synth import SynthSpec, concatenate_corpus, generate_corpus
from .train import TrainingAborted, encoder_config, evaluate, finetune, parse_metrics


@dataclass(frozen=True)
class LongFormExperimentSpec:
    patterns: tuple = ("local:64,64", "chunk:30")
    seeds: tuple = (0, 1, 2)
    concat_k: int = 16
    train_steps: int = 600
    eval_every: int = 100
    num_layers: int = 4
    model_dim: int = 32
    attention_heads: int = 2
    conv_kernel_size: int = 3
    stem: str = "stack"
    mels: int = 24
    batch_size: int = 4
    learning_rate: float = 3e-3
    warmup_steps: int = 50
    train_clips: int = 64
    eval_clips: int = 48
    graphemes: str = "abcde"
    min_clip_s: float = 1.4
    max_clip_s: float = 3.0
    noise_level: float = 0.05
    gain_min: float = 1.0
    gain_max: float = 1.0
    distractor_level: float = 0.0
    distractor_rate: float = 0.0
    speaker_shift_steps: int = 2

    def __post_init__(self):
        if len(self.patterns) != 2:
            raise ValueError("exactly two attention patterns are compared")
        if len(self.seeds) < 3:
            raise ValueError("need at least 3 seeds")
        if self.concat_k < 1:
            raise ValueError("concat_k must be >= 1")
        for p in self.patterns:
            AttentionPattern.parse(p)


@dataclass
class PatternSeedResult:
    pattern: str
    seed: int
    ok: bool
    short_wer: float = float("nan")
    long_wer: float = float("nan")
    short_deletion_share: float = float("nan")
    long_deletion_share: float = float("nan")
    curve: list = field(default_factory=list)


@dataclass
class LongFormReport:
    spec: LongFormExperimentSpec
    results: list
    flagged: list
    median_short: dict
    median_long: dict

    def plot_rows(self) -> list:
        rows = []
        for r in self.results:
            for step, wer in r.curve:
                rows.append((step, r.pattern, r.seed, wer))
        return rows

    def deletion_shares(self, pattern: str) -> list:
        return [(r.short_deletion_share, r.long_deletion_share)
                for r in self.results if r.pattern == pattern and r.ok]

    def lines(self) -> list:
        out = [f"{'pattern':<14} {'seed':>4} {'short WER':>10} {'long WER':>10} "
               f"{'short del':>10} {'long del':>10}"]
        for r in self.results:
            out.append(f"{r.pattern:<14} {r.seed:>4} {r.short_wer:>10.3f} "
                       f"{r.long_wer:>10.3f} {r.short_deletion_share:>10.3f} "
                       f"{r.long_deletion_share:>10.3f}")
        for pattern in self.median_long:
            out.append(f"median {pattern}: short={self.median_short[pattern]:.3f} "
                       f"long={self.median_long[pattern]:.3f}")
        for pattern, seed, reason in self.flagged:
            out.append(f"flagged {pattern} seed {seed}: {reason}")
        return out

    def machine_line(self) -> str:
        parts = ["longform"]
        for pattern in sorted(self.median_long):
            tag = pattern.replace(":", "_").replace(",", "_")
            parts.append(f"median_long_{tag}={self.median_long[pattern]:.6f}")
            parts.append(f"median_short_{tag}={self.median_short[pattern]:.6f}")
        parts.append(f"flagged={len(self.flagged)}")
        return " ".join(parts)


def _run_config(spec: LongFormExperimentSpec, pattern: str, seed: int,
                train_manifest, long_manifest) -> Config:
    return Config({
        "stage": "finetune",
        "seed": str(seed),
        "steps": str(spec.train_steps),
        "batch_size": str(spec.batch_size),
        "eval_every": str(spec.eval_every),
        "checkpoint_every": "0",
        "model.layers": str(spec.num_layers),
        "model.dim": str(spec.model_dim),
        "model.heads": str(spec.attention_heads),
        "model.kernel": str(spec.conv_kernel_size),
        "model.stem": spec.stem,
        "model.subsample": "4",
        "model.pattern": pattern,
        "features.mels": str(spec.mels),
        "vocab.graphemes": spec.graphemes,
        "optim.encoder.lr": str(spec.learning_rate),
        "optim.encoder.warmup": str(spec.warmup_steps),
        "optim.decoder.lr": str(spec.learning_rate),
        "optim.decoder.warmup": str(spec.warmup_steps),
        "data.train_manifest": str(train_manifest),
        "data.dev_manifest": str(long_manifest),
    })


def prepare_corpora(spec: LongFormExperimentSpec, work_dir) -> tuple:
    """Train set, short held-out set, and its k-fold concatenation; reused
    when already on disk (regeneration is byte-identical anyway)."""
    work_dir = Path(work_dir)
    synth = SynthSpec(graphemes=spec.graphemes, min_duration_s=spec.min_clip_s,
                      max_duration_s=spec.max_clip_s,
                      noise_level=spec.noise_level,
                      gain_min=spec.gain_min, gain_max=spec.gain_max,
                      distractor_level=spec.distractor_level,
                      distractor_rate=spec.distractor_rate,
                      speaker_shift_steps=spec.speaker_shift_steps)
    train_dir = work_dir / "corpus" / "train"
    dev_dir = work_dir / "corpus" / "dev"
    long_dir = work_dir / "corpus" / "long"
    train_manifest = train_dir / "manifest.tsv"
    dev_manifest = dev_dir / "manifest.tsv"
    long_manifest = long_dir / "manifest.tsv"
    if not train_manifest.is_file():
        generate_corpus(synth, spec.train_clips, train_dir, seed=1000)
    if not dev_manifest.is_file():
        generate_corpus(synth, spec.eval_clips, dev_dir, seed=2000)
    if not long_manifest.is_file():
        concatenate_corpus(dev_manifest, spec.concat_k, long_dir, spec=synth)
    return train_manifest, dev_manifest, long_manifest


def check_geometry(spec: LongFormExperimentSpec, long_manifest) -> None:
    """The experiment is vacuous unless the long-form input outgrows the
    local pattern's receptive field."""
    from .data import read_manifest

    frame_s = 0.01 * 4  # feature hop times the subsampling factor
    enc_frames = [int(e.duration_s / frame_s) for e in read_manifest(long_manifest)]
    if not enc_frames:
        raise ValueError("long-form manifest is empty")
    shortest = min(enc_frames)
    for name in spec.patterns:
        pattern = AttentionPattern.parse(name)
        if pattern.kind != "local":
            continue
        cfg = Config({"model.layers": str(spec.num_layers),
                      "model.dim": str(spec.model_dim),
                      "model.heads": str(spec.attention_heads),
                      "model.kernel": str(spec.conv_kernel_size),
                      "model.stem": spec.stem})
        rf = receptive_field(encoder_config(cfg), pattern)
        if shortest <= rf.total_rf_frames:
            raise ValueError(
                f"evaluation length {shortest} frames does not exceed the "
                f"{name} receptive field {rf.total_rf_frames} frames; "
                "no mismatch to measure")


def run_longform(spec: LongFormExperimentSpec, work_dir) -> LongFormReport:
    """Train every (pattern, seed) pair and assemble the comparison report.
    NaN runs are excluded and flagged; each pattern needs >= 2 survivors."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    train_manifest, dev_manifest, long_manifest = prepare_corpora(spec, work_dir)
    check_geometry(spec, long_manifest)

    results, flagged = [], []
    for pattern in spec.patterns:
        for seed in spec.seeds:
            tag = pattern.replace(":", "_").replace(",", "_")
            run_dir = work_dir / f"run-{tag}-s{seed}"
            cfg = _run_config(spec, pattern, seed, train_manifest, long_manifest)
            result = PatternSeedResult(pattern, seed, ok=False)
            try:
                ckpt = finetune(cfg, run_dir)
            except TrainingAborted as exc:
                flagged.append((pattern, seed, str(exc)))
                results.append(result)
                continue
            curve = [(r["step"], r["wer"])
                     for r in parse_metrics(run_dir / "metrics.log")
                     if r.get("event") == "eval"]
            short = evaluate(cfg, ckpt, dev_manifest)
            long = evaluate(cfg, ckpt, long_manifest)
            result.ok = True
            result.short_wer = short.wer
            result.long_wer = long.wer
            result.short_deletion_share = short.word.deletion_rate
            result.long_deletion_share = long.word.deletion_rate
            result.curve = curve
            results.append(result)

    median_short, median_long = {}, {}
    for pattern in spec.patterns:
        ok = [r for r in results if r.pattern == pattern and r.ok]
        if len(ok) < 2:
            raise RuntimeError(f"fewer than 2 surviving seeds for {pattern}; "
                               f"flagged: {flagged}")
        median_short[pattern] = statistics.median(r.short_wer for r in ok)
        median_long[pattern] = statistics.median(r.long_wer for r in ok)

    report = LongFormReport(spec, results, flagged, median_short, median_long)
    write_report_files(report, work_dir)
    return report


def write_report_files(report: LongFormReport, out_dir) -> None:
    out_dir = Path(out_dir)
    rows = report.plot_rows()
    lines = ["step\tpattern\tseed\tlongform_wer"]
    lines += [f"{s}\t{p}\t{seed}\t{w:.6f}" for s, p, seed, w in rows]
    (out_dir / "longform_plot.tsv").write_text("\n".join(lines) + "\n")
    (out_dir / "longform_report.txt").write_text("\n".join(report.lines()) + "\n")
    if rows:
        from .plots import plot_longform_curves

        plot_longform_curves(rows, out_dir / "longform_wer.png")
