"""Command-line entry points.

Training stages read a config file (overridable with --set key=value) and
write checkpoints, a metrics stream, and the fully resolved config into
--out. Report commands print an aligned human-readable block followed by a
single machine-readable key=value line, and write TSV data plus PNG figures
when given --out.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import Config, ConfigError
from .encoder import AttentionPattern, ConformerConfig, ConformerEncoder, receptive_field
from .longform import LongFormExperimentSpec, run_longform
from .rtf import rtf_bench
from .synth import SynthSpec, concatenate_corpus, generate_corpus
from .train import TrainingAborted, evaluate


def _add_config_args(p):
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")


def _load_config(args) -> Config:
    return Config.load(args.config).with_overrides(args.set)


def _print_aligned(pairs):
    width = max(len(k) for k, _ in pairs)
    for key, value in pairs:
        print(f"{key:<{width}}  {value}")


def cmd_pretrain(args) -> int:
    from .train import pretrain

    print(f"checkpoint: {pretrain(_load_config(args), args.out)}")
    return 0


def cmd_most(args) -> int:
    from .train import most

    print(f"checkpoint: {most(_load_config(args), args.out)}")
    return 0


def cmd_finetune(args) -> int:
    from .train import finetune

    init = Path(args.init) if args.init else None
    print(f"checkpoint: {finetune(_load_config(args), args.out, init)}")
    return 0


def cmd_adapt(args) -> int:
    from .train import adapt

    print(f"checkpoint: {adapt(_load_config(args), args.out, Path(args.init))}")
    return 0


def cmd_nst(args) -> int:
    from .train import run_nst

    print(f"checkpoint: {run_nst(_load_config(args), args.out, Path(args.teacher))}")
    return 0


def cmd_eval(args) -> int:
    cfg = Config.load(args.config).with_overrides(args.set)
    report = evaluate(cfg, args.checkpoint, args.manifest)
    pairs = [("wer", f"{report.wer:.4f}"),
             ("cer", f"{report.cer:.4f}"),
             ("substitutions", report.word.substitutions),
             ("deletions", report.word.deletions),
             ("insertions", report.word.insertions),
             ("ref_words", report.word.ref_length)]
    for lang in sorted(report.per_language):
        w, c = report.per_language[lang]
        pairs.append((f"wer[{lang}]", f"{w.error_rate:.4f}"))
        pairs.append((f"cer[{lang}]", f"{c.error_rate:.4f}"))
    _print_aligned(pairs)
    machine = [f"eval wer={report.wer:.6f} cer={report.cer:.6f}"]
    for lang in sorted(report.per_language):
        w, c = report.per_language[lang]
        machine.append(f"wer_{lang}={w.error_rate:.6f}")
        machine.append(f"cer_{lang}={c.error_rate:.6f}")
    print(" ".join(machine))
    return 0


def cmd_rf_report(args) -> int:
    pattern = AttentionPattern.parse(args.pattern)
    config = ConformerConfig(num_layers=args.layers, model_dim=args.dim,
                             attention_heads=1, conv_kernel_size=args.kernel,
                             stem=args.stem)
    report = receptive_field(config, pattern, args.frame_seconds)
    att_s = (float("inf") if report.attention_rf_frames == float("inf")
             else report.attention_rf_frames * args.frame_seconds)
    _print_aligned([
        ("pattern", args.pattern),
        ("layers", args.layers),
        ("frame_seconds", args.frame_seconds),
        ("attention_rf_frames", report.attention_rf_frames),
        ("attention_rf_seconds", f"{att_s:g}"),
        ("attention_width_frames", report.attention_width_frames),
        ("conv_rf_frames", report.conv_rf_frames),
        ("total_rf_frames", report.total_rf_frames),
        ("total_rf_seconds", f"{report.total_rf_seconds:g}"),
    ])
    print(f"rf pattern={args.pattern} layers={args.layers} "
          f"attention_rf_frames={report.attention_rf_frames} "
          f"attention_rf_seconds={att_s:g} "
          f"attention_width_frames={report.attention_width_frames} "
          f"conv_rf_frames={report.conv_rf_frames} "
          f"total_rf_frames={report.total_rf_frames} "
          f"total_rf_seconds={report.total_rf_seconds:g} "
          f"frame_seconds={args.frame_seconds:g}")
    return 0


def cmd_rtf(args) -> int:
    config = ConformerConfig(num_layers=args.layers, model_dim=args.dim,
                             attention_heads=args.heads,
                             conv_kernel_size=args.kernel, stem=args.stem)
    reports = []
    for name in args.pattern:
        encoder = ConformerEncoder(config, AttentionPattern.parse(name),
                                   input_dim=args.input_dim, seed=args.seed)
        report = rtf_bench(encoder, args.clip_seconds, args.batch_size,
                           repeats=args.repeats, seed=args.seed)
        for line in report.lines():
            print(line)
        print(report.machine_line())
        reports.append(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = ["pattern\tbatch_size\tparam_count\tclip_seconds\tspeed\tnoise_band"]
        rows += [f"{r.pattern}\t{r.batch_size}\t{r.param_count}\t"
                 f"{r.clip_seconds:g}\t{r.speed:.6f}\t{r.noise_band:.6f}"
                 for r in reports]
        (out / "rtf.tsv").write_text("\n".join(rows) + "\n")
        from .plots import plot_rtf_bars

        plot_rtf_bars(reports, out / "rtf.png")
        print(f"wrote {out / 'rtf.tsv'} and {out / 'rtf.png'}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(graphemes=args.graphemes, min_duration_s=args.min_seconds,
                     max_duration_s=args.max_seconds, noise_level=args.noise)
    manifest = generate_corpus(spec, args.clips, args.out, seed=args.seed)
    print(f"manifest: {manifest}")
    if args.concat_k:
        long_manifest = concatenate_corpus(manifest, args.concat_k,
                                           Path(args.out) / f"long{args.concat_k}",
                                           spec=spec)
        print(f"long-form manifest: {long_manifest}")
    return 0


def cmd_longform(args) -> int:
    spec = LongFormExperimentSpec()
    if args.steps:
        spec = LongFormExperimentSpec(train_steps=args.steps)
    report = run_longform(spec, args.out)
    for line in report.lines():
        print(line)
    print(report.machine_line())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minispeech",
        description="desk-scale speech recognition training stack")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("pretrain", cmd_pretrain), ("most", cmd_most)):
        p = sub.add_parser(name)
        _add_config_args(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("finetune")
    _add_config_args(p)
    p.add_argument("--init", default=None, help="encoder checkpoint to start from")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("adapt")
    _add_config_args(p)
    p.add_argument("--init", required=True, help="frozen base ASR checkpoint")
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("nst")
    _add_config_args(p)
    p.add_argument("--teacher", required=True, help="teacher ASR checkpoint")
    p.set_defaults(fn=cmd_nst)

    p = sub.add_parser("eval")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rf-report")
    p.add_argument("--pattern", required=True,
                   help='"global", "local:L,R", or "chunk:S"')
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--frame-seconds", type=float, default=0.04)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--stem", default="conv")
    p.set_defaults(fn=cmd_rf_report)

    p = sub.add_parser("rtf")
    p.add_argument("--pattern", action="append", required=True,
                   help="repeatable; one benchmark per pattern")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--stem", default="conv")
    p.add_argument("--input-dim", type=int, default=80)
    p.add_argument("--clip-seconds", type=float, default=8.0)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rtf)

    p = sub.add_parser("synth")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--graphemes", default="abcde")
    p.add_argument("--min-seconds", type=float, default=0.6)
    p.add_argument("--max-seconds", type=float, default=2.4)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--concat-k", type=int, default=0,
                   help="also write a k-fold concatenated long-form set")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("longform")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=0,
                   help="override training steps (0 keeps the default)")
    p.set_defaults(fn=cmd_longform)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, TrainingAborted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
