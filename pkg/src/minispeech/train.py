"""Training stages and evaluation.

Every stage is a pure function of (config, seed, data): batch order, masking,
and initialization all derive from the seed through purpose-tagged RNG
streams keyed by step, so an interrupted run resumed from its checkpoint
reproduces the uninterrupted loss trajectory bit for bit.

A non-finite loss aborts the stage before the optimizer step; the most
recent periodic checkpoint stays on disk untouched.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import (
    AdapterConfig,
    AdaptedModel,
    freeze,
    params_checksum,
    solve_bottleneck,
)
from .autodiff import Tensor
from .bestrq import (
    BestRQHeads,
    MaskSpec,
    RandomQuantizer,
    apply_mask,
    bestrq_loss,
    masked_accuracy,
    quantize,
    stacked_mask_indices,
)
from .checkpoint import (
    CheckpointData,
    load_checkpoint,
    load_into_params,
    params_arrays,
    require_fingerprint,
    save_checkpoint,
)
from .config import Config
from .ctc import TokenVocab, ctc_feasible, ctc_loss
from .data import load_utterances
from .encoder import AttentionPattern, ConformerConfig, ConformerEncoder
from .features import FeatureConfig, stack_frames
from .metrics import ErrorBreakdown, edit_breakdown, normalize_chars
from .models import AsrModel, CtcHead
from .optim import Adam, OptimizerConfig, assert_partition
from .rng import make_rng
from .text_injection import (
    MostBatch,
    MostLossWeights,
    MostModel,
    curriculum_gate,
    most_step,
)


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, last_good):
        msg = f"non-finite loss at step {step}"
        msg += f"; last good checkpoint: {last_good}" if last_good else "; no checkpoint saved"
        super().__init__(msg)
        self.step = step
        self.last_good = last_good


class MetricsWriter:
    """Append-only event stream: one line per event, ordered key=value pairs,
    written to a file and echoed to standard output. Floats are written with
    repr so a parsed trajectory compares bit-exactly."""

    def __init__(self, path, echo: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "a")
        self.echo = echo

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def event(self, **fields):
        line = " ".join(f"{k}={self._format(v)}" for k, v in fields.items())
        self._f.write(line + "\n")
        self._f.flush()
        if self.echo:
            print(line)

    def close(self):
        self._f.close()


def parse_metrics(path) -> list:
    """Read an event stream back as dicts with ints/floats restored."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        record = {}
        for piece in line.split(" "):
            key, _, raw = piece.partition("=")
            for cast in (int, float):
                try:
                    record[key] = cast(raw)
                    break
                except ValueError:
                    continue
            else:
                record[key] = raw
        out.append(record)
    return out


@functools.lru_cache(maxsize=64)
def _perm(seed: int, purpose: str, epoch: int, n: int) -> tuple:
    return tuple(make_rng(seed, purpose, epoch).permutation(n))


def batch_indices(seed: int, step: int, batch_size: int, n: int,
                  purpose: str = "data-order") -> list:
    """Deterministic epoch-shuffled indices for one step; a pure function of
    (seed, step) so resumed runs see the same stream."""
    out = []
    for j in range(batch_size):
        g = step * batch_size + j
        epoch, pos = divmod(g, n)
        out.append(_perm(seed, purpose, epoch, n)[pos])
    return out


def _mean(terms: list):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# -- config -> model plumbing -------------------------------------------------

def feature_config(cfg: Config) -> FeatureConfig:
    return FeatureConfig(num_mels=cfg.get_int("features.mels", 128))


def build_vocab(cfg: Config) -> TokenVocab:
    symbols = tuple(cfg.get("vocab.graphemes"))
    if cfg.get_bool("vocab.space", True):
        symbols = symbols + (" ",)
    return TokenVocab(symbols)


def encoder_config(cfg: Config) -> ConformerConfig:
    return ConformerConfig(
        num_layers=cfg.get_int("model.layers"),
        model_dim=cfg.get_int("model.dim"),
        attention_heads=cfg.get_int("model.heads"),
        conv_kernel_size=cfg.get_int("model.kernel", 5),
        subsampling_factor=cfg.get_int("model.subsample", 4),
        stem=cfg.get("model.stem", "conv"),
    )


def build_encoder(cfg: Config, input_dim: int) -> ConformerEncoder:
    pattern = AttentionPattern.parse(cfg.get("model.pattern"))
    return ConformerEncoder(encoder_config(cfg), pattern, input_dim,
                            seed=cfg.get_int("seed"))


def _optimizer_config(cfg: Config, prefix: str = "optim") -> OptimizerConfig:
    return OptimizerConfig(
        learning_rate=cfg.get_float(f"{prefix}.lr", 1e-3),
        warmup_steps=cfg.get_int(f"{prefix}.warmup", 100),
        schedule=cfg.get(f"{prefix}.schedule", "noam"),
    )


class _Saver:
    """Step-tagged checkpoint directories under one run directory, plus a
    `latest` pointer file. Aborts never overwrite what is already saved."""

    def __init__(self, out_dir, fingerprint: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fingerprint = fingerprint
        self.last_good = self.latest_path()

    def latest_path(self):
        pointer = self.dir / "latest"
        if not pointer.is_file():
            return None
        target = self.dir / pointer.read_text().strip()
        return target if target.is_dir() else None

    def load_latest(self) -> CheckpointData | None:
        path = self.latest_path()
        return load_checkpoint(path) if path else None

    def save(self, step: int, arrays: dict) -> Path:
        path = self.dir / f"step-{step:06d}"
        save_checkpoint(path, arrays, step, self.fingerprint)
        (self.dir / "latest").write_text(path.name + "\n")
        self.last_good = path
        return path


def _guard_finite(value: float, step: int, metrics: MetricsWriter, saver: _Saver):
    if not np.isfinite(value):
        metrics.event(event="nan_abort", step=step,
                      last_good=saver.last_good or "none")
        raise TrainingAborted(step, saver.last_good)


def _arrays_for(params: dict, optimizers: dict | None = None,
                quantizer: RandomQuantizer | None = None) -> dict:
    arrays = params_arrays(params)
    for prefix, opt in (optimizers or {}).items():
        for key, value in opt.state_dict().items():
            arrays[f"{prefix}.{key}"] = value
    if quantizer is not None:
        arrays["quantizer.projection"] = quantizer.projection
        arrays["quantizer.codebooks"] = quantizer.codebooks
    return arrays


def _optim_state(arrays: dict, prefix: str) -> dict:
    head = prefix + "."
    return {k[len(head):]: v for k, v in arrays.items() if k.startswith(head)}


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalReport:
    word: ErrorBreakdown
    char: ErrorBreakdown
    per_language: dict
    hypotheses: list = field(default_factory=list)

    @property
    def wer(self) -> float:
        return self.word.error_rate

    @property
    def cer(self) -> float:
        return self.char.error_rate


def evaluate_model(model, utterances, vocab: TokenVocab) -> EvalReport:
    """Greedy-decode every labeled utterance; pool word and character
    breakdowns overall and per language."""
    word = ErrorBreakdown(0, 0, 0, 0)
    char = ErrorBreakdown(0, 0, 0, 0)
    per_language: dict = {}
    hyps = []
    for utt in utterances:
        ref = utt.entry.transcript
        if not ref:
            continue
        hyp = vocab.decode(model.decode(utt.features.data))
        w = edit_breakdown(ref.split(), hyp.split())
        c = edit_breakdown(list(normalize_chars(ref)), list(normalize_chars(hyp)))
        word = word + w
        char = char + c
        lang = utt.entry.language
        old_w, old_c = per_language.get(lang, (ErrorBreakdown(0, 0, 0, 0),
                                               ErrorBreakdown(0, 0, 0, 0)))
        per_language[lang] = (old_w + w, old_c + c)
        hyps.append((ref, hyp, lang))
    if word.ref_length == 0:
        raise ValueError("no labeled utterances to evaluate")
    return EvalReport(word, char, per_language, hyps)


def load_asr_model(cfg: Config, checkpoint_path, input_dim: int) -> AsrModel:
    vocab = build_vocab(cfg)
    encoder = build_encoder(cfg, input_dim)
    head = CtcHead(encoder.config.model_dim, vocab.size, seed=cfg.get_int("seed"))
    model = AsrModel(encoder, head)
    data = load_checkpoint(checkpoint_path)
    load_into_params(model.params(), data.arrays)
    return model


def evaluate(cfg: Config, checkpoint_path, manifest_path) -> EvalReport:
    vocab = build_vocab(cfg)
    utts = load_utterances(manifest_path, feature_config(cfg), vocab)
    if not utts:
        raise ValueError(f"manifest {manifest_path} is empty")
    model = load_asr_model(cfg, checkpoint_path, utts[0].features.dim)
    return evaluate_model(model, utts, vocab)


# -- pretraining --------------------------------------------------------------

def build_quantizer(cfg: Config, stacked_dim: int) -> RandomQuantizer:
    return RandomQuantizer.create(
        stacked_dim,
        d_emb=cfg.get_int("quantizer.dim", 16),
        num_codebooks=cfg.get_int("quantizer.codebooks", 2),
        codebook_size=cfg.get_int("quantizer.codebook_size", 64),
        seed=cfg.get_int("seed"),
    )


def mask_spec(cfg: Config) -> MaskSpec:
    return MaskSpec(start_probability=cfg.get_float("mask.probability", 0.01),
                    span_s=cfg.get_float("mask.span_s", 0.4))


def pretrain_step_loss(encoder, heads, quantizer, utterances, step, batch_size,
                       spec, seed):
    """Mean masked-prediction loss over one deterministic batch."""
    factor = encoder.config.subsampling_factor
    terms, accs = [], []
    for j, i in enumerate(batch_indices(seed, step, batch_size, len(utterances))):
        feats = utterances[i].features
        item_spec = spec.at_step(seed, step * batch_size + j)
        masked, raw_idx = apply_mask(feats, item_spec)
        out = encoder.forward(masked.data)
        stacked = stack_frames(feats, factor)
        targets = quantize(stacked, quantizer,
                           stacked_mask_indices(raw_idx, factor, stacked.num_frames))
        terms.append(bestrq_loss(heads, out, targets))
        acc = masked_accuracy(heads, out, targets)
        if not np.isnan(acc):
            accs.append(acc)
    return _mean(terms), (float(np.mean(accs)) if accs else float("nan"))


def pretrain(cfg: Config, out_dir) -> Path:
    """Masked-prediction pretraining; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")
    fingerprint = cfg.fingerprint()
    metrics = MetricsWriter(out_dir / "metrics.log")
    seed = cfg.get_int("seed")
    steps = cfg.get_int("steps")
    batch_size = cfg.get_int("batch_size", 4)
    every = cfg.get_int("checkpoint_every", 0)

    utts = load_utterances(cfg.get("data.unlabeled_manifest"), feature_config(cfg))
    if not utts:
        raise ValueError("unlabeled manifest is empty")
    encoder = build_encoder(cfg, utts[0].features.dim)
    factor = encoder.config.subsampling_factor
    quantizer = build_quantizer(cfg, factor * utts[0].features.dim)
    heads = BestRQHeads(encoder.config.model_dim, quantizer.num_codebooks,
                        quantizer.codebook_size, seed=seed)
    params = {**encoder.params(), **heads.params()}
    opt = Adam(params, _optimizer_config(cfg))
    spec = mask_spec(cfg)

    saver = _Saver(out_dir, fingerprint)
    start = 0
    resumed = saver.load_latest()
    if resumed is not None:
        require_fingerprint(resumed, fingerprint)
        load_into_params(params, {k: v for k, v in resumed.arrays.items()
                                  if k in params})
        opt.load_state_dict(_optim_state(resumed.arrays, "optim"))
        quantizer = RandomQuantizer(resumed.arrays["quantizer.projection"],
                                    resumed.arrays["quantizer.codebooks"])
        start = resumed.step
        metrics.event(event="resume", stage="pretrain", step=start)

    for step in range(start, steps):
        loss, acc = pretrain_step_loss(encoder, heads, quantizer, utts, step,
                                       batch_size, spec, seed)
        value = loss.item()
        _guard_finite(value, step, metrics, saver)
        opt.zero_grad()
        loss.backward()
        opt.step()
        quantizer.verify_frozen()
        metrics.event(stage="pretrain", step=step + 1, loss=value,
                      masked_accuracy=acc)
        if every and (step + 1) % every == 0 and step + 1 < steps:
            saver.save(step + 1, _arrays_for(params, {"optim": opt}, quantizer))
    final = saver.save(steps, _arrays_for(params, {"optim": opt}, quantizer))
    metrics.close()
    return final


# -- supervised fine-tuning ---------------------------------------------------

def finetune_step_loss(model: AsrModel, utterances, step, batch_size, seed,
                       adapters_model: AdaptedModel | None = None):
    """Mean CTC loss over one batch; items whose target cannot fit the frame
    budget are skipped and counted."""
    terms, skipped = [], 0
    for i in batch_indices(seed, step, batch_size, len(utterances)):
        utt = utterances[i]
        enc_len = model.encoder.encoded_length(utt.features.num_frames)
        if not ctc_feasible(enc_len, utt.labels):
            skipped += 1
            continue
        if adapters_model is not None:
            enc_out = adapters_model.forward(utt.features.data)
        else:
            enc_out = model.encoder.forward(utt.features.data)
        terms.append(ctc_loss(model.head.log_probs(enc_out), utt.labels))
    return (_mean(terms) if terms else Tensor(0.0)), skipped


def finetune(cfg: Config, out_dir, init=None) -> Path:
    """CTC fine-tuning with separate encoder/decoder optimizers. `init` is an
    encoder checkpoint (the CTC head always starts fresh)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")
    fingerprint = cfg.fingerprint()
    metrics = MetricsWriter(out_dir / "metrics.log")
    seed = cfg.get_int("seed")
    steps = cfg.get_int("steps")
    batch_size = cfg.get_int("batch_size", 4)
    every = cfg.get_int("checkpoint_every", 0)
    eval_every = cfg.get_int("eval_every", 0)

    vocab = build_vocab(cfg)
    fcfg = feature_config(cfg)
    utts = load_utterances(cfg.get("data.train_manifest"), fcfg, vocab)
    if not utts:
        raise ValueError("training manifest is empty")
    dev_manifest = cfg.get("data.dev_manifest", "")
    dev = load_utterances(dev_manifest, fcfg, vocab) if dev_manifest else []

    encoder = build_encoder(cfg, utts[0].features.dim)
    head = CtcHead(encoder.config.model_dim, vocab.size, seed=seed)
    model = AsrModel(encoder, head)
    if init is not None:
        data = load_checkpoint(init)
        load_into_params(encoder.params(),
                         {k: v for k, v in data.arrays.items()
                          if k in encoder.params()})
    enc_opt = Adam(encoder.params(), _optimizer_config(cfg, "optim.encoder"))
    dec_opt = Adam(head.params(), _optimizer_config(cfg, "optim.decoder"))
    assert_partition(model.params(), encoder.params(), head.params())

    saver = _Saver(out_dir, fingerprint)
    start = 0
    resumed = saver.load_latest()
    if resumed is not None:
        require_fingerprint(resumed, fingerprint)
        load_into_params(model.params(), {k: v for k, v in resumed.arrays.items()
                                          if k in model.params()})
        enc_opt.load_state_dict(_optim_state(resumed.arrays, "optim_enc"))
        dec_opt.load_state_dict(_optim_state(resumed.arrays, "optim_dec"))
        start = resumed.step
        metrics.event(event="resume", stage="finetune", step=start)

    optimizers = {"optim_enc": enc_opt, "optim_dec": dec_opt}
    for step in range(start, steps):
        loss, skipped = finetune_step_loss(model, utts, step, batch_size, seed)
        value = loss.item()
        _guard_finite(value, step, metrics, saver)
        enc_opt.zero_grad()
        dec_opt.zero_grad()
        if loss.requires_grad:
            loss.backward()
        enc_opt.step()
        dec_opt.step()
        metrics.event(stage="finetune", step=step + 1, loss=value,
                      skipped=skipped)
        if eval_every and dev and (step + 1) % eval_every == 0:
            report = evaluate_model(model, dev, vocab)
            metrics.event(stage="finetune", step=step + 1, event="eval",
                          wer=report.wer, cer=report.cer)
        if every and (step + 1) % every == 0 and step + 1 < steps:
            saver.save(step + 1, _arrays_for(model.params(), optimizers))
    final = saver.save(steps, _arrays_for(model.params(), optimizers))
    if dev and not (eval_every and steps % eval_every == 0 and steps > start):
        report = evaluate_model(model, dev, vocab)
        metrics.event(stage="finetune", step=steps, event="eval",
                      wer=report.wer, cer=report.cer)
    metrics.close()
    return final


# -- adapter training ---------------------------------------------------------

def adapt(cfg: Config, out_dir, init) -> Path:
    """Per-language adapter training over a frozen base model. `init` must be
    a full ASR checkpoint (encoder plus CTC head)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")
    fingerprint = cfg.fingerprint()
    metrics = MetricsWriter(out_dir / "metrics.log")
    seed = cfg.get_int("seed")
    steps = cfg.get_int("steps")
    batch_size = cfg.get_int("batch_size", 4)

    vocab = build_vocab(cfg)
    fcfg = feature_config(cfg)
    languages = [s.strip() for s in cfg.get("adapt.languages").split(",") if s.strip()]
    if not languages:
        raise ValueError("adapt.languages is empty")
    per_language = {}
    for lang in languages:
        utts = load_utterances(cfg.get(f"data.adapt_manifest.{lang}"), fcfg, vocab)
        if not utts:
            raise ValueError(f"adaptation manifest for {lang!r} is empty")
        per_language[lang] = utts

    sample_dim = per_language[languages[0]][0].features.dim
    encoder = build_encoder(cfg, sample_dim)
    head = CtcHead(encoder.config.model_dim, vocab.size, seed=seed)
    model = AsrModel(encoder, head)
    data = load_checkpoint(init)
    load_into_params(model.params(), {k: v for k, v in data.arrays.items()
                                      if k in model.params()})
    freeze(model.params())
    base_before = params_checksum(model.params())

    bottleneck = cfg.get_int("adapt.bottleneck", 0)
    if bottleneck <= 0:
        base_count = sum(p.data.size for p in encoder.params().values())
        bottleneck = solve_bottleneck(base_count, encoder.config.num_layers,
                                      encoder.config.model_dim,
                                      cfg.get_float("adapt.target_ratio", 0.023))
    adapted = AdaptedModel(encoder, AdapterConfig(bottleneck, tuple(languages), seed))
    report = adapted.parameter_report()
    metrics.event(stage="adapt", event="budget", bottleneck=bottleneck,
                  ratio=report.ratio)
    opts = {lang: Adam(adapted.adapter_params(lang), _optimizer_config(cfg))
            for lang in languages}

    saver = _Saver(out_dir, fingerprint)
    for step in range(steps):
        lang = languages[step % len(languages)]
        adapted.select(lang)
        loss, skipped = finetune_step_loss(model, per_language[lang],
                                           step // len(languages), batch_size,
                                           seed, adapters_model=adapted)
        value = loss.item()
        _guard_finite(value, step, metrics, saver)
        opts[lang].zero_grad()
        if loss.requires_grad:
            loss.backward()
        opts[lang].step()
        metrics.event(stage="adapt", step=step + 1, language=lang, loss=value,
                      skipped=skipped)

    if params_checksum(model.params()) != base_before:
        raise RuntimeError("frozen base parameters changed during adaptation")
    metrics.event(stage="adapt", event="frozen_base_ok", steps=steps)
    arrays = params_arrays(model.params())
    for lang in languages:
        arrays.update(params_arrays(adapted.adapter_params(lang)))
    final = saver.save(steps, arrays)
    metrics.close()
    return final


# -- joint speech-text training -----------------------------------------------

def most_weights(cfg: Config) -> MostLossWeights:
    return MostLossWeights(
        w_bestrq=cfg.get_float("most.w_bestrq", 1.0),
        w_asr=cfg.get_float("most.w_asr", 1.0),
        w_consistency=cfg.get_float("most.w_consistency", 1.0),
        w_reconstruction=cfg.get_float("most.w_reconstruction", 1.0),
    )


def read_text_lines(path, vocab: TokenVocab) -> list:
    """Unpaired text: one transcript per line, encoded with the vocabulary."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(vocab.encode(line))
    return out


def most(cfg: Config, out_dir) -> Path:
    """Joint training over the three data streams; batch sizes default to the
    4:8:1 unlabeled/paired/text ratio, scaled to desk size."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")
    fingerprint = cfg.fingerprint()
    metrics = MetricsWriter(out_dir / "metrics.log")
    seed = cfg.get_int("seed")
    steps = cfg.get_int("steps")
    b_unlab = cfg.get_int("most.unlabeled_batch", 4)
    b_paired = cfg.get_int("most.paired_batch", 8)
    b_text = cfg.get_int("most.text_batch", 1)

    vocab = build_vocab(cfg)
    fcfg = feature_config(cfg)
    unlabeled = load_utterances(cfg.get("data.unlabeled_manifest"), fcfg)
    paired = load_utterances(cfg.get("data.train_manifest"), fcfg, vocab)
    texts = read_text_lines(cfg.get("data.text_file"), vocab)
    if not (unlabeled and paired and texts):
        raise ValueError("joint training needs all three data streams")

    encoder = build_encoder(cfg, unlabeled[0].features.dim)
    factor = encoder.config.subsampling_factor
    quantizer = build_quantizer(cfg, factor * unlabeled[0].features.dim)
    model = MostModel.build(vocab.size, unlabeled[0].features.dim, encoder,
                            quantizer, seed=seed)
    opt = Adam(model.params(), _optimizer_config(cfg))
    weights = most_weights(cfg)
    spec = mask_spec(cfg)
    gate = curriculum_gate(steps)
    metrics.event(stage="most", event="gate", step=gate, total=steps)

    saver = _Saver(out_dir, fingerprint)
    for step in range(steps):
        batch = MostBatch(
            unlabeled_speech=[unlabeled[i].features for i in
                              batch_indices(seed, step, b_unlab, len(unlabeled),
                                            "most-unlabeled")],
            paired=[(paired[i].features, paired[i].labels) for i in
                    batch_indices(seed, step, b_paired, len(paired),
                                  "most-paired")],
            unlabeled_text=[texts[i] for i in
                            batch_indices(seed, step, b_text, len(texts),
                                          "most-text")],
        )
        result = most_step(model, batch, weights, step, gate, spec, base_seed=seed)
        value = result.total.item()
        _guard_finite(value, step, metrics, saver)
        opt.zero_grad()
        result.total.backward()
        opt.step()
        metrics.event(stage="most", step=step + 1, loss=value,
                      **{f"loss_{k}": v for k, v in result.components.items()},
                      **{f"skipped_{k}": v for k, v in result.skipped.items()})
    final = saver.save(steps, _arrays_for(model.params(), {"optim": opt}, quantizer))
    metrics.close()
    return final


# -- noisy student ------------------------------------------------------------

def run_nst(cfg: Config, out_dir, teacher_checkpoint) -> Path:
    """Pseudo-label with the teacher, filter, mix with supervised data under
    exact quotas, and train a fresh student; returns its checkpoint."""
    from .data import Utterance
    from .features import log_mel
    from .nst import (
        MixStream,
        filter_pseudo,
        kept_entries,
        pseudo_label,
        read_entry_audio,
        write_pseudo_manifest,
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")
    fingerprint = cfg.fingerprint()
    metrics = MetricsWriter(out_dir / "metrics.log")
    seed = cfg.get_int("seed")
    steps = cfg.get_int("steps")
    batch_size = cfg.get_int("batch_size", 4)

    vocab = build_vocab(cfg)
    fcfg = feature_config(cfg)
    supervised = load_utterances(cfg.get("data.train_manifest"), fcfg, vocab)
    if not supervised:
        raise ValueError("training manifest is empty")
    unlabeled_manifest = cfg.get("data.unlabeled_manifest")

    teacher = load_asr_model(cfg, teacher_checkpoint, supervised[0].features.dim)
    items = pseudo_label(teacher, vocab, unlabeled_manifest, fcfg)
    kept = filter_pseudo(items, cfg.get_float("nst.min_wps", 0.5),
                         cfg.get_float("nst.max_wps", 6.0))
    write_pseudo_manifest(items, out_dir / "pseudo.tsv")
    from .data import write_manifest
    entries = kept_entries(items, unlabeled_manifest)
    write_manifest(entries, out_dir / "pseudo_train.tsv")
    metrics.event(stage="nst", event="pseudo_label", total=len(items),
                  kept=len(kept))

    pseudo_utts = [Utterance(e, log_mel(read_entry_audio(e, unlabeled_manifest), fcfg),
                             vocab.encode(e.transcript))
                   for e in entries]
    ratio = cfg.get_float("nst.supervised_ratio", 0.5)
    stream = MixStream(supervised, pseudo_utts, ratio, batch_size, seed)

    encoder = build_encoder(cfg, supervised[0].features.dim)
    head = CtcHead(encoder.config.model_dim, vocab.size, seed=seed)
    model = AsrModel(encoder, head)
    enc_opt = Adam(encoder.params(), _optimizer_config(cfg, "optim.encoder"))
    dec_opt = Adam(head.params(), _optimizer_config(cfg, "optim.decoder"))
    assert_partition(model.params(), encoder.params(), head.params())

    saver = _Saver(out_dir, fingerprint)
    for step in range(steps):
        batch = stream.next_batch()
        terms, skipped = [], 0
        for utt in batch:
            enc_len = encoder.encoded_length(utt.features.num_frames)
            if not ctc_feasible(enc_len, utt.labels):
                skipped += 1
                continue
            terms.append(ctc_loss(model.forward(utt.features.data), utt.labels))
        loss = _mean(terms) if terms else Tensor(0.0)
        value = loss.item()
        _guard_finite(value, step, metrics, saver)
        enc_opt.zero_grad()
        dec_opt.zero_grad()
        if loss.requires_grad:
            loss.backward()
        enc_opt.step()
        dec_opt.step()
        metrics.event(stage="nst", step=step + 1, loss=value, skipped=skipped,
                      supervised_epochs=stream.epochs["supervised"],
                      pseudo_epochs=stream.epochs["pseudo"])
    final = saver.save(steps, _arrays_for(model.params(),
                                          {"optim_enc": enc_opt,
                                           "optim_dec": dec_opt}))
    metrics.close()
    return final
