"""Joint training over unlabeled speech, paired speech-text, and unpaired text.

The speech side runs features through a front conformer layer and then the
shared encoder to a CTC head; unlabeled speech instead feeds the shared
encoder directly under the masked-prediction objective. The text side embeds
graphemes, repeats each embedding a fixed number of times so the sequence
lands at the feature frame rate, and runs one conformer layer. Two couplings
tie the spaces together: a consistency MSE between the text representation
(linearly interpolated to the speech length) and the frozen speech
representation, and a masked-reconstruction CTC loss that pushes corrupted
text representations through the shared encoder to recover the original
text. Reconstruction only participates after a curriculum gate, a fixed
fraction of total steps.

Infeasible or empty items (a transcript longer than its frame budget, an
empty transcript for alignment) are skipped and counted, never crashed on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, interp_linear, take
from .bestrq import (
    BestRQHeads,
    MaskSpec,
    RandomQuantizer,
    apply_mask,
    bestrq_loss,
    quantize,
    sample_mask,
    stacked_mask_indices,
)
from .ctc import LabelSequence, ctc_feasible, ctc_loss
from .encoder import ConformerEncoder, ConformerLayer
from .features import FeatureSequence, stack_frames
from .models import CtcHead
from .rng import make_rng

FRONT_BIAS_CAP = 32
FRAME_HOP_S = 0.01


@dataclass(frozen=True)
class MostLossWeights:
    w_bestrq: float = 1.0
    w_asr: float = 1.0
    w_consistency: float = 1.0
    w_reconstruction: float = 1.0

    def __post_init__(self):
        ws = (self.w_bestrq, self.w_asr, self.w_consistency, self.w_reconstruction)
        if any(w < 0 for w in ws):
            raise ValueError(f"loss weights must be nonnegative, got {ws}")
        if all(w == 0 for w in ws):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class MostBatch:
    unlabeled_speech: list = field(default_factory=list)
    paired: list = field(default_factory=list)
    unlabeled_text: list = field(default_factory=list)


def curriculum_gate(total_steps: int) -> int:
    """Step at which unpaired text joins the objective (0.17 of the run)."""
    return int(round(0.17 * total_steps))


def upsample_text(token_embeddings: Tensor, factor: int) -> Tensor:
    """Repeat each row `factor` times: ABC -> AABBCC for factor 2."""
    if factor < 1:
        raise ValueError(f"repetition factor must be >= 1, got {factor}")
    L = token_embeddings.shape[0]
    return take(token_embeddings, np.repeat(np.arange(L), factor), axis=0)


class FrontLayer:
    """A standalone conformer layer with full attention, used ahead of the
    shared encoder on both the speech and text paths."""

    def __init__(self, dim: int, heads: int, kernel: int, seed: int, prefix: str):
        rng = make_rng(seed, prefix)
        self.layer = ConformerLayer(dim, heads, kernel, FRONT_BIAS_CAP,
                                    True, 4, rng, prefix)

    def forward(self, x: Tensor) -> Tensor:
        T = x.shape[0]
        mask = np.ones((T, T), dtype=bool)
        idx = np.arange(T)
        bias_idx = np.clip(idx[None, :] - idx[:, None], -FRONT_BIAS_CAP, FRONT_BIAS_CAP) \
            + FRONT_BIAS_CAP
        return self.layer.forward(x, mask, bias_idx)

    def params(self) -> dict:
        return self.layer.params()


class TextEncoder:
    """Grapheme embeddings, fixed-repetition upsampling, one conformer layer."""

    def __init__(self, vocab_size: int, dim: int, heads: int, kernel: int,
                 repetition: int = 4, seed: int = 0):
        if repetition < 1:
            raise ValueError("repetition must be >= 1")
        rng = make_rng(seed, "text-embedding")
        self.repetition = repetition
        self.embedding = Tensor(rng.normal(size=(vocab_size, dim)) / np.sqrt(dim),
                                requires_grad=True, name="text.embedding")
        self.layer = FrontLayer(dim, heads, kernel, seed, "text.layer0")

    def forward(self, text: LabelSequence) -> Tensor:
        if len(text) == 0:
            raise ValueError("cannot encode an empty transcript")
        emb = take(self.embedding, np.asarray(text.ids), axis=0)
        return self.layer.forward(upsample_text(emb, self.repetition))

    def params(self) -> dict:
        out = {self.embedding.name: self.embedding}
        out.update(self.layer.params())
        return out


class MostModel:
    """All parts of the joint stage, with the parameter split exposed."""

    def __init__(self, shared: ConformerEncoder, speech_front: FrontLayer,
                 text_encoder: TextEncoder, quantizer: RandomQuantizer,
                 rq_heads: BestRQHeads, ctc_head: CtcHead):
        self.shared = shared
        self.speech_front = speech_front
        self.text_encoder = text_encoder
        self.quantizer = quantizer
        self.rq_heads = rq_heads
        self.ctc_head = ctc_head

    @classmethod
    def build(cls, vocab_size: int, feat_dim: int, shared_encoder: ConformerEncoder,
              quantizer: RandomQuantizer, seed: int = 0) -> "MostModel":
        cfg = shared_encoder.config
        front = FrontLayer(feat_dim, cfg.attention_heads, cfg.conv_kernel_size,
                           seed, "speech.front")
        text = TextEncoder(vocab_size, feat_dim, cfg.attention_heads,
                           cfg.conv_kernel_size, repetition=cfg.subsampling_factor,
                           seed=seed)
        heads = BestRQHeads(cfg.model_dim, quantizer.num_codebooks,
                            quantizer.codebook_size, seed=seed)
        ctc_head = CtcHead(cfg.model_dim, vocab_size, seed=seed)
        return cls(shared_encoder, front, text, quantizer, heads, ctc_head)

    def speech_params(self) -> dict:
        out = self.shared.params()
        out.update(self.speech_front.params())
        return out

    def params(self) -> dict:
        out = self.speech_params()
        out.update(self.text_encoder.params())
        out.update(self.rq_heads.params())
        out.update(self.ctc_head.params())
        return out


def consistency_mse(text_repr: Tensor, speech_repr: Tensor) -> Tensor:
    """MSE after linear length alignment; callers detach the speech side."""
    aligned = interp_linear(text_repr, speech_repr.shape[0])
    gap = aligned - speech_repr
    return (gap * gap).mean()


def text_reconstruction_loss(model: MostModel, input_text: LabelSequence,
                             mask_spec: MaskSpec,
                             target_text: LabelSequence | None = None):
    """Corrupt the text representation with span masking, push it through the
    shared encoder, and score CTC against the (uncorrupted) target text.
    Returns None when the target cannot fit the frame budget."""
    target = input_text if target_text is None else target_text
    text_out = model.text_encoder.forward(input_text)
    Tt, D = text_out.shape
    span = max(1, int(round(mask_spec.span_s / FRAME_HOP_S)))
    mask = sample_mask(Tt, span, mask_spec)
    noise = make_rng(mask_spec.seed, "mask-noise").normal(
        mask_spec.noise_mean, mask_spec.noise_std, size=(Tt, D))
    keep = Tensor(np.where(mask[:, None], 0.0, 1.0) * np.ones((1, D)))
    corrupted = text_out * keep + Tensor(noise * mask[:, None])
    enc = model.shared.forward_from(corrupted)
    if not ctc_feasible(enc.shape[0], target):
        return None
    return ctc_loss(model.ctc_head.log_probs(enc), target)


@dataclass
class MostStepResult:
    total: Tensor
    components: dict
    flags: list
    skipped: dict


def _mean(terms: list) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def most_step(model: MostModel, batch: MostBatch, weights: MostLossWeights,
              step: int, curriculum_gate_step: int, mask_spec: MaskSpec,
              base_seed: int = 0) -> MostStepResult:
    """One joint objective evaluation; the caller owns backward and the
    optimizer. Reconstruction contributes only once step reaches the gate."""
    flags: list = []
    skipped = {"asr": 0, "consistency": 0, "reconstruction": 0}
    comps: dict = {}
    n_items = len(batch.unlabeled_speech) + len(batch.unlabeled_text)
    seeds = make_rng(base_seed, "most-mask-seeds", step).integers(
        0, 2**63 - 1, size=max(1, n_items))
    factor = model.shared.config.subsampling_factor

    if batch.unlabeled_speech:
        terms = []
        for i, feats in enumerate(batch.unlabeled_speech):
            spec_i = replace(mask_spec, seed=int(seeds[i]))
            masked, raw_idx = apply_mask(feats, spec_i)
            enc = model.shared.forward(masked.data)
            stacked = stack_frames(feats, factor)
            targets = quantize(stacked, model.quantizer,
                               stacked_mask_indices(raw_idx, factor, stacked.num_frames))
            terms.append(bestrq_loss(model.rq_heads, enc, targets))
        comps["bestrq"] = _mean(terms)
    else:
        comps["bestrq"] = Tensor(0.0)
        flags.append("missing unlabeled_speech sub-batch")

    if batch.paired:
        asr_terms, cons_terms = [], []
        for feats, text in batch.paired:
            front = model.speech_front.forward(Tensor(feats.data))
            enc = model.shared.forward_from(front)
            if ctc_feasible(enc.shape[0], text):
                asr_terms.append(ctc_loss(model.ctc_head.log_probs(enc), text))
            else:
                skipped["asr"] += 1
            if len(text) == 0:
                skipped["consistency"] += 1
            else:
                text_repr = model.text_encoder.forward(text)
                cons_terms.append(consistency_mse(text_repr, front.detach()))
        comps["asr"] = _mean(asr_terms) if asr_terms else Tensor(0.0)
        comps["consistency"] = _mean(cons_terms) if cons_terms else Tensor(0.0)
    else:
        comps["asr"] = Tensor(0.0)
        comps["consistency"] = Tensor(0.0)
        flags.append("missing paired sub-batch")

    if step >= curriculum_gate_step:
        if batch.unlabeled_text:
            terms = []
            for j, text in enumerate(batch.unlabeled_text):
                spec_j = replace(mask_spec, seed=int(seeds[len(batch.unlabeled_speech) + j]))
                loss = text_reconstruction_loss(model, text, spec_j)
                if loss is None:
                    skipped["reconstruction"] += 1
                else:
                    terms.append(loss)
            comps["reconstruction"] = _mean(terms) if terms else Tensor(0.0)
        else:
            comps["reconstruction"] = Tensor(0.0)
            flags.append("missing unlabeled_text sub-batch")
    else:
        comps["reconstruction"] = Tensor(0.0)

    total = (comps["bestrq"] * weights.w_bestrq
             + comps["asr"] * weights.w_asr
             + comps["consistency"] * weights.w_consistency
             + comps["reconstruction"] * weights.w_reconstruction)
    values = {k: float(v.item()) for k, v in comps.items()}
    return MostStepResult(total, values, flags, skipped)
