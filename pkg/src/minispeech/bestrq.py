"""Random-projection quantization and the masked-prediction objective.

A frozen Gaussian projection maps stacked feature frames to a small embedding
space; N frozen codebooks each label every frame with the index of their
nearest vector under cosine similarity. Training masks spans of input frames
with Gaussian noise and asks N softmax heads on the encoder output to recover
the labels; the loss is the equal-weight average of the N cross-entropies
over masked frames only.

The projection and codebooks are plain arrays, never parameters: they are
checksummed at construction and verify_frozen() re-checks the bytes, which
the training loop does every step.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, log_softmax, no_grad, pick, reshape, take
from .features import FeatureSequence
from .rng import make_rng

_NORM_EPS = 1e-12


def _checksum(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class RandomQuantizer:
    """Frozen projection (d_in, d_emb) plus N codebooks of c vectors each."""

    projection: np.ndarray
    codebooks: np.ndarray
    checksum: str = ""

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.codebooks = np.asarray(self.codebooks, dtype=np.float64)
        if self.codebooks.ndim != 3:
            raise ValueError(f"codebooks must be (N, c, d_emb), got {self.codebooks.shape}")
        if self.projection.shape[1] != self.codebooks.shape[2]:
            raise ValueError(f"projection {self.projection.shape} does not feed "
                             f"codebooks {self.codebooks.shape}")
        norms = np.linalg.norm(self.codebooks, axis=2)
        if (norms < _NORM_EPS).any():
            raise ValueError("codebook vectors must have nonzero norm")
        if not self.checksum:
            self.checksum = _checksum(self.projection, self.codebooks)

    @classmethod
    def create(cls, d_in: int, d_emb: int = 16, num_codebooks: int = 16,
               codebook_size: int = 256, seed: int = 0) -> "RandomQuantizer":
        rng = make_rng(seed, "quantizer")
        proj = rng.normal(size=(d_in, d_emb)) / np.sqrt(d_in)
        books = rng.normal(size=(num_codebooks, codebook_size, d_emb))
        return cls(proj, books)

    @property
    def num_codebooks(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    def verify_frozen(self):
        if _checksum(self.projection, self.codebooks) != self.checksum:
            raise RuntimeError("quantizer arrays changed after construction")


@dataclass(frozen=True)
class MaskSpec:
    start_probability: float = 0.01
    span_s: float = 0.4
    noise_mean: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.start_probability <= 1.0:
            raise ValueError(f"start_probability {self.start_probability} outside [0, 1]")
        if self.span_s <= 0:
            raise ValueError(f"span must be positive, got {self.span_s}")

    def at_step(self, base_seed: int, step: int) -> "MaskSpec":
        """Per-step variant: reseeded from (base_seed, step) so every training
        step masks differently yet reruns identically."""
        sub = make_rng(base_seed, "mask-step", step).integers(0, 2**63 - 1)
        return replace(self, seed=int(sub))


@dataclass
class QuantizedTargets:
    """Per-codebook labels (N, T) plus which frames the loss may score."""

    labels: np.ndarray
    mask_indices: np.ndarray
    degenerate_frames: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.mask_indices = np.asarray(sorted(set(int(i) for i in np.asarray(self.mask_indices).ravel())),
                                       dtype=np.int64)
        if self.mask_indices.size and not (0 <= self.mask_indices.min()
                                           and self.mask_indices.max() < self.labels.shape[1]):
            raise ValueError(f"mask indices outside [0, {self.labels.shape[1]})")


def quantize(features, quantizer: RandomQuantizer, mask_indices=()) -> QuantizedTargets:
    """Label every frame with each codebook's cosine-nearest vector.

    Ties break toward the lowest index; a zero-norm projected frame gets
    code 0 and increments the degenerate-frame count.
    """
    x = features.data if isinstance(features, FeatureSequence) else np.asarray(features)
    if x.shape[1] != quantizer.projection.shape[0]:
        raise ValueError(f"frame dim {x.shape[1]} != projection input {quantizer.projection.shape[0]}")
    proj = x @ quantizer.projection
    norms = np.linalg.norm(proj, axis=1, keepdims=True)
    degenerate = norms[:, 0] < _NORM_EPS
    unit = np.divide(proj, norms, out=np.zeros_like(proj), where=~degenerate[:, None])
    books = quantizer.codebooks
    bnorm = books / np.linalg.norm(books, axis=2, keepdims=True)
    sims = np.einsum("td,ncd->ntc", unit, bnorm)
    labels = np.argmax(sims, axis=2)
    labels[:, degenerate] = 0
    return QuantizedTargets(labels, mask_indices, degenerate_frames=int(degenerate.sum()))


def sample_mask(num_frames: int, span_frames: int, spec: MaskSpec) -> np.ndarray:
    """Boolean mask: each frame starts a span of span_frames with
    start_probability, spans may overlap and clip at the end."""
    rng = make_rng(spec.seed, "mask")
    starts = rng.random(num_frames) < spec.start_probability
    mask = np.zeros(num_frames, dtype=bool)
    for s in np.flatnonzero(starts):
        mask[s:s + span_frames] = True
    return mask


def apply_mask(features: FeatureSequence, spec: MaskSpec) -> tuple[FeatureSequence, np.ndarray]:
    """Replace masked frames with Gaussian noise; unmasked frames bit-identical."""
    span_frames = max(1, int(round(spec.span_s / features.hop_s)))
    mask = sample_mask(features.num_frames, span_frames, spec)
    noise = make_rng(spec.seed, "mask-noise").normal(
        spec.noise_mean, spec.noise_std, size=features.data.shape)
    out = features.data.copy()
    out[mask] = noise[mask]
    return FeatureSequence(out, features.hop_s), np.flatnonzero(mask)


def stacked_mask_indices(mask_indices_raw: np.ndarray, factor: int, num_stacked: int) -> np.ndarray:
    """Mask indices at the stacked frame rate: a stacked frame counts as
    masked when any of its constituent raw frames is."""
    idx = np.unique(np.asarray(mask_indices_raw, dtype=np.int64) // factor)
    return idx[idx < num_stacked]


class BestRQHeads:
    """N parallel softmax heads over the encoder output, one per codebook."""

    def __init__(self, model_dim: int, num_codebooks: int, codebook_size: int, seed: int = 0):
        rng = make_rng(seed, "bestrq-heads")
        self.num_codebooks = num_codebooks
        self.codebook_size = codebook_size
        scale = 1.0 / np.sqrt(model_dim)
        self.weight = Tensor(rng.normal(size=(model_dim, num_codebooks * codebook_size)) * scale,
                             requires_grad=True, name="bestrq.heads.weight")
        self.bias = Tensor(np.zeros(num_codebooks * codebook_size),
                           requires_grad=True, name="bestrq.heads.bias")
        self.empty_mask_steps = 0

    def params(self) -> dict:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def logits(self, encoder_output: Tensor) -> Tensor:
        return (encoder_output @ self.weight) + self.bias


def bestrq_loss(heads: BestRQHeads, encoder_output: Tensor, targets: QuantizedTargets) -> Tensor:
    """Equal-weight average over codebooks of masked-frame cross-entropy."""
    N, T = targets.labels.shape
    if N != heads.num_codebooks:
        raise ValueError(f"targets carry {N} codebooks, heads expect {heads.num_codebooks}")
    if encoder_output.shape[0] != T:
        raise ValueError(f"encoder output length {encoder_output.shape[0]} != target length {T}")
    m = targets.mask_indices
    if m.size == 0:
        heads.empty_mask_steps += 1
        return Tensor(0.0)
    sel = take(encoder_output, m, axis=0)
    logits = reshape(heads.logits(sel), (len(m) * N, heads.codebook_size))
    wanted = targets.labels[:, m].T.ravel()
    return -(pick(log_softmax(logits), wanted).mean())


def masked_accuracy(heads: BestRQHeads, encoder_output: Tensor,
                    targets: QuantizedTargets) -> float:
    """Fraction of (masked frame, codebook) cells whose argmax logit hits the
    quantized label; NaN when nothing is masked."""
    m = targets.mask_indices
    if m.size == 0:
        return float("nan")
    with no_grad():
        sel = take(encoder_output.detach(), m, axis=0)
        logits = heads.logits(sel).data.reshape(len(m), heads.num_codebooks,
                                                heads.codebook_size)
    predicted = logits.argmax(axis=2)
    return float((predicted == targets.labels[:, m].T).mean())
