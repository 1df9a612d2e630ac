"""Model assemblies: encoder plus task heads."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, log_softmax, matmul
from .ctc import LabelSequence, ctc_greedy_decode
from .encoder import ConformerEncoder
from .rng import make_rng


class CtcHead:
    """Linear projection to vocab logits; log_probs rows sum to one."""

    def __init__(self, model_dim: int, vocab_size: int, seed: int = 0):
        rng = make_rng(seed, "ctc-head")
        self.weight = Tensor(rng.normal(size=(model_dim, vocab_size)) / np.sqrt(model_dim),
                             requires_grad=True, name="ctc.head.weight")
        self.bias = Tensor(np.zeros(vocab_size), requires_grad=True, name="ctc.head.bias")

    def params(self) -> dict:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def log_probs(self, encoder_out: Tensor) -> Tensor:
        return log_softmax(matmul(encoder_out, self.weight) + self.bias)


class AsrModel:
    """Encoder + CTC head; forward yields per-frame log distributions."""

    def __init__(self, encoder: ConformerEncoder, head: CtcHead):
        self.encoder = encoder
        self.head = head

    def params(self) -> dict:
        out = self.encoder.params()
        out.update(self.head.params())
        return out

    def forward(self, feats: np.ndarray, adapters=None) -> Tensor:
        return self.head.log_probs(self.encoder.forward(feats, adapters=adapters))

    def decode(self, feats: np.ndarray) -> LabelSequence:
        from .autodiff import no_grad

        with no_grad():
            return ctc_greedy_decode(self.forward(feats))
