"""Residual adapters for per-language adaptation over a frozen encoder.

Each conformer block gets two adapters, one in parallel with each half
feed-forward sublayer: block output becomes sublayer_output + adapter(x)
where x is the sublayer input. An adapter is layer-norm, down-projection,
swish, zero-initialized up-projection, so a freshly attached model is
bit-identical to the base. Language selection rebinds which adapter set the
forward pass uses; the base parameters are shared and never copied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, layer_norm, matmul, swish
from .encoder import ConformerEncoder
from .rng import make_rng


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck_dim: int
    languages: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ValueError(f"bottleneck_dim must be >= 1, got {self.bottleneck_dim}")


@dataclass
class AdapterReport:
    base_params: int
    adapter_params_per_language: int
    ratio: float


class Adapter:
    def __init__(self, dim: int, bottleneck: int, rng, prefix: str):
        self.prefix = prefix
        self.ln_g = Tensor(np.ones(dim), requires_grad=True, name=f"{prefix}.ln.g")
        self.ln_b = Tensor(np.zeros(dim), requires_grad=True, name=f"{prefix}.ln.b")
        self.down_w = Tensor(rng.normal(size=(dim, bottleneck)) / np.sqrt(dim),
                             requires_grad=True, name=f"{prefix}.down.w")
        self.down_b = Tensor(np.zeros(bottleneck), requires_grad=True, name=f"{prefix}.down.b")
        self.up_w = Tensor(np.zeros((bottleneck, dim)), requires_grad=True, name=f"{prefix}.up.w")
        self.up_b = Tensor(np.zeros(dim), requires_grad=True, name=f"{prefix}.up.b")

    def __call__(self, x: Tensor) -> Tensor:
        h = layer_norm(x, self.ln_g, self.ln_b)
        h = swish(matmul(h, self.down_w) + self.down_b)
        return matmul(h, self.up_w) + self.up_b

    def params(self) -> dict:
        return {t.name: t for t in (self.ln_g, self.ln_b, self.down_w,
                                    self.down_b, self.up_w, self.up_b)}


def adapter_param_count(num_layers: int, model_dim: int, bottleneck: int) -> int:
    """Parameters one language adds: 2 adapters per block."""
    per_adapter = 2 * model_dim + model_dim * bottleneck + bottleneck \
        + bottleneck * model_dim + model_dim
    return 2 * num_layers * per_adapter


def solve_bottleneck(base_params: int, num_layers: int, model_dim: int,
                     target_ratio: float = 0.023) -> int:
    """Bottleneck width whose added-parameter ratio best hits the target."""
    d = model_dim
    b = (target_ratio * base_params / (2 * num_layers) - 3 * d) / (2 * d + 1)
    best = max(1, int(round(b)))
    # rounding can land a hair off; nudge to whichever neighbor is closest
    def err(bb):
        return abs(adapter_param_count(num_layers, d, bb) / base_params - target_ratio)
    for cand in (best - 1, best + 1):
        if cand >= 1 and err(cand) < err(best):
            best = cand
    return best


class AdaptedModel:
    """A frozen-base view over an encoder plus per-language adapter banks."""

    def __init__(self, encoder: ConformerEncoder, config: AdapterConfig):
        d = encoder.config.model_dim
        if config.bottleneck_dim > d:
            raise ValueError(f"bottleneck {config.bottleneck_dim} exceeds model dim {d}")
        self.encoder = encoder
        self.config = config
        self.banks: dict = {}
        self._active: str | None = None
        for lang in config.languages:
            self.register_language(lang)

    def register_language(self, language: str):
        if language in self.banks:
            raise ValueError(f"language {language!r} already registered")
        rng = make_rng(self.config.seed, f"adapters-{language}")
        d = self.encoder.config.model_dim
        pairs = []
        for i in range(self.encoder.config.num_layers):
            a = Adapter(d, self.config.bottleneck_dim, rng, f"adapter.{language}.layer{i}.a")
            b = Adapter(d, self.config.bottleneck_dim, rng, f"adapter.{language}.layer{i}.b")
            pairs.append((a, b))
        self.banks[language] = pairs

    def select(self, language: str):
        if language not in self.banks:
            raise ValueError(f"language {language!r} not registered; "
                             f"have {sorted(self.banks)}")
        self._active = language

    @property
    def active_language(self) -> str | None:
        return self._active

    def forward(self, feats: np.ndarray) -> Tensor:
        if self._active is None:
            return self.encoder.forward(feats)
        return self.encoder.forward(feats, adapters=self.banks[self._active])

    def adapter_params(self, language: str) -> dict:
        out: dict = {}
        for a, b in self.banks[language]:
            out.update(a.params())
            out.update(b.params())
        return out

    def base_params(self) -> dict:
        return self.encoder.params()

    def parameter_report(self) -> AdapterReport:
        base = sum(p.size for p in self.base_params().values())
        added = adapter_param_count(self.encoder.config.num_layers,
                                    self.encoder.config.model_dim,
                                    self.config.bottleneck_dim)
        return AdapterReport(base, added, added / base)


def attach_adapters(encoder: ConformerEncoder, config: AdapterConfig) -> AdaptedModel:
    return AdaptedModel(encoder, config)


def freeze(params: dict):
    for p in params.values():
        p.requires_grad = False


def params_checksum(params: dict) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())
    return h.hexdigest()
