"""Conformer encoder with selectable attention footprint.

Attention patterns: global (every frame sees every frame), local banded
(left/right context per layer, so reach grows linearly with depth), and
chunk-wise (block-diagonal within fixed chunks aligned to frame 0, so reach
never crosses a chunk boundary no matter how deep the stack).

Each block runs half feed-forward, relative-bias self-attention, a depthwise
convolution module (gated linear unit, kernel 5, layer norm in place of
batch norm), a second half feed-forward, then a closing layer norm. The stem
subsamples 4x: either two stride-2 convolutions or plain frame stacking
followed by one linear map; input length is truncated to a multiple of the
subsampling factor first, so output length is exactly T // 4.

Receptive-field accounting reports growth (frames added around a position)
and width (growth plus the position itself); chunked attention's growth is
depth-independent while local growth is layers * (left + right). The stem is
a constant factor at the 10 ms rate and is excluded by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    conv1d,
    depthwise_conv1d,
    layer_norm,
    masked_softmax,
    matmul,
    narrow,
    reshape,
    sigmoid,
    swish,
    take,
    transpose,
)
from .rng import make_rng

GLOBAL_BIAS_CAP = 128  # relative-distance clip when no pattern bounds it


@dataclass(frozen=True)
class AttentionPattern:
    kind: str
    left: int = 0
    right: int = 0
    chunk: int = 0

    def __post_init__(self):
        if self.kind not in ("global", "local", "chunk"):
            raise ValueError(f"unknown attention kind {self.kind!r}")
        if self.kind == "local" and (self.left < 0 or self.right < 0):
            raise ValueError(f"local context must be nonnegative, got ({self.left}, {self.right})")
        if self.kind == "chunk" and self.chunk < 1:
            raise ValueError(f"chunk size must be positive, got {self.chunk}")

    @classmethod
    def global_(cls) -> "AttentionPattern":
        return cls("global")

    @classmethod
    def local(cls, left: int, right: int) -> "AttentionPattern":
        return cls("local", left=left, right=right)

    @classmethod
    def chunked(cls, chunk_frames: int) -> "AttentionPattern":
        return cls("chunk", chunk=chunk_frames)

    @classmethod
    def parse(cls, text: str) -> "AttentionPattern":
        """Accepts "global", "local:L,R", or "chunk:S"."""
        head, _, rest = text.strip().partition(":")
        if head == "global":
            return cls.global_()
        if head == "local":
            try:
                l, r = (int(v) for v in rest.split(","))
            except ValueError:
                raise ValueError(f"expected local:L,R, got {text!r}") from None
            return cls.local(l, r)
        if head == "chunk":
            try:
                return cls.chunked(int(rest))
            except ValueError:
                raise ValueError(f"expected chunk:S, got {text!r}") from None
        raise ValueError(f"unknown attention pattern {text!r}")

    def __str__(self):
        if self.kind == "global":
            return "global"
        if self.kind == "local":
            return f"local:{self.left},{self.right}"
        return f"chunk:{self.chunk}"

    def bias_cap(self) -> int:
        """Relative-distance clip for the learned position bias table."""
        if self.kind == "local":
            return max(self.left, self.right)
        if self.kind == "chunk":
            return self.chunk - 1
        return GLOBAL_BIAS_CAP


def build_attention_mask(pattern: AttentionPattern, num_frames: int) -> np.ndarray:
    """Boolean (T, T) matrix; entry [i, j] allows query i to attend to key j."""
    if num_frames < 1:
        raise ValueError(f"mask needs at least one frame, got {num_frames}")
    if pattern.kind == "global":
        return np.ones((num_frames, num_frames), dtype=bool)
    idx = np.arange(num_frames)
    delta = idx[None, :] - idx[:, None]  # j - i
    if pattern.kind == "local":
        return (delta >= -pattern.left) & (delta <= pattern.right)
    blocks = idx // pattern.chunk
    return blocks[:, None] == blocks[None, :]


@dataclass(frozen=True)
class ConformerConfig:
    num_layers: int
    model_dim: int
    attention_heads: int
    conv_kernel_size: int = 5
    subsampling_factor: int = 4
    relative_attention: bool = True
    ffn_expansion: int = 4
    stem: str = "conv"

    def __post_init__(self):
        if self.model_dim % self.attention_heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by "
                             f"{self.attention_heads} heads")
        if self.conv_kernel_size % 2 == 0:
            raise ValueError(f"conv_kernel_size must be odd, got {self.conv_kernel_size}")
        if self.stem not in ("conv", "stack"):
            raise ValueError(f"stem must be conv or stack, got {self.stem!r}")
        if self.subsampling_factor < 1:
            raise ValueError("subsampling_factor must be >= 1")


@dataclass
class ReceptiveFieldReport:
    """attention_rf_frames counts growth (neighbors reachable around a
    position); attention_width_frames adds the position itself. Unbounded
    (global) patterns report inf."""

    pattern: str
    num_layers: int
    attention_rf_frames: float
    attention_width_frames: float
    conv_rf_frames: int
    total_rf_frames: float
    total_rf_seconds: float
    frame_duration_s: float


def receptive_field(config: ConformerConfig, pattern: AttentionPattern,
                    encoder_frame_duration: float = 0.04) -> ReceptiveFieldReport:
    L = config.num_layers
    if pattern.kind == "global":
        att = float("inf")
    elif pattern.kind == "local":
        att = L * (pattern.left + pattern.right)
    else:
        att = 2 * (pattern.chunk - 1)  # depth-independent by construction
    conv = L * (config.conv_kernel_size - 1)
    total = att + conv
    return ReceptiveFieldReport(
        pattern=str(pattern),
        num_layers=L,
        attention_rf_frames=att,
        attention_width_frames=att + 1,
        conv_rf_frames=conv,
        total_rf_frames=total,
        total_rf_seconds=total * encoder_frame_duration,
        frame_duration_s=encoder_frame_duration,
    )


def _linear_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)


class _ParamBag:
    """Name-keyed parameter registry shared by the model pieces."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def params(self) -> dict:
        return dict(self._params)


class ConformerLayer(_ParamBag):
    """One block: FFN/2, self-attention, conv module, FFN/2, final norm."""

    def __init__(self, dim: int, heads: int, kernel: int, bias_cap: int,
                 relative_attention: bool, ffn_expansion: int, rng, prefix: str):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.relative_attention = relative_attention
        self.bias_cap = bias_cap
        d, f = dim, ffn_expansion * dim
        add = self.add
        for tag in ("ffn1", "ffn2"):
            add(f"{prefix}.{tag}.ln.g", np.ones(d))
            add(f"{prefix}.{tag}.ln.b", np.zeros(d))
            add(f"{prefix}.{tag}.w1", _linear_init(rng, d, f))
            add(f"{prefix}.{tag}.b1", np.zeros(f))
            add(f"{prefix}.{tag}.w2", _linear_init(rng, f, d))
            add(f"{prefix}.{tag}.b2", np.zeros(d))
        add(f"{prefix}.att.ln.g", np.ones(d))
        add(f"{prefix}.att.ln.b", np.zeros(d))
        add(f"{prefix}.att.wqkv", _linear_init(rng, d, 3 * d))
        add(f"{prefix}.att.bqkv", np.zeros(3 * d))
        add(f"{prefix}.att.wo", _linear_init(rng, d, d))
        add(f"{prefix}.att.bo", np.zeros(d))
        if relative_attention:
            add(f"{prefix}.att.relbias", np.zeros((heads, 2 * bias_cap + 1)))
        add(f"{prefix}.conv.ln.g", np.ones(d))
        add(f"{prefix}.conv.ln.b", np.zeros(d))
        add(f"{prefix}.conv.pw1.w", _linear_init(rng, d, 2 * d))
        add(f"{prefix}.conv.pw1.b", np.zeros(2 * d))
        add(f"{prefix}.conv.dw.w", rng.normal(size=(kernel, d)) / np.sqrt(kernel))
        add(f"{prefix}.conv.dw.b", np.zeros(d))
        add(f"{prefix}.conv.ln2.g", np.ones(d))
        add(f"{prefix}.conv.ln2.b", np.zeros(d))
        add(f"{prefix}.conv.pw2.w", _linear_init(rng, d, d))
        add(f"{prefix}.conv.pw2.b", np.zeros(d))
        add(f"{prefix}.out.ln.g", np.ones(d))
        add(f"{prefix}.out.ln.b", np.zeros(d))
        self.prefix = prefix

    def _p(self, tag: str) -> Tensor:
        return self._params[f"{self.prefix}.{tag}"]

    def _ffn(self, x: Tensor, tag: str) -> Tensor:
        h = layer_norm(x, self._p(f"{tag}.ln.g"), self._p(f"{tag}.ln.b"))
        h = swish(matmul(h, self._p(f"{tag}.w1")) + self._p(f"{tag}.b1"))
        return matmul(h, self._p(f"{tag}.w2")) + self._p(f"{tag}.b2")

    def _attention(self, x: Tensor, mask: np.ndarray, bias_idx: np.ndarray) -> Tensor:
        T, d = x.shape
        H, dh = self.heads, self.head_dim
        h = layer_norm(x, self._p("att.ln.g"), self._p("att.ln.b"))
        qkv = matmul(h, self._p("att.wqkv")) + self._p("att.bqkv")
        q = transpose(reshape(narrow(qkv, 1, 0, d), (T, H, dh)), (1, 0, 2))
        k = transpose(reshape(narrow(qkv, 1, d, d), (T, H, dh)), (1, 2, 0))
        v = transpose(reshape(narrow(qkv, 1, 2 * d, d), (T, H, dh)), (1, 0, 2))
        scores = matmul(q, k) * (1.0 / np.sqrt(dh))
        if self.relative_attention:
            scores = scores + take(self._p("att.relbias"), bias_idx, axis=1)
        att = masked_softmax(scores, mask)
        ctx = reshape(transpose(matmul(att, v), (1, 0, 2)), (T, d))
        return matmul(ctx, self._p("att.wo")) + self._p("att.bo")

    def _conv(self, x: Tensor) -> Tensor:
        d = self.dim
        h = layer_norm(x, self._p("conv.ln.g"), self._p("conv.ln.b"))
        h = matmul(h, self._p("conv.pw1.w")) + self._p("conv.pw1.b")
        gated = narrow(h, 1, 0, d) * sigmoid(narrow(h, 1, d, d))
        c = depthwise_conv1d(gated, self._p("conv.dw.w")) + self._p("conv.dw.b")
        c = layer_norm(c, self._p("conv.ln2.g"), self._p("conv.ln2.b"))
        return matmul(swish(c), self._p("conv.pw2.w")) + self._p("conv.pw2.b")

    def forward(self, x: Tensor, mask: np.ndarray, bias_idx: np.ndarray,
                adapters=None) -> Tensor:
        a1, a2 = adapters if adapters is not None else (None, None)
        h = x + (self._ffn(x, "ffn1") * 0.5)
        if a1 is not None:
            h = h + a1(x)
        x = h
        x = x + self._attention(x, mask, bias_idx)
        x = x + self._conv(x)
        h = x + (self._ffn(x, "ffn2") * 0.5)
        if a2 is not None:
            h = h + a2(x)
        x = h
        return layer_norm(x, self._p("out.ln.g"), self._p("out.ln.b"))


class ConformerEncoder(_ParamBag):
    def __init__(self, config: ConformerConfig, pattern: AttentionPattern,
                 input_dim: int, seed: int = 0):
        super().__init__()
        self.config = config
        self.pattern = pattern
        self.input_dim = input_dim
        rng = make_rng(seed, "encoder-init")
        d = config.model_dim
        s = config.subsampling_factor
        if config.stem == "conv":
            if s != 4:
                raise ValueError("conv stem implements exactly 4x subsampling")
            self.add("enc.stem.conv1.w", rng.normal(size=(3, input_dim, d)) / np.sqrt(3 * input_dim))
            self.add("enc.stem.conv1.b", np.zeros(d))
            self.add("enc.stem.conv2.w", rng.normal(size=(3, d, d)) / np.sqrt(3 * d))
            self.add("enc.stem.conv2.b", np.zeros(d))
        else:
            self.add("enc.stem.stack.w", _linear_init(rng, s * input_dim, d))
            self.add("enc.stem.stack.b", np.zeros(d))
        self.layers = []
        for i in range(config.num_layers):
            layer = ConformerLayer(d, config.attention_heads, config.conv_kernel_size,
                                   pattern.bias_cap(), config.relative_attention,
                                   config.ffn_expansion, rng, prefix=f"enc.layer{i}")
            self._params.update(layer.params())
            self.layers.append(layer)

    def encoded_length(self, num_input_frames: int) -> int:
        return num_input_frames // self.config.subsampling_factor

    def _stem(self, feats) -> Tensor:
        s = self.config.subsampling_factor
        T4 = (feats.shape[0] // s) * s
        if T4 == 0:
            raise ValueError(f"{feats.shape[0]} input frames subsample to nothing (factor {s})")
        if isinstance(feats, Tensor):
            x = narrow(feats, 0, 0, T4) if T4 != feats.shape[0] else feats
        else:
            x = Tensor(feats[:T4])
        if self.config.stem == "conv":
            h = swish(conv1d(x, self._params["enc.stem.conv1.w"], stride=2, padding=1)
                      + self._params["enc.stem.conv1.b"])
            h = swish(conv1d(h, self._params["enc.stem.conv2.w"], stride=2, padding=1)
                      + self._params["enc.stem.conv2.b"])
            return h
        stacked = reshape(x, (T4 // s, s * self.input_dim))
        return matmul(stacked, self._params["enc.stem.stack.w"]) + self._params["enc.stem.stack.b"]

    def _bias_idx(self, T: int) -> np.ndarray:
        cap = self.pattern.bias_cap()
        idx = np.arange(T)
        return np.clip(idx[None, :] - idx[:, None], -cap, cap) + cap

    def forward(self, feats: np.ndarray, adapters=None) -> Tensor:
        """Encode (T, input_dim) features to (T // subsampling, model_dim)."""
        return self.forward_from(np.asarray(feats, dtype=np.float64), adapters)

    def forward_from(self, feats, adapters=None) -> Tensor:
        """Like forward, but also accepts a graph Tensor so upstream modules
        (the text path) receive gradients through the stem."""
        x = self._stem(feats)
        T = x.shape[0]
        mask = build_attention_mask(self.pattern, T)
        bias_idx = self._bias_idx(T)
        for i, layer in enumerate(self.layers):
            layer_adapters = adapters[i] if adapters is not None else None
            x = layer.forward(x, mask, bias_idx, layer_adapters)
        return x


def param_count_formula(config: ConformerConfig, pattern: AttentionPattern,
                        input_dim: int) -> int:
    """Exact parameter count of ConformerEncoder, kept in lockstep with
    construction (tests assert equality against the built model)."""
    d = config.model_dim
    f = config.ffn_expansion * d
    h = config.attention_heads
    k = config.conv_kernel_size
    cap = pattern.bias_cap()
    ffn = 2 * d + (d * f + f) + (f * d + d)
    att = 2 * d + (d * 3 * d + 3 * d) + (d * d + d)
    if config.relative_attention:
        att += h * (2 * cap + 1)
    conv = 2 * d + (d * 2 * d + 2 * d) + (k * d + d) + 2 * d + (d * d + d)
    per_layer = 2 * ffn + att + conv + 2 * d
    if config.stem == "conv":
        stem = (3 * input_dim * d + d) + (3 * d * d + d)
    else:
        stem = config.subsampling_factor * input_dim * d + d
    return stem + config.num_layers * per_layer
