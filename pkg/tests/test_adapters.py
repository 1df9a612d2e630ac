import numpy as np
import pytest

from minispeech.adapters import (
    AdapterConfig,
    adapter_param_count,
    attach_adapters,
    freeze,
    params_checksum,
    solve_bottleneck,
)
from minispeech.ctc import LabelSequence, ctc_loss
from minispeech.encoder import AttentionPattern, ConformerConfig, ConformerEncoder
from minispeech.models import AsrModel, CtcHead
from minispeech.optim import Adam, OptimizerConfig


def small_encoder(seed=0, **kw):
    base = dict(num_layers=2, model_dim=16, attention_heads=2,
                conv_kernel_size=3, stem="stack")
    base.update(kw)
    cfg = ConformerConfig(**base)
    return ConformerEncoder(cfg, AttentionPattern.local(4, 4), input_dim=8, seed=seed)


def test_zero_init_adapters_forward_bit_identical():
    enc = small_encoder()
    x = np.random.default_rng(0).normal(size=(24, 8))
    base_out = enc.forward(x).data
    model = attach_adapters(enc, AdapterConfig(bottleneck_dim=4, languages=("fr",)))
    model.select("fr")
    np.testing.assert_array_equal(model.forward(x).data, base_out)


def test_never_trained_language_gives_base_output():
    enc = small_encoder(seed=3)
    model = attach_adapters(enc, AdapterConfig(bottleneck_dim=4, languages=("aa", "bb")))
    x = np.random.default_rng(1).normal(size=(16, 8))
    base = enc.forward(x).data
    model.select("bb")
    np.testing.assert_array_equal(model.forward(x).data, base)


def test_select_unknown_language_lists_registered():
    model = attach_adapters(small_encoder(), AdapterConfig(4, languages=("de", "en")))
    with pytest.raises(ValueError) as exc:
        model.select("zz")
    assert "de" in str(exc.value) and "en" in str(exc.value)


def test_rebinding_is_stable_across_switches():
    model = attach_adapters(small_encoder(), AdapterConfig(4, languages=("a", "b")))
    # make the two languages actually differ
    model.banks["a"][0][0].up_w.data[:] = 0.3
    model.banks["b"][0][0].up_w.data[:] = -0.2
    x = np.random.default_rng(2).normal(size=(16, 8))
    model.select("a")
    ya1 = model.forward(x).data
    model.select("b")
    yb = model.forward(x).data
    model.select("a")
    ya2 = model.forward(x).data
    assert np.array_equal(ya1, ya2)
    assert not np.array_equal(ya1, yb)


def test_bottleneck_larger_than_model_dim_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        attach_adapters(small_encoder(), AdapterConfig(bottleneck_dim=64))
    with pytest.raises(ValueError):
        AdapterConfig(bottleneck_dim=0)


def test_param_count_formula_matches_enumeration():
    model = attach_adapters(small_encoder(), AdapterConfig(5, languages=("xx",)))
    counted = sum(p.size for p in model.adapter_params("xx").values())
    assert counted == adapter_param_count(2, 16, 5)


def test_default_budget_lands_in_paper_band():
    cfg = ConformerConfig(num_layers=8, model_dim=128, attention_heads=4,
                          conv_kernel_size=5)
    enc = ConformerEncoder(cfg, AttentionPattern.chunked(75), input_dim=128, seed=0)
    base = sum(p.size for p in enc.params().values())
    b = solve_bottleneck(base, cfg.num_layers, cfg.model_dim)
    model = attach_adapters(enc, AdapterConfig(b, languages=("xx",)))
    report = model.parameter_report()
    assert 0.020 <= report.ratio <= 0.026, report
    assert report.base_params == base
    assert report.adapter_params_per_language == adapter_param_count(8, 128, b)


def make_task(seed):
    """50 utterances of three noisy class prototypes each; labels follow
    the prototypes, so the mapping is learnable rather than memorized."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(4, 4, 8))
    utterances = []
    for _ in range(50):
        ids = rng.integers(0, 4, size=3)
        feats = np.concatenate([protos[i] + 0.1 * rng.normal(size=(4, 8)) for i in ids])
        feats = np.concatenate([feats, np.zeros((24 - feats.shape[0], 8))])
        utterances.append((feats, LabelSequence(ids + 1)))
    return utterances


def test_adapter_training_frozen_base_and_loss_halves():
    enc = small_encoder(seed=7)
    head = CtcHead(16, vocab_size=5, seed=8)
    asr = AsrModel(enc, head)
    freeze(enc.params())
    freeze(head.params())
    model = attach_adapters(enc, AdapterConfig(bottleneck_dim=8, languages=("xx",), seed=9))
    model.select("xx")
    base_before = params_checksum({**enc.params(), **head.params()})

    task = make_task(10)

    def mean_loss():
        total = 0.0
        for feats, labels in task:
            lp = head.log_probs(model.forward(feats))
            total += ctc_loss(lp, labels).item()
        return total / len(task)

    start = mean_loss()
    opt = Adam(model.adapter_params("xx"),
               OptimizerConfig(learning_rate=1e-2, schedule="constant"))
    for step in range(200):
        feats, labels = task[step % len(task)]
        lp = head.log_probs(model.forward(feats))
        loss = ctc_loss(lp, labels)
        opt.zero_grad()
        loss.backward()
        for name, p in enc.params().items():
            assert p.grad is None, f"frozen base parameter {name} got a gradient"
        opt.step()

    end = mean_loss()
    assert end <= 0.5 * start, (start, end)
    assert params_checksum({**enc.params(), **head.params()}) == base_before


def test_unselected_language_gets_no_gradient():
    enc = small_encoder(seed=11)
    model = attach_adapters(enc, AdapterConfig(4, languages=("a", "b"), seed=12))
    model.select("a")
    x = np.random.default_rng(13).normal(size=(16, 8))
    out = model.forward(x)
    (out * out).mean().backward()
    touched_a = any(p.grad is not None and np.any(p.grad)
                    for p in model.adapter_params("a").values())
    touched_b = [p.grad for p in model.adapter_params("b").values()
                 if p.grad is not None and np.any(p.grad)]
    assert touched_a
    assert touched_b == []
