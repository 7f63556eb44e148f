import warnings

import numpy as np
import pytest

from taskgate import rng as rng_streams
from taskgate.adapters import AdapterConfig, TaskModule, build_adapter
from taskgate.data import generate_synthetic
from taskgate.diffnet import AdamW, FrozenParamError, grad_check, sigmoid
from taskgate.losses import SoftTargetPolicy, LossWeights, task_loss
from taskgate.metrics import auroc_masked

from conftest import small_synth

GEN = np.random.default_rng(21)


def _adapter(variant, d=16, r=4, h=4):
    return build_adapter(
        AdapterConfig(variant=variant, bottleneck=r, attn_heads=h),
        d,
        np.random.default_rng(5),
    )


@pytest.mark.parametrize("variant", ["simple", "continuum", "hope"])
def test_all_variants_start_as_identity(variant):
    # zero-initialized up/output projections: residual branches contribute 0
    adapter = _adapter(variant)
    z = GEN.standard_normal((6, 16))
    assert np.allclose(adapter.forward(z), z)


@pytest.mark.parametrize("variant", ["simple", "continuum", "hope"])
def test_rowwise_equals_batched(variant):
    adapter = _adapter(variant)
    for p in adapter.parameters():
        p.values[...] += GEN.standard_normal(p.values.shape) * 0.1
    z = GEN.standard_normal((5, 16))
    batched = adapter.forward(z)
    rows = np.vstack([adapter.forward(z[i : i + 1]) for i in range(5)])
    assert np.allclose(batched, rows, atol=1e-12)


def test_parameter_count_hierarchy():
    d, r = 64, 8
    counts = {}
    for variant in ("simple", "continuum", "hope"):
        counts[variant] = build_adapter(
            AdapterConfig(variant=variant, bottleneck=r, attn_heads=8),
            d,
            np.random.default_rng(1),
        ).param_count()
    assert counts["simple"] < counts["continuum"] < counts["hope"]
    # continuum is exactly three bottlenecks
    assert counts["continuum"] == 3 * counts["simple"]
    assert counts["simple"] == d * r + r + r * d + d


def test_continuum_param_count_at_paper_scale():
    # d=1536, r=64: ~594k params, ~4.5 MB float64
    count = build_adapter(
        AdapterConfig(variant="continuum", bottleneck=64),
        1536,
        np.random.default_rng(1),
    ).param_count()
    assert count == 3 * (1536 * 64 + 64 + 64 * 1536 + 1536)
    assert 0.55e6 < count < 0.65e6
    assert 4.0 < count * 8 / 2**20 < 5.0


def test_hope_requires_divisible_heads():
    with pytest.raises(ValueError, match="divide"):
        build_adapter(
            AdapterConfig(variant="hope", bottleneck=4, attn_heads=5),
            16,
            np.random.default_rng(1),
        )


def test_bottleneck_larger_than_d_rejected():
    with pytest.raises(ValueError, match="bottleneck"):
        AdapterConfig(variant="simple", bottleneck=64).validate(32)


def test_head_bias_only_logits_and_sigmoid_half():
    module = TaskModule(0, 8, 3, AdapterConfig(variant="simple", bottleneck=4), GEN)
    module.head.w.values[...] = 0.0
    module.head.b.values[...] = np.array([1.0, -2.0, 0.0])
    logits = module.predict_logits(GEN.standard_normal((4, 8)))
    assert np.allclose(logits, np.tile([1.0, -2.0, 0.0], (4, 1)))
    assert sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)


def test_freeze_contract():
    module = TaskModule(0, 8, 2, AdapterConfig(variant="simple", bottleneck=4), GEN)
    opt = AdamW(module.parameters(), lr=1e-3)
    module.freeze()
    h = module.param_hash()
    assert module.frozen and module.frozen_hash == h
    module.check_frozen_intact()
    with pytest.raises(FrozenParamError):
        opt.step()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        module.freeze()
    assert any("frozen twice" in str(w.message) for w in caught)
    # tampering is detected
    module.parameters()[0].values[0, 0] += 1.0
    with pytest.raises(Exception, match="changed"):
        module.check_frozen_intact()


def test_frozen_module_outputs_are_stable():
    module = TaskModule(0, 8, 2, AdapterConfig(variant="simple", bottleneck=4), GEN)
    module.freeze()
    z = GEN.standard_normal((3, 8))
    assert np.array_equal(module.adapt(z), module.adapt(z))


@pytest.mark.parametrize("variant", ["simple", "continuum", "hope"])
def test_adapter_gradients_match_finite_differences(variant):
    gen = np.random.default_rng(17)
    module = TaskModule(
        0, 12, 3, AdapterConfig(variant=variant, bottleneck=4, attn_heads=4), gen
    )
    z = gen.standard_normal((4, 12))
    w = gen.standard_normal((4, 12))

    def loss_and_backward(do_backward):
        out = module.adapt(z)
        if do_backward:
            module.adapter.backward(w)
        return float((out * w).sum())

    assert grad_check(module.adapter.parameters(), loss_and_backward) < 1e-3


def test_trained_head_reaches_high_auroc():
    config = small_synth(
        d=32, num_tasks=1, classes_per_task=[4], samples_per_split=[2000, 50, 500],
        class_separation=4.0,
    )
    task = generate_synthetic(config)[0]
    module = TaskModule(
        0, 32, 4, AdapterConfig(variant="simple", bottleneck=16),
        rng_streams.stream(1337, "module-init", 0),
    )
    opt = AdamW(module.parameters(), lr=1e-4, weight_decay=1e-4)
    policy = SoftTargetPolicy()
    weights = LossWeights()
    feats = np.asarray(task.train.features, dtype=np.float64)
    for epoch in range(20):
        gen = rng_streams.stream(1337, "task-train", 0, epoch)
        perm = gen.permutation(feats.shape[0])
        for i in range(0, len(perm), 32):
            idx = perm[i : i + 32]
            z_tilde = module.adapt(feats[idx], training=True, rng=gen)
            logits = module.predict_logits(z_tilde)
            loss, dlogits, dz = task_loss(
                logits, task.train.labels[idx], z_tilde, weights, policy, rng=gen
            )
            module.zero_grad_all()
            module.adapter.backward(module.head.backward(dlogits) + dz)
            opt.step()
    probs = sigmoid(module.predict_logits(module.adapt(task.test.features)))
    assert auroc_masked(probs, task.test.labels).value > 0.95
