import numpy as np
import pytest

from taskgate.routing import _softmax
from taskgate.selector import (
    PrototypeMemory,
    ReplayBuffer,
    SelectorError,
    SelectorNet,
    SelectorState,
    mixed_batch,
)

GEN = np.random.default_rng(31)


def _net(d=6, hidden=8, k=2):
    net = SelectorNet(d, hidden=hidden, dropout=0.1, rng=np.random.default_rng(1))
    for j in range(k):
        net.expand(j + 1)
    return net


def test_fresh_expansion_gives_uniform_softmax():
    net = _net(k=3)
    probs = _softmax(net.forward(GEN.standard_normal((5, 6))))
    assert np.allclose(probs, 1.0 / 3.0)


def test_expansion_preserves_existing_logits():
    net = _net(k=2)
    net.out_w.values[...] = GEN.standard_normal(net.out_w.values.shape)
    net.out_b.values[...] = GEN.standard_normal(2)
    z = GEN.standard_normal((4, 6))
    before = net.forward(z)
    net.expand(3)
    after = net.forward(z)
    # matmul kernel order may change with output width; exact math, float noise
    assert np.allclose(after[:, :2], before, atol=1e-12)
    assert np.all(after[:, 2] == 0.0)
    probs = _softmax(after)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_expansion_must_be_incremental():
    net = _net(k=1)
    with pytest.raises(SelectorError, match="one task at a time"):
        net.expand(3)
    memory = PrototypeMemory(d=6)
    with pytest.raises(SelectorError, match="one task"):
        memory.expand(2)


def test_selector_dropout_only_in_training():
    net = _net()
    net.out_w.values[...] = GEN.standard_normal(net.out_w.values.shape)
    z = GEN.standard_normal((3, 6))
    a = net.forward(z, training=False)
    b = net.forward(z, training=False)
    assert np.array_equal(a, b)
    c = net.forward(z, training=True, rng=np.random.default_rng(3))
    assert not np.array_equal(a, c)


def test_ema_one_step_analytic():
    memory = PrototypeMemory(d=3, ema_rate=0.1)
    memory.expand(1)
    batch = np.tile(np.array([2.0, 0.0, 0.0]), (4, 1))
    memory.ema_update(0, batch)
    assert np.allclose(memory.prototype(0), [0.2, 0.0, 0.0])


def test_ema_rate_one_jumps_to_mean():
    memory = PrototypeMemory(d=2, ema_rate=1.0)
    memory.expand(1)
    memory.ema_update(0, np.array([[3.0, -1.0], [5.0, 1.0]]))
    assert np.allclose(memory.prototype(0), [4.0, 0.0])


def test_ema_converges_geometrically():
    memory = PrototypeMemory(d=2, ema_rate=0.25)
    memory.expand(1)
    target = np.array([1.0, -2.0])
    batch = np.tile(target, (3, 1))
    prev = np.linalg.norm(memory.prototype(0) - target)
    for _ in range(10):
        memory.ema_update(0, batch)
        dist = np.linalg.norm(memory.prototype(0) - target)
        assert dist == pytest.approx(prev * 0.75, rel=1e-9)
        prev = dist


def test_ema_unknown_task_rejected():
    memory = PrototypeMemory(d=2)
    with pytest.raises(SelectorError, match="unknown task"):
        memory.ema_update(0, np.zeros((1, 2)))


def test_buffer_oldest_first_eviction():
    buf = ReplayBuffer(capacity=2)
    a, b, c = (np.full((1, 3), v) for v in (1.0, 2.0, 3.0))
    buf.push(a, 0)
    buf.push(b, 0)
    buf.push(c, 1)
    feats, tids = buf.to_arrays()
    assert np.allclose(feats, np.vstack([b, c]))
    assert list(tids) == [0, 1]
    assert len(buf) == 2


def test_zero_capacity_buffer_is_a_noop():
    buf = ReplayBuffer(capacity=0)
    buf.push(np.ones((5, 3)), 0)
    assert len(buf) == 0
    feats, tids = buf.sample(4, np.random.default_rng(0))
    assert feats.shape[0] == 0 and tids.size == 0


def test_buffer_sampling_modes_and_determinism():
    buf = ReplayBuffer(capacity=10)
    buf.push(np.arange(8.0).reshape(8, 1), 0)
    f1, t1 = buf.sample(4, np.random.default_rng(7))
    f2, t2 = buf.sample(4, np.random.default_rng(7))
    assert np.array_equal(f1, f2) and np.array_equal(t1, t2)
    # n <= len: without replacement -> distinct rows
    assert len(np.unique(f1)) == 4
    # n > len: with replacement -> returns n rows from the 8 available
    f3, _ = buf.sample(20, np.random.default_rng(8))
    assert f3.shape == (20, 1)
    assert len(np.unique(f3)) <= 8


def test_buffer_never_exceeds_capacity():
    buf = ReplayBuffer(capacity=5)
    for i in range(7):
        buf.push(np.full((3, 2), float(i)), i)
        assert len(buf) <= 5
    feats, tids = buf.to_arrays()
    # the survivors are the globally newest rows, oldest first
    assert np.allclose(feats[:, 0], [5.0, 5.0, 6.0, 6.0, 6.0])


def test_mixed_batch_composition():
    buf = ReplayBuffer(capacity=100)
    buf.push(GEN.standard_normal((50, 4)), 0)
    current = GEN.standard_normal((32, 4))
    feats, labels, n_cur = mixed_batch(current, 1, buf, 0.5, np.random.default_rng(0))
    assert feats.shape == (48, 4)
    assert n_cur == 32
    assert np.array_equal(feats[:32], current)
    assert np.all(labels[:32] == 1)
    assert np.all(labels[32:] == 0)
    assert (labels == 0).sum() == 16


def test_mixed_batch_degenerate_cases():
    empty = ReplayBuffer(capacity=10)
    current = GEN.standard_normal((8, 4))
    feats, labels, n_cur = mixed_batch(current, 2, empty, 0.5, np.random.default_rng(0))
    assert feats.shape == (8, 4) and np.all(labels == 2) and n_cur == 8
    full = ReplayBuffer(capacity=10)
    full.push(GEN.standard_normal((10, 4)), 0)
    feats, labels, _ = mixed_batch(current, 2, full, 0.0, np.random.default_rng(0))
    assert feats.shape == (8, 4) and np.all(labels == 2)
    with pytest.raises(ValueError, match="ratio"):
        mixed_batch(current, 2, full, 1.5, np.random.default_rng(0))


def test_prototype_gradient_never_touches_replayed_rows():
    from taskgate.losses import prototype_loss

    buf = ReplayBuffer(capacity=100)
    buf.push(GEN.standard_normal((20, 4)), 0)
    current = GEN.standard_normal((8, 4))
    feats, labels, n_cur = mixed_batch(current, 1, buf, 1.0, np.random.default_rng(0))
    memory = PrototypeMemory(d=4)
    memory.expand(1)
    memory.expand(2)
    _, dz_current = prototype_loss(feats[:n_cur], memory.prototype(1))
    full_grad = np.zeros_like(feats)
    full_grad[:n_cur] = dz_current
    assert np.all(full_grad[n_cur:] == 0.0)
    assert np.any(full_grad[:n_cur] != 0.0)


def test_replayed_features_keep_their_pre_expansion_logits():
    state = SelectorState(d=6, hidden=8, dropout=0.0, buffer_capacity=50,
                          rng=np.random.default_rng(2))
    state.expand_tasks(1)
    state.net.out_w.values[...] = GEN.standard_normal(state.net.out_w.values.shape)
    feats = GEN.standard_normal((10, 6))
    state.buffer.push(feats, 0)
    stored, _ = state.buffer.to_arrays()
    before = state.net.forward(stored)
    state.expand_tasks(2)
    after = state.net.forward(stored)
    assert np.allclose(after[:, :1], before, atol=1e-12)


def test_state_expansion_keeps_components_aligned():
    state = SelectorState(d=4, rng=np.random.default_rng(0))
    state.expand_tasks(1)
    state.expand_tasks(2)
    assert state.net.num_tasks == 2
    assert state.memory.num_tasks == 2
    assert np.all(state.memory.m == 0.0)
