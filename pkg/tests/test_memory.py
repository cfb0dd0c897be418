import numpy as np
import pytest

from plainer import memory as MEM
from plainer import model as M
from plainer import tensor as T
from plainer.memory import MemoryExample, MemorySlot, RuleMemory
from plainer.optim import Adagrad
from plainer.tensor import Tape, Tensor


def make_slot(rid, key, value):
    return MemorySlot(rid, np.asarray(key, dtype=float), np.asarray(value, dtype=float))


# ---------------------------------------------------------------------------
# Read
# ---------------------------------------------------------------------------


def test_read_single_candidate_weight_one():
    slot = make_slot("r1", [1.0, 0.0], [3.0, 4.0])
    read = MEM.memory_read(Tensor([[0.2, 0.9]]), [slot])
    np.testing.assert_allclose(read.weights, [1.0])
    np.testing.assert_allclose(read.output.data, [[3.0, 4.0]])
    assert read.candidate_ids == ["r1"]


def test_read_symmetric_candidates_average():
    a = make_slot("a", [1.0, 0.0], [2.0, 0.0])
    b = make_slot("b", [0.0, 1.0], [0.0, 4.0])
    read = MEM.memory_read(Tensor([[1.0, 1.0]]), [a, b])
    np.testing.assert_allclose(read.weights, [0.5, 0.5])
    np.testing.assert_allclose(read.output.data, [[1.0, 2.0]])


def test_read_three_candidates_matches_hand_softmax():
    rng = np.random.default_rng(0)
    slots = [make_slot(f"r{i}", rng.normal(size=4), rng.normal(size=4)) for i in range(3)]
    query = rng.normal(size=4)
    read = MEM.memory_read(Tensor(query[None, :]), slots)
    scores = np.array([float(query @ s.key) for s in slots])
    e = np.exp(scores - scores.max())
    alphas = e / e.sum()
    np.testing.assert_allclose(read.weights, alphas, rtol=1e-12)
    expected = sum(a * s.value for a, s in zip(alphas, slots))
    np.testing.assert_allclose(read.output.data[0], expected, rtol=1e-12)
    assert abs(read.weights.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(
        read.output.data[0], (read.weights[:, None] * np.stack([s.value for s in slots])).sum(0),
        atol=1e-9,
    )


def test_read_empty_candidates_zero_vector():
    read = MEM.memory_read(Tensor([[0.5, 0.5, 0.5]]), [])
    np.testing.assert_array_equal(read.output.data, np.zeros((1, 3)))
    assert read.weights.size == 0


def test_read_dimension_mismatch():
    slot = make_slot("r", [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(T.ShapeError):
        MEM.memory_read(Tensor([[1.0, 2.0]]), [slot])


def test_read_gradient_reaches_query_not_slots():
    rng = np.random.default_rng(1)
    slots = [make_slot(f"r{i}", rng.normal(size=3), rng.normal(size=3)) for i in range(2)]
    query = Tensor(rng.normal(size=(1, 3)), requires_grad=True)

    def f():
        return T.tsum(MEM.memory_read(query, slots).output)

    assert T.check_gradients(f, [query], epsilon=1e-5) < 1e-5


# ---------------------------------------------------------------------------
# Update
# ---------------------------------------------------------------------------


def test_update_appends_when_absent():
    mem = RuleMemory(d_model=3)
    mem.update("r1", np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
    (slot,) = mem.slots_for(["r1"])
    np.testing.assert_array_equal(slot.key, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(slot.value, [4.0, 5.0, 6.0])
    assert slot.update_count == 1


def test_update_means_when_present():
    mem = RuleMemory(d_model=2)
    mem.update("r1", np.array([2.0, 0.0]), np.array([0.0, 2.0]))
    mem.update("r1", np.array([4.0, 2.0]), np.array([2.0, 0.0]))
    (slot,) = mem.slots_for(["r1"])
    np.testing.assert_array_equal(slot.key, [3.0, 1.0])
    np.testing.assert_array_equal(slot.value, [1.0, 1.0])
    assert slot.update_count == 2


def test_update_identical_vectors_is_fixed_point():
    mem = RuleMemory(d_model=2)
    k, v = np.array([0.5, -0.5]), np.array([1.5, 2.5])
    mem.update("r1", k, v)
    mem.update("r1", k, v)
    (slot,) = mem.slots_for(["r1"])
    np.testing.assert_array_equal(slot.key, k)
    np.testing.assert_array_equal(slot.value, v)


def test_multi_slot_capacity_appends_then_updates_nearest():
    mem = RuleMemory(d_model=2, slots_per_rule=2)
    mem.update("r1", np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    mem.update("r1", np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert len(mem) == 2
    mem.update("r1", np.array([0.0, 0.9]), np.array([0.0, 0.5]))
    slots = mem.slots_for(["r1"])
    np.testing.assert_array_equal(slots[0].key, [1.0, 0.0])  # untouched
    np.testing.assert_allclose(slots[1].key, [0.0, 0.95])


def test_memory_persistence_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mem = RuleMemory(d_model=4)
    for i in range(5):
        mem.update(f"rule{i}", rng.normal(size=4), rng.normal(size=4))
    mem.update("rule0", rng.normal(size=4), rng.normal(size=4))
    path = tmp_path / "memory.npz"
    mem.save(path)
    loaded = RuleMemory.load(path)
    assert loaded.d_model == mem.d_model
    assert sorted(loaded.rule_ids()) == sorted(mem.rule_ids())
    for rid in mem.rule_ids():
        (orig,), (back,) = mem.slots_for([rid]), loaded.slots_for([rid])
        assert (orig.key == back.key).all()
        assert (orig.value == back.value).all()
        assert orig.update_count == back.update_count


# ---------------------------------------------------------------------------
# Augmented forward and train step
# ---------------------------------------------------------------------------


@pytest.fixture
def dmass_setup():
    config = M.toy_config(mode="dmass")
    params = M.ModelParams.init(config, np.random.default_rng(0))
    memory = RuleMemory(config.d_model)
    return config, params, memory


def test_forward_empty_memory_uses_zero_reads(dmass_setup):
    config, params, memory = dmass_setup
    example = MemoryExample(source_ids=[4, 5, 2], target_ids=[6, 2])
    fwd = MEM.memory_forward(example, params, config, memory)
    assert all(r.weights.size == 0 for r in fwd.reads)
    assert fwd.logits.shape == (2, config.vocab_size)


def test_forward_reads_candidate_slots(dmass_setup):
    config, params, memory = dmass_setup
    rng = np.random.default_rng(2)
    memory.update("ruleA", rng.normal(size=config.d_model), rng.normal(size=config.d_model))
    memory.update("ruleB", rng.normal(size=config.d_model), rng.normal(size=config.d_model))
    example = MemoryExample(source_ids=[4, 5, 2], target_ids=[6, 2], candidate_ids=["ruleA"])
    fwd = MEM.memory_forward(example, params, config, memory)
    assert all(r.candidate_ids == ["ruleA"] for r in fwd.reads)
    assert all(abs(r.weights.sum() - 1.0) < 1e-6 for r in fwd.reads)


def test_train_step_creates_one_slot_per_aligned_match(dmass_setup):
    config, params, memory = dmass_setup
    opt = Adagrad(params)
    example = MemoryExample(
        source_ids=[4, 5, 2],
        target_ids=[6, 2],
        candidate_ids=["ruleA"],
        aligned=[("ruleA", 0)],
    )
    MEM.dmass_train_step([example], params, config, memory, opt)
    assert len(memory) == 1
    (slot,) = memory.slots_for(["ruleA"])
    assert slot.update_count == 1
    MEM.dmass_train_step([example], params, config, memory, opt)
    (slot,) = memory.slots_for(["ruleA"])
    assert slot.update_count == 2


def test_no_gradient_flows_into_memory(dmass_setup):
    config, params, memory = dmass_setup
    rng = np.random.default_rng(4)
    memory.update("ruleA", rng.normal(size=config.d_model), rng.normal(size=config.d_model))
    example = MemoryExample(source_ids=[4, 5, 2], target_ids=[6, 2], candidate_ids=["ruleA"])
    (slot,) = memory.slots_for(["ruleA"])
    key_before, value_before = slot.key.copy(), slot.value.copy()
    params.zero_grads()
    with Tape() as tape:
        fwd = MEM.memory_forward(example, params, config, memory, train=False)
        tape.backward(fwd.loss)
    assert (slot.key == key_before).all() and (slot.value == value_before).all()
    # combiner parameters do receive gradient
    assert params["comb.w1"].grad is not None
    assert np.abs(params["comb.w1"].grad).sum() > 0


def test_empty_memory_trajectory_matches_combiner_baseline():
    # with no slots ever written, the dmass step is exactly the base
    # transformer plus combiner trained on the same stream
    config = M.toy_config(mode="dmass")
    batch = [MemoryExample(source_ids=[4, 5, 2], target_ids=[6, 7, 2])]

    def run(update_memory):
        params = M.ModelParams.init(config, np.random.default_rng(9))
        memory = RuleMemory(config.d_model)
        opt = Adagrad(params)
        losses = []
        for _ in range(5):
            losses.append(MEM.dmass_train_step(batch, params, config, memory, opt))
        return losses

    assert run(True) == run(False)


def test_decode_read_ignores_unseen_rules(dmass_setup):
    config, params, memory = dmass_setup
    rng = np.random.default_rng(5)
    memory.update("seen", rng.normal(size=config.d_model), rng.normal(size=config.d_model))
    read = MEM.decode_read(Tensor(np.zeros((1, config.d_model))), ["seen", "unseen"], memory)
    assert read.candidate_ids == ["seen"]
    empty = MEM.decode_read(Tensor(np.zeros((1, config.d_model))), ["unseen"], memory)
    assert empty.weights.size == 0
    np.testing.assert_array_equal(empty.output.data, 0.0)
