import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mpose import presets
from mpose.errors import ConfigError, FormatError, InfeasibleError
from mpose.nn import LayerSpec, Model, ModelSpec, weight_names
from mpose.pruning import (SparseMatrix, from_sparse, iterative_prune_train, prune_model, prune_to_sparsity,
                           sparsity_of, survivor_count, surviving_weights, to_sparse)
from mpose.train import SequenceData, TrainConfig


def brute_force_keep(w, k):
    # sort by (magnitude, index); keep the last k
    flat = np.abs(w).reshape(-1)
    ranked = sorted(range(flat.size), key=lambda i: (flat[i], i))
    keep = np.zeros(flat.size, dtype=bool)
    if k:
        keep[ranked[-k:]] = True
    return keep.reshape(w.shape)


def test_zero_sparsity_keeps_everything(rng):
    assert prune_to_sparsity(rng.standard_normal((4, 5)), 0).all()


def test_two_by_two_example():
    keep = prune_to_sparsity(np.array([[1.0, -4.0], [2.0, 3.0]]), 0.5)
    np.testing.assert_array_equal(keep, [[False, True], [False, True]])


def test_hundred_survivors(rng):
    w = rng.standard_normal((100, 100))
    keep = prune_to_sparsity(w, 0.99)
    assert keep.sum() == 100
    np.testing.assert_array_equal(keep, brute_force_keep(w, 100))


def test_ties_pruned_earliest_index_first():
    keep = prune_to_sparsity(np.ones((2, 3)), 0.5)
    np.testing.assert_array_equal(keep.reshape(-1), [0, 0, 0, 1, 1, 1])


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 3.0])),
       st.floats(0, 0.999))
def test_survivors_are_top_k(w, sparsity):
    keep = prune_to_sparsity(w, sparsity)
    k = survivor_count(w.size, sparsity)
    assert keep.sum() == k
    np.testing.assert_array_equal(keep, brute_force_keep(w, k))


@pytest.mark.parametrize("s", [1.0, 1.5, -0.1])
def test_bad_sparsity(s):
    with pytest.raises(ConfigError):
        prune_to_sparsity(np.ones((2, 2)), s)


def test_survivor_count_rule():
    assert survivor_count(100, 0.99) == 1
    assert survivor_count(10, 0.25) == 8
    assert survivor_count(3, 0) == 3


def test_paper_mlp_rate_100_survivors():
    # ceil per matrix: 3,538,944 weights over four matrices
    spec = presets.build_from_preset("mlp", 0)
    sizes = [l.n_in * l.n_out for l in spec.layers]
    assert sum(sizes) == 3_538_944
    total = sum(survivor_count(n, 1 - 1 / 100) for n in sizes)
    assert abs(total - 35_389) <= len(sizes)


def test_all_zero_matrix_is_empty():
    s = to_sparse(np.zeros((3, 4)))
    assert s.nnz == 0 and s.values.size == 0
    assert np.array_equal(from_sparse(s), np.zeros((3, 4)))


def test_sparse_round_trip_bit_exact(rng):
    w = rng.standard_normal((64, 64))
    mask = prune_to_sparsity(w, 0.7)
    s = to_sparse(w, mask)
    assert s.storage_entries() == 3 * s.nnz
    back = from_sparse(s)
    want = np.where(mask, w, 0.0)
    assert back.tobytes() == want.tobytes()


def test_duplicate_coordinates_rejected():
    with pytest.raises(FormatError):
        SparseMatrix(np.ones(2), np.array([0, 0]), np.array([1, 1]), (2, 2))
    with pytest.raises(FormatError):
        SparseMatrix(np.ones(1), np.array([2]), np.array([0]), (2, 2))
    with pytest.raises(FormatError):
        SparseMatrix(np.ones(2), np.array([0]), np.array([0]), (2, 2))


def small_model(seed=0):
    spec = ModelSpec("mlp", [LayerSpec("dense", 16, 12, "relu"), LayerSpec("dense", 12, 8, "sigmoid")], 16, 1)
    return Model.initialize(spec, seed, np.float64)


def test_prune_model_leaves_biases(rng):
    m = small_model()
    biases = {k: v.copy() for k, v in m.params.items() if k.endswith("bias")}
    prune_model(m, 0.5)
    for name in weight_names(m.spec):
        assert sparsity_of(m.masks[name]) == pytest.approx(0.5, abs=0.01)
    for k, v in biases.items():
        assert np.array_equal(m.params[k], v)


def toy_data(n=6, frames=7):
    rng = np.random.default_rng(0)
    return SequenceData([rng.standard_normal((frames, 16)) for _ in range(n)],
                        [rng.random((frames, 8)) for _ in range(n)])


def test_masks_permanent_through_retraining():
    m = small_model()
    seen = []

    def check(model, _state):
        seen.append(max(np.count_nonzero(model.params[n][~model.masks[n]]) for n in model.masks))

    cfg = TrainConfig(batch_size=8, val_fraction=0)
    import mpose.train as tr
    real = tr.train_loop

    def spy(model, data, c, on_step=None):
        return real(model, data, c, on_step=check)

    tr_loop = pytest.MonkeyPatch()
    tr_loop.setattr("mpose.pruning.train_loop", spy)
    try:
        m, hist = iterative_prune_train(m, 10, toy_data(), 5, 2, cfg)
    finally:
        tr_loop.undo()
    assert len(hist) == 5 and seen and max(seen) == 0
    for n in weight_names(m.spec):
        assert np.count_nonzero(m.params[n]) <= survivor_count(m.params[n].size, 0.9)
        assert m.masks[n].sum() == survivor_count(m.params[n].size, 0.9)


def test_near_one_rate_barely_prunes():
    m = small_model()
    before = {k: v.copy() for k, v in m.params.items()}
    m, _ = iterative_prune_train(m, 1.0001, None)
    assert surviving_weights(m) == sum(before[n].size for n in weight_names(m.spec))


@pytest.mark.parametrize("rate", [0.5, float("inf")])
def test_infeasible_rate(rate):
    with pytest.raises(InfeasibleError):
        iterative_prune_train(small_model(), rate, None)
