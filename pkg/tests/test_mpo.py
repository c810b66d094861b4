import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpose.errors import InfeasibleError, NumericError, ShapeError
from mpose.mpo import (MpoMatrix, MpoPlan, MulCounter, compression_rate_linear, compression_rate_lstm,
                       contract, contract_batch, contract_batch_backward, contraction_cost, decompose,
                       full_rank_bonds, materialize, materialize_backward, materialize_cost,
                       param_count, reconstruct, solve_bond_dimension)


def random_mpo(rng, plan):
    return MpoMatrix(plan, tuple(rng.standard_normal(s) for s in plan.core_shapes()))


def test_plan_validation():
    with pytest.raises(ShapeError):
        MpoPlan((2, 2), (2, 2), (2, 3, 1))
    with pytest.raises(ShapeError):
        MpoPlan((2, 2), (2, 2), (1, 1))
    p = MpoPlan.uniform((4, 8, 8, 4), (4, 8, 8, 4), 7)
    assert p.bonds == (1, 7, 7, 7, 1) and p.rows == p.cols == 1024
    assert MpoPlan.from_dict(p.to_dict()) == p


def test_core_shape_mismatch_rejected(rng):
    plan = MpoPlan((2, 2), (2, 2), (1, 2, 1))
    with pytest.raises(ShapeError):
        MpoMatrix(plan, (rng.standard_normal((1, 2, 2, 3)), rng.standard_normal((2, 2, 2, 1))))


def test_single_core_is_the_matrix():
    w = np.array([[2.5]])
    m = decompose(w, MpoPlan((1,), (1,), (1, 1)))
    assert m.cores[0].shape == (1, 1, 1, 1) and m.cores[0].item() == 2.5
    w = np.arange(12.0).reshape(3, 4)
    m = decompose(w, MpoPlan((3,), (4,), (1, 1)))
    np.testing.assert_array_equal(reconstruct(m), w)
    np.testing.assert_array_equal(contract(m, np.ones(4)), w @ np.ones(4))


@pytest.mark.parametrize("shape, fi, fj", [
    ((64, 64), (4, 4, 4), (4, 4, 4)),
    ((32, 48), (4, 8), (6, 8)),
    ((32, 48), (2, 4, 4), (4, 3, 4)),
    ((24, 10), (2, 3, 4), (5, 1, 2)),
])
def test_full_rank_is_exact(rng, shape, fi, fj):
    w = rng.standard_normal(shape)
    m = decompose(w, MpoPlan.full_rank(fi, fj))
    assert np.abs(reconstruct(m) - w).max() < 1e-10


def test_rank_one_is_exact_at_bond_one(rng):
    w = np.outer(rng.standard_normal(16), rng.standard_normal(16))
    # a rank-one matrix is not a bond-one MPO in general; a Kronecker product is
    a, b = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    k = np.kron(a, b)
    m = decompose(k, MpoPlan((4, 4), (4, 4), (1, 1, 1)))
    assert np.abs(reconstruct(m) - k).max() < 1e-12
    m = decompose(w, MpoPlan((16,), (16,), (1, 1)))
    assert np.abs(reconstruct(m) - w).max() < 1e-12


def test_non_finite_input_rejected():
    w = np.ones((4, 4))
    w[1, 2] = np.nan
    with pytest.raises(NumericError):
        decompose(w, MpoPlan.full_rank((2, 2), (2, 2)))
    with pytest.raises(ShapeError):
        decompose(np.ones((4, 5)), MpoPlan.full_rank((2, 2), (2, 2)))


def test_zero_cores_reconstruct_zero():
    plan = MpoPlan.uniform((2, 3), (2, 2), 2)
    m = MpoMatrix(plan, tuple(np.zeros(s) for s in plan.core_shapes()))
    assert not reconstruct(m).any()


def test_truncation_error_monotone(rng):
    w = rng.standard_normal((32, 32))
    errs = []
    for d in range(1, 9):
        plan = MpoPlan((4, 8), (8, 4), (1, d, 1))
        errs.append(np.linalg.norm(reconstruct(decompose(w, plan)) - w))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_bond_larger_than_rank_is_zero_padded(rng):
    w = rng.standard_normal((4, 4))
    m = decompose(w, MpoPlan((2, 2), (2, 2), (1, 9, 1)))
    assert m.cores[0].shape == (1, 2, 2, 9)
    assert np.abs(reconstruct(m) - w).max() < 1e-12


def test_contract_rate_100_plan_vs_dense(rng):
    plan = MpoPlan((4, 8, 8, 4), (4, 8, 8, 4), (1, 7, 7, 7, 1))
    m = random_mpo(rng, plan)
    x = rng.standard_normal(1024)
    assert np.abs(contract(m, x) - reconstruct(m) @ x).max() < 1e-8
    assert not contract(m, np.zeros(1024)).any()


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)), min_size=1, max_size=3),
       st.integers(0, 2**31))
def test_contract_matches_dense_and_is_linear(dims, seed):
    rng = np.random.default_rng(seed)
    fi, fj = tuple(d[0] for d in dims), tuple(d[1] for d in dims)
    bonds = (1,) + tuple(d[2] for d in dims[:-1]) + (1,)
    m = random_mpo(rng, MpoPlan(fi, fj, bonds))
    x, y = rng.standard_normal((2, math.prod(fj)))
    w = reconstruct(m)
    np.testing.assert_allclose(contract(m, x), w @ x, atol=1e-8)
    np.testing.assert_allclose(contract(m, 2 * x - 3 * y), 2 * contract(m, x) - 3 * contract(m, y), atol=1e-8)
    np.testing.assert_allclose(materialize(m.cores, m.plan)[0], w, atol=1e-12)


def test_contract_shape_errors(rng):
    m = random_mpo(rng, MpoPlan.uniform((2, 2), (2, 3), 2))
    with pytest.raises(ShapeError):
        contract(m, np.ones(5))
    with pytest.raises(ShapeError):
        contract_batch(m.cores, m.plan, np.ones((2, 5)))


def test_batch_backward_matches_dense(rng):
    plan = MpoPlan((2, 3, 2), (3, 2, 2), (1, 3, 2, 1))
    m = random_mpo(rng, plan)
    x = rng.standard_normal((5, 12))
    dy = rng.standard_normal((5, 12))
    y, saved = contract_batch(m.cores, plan, x, keep=True)
    dx, grads = contract_batch_backward(m.cores, plan, saved, dy)
    np.testing.assert_allclose(dx, dy @ reconstruct(m), atol=1e-10)
    # both differentiation routes give the same core gradients
    _, partial = materialize(m.cores, plan)
    grads2 = materialize_backward(m.cores, plan, partial, dy.T @ x)
    for a, b in zip(grads, grads2):
        np.testing.assert_allclose(a, b, atol=1e-10)
    # directional derivative check on one core
    k, eps = 1, 1e-6
    d = rng.standard_normal(m.cores[k].shape)
    bumped = list(m.cores)
    bumped[k] = m.cores[k] + eps * d
    fd = (np.sum(dy * contract_batch(bumped, plan, x)) - np.sum(dy * y)) / eps
    assert abs(fd - np.sum(grads[k] * d)) < 1e-4 * max(1.0, abs(fd))


@pytest.mark.parametrize("fi, fj, bonds, expected", [
    ((4, 8, 8, 4), (4, 8, 8, 4), (1, 7, 7, 7, 1), 6496),
    ((5,), (7,), (1, 1), 35),
    ((16, 128), (4, 64), (1, 14, 1), 115584),
    ((8, 8, 8, 4), (4, 4, 4, 4), (1, 10, 10, 10, 1), 6880),
    ((8, 8, 8, 4), (4, 4, 8, 4), (1, 10, 10, 10, 1), 10080),
])
def test_param_count_examples(fi, fj, bonds, expected):
    plan = MpoPlan(fi, fj, bonds)
    assert param_count(plan) == expected
    assert sum(c.size for c in random_mpo(np.random.default_rng(0), plan).cores) == expected


def test_linear_rates():
    p5 = MpoPlan.uniform((4, 8, 8, 4), (4, 8, 8, 4), 32)
    assert compression_rate_linear(p5, 1024, 1024, include_bias=False) == pytest.approx(132096 / 1048576)
    p100 = MpoPlan.uniform((4, 4, 4, 4), (4, 4, 8, 4), 8)
    assert compression_rate_linear(p100, 256, 512, include_bias=False) == pytest.approx(3328 / 131072)
    assert compression_rate_linear(p100, 256, 512) == pytest.approx((3328 + 256) / (131072 + 256))
    full = MpoPlan.full_rank((4, 4), (4, 4))
    assert compression_rate_linear(full, 16, 16, include_bias=False) >= 1
    with pytest.raises(ShapeError):
        compression_rate_linear(p100, 512, 256)


def test_lstm_rates():
    pw = MpoPlan.uniform((8, 8, 8, 4), (4, 4, 4, 4), 10)
    pu = MpoPlan.uniform((8, 8, 8, 4), (4, 4, 8, 4), 10)
    r = compression_rate_lstm(pw, pu, 512, 256)
    assert r.rho_w == pytest.approx(6880 / (2048 * 256))
    assert r.rho_u == pytest.approx(10080 / (2048 * 512))
    assert r.rho_lstm == pytest.approx((6880 + 10080 + 2048) / (2048 * 256 + 2048 * 512 + 2048))
    assert r.rho_lstm == pytest.approx(0.01207, abs=1e-5)
    fw = MpoPlan((16, 2), (2, 2), (1, 4, 1))
    fu = MpoPlan((16, 2), (4, 2), (1, 4, 1))
    full = compression_rate_lstm(fw, fu, 8, 4)
    assert full.rho_w >= 1 and full.rho_u >= 1


@pytest.mark.parametrize("fi, target, bond, count", [
    ((4, 8, 8, 4), 161, 7, 6496),
    ((4, 4, 8, 4), 63, 7, 4144),
    ((4, 4, 8, 4), 253, 3, None),
])
def test_solve_bond_dimension(fi, target, bond, count):
    bonds = solve_bond_dimension(fi, fi, target)
    assert bonds[1:-1] == (bond,) * (len(fi) - 1)
    plan = MpoPlan(fi, fi, bonds)
    n = math.prod(fi) ** 2
    assert param_count(plan) <= n / target
    assert param_count(plan.with_bonds(MpoPlan.uniform(fi, fi, bond + 1).bonds)) > n / target
    if count is not None:
        assert param_count(plan) == count


def test_solve_bond_dimension_boundaries():
    # a full-rank MPO never undercuts the dense count, so near 1 the answer
    # is the largest feasible bond and never beyond the full-rank cap
    for fi, fj in [((2, 2), (2, 2)), ((2, 4, 2), (4, 2, 2)), ((16, 2), (1, 2))]:
        bonds = solve_bond_dimension(fi, fj, 1.0001)
        cap = full_rank_bonds(fi, fj)
        assert all(b <= c for b, c in zip(bonds, cap))
        n = math.prod(fi) * math.prod(fj)
        assert param_count(MpoPlan(fi, fj, bonds)) <= n / 1.0001
    with pytest.raises(InfeasibleError):
        solve_bond_dimension((2, 2), (2, 2), 1e6)
    with pytest.raises(InfeasibleError):
        solve_bond_dimension((2, 2), (2, 2), 0.5)
    free = solve_bond_dimension((4, 8, 8, 4), (4, 8, 8, 4), 100, uniform=False)
    assert param_count(MpoPlan((4, 8, 8, 4), (4, 8, 8, 4), free)) <= 1024 * 1024 / 100


@pytest.mark.parametrize("plan", [
    MpoPlan((6,), (5,), (1, 1)),
    MpoPlan.uniform((4, 8, 8, 4), (4, 8, 8, 4), 7),
    MpoPlan.uniform((2, 3, 2), (3, 1, 4), 3),
    MpoPlan((4, 4, 8, 4), (4, 8, 8, 4), (1, 8, 8, 8, 1)),
])
def test_contraction_cost_counts_multiplications(rng, plan):
    counter = MulCounter()
    m = random_mpo(rng, plan)
    contract(m, rng.standard_normal(plan.cols), counter)
    assert counter.count == contraction_cost(plan).mpo
    if plan.n_cores == 1:
        assert contraction_cost(plan).ratio == 1.0


def test_cost_ratio_falls_with_rate():
    fi = (4, 8, 8, 4)
    r5 = contraction_cost(MpoPlan.uniform(fi, fi, 32)).ratio
    r100 = contraction_cost(MpoPlan.uniform(fi, fi, 7)).ratio
    assert r5 > 1
    assert r100 < r5
    assert 0.5 < r100 < 1.5


def test_materialize_cost():
    plan = MpoPlan.uniform((2, 2), (3, 3), 2)
    assert materialize_cost(plan) == 1 * 6 * 2 + 6 * 2 * 6 * 1
