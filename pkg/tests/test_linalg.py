import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpose.linalg import jacobi_svd, round_robin_next, svd


@pytest.mark.parametrize("n", [2, 4, 6, 10])
def test_round_robin_covers_every_pair(n):
    order = np.arange(n)
    pairs = set()
    for _ in range(n - 1):
        top, bottom = order[: n // 2], order[n // 2:]
        pairs |= {frozenset(p) for p in zip(top, bottom)}
        order = order[round_robin_next(n)]
    assert len(pairs) == n * (n - 1) // 2


@pytest.mark.parametrize("shape", [(1, 1), (5, 3), (3, 5), (16, 16), (40, 7), (33, 33)])
def test_jacobi_svd_matches_reconstruction(rng, shape):
    a = rng.standard_normal(shape)
    u, s, vt = jacobi_svd(a)
    k = min(shape)
    assert u.shape == (shape[0], k) and vt.shape == (k, shape[1])
    np.testing.assert_allclose((u * s) @ vt, a, atol=1e-12)
    np.testing.assert_allclose(u.T @ u, np.eye(k), atol=1e-12)
    np.testing.assert_allclose(vt @ vt.T, np.eye(k), atol=1e-12)
    assert np.all(np.diff(s) <= 0)
    np.testing.assert_allclose(s, np.linalg.svd(a, compute_uv=False), rtol=1e-12, atol=1e-13)


def test_jacobi_svd_rank_deficient(rng):
    a = rng.standard_normal((12, 3)) @ rng.standard_normal((3, 10))
    u, s, vt = jacobi_svd(a)
    assert np.all(s[3:] < 1e-12)
    np.testing.assert_allclose((u * s) @ vt, a, atol=1e-12)


def test_jacobi_svd_zero_matrix():
    u, s, vt = jacobi_svd(np.zeros((4, 3)))
    assert np.all(s == 0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
def test_svd_backends_agree(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    for backend in ("jacobi", "lapack", "auto"):
        u, s, vt = svd(a, backend)
        np.testing.assert_allclose((u * s) @ vt, a, atol=1e-11)


def test_unknown_backend():
    with pytest.raises(ValueError):
        svd(np.eye(2), "magic")
