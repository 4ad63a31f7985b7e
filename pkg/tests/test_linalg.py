import numpy as np
import pytest

from app.core.errors import RankDeficiencyWarning
from app.utils.linalg import (
    append_independent,
    drop_dependent_columns,
    orthonormal_basis,
    rank_of,
    residual_projector,
    residualize,
)


def test_basis_is_orthonormal(rng):
    mat = rng.standard_normal((50, 4))
    q, kept = orthonormal_basis(mat)
    assert q.shape == (50, 4)
    np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-12)
    np.testing.assert_array_equal(kept, np.arange(4))


def test_rank_with_duplicate_column(rng):
    a = rng.standard_normal((30, 2))
    mat = np.hstack([a, a[:, :1] * 3.0])
    assert rank_of(mat) == 2


def test_zero_matrix_has_empty_basis():
    q, kept = orthonormal_basis(np.zeros((10, 3)))
    assert q.shape == (10, 0)
    assert kept.size == 0


def test_residual_projector_is_idempotent(rng):
    q, _ = orthonormal_basis(rng.standard_normal((20, 3)))
    p = residual_projector(q)
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    vec = rng.standard_normal(20)
    np.testing.assert_allclose(residualize(q, vec), p @ vec, atol=1e-12)


def test_drop_dependent_columns_warns(rng):
    a = rng.standard_normal((30, 2))
    mat = np.hstack([a, a.sum(axis=1, keepdims=True)])
    with pytest.warns(RankDeficiencyWarning):
        reduced, kept = drop_dependent_columns(mat, "test")
    assert reduced.shape[1] == 2
    assert len(kept) == 2


def test_append_independent_skips_spanned_columns(rng):
    base = np.hstack([np.ones((40, 1)), rng.standard_normal((40, 1))])
    new = rng.standard_normal((40, 1))
    extra = np.hstack([base[:, 1:2] * 2.0, new, 0.5 * new + base[:, :1]])
    kept = append_independent(base, extra)
    np.testing.assert_array_equal(kept, [1])


def test_shared_scale_keeps_nested_ranks(rng):
    n = 50
    small = 1e-9 * rng.standard_normal((n, 1))
    large = 1e3 * rng.standard_normal((n, 1))
    nested = [np.ones((n, 1)), np.hstack([np.ones((n, 1)), small])]
    nested.append(np.hstack([nested[1], large]))

    own_scale = [orthonormal_basis(m)[0].shape[1] for m in nested]
    assert own_scale == [1, 2, 2]

    scale = max(np.linalg.norm(m, axis=0).max() for m in nested)
    shared = [orthonormal_basis(m, scale=scale)[0].shape[1] for m in nested]
    assert shared == [1, 1, 2]
