import numpy as np
import pytest

from app.core.dataset import full_split, make_split, validate_dataset
from app.core.errors import DataValidationError


def test_default_w_is_intercept_when_x_empty(rng):
    n = 100
    ds = validate_dataset(rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n))
    assert ds.w.shape == (n, 1)
    assert np.all(ds.w == 1.0)
    assert ds.x.shape == (n, 0)
    assert ds.w_names == ("intercept",)


def test_intercept_prepended_to_x(rng):
    n = 50
    x = rng.standard_normal((n, 3))
    ds = validate_dataset(rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n), x)
    assert ds.w.shape == (n, 4)
    assert np.all(ds.w[:, 0] == 1.0)
    np.testing.assert_array_equal(ds.w[:, 1:], x)


def test_existing_intercept_not_duplicated(rng):
    n = 40
    w = np.hstack([np.ones((n, 1)), rng.standard_normal((n, 2))])
    ds = validate_dataset(rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n), w=w)
    assert ds.w.shape == (n, 3)


def test_nan_in_z_names_row(rng):
    n = 100
    z = rng.standard_normal(n)
    z[7] = np.nan
    with pytest.raises(DataValidationError, match="row 7"):
        validate_dataset(rng.standard_normal(n), rng.standard_normal(n), z, z_names=["z"])


def test_constant_treatment_rejected(rng):
    n = 30
    with pytest.raises(DataValidationError, match="treatment has zero variance"):
        validate_dataset(rng.standard_normal(n), np.ones(n), rng.standard_normal(n))


def test_dimension_mismatch(rng):
    with pytest.raises(DataValidationError, match="Dimension mismatch"):
        validate_dataset(rng.standard_normal(30), rng.standard_normal(29), rng.standard_normal(30))


def test_too_few_rows(rng):
    with pytest.raises(DataValidationError, match="At least 20"):
        validate_dataset(rng.standard_normal(10), rng.standard_normal(10), rng.standard_normal(10))


def test_duplicate_names(rng):
    n = 30
    with pytest.raises(DataValidationError, match="Duplicate"):
        validate_dataset(
            rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal((n, 2)),
            z_names=["a", "a"],
        )


def test_validate_is_idempotent(iv_data):
    again = validate_dataset(iv_data)
    for attr in ("y", "d", "z", "x", "w"):
        np.testing.assert_array_equal(getattr(again, attr), getattr(iv_data, attr))
    assert again.w_names == iv_data.w_names


def test_split_sizes_match_card_example():
    split = make_split(3010, 2 / 3, seed=1)
    assert split.n_a1 == 2007
    assert split.n_a2 == 1003


def test_split_is_partition():
    for n, prop, seed in [(100, 0.5, 0), (257, 2 / 3, 3), (60, 0.8, 9)]:
        split = make_split(n, prop, seed)
        assert np.intersect1d(split.a1, split.a2).size == 0
        np.testing.assert_array_equal(np.sort(np.concatenate([split.a1, split.a2])), np.arange(n))


def test_split_deterministic():
    a = make_split(200, seed=42)
    b = make_split(200, seed=42)
    np.testing.assert_array_equal(a.a1, b.a1)
    np.testing.assert_array_equal(a.a2, b.a2)


def test_split_too_small():
    with pytest.raises(DataValidationError):
        make_split(9, 2 / 3, seed=0)


def test_split_prop_out_of_range():
    with pytest.raises(DataValidationError, match=r"\(0, 1\)"):
        make_split(100, 1.5)


def test_full_split():
    split = full_split(25)
    assert not split.split
    assert split.n_a1 == 25 and split.n_a2 == 0
