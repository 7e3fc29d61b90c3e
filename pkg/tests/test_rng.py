import numpy as np
import pytest
from scipy import stats

from jumpcalc import rng


def test_stream_keys_match_scalar_version():
    idx = np.arange(50)
    keys = rng.stream_keys(7, idx)
    assert [int(k) for k in keys] == [rng.stream_key(7, int(i)) for i in idx]


def test_keys_differ_across_seeds_and_paths():
    a = rng.stream_keys(1, np.arange(1000))
    b = rng.stream_keys(2, np.arange(1000))
    assert len(set(a.tolist())) == 1000
    assert not np.any(a == b)


def test_draws_are_pure_functions_of_key_and_counter():
    keys = rng.stream_keys(3, np.arange(10))
    c = np.arange(10)
    assert np.array_equal(rng.uniform(keys, c), rng.uniform(keys, c))
    # drawing in a different order gives the same numbers
    perm = np.random.default_rng(0).permutation(10)
    assert np.array_equal(rng.uniform(keys[perm], c[perm]), rng.uniform(keys, c)[perm])


def test_uniform_range_and_law():
    keys = rng.stream_keys(11, np.arange(200000))
    u = rng.uniform(keys, np.ones(200000, dtype=np.int64))
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_exponential_law():
    keys = rng.stream_keys(5, np.arange(200000))
    e = rng.exponential(keys, np.zeros(200000, dtype=np.int64))
    assert np.all(e > 0) and np.all(np.isfinite(e))
    assert stats.kstest(e, "expon").pvalue > 1e-3


def test_consecutive_counters_are_uncorrelated():
    keys = np.full(100000, rng.stream_key(9, 0), dtype=np.uint64)
    u = rng.uniform(keys, np.arange(100000))
    r = np.corrcoef(u[:-1], u[1:])[0, 1]
    assert abs(r) < 4 / np.sqrt(100000)


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        rng.stream_key(0, -1)
    with pytest.raises(ValueError):
        rng.stream_keys(0, [0, -2])
