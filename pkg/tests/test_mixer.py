import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from papn.layers import ConfigError
from papn.mixer import AGGREGATIONS, Mixer, aggregate

finite = st.floats(-50, 50, allow_nan=False)


def test_single_node_aggregate_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 1, 4))
    for method in AGGREGATIONS:
        assert np.allclose(aggregate(x, method).data, x[:, 0], atol=0)


def test_sum_of_ones():
    assert np.all(aggregate(np.ones((2, 3, 4)), "sum").data == 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 5, 3), elements=finite))
def test_aggregate_identities(x):
    s, m = aggregate(x, "sum").data, aggregate(x, "mean").data
    lo, hi = aggregate(x, "min").data, aggregate(x, "max").data
    assert np.allclose(s, 5 * m, rtol=1e-12, atol=1e-9)
    assert np.all(lo <= m + 1e-9) and np.all(m <= hi + 1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), st.permutations(range(4)))
def test_aggregate_permutation_invariant(x, perm):
    for method in AGGREGATIONS:
        assert np.allclose(aggregate(x, method).data, aggregate(x[list(perm)], method).data, atol=1e-9)


def test_padding_ignored_by_every_method():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    padded = np.concatenate([x, 100 * rng.normal(size=(2, 3))])
    mask = np.array([1, 1, 1, 1, 0, 0])
    for method in AGGREGATIONS:
        assert np.allclose(aggregate(padded, method, mask).data, aggregate(x, method).data, atol=1e-12)


def test_mean_denominator_hidden():
    x = np.ones((3, 4))
    assert np.all(aggregate(x, "mean", mean_denominator="hidden").data == 3 / 4)
    with pytest.raises(ConfigError):
        aggregate(x, "median")


def test_sum_mixing_hand_values():
    mix = Mixer(2, "sum")
    out = mix(np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]])).data
    want = np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5)
    assert out.shape == (1, 1, 2)
    assert np.allclose(out[0, 0], want, atol=1e-12)


def test_sum_with_zero_local_keeps_global_ordering():
    rng = np.random.default_rng(2)
    glob = rng.normal(size=(5, 6))
    out = Mixer(6, "sum")(np.zeros((1, 6)), glob).data[0]
    assert np.array_equal(np.argmax(out, axis=-1), np.argmax(glob, axis=-1))


def test_random_select_deterministic_and_mixed():
    rng = np.random.default_rng(3)
    loc, glob = rng.normal(size=(3, 8)), rng.normal(size=(4, 8))
    a = Mixer(8, "random_select", seed=5)(loc, glob).data
    b = Mixer(8, "random_select", seed=5)(loc, glob).data
    c = Mixer(8, "random_select", seed=6)(loc, glob).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert a.shape == (3, 4, 8)


def test_mixer_rejects_mismatch():
    with pytest.raises(ConfigError):
        Mixer(4, "concat")
    with pytest.raises(ConfigError):
        Mixer(4)(np.zeros((1, 4)), np.zeros((2, 3)))
