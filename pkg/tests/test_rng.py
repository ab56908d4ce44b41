import numpy as np
import pytest

from stitchnet.numerics import Rng


def test_same_seed_same_stream():
    assert np.array_equal(Rng(42).normal((5,)), Rng(42).normal((5,)))
    assert np.array_equal(Rng(42).permutation(10), Rng(42).permutation(10))


def test_different_seeds_differ():
    assert not np.array_equal(Rng(1).normal((5,)), Rng(2).normal((5,)))


def test_children_are_independent_and_stable():
    root = Rng(7)
    a = root.child("train").normal((4,))
    b = root.child("val").normal((4,))
    assert not np.array_equal(a, b)
    # drawing from the parent does not shift a child
    root.normal((100,))
    assert np.array_equal(root.child("train").normal((4,)), a)


def test_known_first_values():
    # Philox stream for seed 0 is fixed by the algorithm; pin it to catch drift
    assert Rng(0).integers(1000, size=5).tolist() == [135, 14, 937, 257, 386]
    assert Rng(0).algorithm == "philox4x64-10"


def test_seed_range():
    Rng(2**64 - 1)
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)


def test_integers_scalar_and_array():
    r = Rng(3)
    assert isinstance(r.integers(5), int)
    assert r.integers(5, size=3).shape == (3,)
