import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sept.errors import DomainError, ShapeError
from sept.numerics import SeededRng, cosine_sim, l2_dist, stable_softmax

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_cosine_identical_unit_vectors():
    assert cosine_sim([1, 0], [1, 0]) == 1.0


def test_cosine_orthogonal():
    assert cosine_sim([1, 0], [0, 1]) == 0.0


def test_cosine_hand_value():
    assert cosine_sim([3, 4], [4, 3]) == pytest.approx(24 / 25, abs=1e-15)


def test_cosine_zero_norm_rejected():
    with pytest.raises(DomainError):
        cosine_sim([0, 0], [1, 0])


def test_cosine_length_mismatch():
    with pytest.raises(ShapeError):
        cosine_sim([1, 0, 0], [1, 0])


@given(arrays(np.float64, 4, elements=finite_floats),
       arrays(np.float64, 4, elements=finite_floats),
       st.floats(min_value=1e-3, max_value=1e3))
def test_cosine_symmetry_and_scale_invariance(a, b, alpha):
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        return
    assert cosine_sim(a, b) == cosine_sim(b, a)
    assert cosine_sim(alpha * a, b) == pytest.approx(cosine_sim(a, b), abs=1e-12)


def test_l2_identity():
    v = [1.5, -2.0, 3.0]
    assert l2_dist(v, v) == 0.0


def test_l2_orthogonal_units():
    assert l2_dist([1, 0], [0, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_l2_345_triangle():
    assert l2_dist([1, 2], [4, 6]) == 5.0


@given(arrays(np.float64, 5, elements=finite_floats),
       arrays(np.float64, 5, elements=finite_floats),
       arrays(np.float64, 5, elements=finite_floats))
def test_l2_triangle_inequality_and_symmetry(a, b, c):
    assert l2_dist(a, b) == l2_dist(b, a)
    assert l2_dist(a, c) <= l2_dist(a, b) + l2_dist(b, c) + 1e-9


def test_softmax_uniform_for_constant_logits():
    for c in (0.0, -3.5, 1e8):
        out = stable_softmax([c, c, c, c])
        assert np.allclose(out, 0.25, atol=1e-15)


def test_softmax_huge_gap_no_overflow():
    out = stable_softmax([1000.0, 0.0])
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_closed_form_ratio():
    out = stable_softmax([0.0, math.log(3.0)])
    assert np.allclose(out, [0.25, 0.75], atol=1e-15)


def test_softmax_empty_rejected():
    with pytest.raises(ShapeError):
        stable_softmax([])


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 20),
              elements=st.floats(min_value=-700, max_value=700, allow_nan=False)))
def test_softmax_sums_to_one_and_order_preserving(logits):
    out = stable_softmax(logits)
    assert abs(out.sum() - 1.0) <= 1e-12
    order = np.argsort(logits, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-15)


def test_softmax_sum_bulk_random():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        logits = rng.normal(0, 100, size=rng.integers(1, 12))
        assert abs(stable_softmax(logits).sum() - 1.0) <= 1e-12


def test_rng_equal_seeds_equal_draws():
    a = SeededRng(1234)
    b = SeededRng(1234)
    assert np.array_equal(a.uniform(size=1_000_000), b.uniform(size=1_000_000))


def test_rng_spawn_streams_differ_and_are_deterministic():
    a = SeededRng(5).spawn("workers")
    b = SeededRng(5).spawn("workers")
    c = SeededRng(5).spawn("other")
    assert np.array_equal(a.uniform(size=100), b.uniform(size=100))
    assert not np.array_equal(SeededRng(5).spawn("workers").uniform(size=100),
                              c.uniform(size=100))


def test_rng_choice_without_replacement():
    rng = SeededRng(9)
    picked = rng.choice_without_replacement(np.arange(10), 10)
    assert sorted(picked.tolist()) == list(range(10))
    with pytest.raises(DomainError):
        rng.choice_without_replacement(np.arange(3), 4)
