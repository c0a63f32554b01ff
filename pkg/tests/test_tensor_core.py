import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import naive_compose
from tensorfmri.tensor_core import (
    ParafacCoeff,
    compose,
    cp_als,
    frobenius_distance,
    khatri_rao,
    outer_contraction,
    unfold,
)


def random_margins(rng, dims, rank):
    return [rng.standard_normal((p, rank)) for p in dims]


def test_compose_hand_example():
    out = compose([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])])
    np.testing.assert_array_equal(out, [[3, 4], [6, 8]])


def test_compose_zero_margin_annihilates(rng):
    margins = random_margins(rng, (3, 4, 2), 3)
    margins[1][:] = 0.0
    assert np.all(compose(margins) == 0.0)


def test_compose_matches_triple_loop(rng):
    margins = random_margins(rng, (4, 5, 6), 3)
    fast, slow = compose(margins), naive_compose(margins)
    assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_parafac_coeff_rejects_ragged_ranks():
    with pytest.raises(ValueError):
        ParafacCoeff([np.zeros((2, 2)), np.zeros((3, 1))])


@given(
    dims=st.lists(st.integers(1, 4), min_size=1, max_size=4),
    rank=st.integers(1, 3),
    seed=st.integers(0, 2**31),
    c=st.floats(-10, 10, allow_nan=False),
)
def test_compose_linear_in_one_margin(dims, rank, seed, c):
    rng = np.random.default_rng(seed)
    margins = random_margins(rng, dims, rank)
    scaled = [m.copy() for m in margins]
    scaled[0] *= c
    np.testing.assert_allclose(compose(scaled), c * compose(margins), rtol=1e-12, atol=1e-12)


@given(dims=st.lists(st.integers(2, 4), min_size=2, max_size=4), seed=st.integers(0, 2**31))
def test_rank_one_factorizes(dims, seed):
    rng = np.random.default_rng(seed)
    margins = [rng.uniform(0.5, 2.0, (p, 1)) for p in dims]
    t = compose(margins)
    # ratio of two mode-0 slices is constant over all trailing indices
    ratio = t[0] / t[1]
    np.testing.assert_allclose(ratio, ratio.flat[0], rtol=1e-12)


def test_outer_contraction_hand_example():
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(outer_contraction(t, [np.ones(2)], 1), [1.0, 1.0])


def test_outer_contraction_zero_tensor():
    assert np.all(outer_contraction(np.zeros((2, 3, 4)), [np.ones(2), np.ones(4)], 1) == 0)


def test_outer_contraction_matches_loops(rng):
    t = rng.standard_normal((3, 3, 3))
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    expected = np.array(
        [sum(t[i, k, l] * a[i] * b[l] for i in range(3) for l in range(3)) for k in range(3)]
    )
    np.testing.assert_allclose(outer_contraction(t, [a, b], 1), expected, rtol=1e-12)


@given(dims=st.lists(st.integers(1, 5), min_size=1, max_size=4), seed=st.integers(0, 2**31), data=st.data())
def test_outer_contraction_equals_compose_then_sum(dims, seed, data):
    rng = np.random.default_rng(seed)
    j = data.draw(st.integers(0, len(dims) - 1))
    t = rng.standard_normal(dims)
    others = [rng.standard_normal(p) for k, p in enumerate(dims) if k != j]
    got = outer_contraction(t, others, j)
    for ell in range(dims[j]):
        e = np.zeros(dims[j])
        e[ell] = 1.0
        vecs = list(others)
        vecs.insert(j, e)
        weight = compose([v[:, None] for v in vecs])
        assert got[ell] == pytest.approx(float(np.sum(t * weight)), rel=1e-10, abs=1e-10)


def test_outer_contraction_checks_shapes():
    with pytest.raises(ValueError):
        outer_contraction(np.zeros((2, 3)), [np.ones(2)], 0)


def test_frobenius_distance_cases(rng):
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((7, 5))
    assert frobenius_distance(a, a) == 0.0
    assert frobenius_distance(np.array([[1.0, 0.0]]), np.zeros((1, 2))) == 1.0
    assert frobenius_distance(a, b) == pytest.approx(np.sqrt(sum((x - y) ** 2 for x, y in zip(a.flat, b.flat))))


@given(
    dims=st.lists(st.integers(1, 4), min_size=2, max_size=3),
    rank=st.integers(1, 3),
    seed=st.integers(0, 2**31),
)
def test_khatri_rao_matches_unfolding(dims, rank, seed):
    rng = np.random.default_rng(seed)
    margins = random_margins(rng, dims, rank)
    t = compose(margins)
    for j in range(len(dims)):
        others = [margins[k] for k in range(len(dims)) if k != j]
        np.testing.assert_allclose(unfold(t, j), margins[j] @ khatri_rao(others).T, atol=1e-12)


def test_cp_als_recovers_exact_low_rank(rng):
    margins = random_margins(rng, (5, 6, 7), 2)
    t = compose(margins)
    fit = cp_als(t, 2, np.random.default_rng(1), n_iter=500)
    assert frobenius_distance(compose(fit), t) <= 1e-6 * np.linalg.norm(t)


def test_cp_als_vector_is_identity():
    v = np.array([1.0, -2.0, 3.0])
    fit = cp_als(v, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(compose(fit), v)


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_cp_als_never_worse_than_zero(t):
    fit = cp_als(t, 1, np.random.default_rng(0), n_iter=30)
    assert frobenius_distance(compose(fit), t) <= np.linalg.norm(t) + 1e-9
