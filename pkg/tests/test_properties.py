"""Property-based checks for the pure numeric helpers."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vlpkg import post_weights, selfadv_weights
from vlpkg.data import Vocabulary, distance_bucket
from vlpkg.evaluation import rank_from_scores

finite = st.floats(min_value=-50, max_value=50, allow_nan=False,
                   allow_infinity=False)


@given(hnp.arrays(np.float64, st.integers(2, 30),
                  elements=st.integers(-40, 40).map(float)),
       st.data())
def test_rank_is_within_bounds_and_transform_invariant(scores, data):
    """Integer-valued scores so ties are frequent and the affine transform
    is exact (a float map may merge nearly-equal scores and change ranks)."""
    gold = data.draw(st.integers(0, len(scores) - 1))
    known = np.array(sorted(data.draw(
        st.sets(st.integers(0, len(scores) - 1), max_size=len(scores) - 1))),
        dtype=int)
    rank = rank_from_scores(scores, gold, known)
    kept = len(scores) - len(np.setdiff1d(known, [gold]))
    assert 1.0 <= rank <= kept
    assert rank_from_scores(3.0 * scores + 7.0, gold, known) == rank
    assert rank_from_scores(scores ** 3, gold, known) == rank


@given(hnp.arrays(np.float64, st.integers(2, 30), elements=finite),
       st.data())
def test_filtering_more_tails_never_raises_the_rank(scores, data):
    gold = data.draw(st.integers(0, len(scores) - 1))
    small = data.draw(st.sets(st.integers(0, len(scores) - 1),
                              max_size=len(scores) // 2))
    extra = data.draw(st.sets(st.integers(0, len(scores) - 1),
                              max_size=len(scores) // 2))
    a = rank_from_scores(scores, gold, np.array(sorted(small), dtype=int))
    b = rank_from_scores(scores, gold,
                         np.array(sorted(small | extra), dtype=int))
    assert b <= a


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8),
                                        st.integers(1, 16)),
                  elements=finite),
       st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.floats(0.0, 2.0),
       st.floats(-5, 5))
@settings(max_examples=60)
def test_post_weights_are_a_distribution(neg, a1, a2, tau, c):
    w = post_weights(c, neg, alpha1=a1, alpha2=a2, tau=tau)
    assert w.shape == neg.shape
    assert (w > 0).all()
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    w2 = selfadv_weights(neg, alpha1=a1)
    np.testing.assert_allclose(w2.sum(axis=-1), 1.0, atol=1e-9)


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.0, 2.0),
       st.floats(-3, 3), st.data())
@settings(max_examples=60)
def test_post_weight_peak_sits_at_the_boundary(a1, a2, tau, c, data):
    """The most-weighted negative is the one closest to c + tau from below,
    or past it with the smallest overshoot, never an extreme score."""
    grid = np.linspace(c - 4, c + 4, 41)
    w = post_weights(c, grid, alpha1=a1, alpha2=a2, tau=tau)
    peak = grid[np.argmax(w)]
    boundary = c + tau
    assert abs(peak - boundary) <= (grid[1] - grid[0]) + 1e-12


@given(st.lists(st.text(alphabet=st.characters(min_codepoint=33,
                                               max_codepoint=126),
                        min_size=1, max_size=8),
                min_size=1, max_size=20),
       st.randoms())
def test_vocabulary_ids_ignore_input_order(names, rnd):
    shuffled = list(names)
    rnd.shuffle(shuffled)
    a = Vocabulary.from_names(names, ["r"])
    b = Vocabulary.from_names(shuffled, ["r"])
    assert a.entity_names == b.entity_names
    assert a.entity_ids == b.entity_ids


@given(st.integers(0, 1000))
def test_distance_bucket_is_monotone_and_saturates(d):
    bucket = distance_bucket(d)
    assert bucket in (1, 2, 3, 4)
    assert bucket <= distance_bucket(d + 1)
    if d >= 4:
        assert bucket == 4
