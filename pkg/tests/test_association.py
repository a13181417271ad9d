import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from v2x_multicast.association import (initial_association, refine_association,
                                       refine_association_moves, worst_sinrs)
from v2x_multicast.model import association_matrix


def test_single_bs_takes_everyone():
    y = initial_association(np.array([[1.0, -5.0, 30.0]]))
    assert y.tolist() == [[1, 1, 1]]


def test_tie_goes_to_lowest_index():
    y = initial_association(np.array([[7.0, 1.0], [7.0, 2.0]]))
    assert y.tolist() == [[1, 0], [0, 1]]


def test_initial_matches_bruteforce_argmax():
    rng = np.random.default_rng(3)
    sinr = rng.normal(5, 8, size=(3, 5))
    y = initial_association(sinr)
    for v in range(5):
        best = max(range(3), key=lambda n: (sinr[n, v], -n))
        assert y[:, v].tolist() == [int(n == best) for n in range(3)]


def test_hand_traced_move():
    # v2 is BS 0's worst (6 dB); at BS 1 it sees 5 dB, above BS 1's worst (v1, 3 dB)
    sinr = np.array([[20.0, 1.0, 6.0], [0.0, 3.0, 5.0]])
    y0 = initial_association(sinr)
    assert np.argmax(y0, axis=0).tolist() == [0, 1, 0]
    y, moves = refine_association_moves(y0, sinr)
    assert moves == [(2, 0, 1)]
    assert np.argmax(y, axis=0).tolist() == [0, 1, 1]


def test_move_blocked_when_target_worst_drops():
    sinr = np.array([[20.0, 1.0, 6.0], [0.0, 3.0, 2.0]])
    y0 = initial_association(sinr)
    assert np.array_equal(refine_association(y0, sinr), y0)


def test_only_in_range_bs_is_fixed_point():
    sinr = np.array([[10.0, 8.0, -50.0, -50.0], [-50.0, -50.0, 4.0, 9.0]])
    y0 = initial_association(sinr)
    assert np.array_equal(refine_association(y0, sinr), y0)


def test_rejects_bad_association():
    with pytest.raises(ValueError):
        refine_association(np.array([[1, 1], [1, 0]]), np.zeros((2, 2)))


def _lex_sorted(worst):
    return tuple(np.sort(worst))


sinr_mats = st.integers(1, 4).flatmap(lambda n: st.integers(1, 8).flatmap(
    lambda v: arrays(float, (n, v), elements=st.floats(-20, 40, allow_nan=False))))


@settings(max_examples=200, deadline=None)
@given(sinr_mats)
def test_refinement_properties(sinr):
    y0 = initial_association(sinr)
    y, moves = refine_association_moves(y0, sinr)
    n_bs, n_veh = sinr.shape
    assert np.all(y.sum(axis=0) == 1) and set(np.unique(y)) <= {0, 1}
    assert len(moves) <= n_bs * n_veh
    assert refine_association_moves(y, sinr)[1] == []
    serving = np.argmax(y0, axis=0)
    for v, src, dst in moves:
        before = worst_sinrs(serving, sinr)
        serving = serving.copy()
        serving[v] = dst
        after = worst_sinrs(serving, sinr)
        assert after[src] > before[src]
        assert after[dst] == before[dst]
        assert _lex_sorted(after) >= _lex_sorted(before)
    assert np.array_equal(association_matrix(serving, n_bs), y)
