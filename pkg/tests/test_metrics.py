import pytest
from hypothesis import given
from hypothesis import strategies as st

from matsubgoal.catalog import ACT_INDEX, CLASS_INDEX
from matsubgoal.metrics import (
    TypeScore,
    f1_per_type,
    goal_condition_rate,
    greedy_alignment,
    longest_common_subsequence,
    success_rate,
)

# (outcomes, expected SR, (total, completed) pairs, expected GC), all hand-computed
FIXTURES = [
    ([True, False, False, False], 0.25, [(2, 1), (4, 4)], 0.75),
    ([True, True], 1.0, [(3, 3), (5, 5)], 1.0),
    ([False, False, False], 0.0, [(4, 0), (2, 0), (6, 0)], 0.0),
    ([True, False, True, False, True], 0.6, [(4, 1), (4, 2), (4, 3), (4, 4)], 0.625),
    ([False, True, False, False, False, False, False, True], 0.25, [(8, 2), (2, 1)], 0.375),
]


@pytest.mark.parametrize("outcomes,sr,counts,gc", FIXTURES)
def test_success_and_goal_condition_fixtures(outcomes, sr, counts, gc):
    assert success_rate(outcomes) == sr
    assert goal_condition_rate(counts) == gc


def _p(act, arg):
    return ACT_INDEX[act], CLASS_INDEX[arg]


def test_hand_counted_f1_fixture():
    truth = [_p("PickUp", "Apple"), _p("Put", "Sink"), _p("ToggleOn", "Faucet"), _p("ToggleOff", "Faucet"), _p("PickUp", "Apple"), _p("Put", "Table")]
    pred = [_p("PickUp", "Apple"), _p("Put", "Sink"), _p("Put", "Fridge"), _p("ToggleOn", "Faucet"), _p("Open", "Fridge"), _p("ToggleOff", "Faucet")]
    # four in-order matches; Put Fridge and Open Fridge are spurious; PickUp Apple and Put Table are missed
    assert greedy_alignment(pred, truth) == [(0, 0), (1, 1), (3, 2), (5, 3)]
    micro = f1_per_type([pred], [truth])["micro"]
    assert (micro.matched, micro.predicted, micro.support) == (4, 6, 6)
    assert micro.precision == 4 / 6 and micro.recall == 4 / 6
    assert micro.f1 == 2 / 3


def test_per_type_counts_and_supports():
    truth = [[_p("PickUp", "Apple"), _p("Put", "Sink"), (ACT_INDEX["Stop"], 0)]]
    pred = [[_p("PickUp", "Apple"), _p("Put", "Table"), (ACT_INDEX["Stop"], 0)]]
    scores = f1_per_type(pred, truth)
    assert scores["PickUp"] == TypeScore(1.0, 1.0, 1.0, 1, 1, 1)
    assert scores["Put"].f1 == 0.0 and scores["Put"].support == 1
    assert scores["Stop"].f1 == 1.0
    assert scores["Slice"] == TypeScore(0.0, 0.0, 0.0, 0, 0, 0)
    assert sum(s.support for name, s in scores.items() if name != "micro") == scores["micro"].support == 3


def test_greedy_alignment_keeps_order():
    assert greedy_alignment("abc", "cab") == [(0, 1), (1, 2)]
    assert greedy_alignment("", "abc") == []
    assert greedy_alignment("aa", "a") == [(0, 0)]


def test_longest_common_subsequence_examples():
    assert longest_common_subsequence("abcbdab", "bdcaba") == 4
    assert longest_common_subsequence([], [1, 2]) == 0


@given(st.lists(st.integers(0, 3), max_size=12), st.lists(st.integers(0, 3), max_size=12))
def test_alignment_is_a_common_subsequence_no_longer_than_lcs(a, b):
    matches = greedy_alignment(a, b)
    assert all(a[i] == b[j] for i, j in matches)
    assert all(i1 < i2 and j1 < j2 for (i1, j1), (i2, j2) in zip(matches, matches[1:]))
    assert len(matches) <= longest_common_subsequence(a, b) <= min(len(a), len(b))


def test_bad_metric_inputs():
    with pytest.raises(ValueError):
        success_rate([])
    with pytest.raises(ValueError):
        goal_condition_rate([(0, 0)])
    with pytest.raises(ValueError):
        goal_condition_rate([(2, 3)])
    with pytest.raises(ValueError):
        f1_per_type([[]], [])
