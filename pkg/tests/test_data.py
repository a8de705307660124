import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logq.data import (
    DataError,
    ParseError,
    leave_one_out_split,
    load_interactions,
    load_split,
    save_split,
    temporal_split,
    unigram_stats,
)

from conftest import tiny_log


def test_load_basic(write_csv):
    log = load_interactions(write_csv("user_id,item_id,timestamp\nu1,i1,10\nu1,i2,20\nu2,i1,30\n"))
    assert (log.num_users, log.num_items, len(log)) == (2, 2, 3)
    assert log.user_ids == ("u1", "u2")
    assert list(log.items) == [0, 1, 0]
    assert log[2] == (1, 0, 30)


def test_load_headerless(write_csv):
    log = load_interactions(write_csv("a,x,1\nb,y,2\n"))
    assert len(log) == 2


def test_empty_file(write_csv):
    with pytest.raises(DataError, match="no interactions"):
        load_interactions(write_csv(""))
    with pytest.raises(DataError, match="no interactions"):
        load_interactions(write_csv("user_id,item_id,timestamp\n"))


def test_malformed_timestamp_reports_line(write_csv):
    with pytest.raises(ParseError) as exc:
        load_interactions(write_csv("u1,i1,notatime\n"))
    assert exc.value.line == 1
    with pytest.raises(ParseError) as exc:
        load_interactions(write_csv("user_id,item_id,timestamp\nu1,i1,3\nu1,i1\n"))
    assert exc.value.line == 3


def test_unigram_counts():
    stats = unigram_stats(tiny_log([(0, 0, 1), (0, 0, 2), (1, 1, 3)]))
    assert list(stats.counts) == [2, 1]
    assert stats.total == 3
    assert stats.q()[0] == pytest.approx(2 / 3)


def test_unigram_single_item():
    stats = unigram_stats(tiny_log([(0, 0, 1)]))
    assert stats.q()[0] == 1.0


def test_unigram_sums_to_one_against_counter(small_synth):
    from collections import Counter

    stats = unigram_stats(small_synth)
    ref = Counter(small_synth.items.tolist())
    assert all(stats.counts[i] == c for i, c in ref.items())
    assert abs(stats.q().sum() - 1.0) < 1e-12


def test_unigram_permutation_invariant(small_synth, rng):
    perm = rng.permutation(len(small_synth))
    assert np.array_equal(unigram_stats(small_synth).counts,
                          unigram_stats(small_synth.take(perm)).counts)


def test_loo_three_events():
    split = leave_one_out_split(tiny_log([(0, 0, 1), (0, 1, 2), (0, 2, 3)]))
    assert list(split.train.items) == [0]
    assert list(split.validation.items) == [1]
    assert list(split.test.items) == [2]


def test_loo_short_user_stays_in_train():
    split = leave_one_out_split(tiny_log([(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 1, 2), (1, 2, 3)]))
    assert sorted(split.train.users.tolist()) == [0, 0, 1]
    assert split.test.users.tolist() == [1]
    assert split.validation.users.tolist() == [1]


def test_loo_uses_time_not_file_order():
    split = leave_one_out_split(tiny_log([(0, 5, 30), (0, 6, 10), (0, 7, 20)]))
    assert split.test.items.tolist() == [5]
    assert split.validation.items.tolist() == [7]


def test_loo_ties_broken_by_file_order():
    split = leave_one_out_split(tiny_log([(0, 1, 5), (0, 2, 5), (0, 3, 5)]))
    assert split.test.items.tolist() == [3]
    assert split.validation.items.tolist() == [2]


def test_loo_one_test_event_per_eligible_user(small_synth):
    split = leave_one_out_split(small_synth)
    sizes = np.bincount(small_synth.users)
    eligible = np.flatnonzero(sizes >= 3)
    assert sorted(split.test.users.tolist()) == eligible.tolist()
    assert sorted(split.validation.users.tolist()) == eligible.tolist()
    assert len(split.train) + len(split.validation) + len(split.test) == len(small_synth)


def test_temporal_sizes():
    log = tiny_log([(i % 3, i % 4, 100 - i) for i in range(10)])
    split = temporal_split(log, 0.1)
    assert split.counts() == {"train": 8, "validation": 1, "test": 1}
    assert split.test.timestamps.tolist() == [100]


def test_temporal_ties_fall_back_to_file_order():
    log = tiny_log([(0, i, 7) for i in range(10)])
    split = temporal_split(log, 0.2)
    assert split.test.items.tolist() == [8, 9]
    assert split.validation.items.tolist() == [6, 7]


@pytest.mark.parametrize("fraction", [0.0, -0.1, 0.51, 1.0])
def test_temporal_rejects_bad_fraction(fraction):
    with pytest.raises(DataError):
        temporal_split(tiny_log([(0, 0, 1)] * 4), fraction)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 5), st.integers(0, 7), st.integers(0, 20)), min_size=4, max_size=60),
    st.sampled_from([0.01, 0.1, 0.25, 0.5]),
)
def test_temporal_partition_and_monotonicity(rows, fraction):
    log = tiny_log(rows, 6, 8)
    if 2 * int(np.ceil(fraction * len(log))) > len(log):
        return
    split = temporal_split(log, fraction)
    assert len(split.train) + len(split.validation) + len(split.test) == len(log)
    if len(split.train) and len(split.validation):
        assert split.train.timestamps.max() <= split.validation.timestamps.min()
    assert split.validation.timestamps.max() <= split.test.timestamps.min()
    merged = sorted(zip(*(np.concatenate([getattr(split, p).__getattribute__(a)
                                          for p in ("train", "validation", "test")])
                          for a in ("users", "items", "timestamps"))))
    assert merged == sorted(zip(log.users, log.items, log.timestamps))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 5), st.integers(0, 9)), min_size=1, max_size=40))
def test_loo_partition_property(rows):
    log = tiny_log(rows, 5, 6)
    split = leave_one_out_split(log)
    assert len(split.train) + len(split.validation) + len(split.test) == len(log)
    assert len(set(split.test.users.tolist())) == len(split.test)


def test_split_roundtrip_is_deterministic(tmp_path, small_synth):
    split = temporal_split(small_synth, 0.1)
    a, b = tmp_path / "a", tmp_path / "b"
    save_split(split, a)
    save_split(temporal_split(small_synth, 0.1), b)
    for name in ("train.csv", "validation.csv", "test.csv", "ids.json", "split.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    side = json.loads((a / "split.json").read_text())
    assert side["scheme"] == "temporal" and side["counts"]["test"] == len(split.test)
    back = load_split(a)
    for part in ("train", "validation", "test"):
        assert np.array_equal(getattr(back, part).items, getattr(split, part).items)
        assert np.array_equal(getattr(back, part).users, getattr(split, part).users)
