import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaetpp.data import (
    Dataset,
    Event,
    EventSequence,
    ParseError,
    SubIntervalPartition,
    ValidationError,
    ZERO_GAP_JITTER,
    load_sequences,
    log_gap_stats,
    partition,
    save_sequences,
    split_dataset,
    type_view,
)


def make_seq(times_types, num_types=2, horizon=None):
    events = tuple(Event(t, u) for t, u in times_types)
    t_max = max((t for t, _ in times_types), default=1.0)
    return EventSequence(
        events, num_types=num_types, horizon=horizon or t_max, seq_id="s"
    )


class TestLoadSequences:
    def test_jsonl_field_mapping(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[{"t":1.0,"type":0}],"T":2.0,"U":2}\n')
        ds = load_sequences(str(path))
        seq = ds.sequences[0]
        assert len(seq) == 1
        assert seq.horizon == 2.0
        assert seq.num_types == 2

    def test_unsorted_events_are_sorted(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"events":[{"t":2.0,"type":0},{"t":1.0,"type":1}],"T":3.0,"U":2}\n'
        )
        seq = load_sequences(str(path)).sequences[0]
        assert [(e.t, e.type_id) for e in seq.events] == [(1.0, 1), (2.0, 0)]

    def test_negative_timestamp_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[{"t":-1.0,"type":0}],"T":2.0,"U":1}\n')
        with pytest.raises(ValidationError):
            load_sequences(str(path))

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[],"T":1.0,"U":1}\nnot json\n')
        with pytest.raises(ParseError, match="line 2"):
            load_sequences(str(path))

    def test_malformed_event_record(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[{"time":1.0}],"T":2.0,"U":1}\n')
        with pytest.raises(ParseError, match="line 1"):
            load_sequences(str(path))

    def test_horizon_defaults_to_max_timestamp(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[{"t":1.5,"type":0},{"t":4.0,"type":0}],"U":1}\n')
        assert load_sequences(str(path)).sequences[0].horizon == 4.0

    def test_csv_roundtrip_with_meta(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("seq_id,t,type\na,1.0,0\na,2.0,1\nb,0.5,1\n")
        (tmp_path / "d.csv.meta.json").write_text('{"U": 3, "T": 5.0}')
        ds = load_sequences(str(path))
        assert [s.seq_id for s in ds.sequences] == ["a", "b"]
        assert all(s.num_types == 3 and s.horizon == 5.0 for s in ds.sequences)

    def test_csv_header_required(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,1.0,0\n")
        with pytest.raises(ParseError):
            load_sequences(str(path))

    def test_type_outside_vocabulary_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"events":[{"t":1.0,"type":5}],"T":2.0,"U":2}\n')
        with pytest.raises(ValidationError):
            load_sequences(str(path))

    def test_jsonl_save_load_roundtrip(self, tmp_path):
        seqs = [make_seq([(0.5, 0), (1.5, 1)], horizon=2.0)]
        path = tmp_path / "out.jsonl"
        save_sequences(seqs, str(path))
        loaded = load_sequences(str(path)).sequences[0]
        assert loaded.horizon == 2.0
        assert [(e.t, e.type_id) for e in loaded.events] == [(0.5, 0), (1.5, 1)]


class TestPartition:
    def test_equal_spacing(self):
        seq = make_seq([(1.0, 0)], horizon=15.0)
        part, _ = partition(seq, 5)
        assert part.boundaries == (0.0, 3.0, 6.0, 9.0, 12.0, 15.0)

    def test_boundary_event_goes_right(self):
        # half-open convention: t exactly on a boundary joins the next interval
        seq = make_seq([(3.0, 0)], horizon=6.0)
        part, buckets = partition(seq, 2)
        assert part.index_of(3.0) == 1
        assert len(buckets[0]) == 0 and len(buckets[1]) == 1

    def test_single_interval_degenerate(self):
        seq = make_seq([(0.5, 0), (1.0, 1), (2.5, 0)], horizon=3.0)
        _, buckets = partition(seq, 1)
        assert len(buckets[0]) == 3

    def test_final_interval_closed(self):
        seq = make_seq([(6.0, 0)], horizon=6.0)
        part, buckets = partition(seq, 3)
        assert part.index_of(6.0) == 2
        assert len(buckets[2]) == 1

    def test_invalid_interval_count(self):
        seq = make_seq([(1.0, 0)], horizon=2.0)
        with pytest.raises(ValueError):
            partition(seq, 0)

    def test_irregular_boundaries_rejected(self):
        with pytest.raises(ValidationError):
            SubIntervalPartition((0.0, 1.0, 5.0))


class TestTypeView:
    def test_gap_definition(self):
        seq = make_seq([(1.0, 0), (2.5, 0), (4.0, 1)], horizon=5.0)
        view = type_view(seq)
        np.testing.assert_allclose(view.inter_event_times[0], [1.0, 1.5])
        np.testing.assert_allclose(view.inter_event_times[1], [4.0])

    def test_counts_sum_to_length(self):
        seq = make_seq([(1.0, 0), (2.0, 1), (3.0, 1)], horizon=4.0)
        assert sum(type_view(seq).counts) == len(seq)

    def test_empty_sequence(self):
        seq = EventSequence((), num_types=3, horizon=1.0, seq_id="e")
        assert type_view(seq).counts == (0, 0, 0)

    def test_duplicate_timestamps_jittered(self):
        seq = make_seq([(1.0, 0), (1.0, 0)], horizon=2.0)
        tau = type_view(seq).inter_event_times[0]
        assert tau[0] == 1.0
        assert tau[1] == ZERO_GAP_JITTER

    def test_event_at_zero_jittered(self):
        seq = make_seq([(0.0, 0)], horizon=1.0)
        assert type_view(seq).inter_event_times[0][0] == ZERO_GAP_JITTER


class TestSplitDataset:
    def _dataset(self, n):
        return Dataset([make_seq([(1.0, 0)], horizon=2.0) for _ in range(n)])

    def _relabel(self, ds):
        for i, s in enumerate(ds.sequences):
            object.__setattr__(s, "seq_id", f"s{i}")
        return ds

    def test_counts_match_fractions(self):
        ds = split_dataset(self._relabel(self._dataset(10)), (0.6, 0.2, 0.2), seed=0)
        assert len(ds.split("train")) == 6
        assert len(ds.split("val")) == 2
        assert len(ds.split("test")) == 2

    def test_deterministic_given_seed(self):
        ds = self._relabel(self._dataset(20))
        a = split_dataset(ds, (0.6, 0.2, 0.2), seed=7).splits
        b = split_dataset(ds, (0.6, 0.2, 0.2), seed=7).splits
        assert a == b

    def test_different_seed_changes_assignment(self):
        ds = self._relabel(self._dataset(50))
        a = split_dataset(ds, (0.6, 0.2, 0.2), seed=1).splits
        b = split_dataset(ds, (0.6, 0.2, 0.2), seed=2).splits
        assert a != b

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError):
            split_dataset(self._dataset(10), (0.5, 0.5, 0.5), seed=0)

    def test_too_few_sequences(self):
        with pytest.raises(ValueError):
            split_dataset(self._relabel(self._dataset(2)), (0.6, 0.2, 0.2), seed=0)

    def test_disjoint_and_exhaustive(self):
        ds = self._relabel(self._dataset(23))
        ds = split_dataset(ds, (0.6, 0.2, 0.2), seed=3)
        assert set(ds.splits) == {s.seq_id for s in ds.sequences}
        assert len(ds.split("train")) + len(ds.split("val")) + len(ds.split("test")) == 23


@st.composite
def random_sequences(draw):
    num_types = draw(st.integers(min_value=1, max_value=4))
    horizon = draw(st.floats(min_value=0.5, max_value=50.0, allow_nan=False))
    n = draw(st.integers(min_value=0, max_value=30))
    times = draw(
        st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            min_size=n,
            max_size=n,
        )
    )
    types = draw(
        st.lists(st.integers(min_value=0, max_value=num_types - 1), min_size=n, max_size=n)
    )
    events = tuple(Event(t * horizon, u) for t, u in zip(times, types))
    return EventSequence(events, num_types=num_types, horizon=horizon, seq_id="h")


class TestInvariants:
    @given(random_sequences(), st.integers(min_value=1, max_value=7))
    @settings(max_examples=60, deadline=None)
    def test_partition_assigns_each_event_once(self, seq, k):
        _, buckets = partition(seq, k)
        flattened = [e for bucket in buckets for e in bucket]
        assert sorted((e.t, e.type_id) for e in flattened) == sorted(
            (e.t, e.type_id) for e in seq.events
        )

    @given(random_sequences(), st.integers(min_value=1, max_value=7))
    @settings(max_examples=60, deadline=None)
    def test_partition_widths_equal(self, seq, k):
        part, _ = partition(seq, k)
        widths = np.diff(part.boundaries)
        np.testing.assert_allclose(widths, seq.horizon / k, rtol=1e-9)

    @given(random_sequences())
    @settings(max_examples=60, deadline=None)
    def test_typeview_cumsum_recovers_timestamps(self, seq):
        view = type_view(seq)
        for u in range(seq.num_types):
            recovered = np.cumsum(view.inter_event_times[u])
            # jittered zero gaps shift reconstruction by at most the jitter
            np.testing.assert_allclose(
                recovered, view.timestamps[u], rtol=1e-9, atol=len(recovered) * ZERO_GAP_JITTER
            )

    @given(random_sequences())
    @settings(max_examples=30, deadline=None)
    def test_typeview_counts(self, seq):
        assert sum(type_view(seq).counts) == len(seq)


def test_log_gap_stats_constant_corpus():
    seqs = [make_seq([(1.0, 0), (2.0, 0), (3.0, 0)], num_types=1, horizon=3.0)]
    mean, std = log_gap_stats(seqs)
    assert mean == pytest.approx(0.0)
    assert std > 0
