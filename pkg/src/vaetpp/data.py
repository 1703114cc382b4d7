"""Event-sequence containers, sub-interval partitioning and dataset ingestion.

All containers are immutable after construction and safe to share across
threads.  Canonical on-disk format is JSONL (one object per sequence);
CSV with a ``seq_id,t,type`` header is supported for ingestion.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Smallest admissible inter-event time: zero gaps (simultaneous events of
# the same type, or an event exactly at t=0) are lifted to this value so
# that log-densities over gaps stay finite.
ZERO_GAP_JITTER = 1e-8

SPLIT_NAMES = ("train", "val", "test")


class ValidationError(ValueError):
    """Raised when event data violates a structural invariant."""


class ParseError(ValueError):
    """Raised when an input file cannot be parsed; carries the line number."""


@dataclass(frozen=True)
class Event:
    """A single marked event: occurrence time and integer type id."""

    t: float
    type_id: int
    mark: int | None = None

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValidationError(f"event time must be non-negative, got {self.t}")
        if self.type_id < 0:
            raise ValidationError(f"type id must be non-negative, got {self.type_id}")


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered events over the horizon [0, T] with a fixed type vocabulary.

    Events are sorted by time at construction.  ``num_types`` is the size of
    the global type vocabulary; every ``type_id`` must lie in ``[0, num_types)``.
    """

    events: tuple[Event, ...]
    num_types: int
    horizon: float
    seq_id: str = "seq"

    def __post_init__(self) -> None:
        if self.num_types < 1:
            raise ValidationError("num_types must be >= 1")
        if self.horizon <= 0 and self.events:
            raise ValidationError("horizon must be positive for non-empty sequences")
        evs = tuple(sorted(self.events, key=lambda e: e.t))
        object.__setattr__(self, "events", evs)
        for e in evs:
            if e.type_id >= self.num_types:
                raise ValidationError(
                    f"type id {e.type_id} outside vocabulary of size {self.num_types}"
                )
            if e.t > self.horizon:
                raise ValidationError(
                    f"event time {e.t} exceeds horizon {self.horizon}"
                )

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)

    @property
    def type_ids(self) -> np.ndarray:
        return np.array([e.type_id for e in self.events], dtype=np.int64)


@dataclass(frozen=True)
class SubIntervalPartition:
    """K regularly-spaced sub-intervals covering [0, T].

    Interval k is the half-open window [boundaries[k], boundaries[k+1]),
    except the final interval which is closed on the right so no event at
    t = T is dropped.
    """

    boundaries: tuple[float, ...]

    def __post_init__(self) -> None:
        b = self.boundaries
        if len(b) < 2:
            raise ValidationError("partition needs at least two boundaries")
        if b[0] != 0.0:
            raise ValidationError("partition must start at 0")
        widths = np.diff(b)
        if np.any(widths <= 0):
            raise ValidationError("boundaries must be strictly increasing")
        if not np.allclose(widths, widths[0], rtol=1e-9, atol=0.0):
            raise ValidationError("sub-intervals must be regularly spaced")
        object.__setattr__(self, "boundaries", tuple(float(x) for x in b))

    @classmethod
    def regular(cls, horizon: float, num_intervals: int) -> "SubIntervalPartition":
        if num_intervals <= 0:
            raise ValueError(f"interval count must be positive, got {num_intervals}")
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        return cls(tuple(np.linspace(0.0, horizon, num_intervals + 1)))

    @property
    def num_intervals(self) -> int:
        return len(self.boundaries) - 1

    @property
    def horizon(self) -> float:
        return self.boundaries[-1]

    def index_of(self, t: float) -> int:
        """Interval index for time t; the last interval is right-closed."""
        if t < 0 or t > self.horizon:
            raise ValidationError(f"time {t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.boundaries, t, side="right")) - 1
        return min(k, self.num_intervals - 1)

    def assign(self, times: np.ndarray) -> np.ndarray:
        """Vectorized interval assignment."""
        times = np.asarray(times, dtype=np.float64)
        ks = np.searchsorted(self.boundaries, times, side="right") - 1
        return np.minimum(ks, self.num_intervals - 1).astype(np.int64)


@dataclass(frozen=True)
class TypeView:
    """Per-type timestamps and inter-event times.

    The first gap of each type is measured from the sequence start t=0, so
    every event carries a well-defined positive inter-event time.  Exact
    zero gaps are lifted to ``ZERO_GAP_JITTER``.
    """

    timestamps: tuple[np.ndarray, ...]
    inter_event_times: tuple[np.ndarray, ...]

    @property
    def num_types(self) -> int:
        return len(self.timestamps)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(ts) for ts in self.timestamps)


def type_view(seq: EventSequence) -> TypeView:
    """Split a sequence into per-type timestamp and inter-event-time arrays."""
    times = seq.times
    types = seq.type_ids
    stamps: list[np.ndarray] = []
    gaps: list[np.ndarray] = []
    for u in range(seq.num_types):
        ts = times[types == u]
        ts.setflags(write=False)
        tau = np.diff(ts, prepend=0.0)
        tau[tau <= 0.0] = ZERO_GAP_JITTER
        tau.setflags(write=False)
        stamps.append(ts)
        gaps.append(tau)
    return TypeView(tuple(stamps), tuple(gaps))


def partition(
    seq: EventSequence, num_intervals: int
) -> tuple[SubIntervalPartition, list[list[Event]]]:
    """Partition the horizon and bucket the events into sub-intervals."""
    part = SubIntervalPartition.regular(seq.horizon, num_intervals)
    buckets: list[list[Event]] = [[] for _ in range(num_intervals)]
    for e in seq.events:
        buckets[part.index_of(e.t)].append(e)
    return part, buckets


@dataclass
class Dataset:
    """A collection of sequences with optional train/val/test labels."""

    sequences: list[EventSequence]
    splits: dict[str, str] = field(default_factory=dict)

    @property
    def num_types(self) -> int:
        if not self.sequences:
            return 0
        sizes = {s.num_types for s in self.sequences}
        if len(sizes) > 1:
            raise ValidationError(f"sequences disagree on vocabulary size: {sizes}")
        return sizes.pop()

    def split(self, name: str) -> list[EventSequence]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return [s for s in self.sequences if self.splits.get(s.seq_id) == name]


def split_dataset(
    ds: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0
) -> Dataset:
    """Assign sequences to train/val/test splits, deterministically in the seed.

    The split is sequence-level: each sequence lands in exactly one split.
    Counts follow the largest-remainder rule so they match the fractions as
    closely as possible.
    """
    if len(fractions) != 3:
        raise ValueError("expected three split fractions (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValueError("split fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n = len(ds.sequences)
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[remainders[i % 3]] += 1
    for frac, count in zip(fractions, counts):
        if frac > 0 and count == 0:
            raise ValueError(
                f"{n} sequences are too few to satisfy split fractions {tuple(fractions)}"
            )
    order = np.random.default_rng(seed).permutation(n)
    labels: dict[str, str] = {}
    pos = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for i in order[pos : pos + count]:
            labels[ds.sequences[i].seq_id] = name
        pos += count
    return Dataset(ds.sequences, labels)


def _sequence_from_record(record: dict, lineno: int, default_id: str) -> EventSequence:
    events = []
    for item in record.get("events", []):
        try:
            t = float(item["t"])
            type_id = int(item["type"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: malformed event record: {item!r}") from exc
        events.append(Event(t=t, type_id=type_id, mark=item.get("mark")))
    max_t = max((e.t for e in events), default=0.0)
    horizon = float(record.get("T", max_t))
    num_types = int(record.get("U", max((e.type_id for e in events), default=-1) + 1))
    if num_types < 1:
        num_types = 1
    return EventSequence(
        events=tuple(events),
        num_types=num_types,
        horizon=horizon if horizon > 0 else max(max_t, 1.0),
        seq_id=str(record.get("seq_id", default_id)),
    )


def _load_jsonl(path: str) -> list[EventSequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON: {exc}") from exc
            sequences.append(_sequence_from_record(record, lineno, f"seq{lineno - 1}"))
    return sequences


def _load_csv(path: str) -> list[EventSequence]:
    meta: dict = {}
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    rows: dict[str, list[Event]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"seq_id", "t", "type"} <= set(reader.fieldnames):
            raise ParseError("line 1: CSV header must contain seq_id,t,type")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = float(row["t"])
                type_id = int(row["type"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: malformed CSV row: {row!r}") from exc
            rows.setdefault(row["seq_id"], []).append(Event(t=t, type_id=type_id))
    num_types = meta.get("U")
    horizons = meta.get("T")
    sequences = []
    for seq_id in sorted(rows):
        events = rows[seq_id]
        max_t = max(e.t for e in events)
        if isinstance(horizons, dict):
            horizon = float(horizons.get(seq_id, max_t))
        else:
            horizon = float(horizons) if horizons is not None else max_t
        u = int(num_types) if num_types is not None else max(e.type_id for e in events) + 1
        sequences.append(
            EventSequence(tuple(events), num_types=u, horizon=horizon, seq_id=seq_id)
        )
    return sequences


def load_sequences(path: str, format: str | None = None) -> Dataset:
    """Load a dataset from JSONL (canonical) or CSV.

    JSONL schema, one object per line::

        {"seq_id": "a", "U": 2, "T": 10.0,
         "events": [{"t": 0.5, "type": 0, "mark": null}, ...]}

    ``T`` defaults to the max timestamp, ``U`` to ``max(type)+1``.  CSV files
    need a ``seq_id,t,type`` header; an optional sidecar ``<path>.meta.json``
    may supply ``U`` and per-sequence or global ``T``.
    """
    if format is None:
        format = "csv" if path.endswith(".csv") else "jsonl"
    if format == "jsonl":
        sequences = _load_jsonl(path)
    elif format == "csv":
        sequences = _load_csv(path)
    else:
        raise ValueError(f"unknown format {format!r}; expected 'jsonl' or 'csv'")
    ds = Dataset(sequences)
    ds.num_types  # trigger vocabulary consistency check
    return ds


def save_sequences(sequences: Iterable[EventSequence], path: str) -> None:
    """Write sequences as canonical JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            record = {
                "seq_id": seq.seq_id,
                "U": seq.num_types,
                "T": seq.horizon,
                "events": [
                    {"t": e.t, "type": e.type_id}
                    | ({"mark": e.mark} if e.mark is not None else {})
                    for e in seq.events
                ],
            }
            fh.write(json.dumps(record) + "\n")


def log_gap_stats(sequences: Iterable[EventSequence]) -> tuple[float, float]:
    """Mean and standard deviation of log inter-event times across sequences.

    Used to standardize the log-gap input feature; the std is floored at a
    small positive value so constant-gap corpora remain usable.
    """
    logs: list[np.ndarray] = []
    for seq in sequences:
        for tau in type_view(seq).inter_event_times:
            if len(tau):
                logs.append(np.log(tau))
    if not logs:
        return 0.0, 1.0
    allv = np.concatenate(logs)
    return float(allv.mean()), float(max(allv.std(), 1e-6))
