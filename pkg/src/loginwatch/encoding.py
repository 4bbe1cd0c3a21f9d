"""Categorical encoding of login events for the autoencoder.

String-valued features are mapped through per-feature lookup tables whose
indices start at 1; index 0 is reserved for values never seen when the table
was built. Time features pass through as their own level numbers (hour 1..24,
weekday 1..7 with Sunday = 1), and the unknown-app indicator passes through
as 0/1. Each feature later owns an embedding matrix of (levels + 1) rows so
index 0 always resolves to a trainable out-of-vocabulary row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from loginwatch.events import LogEvent, TimeFeatures, derive_time_features
from loginwatch.geo import geohash_encode

# Embedding width never exceeds this, however large the vocabulary.
MAX_EMBEDDING_DIM = 50

# Order in which the model consumes features; fixed so weight layouts are stable.
FEATURE_ORDER = (
    "geohash",
    "app_id",
    "known_app",
    "outcome",
    "event_hour",
    "weekday",
    "client_os",
    "client_device",
)

# Features whose integer value is its own embedding index (no string table).
PASSTHROUGH_FEATURES = ("known_app", "event_hour", "weekday")

DEFAULT_GEOHASH_PRECISION = 3


class TimeMode(str, Enum):
    """Granularity of the two time features.

    RAW keeps hour 1..24 and weekday 1..7 as distinct levels. COARSE folds
    them to binary: weekday-vs-weekend (1 = weekday) and whether the hour
    falls inside the actor's observed active hours (1 = in distribution).
    """

    RAW = "RAW"
    COARSE = "COARSE"


class Label(str, Enum):
    """Ground-truth marker carried by validation events."""

    NORMAL = "NORMAL"
    INJECTED = "INJECTED"


@dataclass(frozen=True)
class StringIndex:
    """Deterministic value-to-index table for one feature.

    Distinct values sort by their UTF-8 byte order and take indices 1..m.
    Unseen values map to 0.
    """

    feature_name: str
    values: tuple[str, ...]
    _lookup: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self._lookup.update({value: i + 1 for i, value in enumerate(self.values)})

    @property
    def size(self) -> int:
        """Number of known levels (excludes the OOV index 0)."""
        return len(self.values)

    def index_of(self, value: str) -> int:
        return self._lookup.get(value, 0)

    def value_of(self, index: int) -> str:
        if not 1 <= index <= self.size:
            raise ValueError(f"index {index} outside [1, {self.size}]")
        return self.values[index - 1]


def build_index(values: Iterable[str], feature_name: str) -> StringIndex:
    """Build a StringIndex over the distinct values of a training column."""
    distinct = sorted(set(values), key=lambda v: v.encode("utf-8"))
    return StringIndex(feature_name=feature_name, values=tuple(distinct))


def embedding_dim(vocab_size: int) -> int:
    """Embedding width for a vocabulary of ``vocab_size`` levels.

    floor(m / 2) + 1, capped at 50. Strictly below m for every m >= 3.
    """
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    return min(vocab_size // 2 + 1, MAX_EMBEDDING_DIM)


@dataclass
class EmbeddingMatrix:
    """Trainable embedding table for one feature.

    ``weights`` has m + 1 rows: row 0 is the out-of-vocabulary row, rows
    1..m belong to known levels. The OOV row trains like any other if index
    0 ever appears in the data.
    """

    feature_name: str
    m: int
    dim: int
    weights: np.ndarray

    def __post_init__(self):
        expected = (self.m + 1, self.dim)
        if self.weights.shape != expected:
            raise ValueError(
                f"{self.feature_name}: weights shape {self.weights.shape} != {expected}"
            )


def init_embedding(vocab_size: int, dim: int, seed: int, feature_name: str = "") -> EmbeddingMatrix:
    """Create an embedding matrix with entries i.i.d. uniform in [-0.05, 0.05]."""
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-0.05, 0.05, size=(vocab_size + 1, dim))
    return EmbeddingMatrix(feature_name=feature_name, m=vocab_size, dim=dim, weights=weights)


def embed_lookup(matrix: EmbeddingMatrix, index: int) -> np.ndarray:
    """Row of the embedding for ``index``; 0 selects the OOV row.

    Raises:
        ValueError: index outside [0, m].
    """
    if not 0 <= index <= matrix.m:
        raise ValueError(
            f"{matrix.feature_name}: index {index} outside [0, {matrix.m}]"
        )
    return matrix.weights[index]


@dataclass(frozen=True)
class EncodedEvent:
    """Integer feature vector for one event, ready for embedding lookups."""

    actor_id: str
    geohash: int
    app_id: int
    known_app: int
    outcome: int
    event_hour: int
    weekday: int
    client_os: int
    client_device: int
    label: Label = Label.NORMAL

    def feature_indices(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in FEATURE_ORDER)


def geohash_value(event: LogEvent, precision: int) -> str:
    """Geohash level for an event; empty string marks a missing location."""
    if not event.has_location:
        return ""
    return geohash_encode(event.latitude, event.longitude, precision)


def encode_event(
    event: LogEvent,
    known_app: int,
    indices: Mapping[str, StringIndex],
    *,
    precision: int = DEFAULT_GEOHASH_PRECISION,
    time_mode: TimeMode = TimeMode.RAW,
    active_hours: frozenset[int] | set[int] | None = None,
    label: Label = Label.NORMAL,
) -> EncodedEvent:
    """Map one event to its per-feature indices.

    String features (geohash cell, app id, outcome, client os, client device)
    go through ``indices``; values unseen at table-build time land on 0. Time
    features pass through per ``time_mode``; COARSE requires ``active_hours``.

    Args:
        event: the flattened event.
        known_app: unknown-app indicator for (actor, app), 0 or 1.
        indices: StringIndex per string feature name.
        precision: geohash characters for the location feature.
        time_mode: RAW or COARSE time granularity.
        active_hours: the actor's observed hour set; required for COARSE.
        label: ground-truth marker to carry along.
    """
    if known_app not in (0, 1):
        raise ValueError(f"known_app must be 0 or 1, got {known_app}")
    time_features = derive_time_features(event.timestamp, active_hours)
    if time_mode is TimeMode.COARSE:
        if time_features.coarse_hour_flag is None:
            raise ValueError("COARSE time mode requires active_hours")
        hour_value = int(time_features.coarse_hour_flag)
        weekday_value = 0 if time_features.is_weekend else 1
    else:
        hour_value = time_features.event_hour
        weekday_value = time_features.weekday

    return EncodedEvent(
        actor_id=event.actor_id,
        geohash=indices["geohash"].index_of(geohash_value(event, precision)),
        app_id=indices["app_id"].index_of(event.app_id),
        known_app=known_app,
        outcome=indices["outcome"].index_of(event.outcome.value),
        event_hour=hour_value,
        weekday=weekday_value,
        client_os=indices["client_os"].index_of(event.client_os),
        client_device=indices["client_device"].index_of(event.client_device),
        label=label,
    )


def feature_sizes(
    indices: Mapping[str, StringIndex], time_mode: TimeMode = TimeMode.RAW
) -> dict[str, int]:
    """Largest valid index per feature, in model feature order.

    String features report their table size; passthrough features report the
    top of their fixed ranges (hour 24, weekday 7, indicator 1), or 1 for the
    binary COARSE forms.
    """
    coarse = time_mode is TimeMode.COARSE
    return {
        "geohash": indices["geohash"].size,
        "app_id": indices["app_id"].size,
        "known_app": 1,
        "outcome": indices["outcome"].size,
        "event_hour": 1 if coarse else 24,
        "weekday": 1 if coarse else 7,
        "client_os": indices["client_os"].size,
        "client_device": indices["client_device"].size,
    }


STRING_FEATURES = ("geohash", "app_id", "outcome", "client_os", "client_device")


def build_event_indices(
    events: Iterable[LogEvent], precision: int = DEFAULT_GEOHASH_PRECISION
) -> dict[str, StringIndex]:
    """Build every string-feature index table from a training stream."""
    events = list(events)
    columns: dict[str, list[str]] = {
        "geohash": [geohash_value(e, precision) for e in events],
        "app_id": [e.app_id for e in events],
        "outcome": [e.outcome.value for e in events],
        "client_os": [e.client_os for e in events],
        "client_device": [e.client_device for e in events],
    }
    return {name: build_index(values, name) for name, values in columns.items()}


def observed_hours(events: Iterable[LogEvent]) -> frozenset[int]:
    """Set of 1..24 hour levels appearing in a stream."""
    return frozenset(derive_time_features(e.timestamp).event_hour for e in events)
