"""Synthetic SSO login streams with controllable per-actor behavior.

Each actor gets a deterministic profile (home location, daily rates, active
hours, app repertoire) derived from a corpus seed and the actor id. Daily
login counts are Poisson with a weekday rate and a lower weekend rate;
within a day, arrival gaps are exponential inside the actor's active-hour
window. Locations scatter isotropically around the home coordinate, so at
geohash precision 3 an actor occupies a handful of neighboring cells.

Output records use the same raw JSON shape the ingestion stage parses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable

import numpy as np

from loginwatch.events import ENTRY_EVENT_TYPES
from loginwatch.geo import displace

KM_PER_MILE = 1.609344
DEFAULT_JITTER_KM = 30.0
DEFAULT_START_DATE = date(2023, 1, 2)

APP_POOL = tuple(
    f"app-{name}"
    for name in (
        "mail", "wiki", "chat", "vpn", "crm", "hr", "pay", "docs", "code",
        "build", "deploy", "tickets", "boards", "drive", "notes", "books",
        "travel", "expense", "people", "status", "metrics", "logs", "search",
        "design", "video", "calendar", "forms", "survey", "assets", "training",
    )
)
OS_POOL = ("Mac OS X", "Windows 10", "Linux", "iOS", "Android")
DEVICE_POOL = ("Computer", "Mobile", "Tablet")
_ENTRY_TYPES = tuple(sorted(ENTRY_EVENT_TYPES))


@dataclass(frozen=True)
class ActorProfile:
    """Deterministic behavioral parameters for one synthetic actor."""

    actor_id: str
    home_latitude: float
    home_longitude: float
    location_jitter_km: float
    weekday_rate: float
    weekend_rate: float
    active_hours: frozenset[int]  # event-hour levels, 1..24
    app_ids: tuple[str, ...]
    app_probs: tuple[float, ...]
    failure_rate: float
    rng_seed: int

    def __post_init__(self):
        if self.weekend_rate > self.weekday_rate:
            raise ValueError("weekend_rate must be <= weekday_rate")
        if not self.active_hours or not all(1 <= h <= 24 for h in self.active_hours):
            raise ValueError("active_hours must be a non-empty subset of 1..24")
        if len(self.app_ids) != len(self.app_probs):
            raise ValueError("app_ids and app_probs lengths differ")
        if abs(sum(self.app_probs) - 1.0) > 1e-9:
            raise ValueError(f"app_probs sum to {sum(self.app_probs)}, not 1")
        if not 0.0 <= self.failure_rate < 1.0:
            raise ValueError(f"failure_rate out of range: {self.failure_rate}")


def _stable_digest(seed: int, actor_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{actor_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def generate_actor_profile(
    seed: int, actor_id: str, location_jitter_km: float = DEFAULT_JITTER_KM
) -> ActorProfile:
    """Derive an actor's profile deterministically from (seed, actor_id)."""
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, _stable_digest(seed, actor_id)])
    )
    weekday_rate = float(rng.uniform(15.0, 25.0))
    weekend_rate = weekday_rate * float(rng.uniform(0.1, 0.4))

    start_hour = int(rng.integers(8, 11))
    length = int(rng.integers(8, 13))
    active_hours = frozenset(range(start_hour, start_hour + length))

    n_apps = int(rng.integers(3, 11))
    app_ids = tuple(sorted(rng.choice(APP_POOL, size=n_apps, replace=False)))
    dominant = int(rng.integers(1, min(4, n_apps)))
    dominant_share = float(rng.uniform(0.7, 0.9))
    raw_head = rng.uniform(0.5, 1.0, size=dominant)
    raw_tail = rng.uniform(0.5, 1.0, size=n_apps - dominant)
    head = raw_head / raw_head.sum() * dominant_share
    tail = raw_tail / raw_tail.sum() * (1.0 - dominant_share)
    probs = np.concatenate([head, tail])
    probs = probs / probs.sum()

    return ActorProfile(
        actor_id=actor_id,
        home_latitude=float(rng.uniform(25.0, 55.0)),
        home_longitude=float(rng.uniform(-125.0, -70.0)),
        location_jitter_km=location_jitter_km,
        weekday_rate=weekday_rate,
        weekend_rate=weekend_rate,
        active_hours=active_hours,
        app_ids=app_ids,
        app_probs=tuple(float(p) for p in probs),
        failure_rate=float(rng.uniform(0.01, 0.08)),
        rng_seed=int(rng.integers(0, 2**63)),
    )


def _jitter_location(
    rng: np.random.Generator, latitude: float, longitude: float, jitter_km: float
) -> tuple[float, float]:
    # Uniform over a disk of radius jitter_km around home.
    radius_km = jitter_km * float(np.sqrt(rng.random()))
    bearing = float(rng.uniform(0.0, 360.0))
    return displace(latitude, longitude, radius_km / KM_PER_MILE, bearing)


def generate_logins(
    profile: ActorProfile, start_date: date = DEFAULT_START_DATE, days: int = 90
) -> list[dict]:
    """Generate one actor's raw login records over a span of days.

    Returns records in chronological order, each shaped like a raw system
    log entry (``actor.id``, ``eventType``, ``published``, ``outcome.result``,
    ``client`` with geolocation, ``target`` with the app instance). Repeated
    calls with the same profile produce identical output.
    """
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    rng = np.random.default_rng(np.random.SeedSequence([profile.rng_seed]))

    os_count = int(rng.integers(1, 3))
    os_choices = list(rng.choice(OS_POOL, size=os_count, replace=False))
    device_count = int(rng.integers(1, 3))
    device_choices = list(rng.choice(DEVICE_POOL, size=device_count, replace=False))

    window_hours = sorted(profile.active_hours)
    window_start = (window_hours[0] - 1) * 3600
    window_end = window_hours[-1] * 3600 - 1  # last second of the last hour
    window_span = float(window_end - window_start)

    records: list[dict] = []
    for offset in range(days):
        day = start_date + timedelta(days=offset)
        weekend = day.weekday() >= 5  # Saturday, Sunday
        rate = profile.weekend_rate if weekend else profile.weekday_rate
        count = int(rng.poisson(rate))
        if count == 0:
            continue
        gaps = rng.exponential(scale=window_span / (count + 1), size=count)
        arrivals = np.minimum(window_start + np.cumsum(gaps), window_end)
        for second in arrivals:
            moment = datetime(
                day.year, day.month, day.day, tzinfo=timezone.utc
            ) + timedelta(seconds=int(second))
            lat, lon = _jitter_location(
                rng, profile.home_latitude, profile.home_longitude,
                profile.location_jitter_km,
            )
            app_id = profile.app_ids[
                int(rng.choice(len(profile.app_ids), p=profile.app_probs))
            ]
            failed = bool(rng.random() < profile.failure_rate)
            records.append(
                {
                    "actor": {"id": profile.actor_id, "type": "User"},
                    "eventType": _ENTRY_TYPES[int(rng.integers(0, len(_ENTRY_TYPES)))],
                    "published": moment.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    "outcome": {"result": "FAILURE" if failed else "SUCCESS"},
                    "client": {
                        "userAgent": {
                            "os": os_choices[int(rng.integers(0, len(os_choices)))]
                        },
                        "device": device_choices[
                            int(rng.integers(0, len(device_choices)))
                        ],
                        "geographicalContext": {
                            "geolocation": {
                                "lat": round(lat, 6),
                                "lon": round(lon, 6),
                            }
                        },
                    },
                    "target": [{"id": app_id, "type": "AppInstance"}],
                }
            )
    return records


def generate_corpus(
    actor_count: int,
    days: int,
    seed: int,
    start_date: date = DEFAULT_START_DATE,
    location_jitter_km: float = DEFAULT_JITTER_KM,
) -> list[dict]:
    """Generate a multi-actor corpus, merged and sorted by timestamp."""
    if actor_count < 1:
        raise ValueError(f"actor_count must be >= 1, got {actor_count}")
    records: list[dict] = []
    for i in range(1, actor_count + 1):
        profile = generate_actor_profile(seed, f"u{i:03d}", location_jitter_km)
        records.extend(generate_logins(profile, start_date, days))
    records.sort(key=lambda r: (r["published"], r["actor"]["id"]))
    return records


def write_jsonl(records: Iterable[dict], path: Path | str) -> int:
    """Write raw records as JSONL with stable key order. Returns the count."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    return count
