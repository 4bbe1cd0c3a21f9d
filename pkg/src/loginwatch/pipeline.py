"""End-to-end training and scoring workflows.

Training, per actor: filter the stream, split train/validation by time
order, learn vocabularies and the app superset from the training side only,
bootstrap-sample the training side, fit the autoencoder, inject labelled
anomalies into the validation side, sweep the threshold multiplier, and
persist the model with its encoder state and metrics.

Scoring: load each actor's newest model, re-encode live events with the
stored vocabularies, and report per-event losses and classifications.
Actors whose stored model is flagged NEEDS_RETRAIN are retrained first when
enough new events arrived.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from loginwatch.apps import (
    DEFAULT_SUPERSET_THRESHOLD,
    DEFAULT_Z,
    build_superset,
    login_frequencies,
)
from loginwatch.detect import (
    DetectionReport,
    LossStats,
    SweepResult,
    score_events,
    sweep_threshold,
)
from loginwatch.encoding import (
    DEFAULT_GEOHASH_PRECISION,
    EncodedEvent,
    Label,
    TimeMode,
    build_event_indices,
    encode_event,
    feature_sizes,
    observed_hours,
)
from loginwatch.events import FilterMode, LogEvent, filter_entry_events
from loginwatch.inject import InjectionKind, InjectionSpec, inject
from loginwatch.model import TrainConfig, TrainingDivergedError, train
from loginwatch.registry import (
    EncoderState,
    EntryStatus,
    ModelRegistry,
    RegistryEntry,
    RegistryNotFoundError,
)

logger = logging.getLogger(__name__)

DEFAULT_MIN_EVENTS = 200
DEFAULT_TRAIN_SPLIT = 0.8
DEFAULT_RETRAIN_F1_FLOOR = 0.7
DEFAULT_SAMPLE_FRACTION = 0.1
DEFAULT_SAMPLE_REPETITIONS = 10


class WorkflowError(RuntimeError):
    """The workflow cannot proceed (for example, no eligible actors)."""


@dataclass
class PipelineConfig:
    """Knobs for the train and score workflows."""

    registry_dir: str = "registry"
    filter_mode: FilterMode = FilterMode.SIGN_ON
    time_mode: TimeMode = TimeMode.RAW
    geohash_precision: int = DEFAULT_GEOHASH_PRECISION
    wilson_z: float = DEFAULT_Z
    superset_threshold: float = DEFAULT_SUPERSET_THRESHOLD
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION
    sample_repetitions: int = DEFAULT_SAMPLE_REPETITIONS
    min_events: int = DEFAULT_MIN_EVENTS
    train_split: float = DEFAULT_TRAIN_SPLIT
    retrain_f1_floor: float = DEFAULT_RETRAIN_F1_FLOOR
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    injections: list[InjectionSpec] = field(
        default_factory=lambda: [InjectionSpec(kind=InjectionKind.LOCATION)]
    )

    def __post_init__(self):
        self.filter_mode = FilterMode(self.filter_mode)
        self.time_mode = TimeMode(self.time_mode)
        if self.geohash_precision < 1:
            raise ValueError("geohash_precision must be >= 1")
        if not 0.0 < self.train_split < 1.0:
            raise ValueError("train_split must be in (0, 1)")
        if not 0.0 <= self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must be in [0, 1]")
        if self.sample_repetitions < 1:
            raise ValueError("sample_repetitions must be >= 1")
        if self.min_events < 2:
            raise ValueError("min_events must be >= 2")
        if not self.injections:
            raise ValueError("at least one injection spec is required")

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "train" in kwargs and isinstance(kwargs["train"], Mapping):
            kwargs["train"] = TrainConfig(**kwargs["train"])
        if "injections" in kwargs:
            kwargs["injections"] = [
                spec if isinstance(spec, InjectionSpec) else InjectionSpec(**spec)
                for spec in kwargs["injections"]
            ]
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "registry_dir": self.registry_dir,
            "filter_mode": self.filter_mode.value,
            "time_mode": self.time_mode.value,
            "geohash_precision": self.geohash_precision,
            "wilson_z": self.wilson_z,
            "superset_threshold": self.superset_threshold,
            "sample_fraction": self.sample_fraction,
            "sample_repetitions": self.sample_repetitions,
            "min_events": self.min_events,
            "train_split": self.train_split,
            "retrain_f1_floor": self.retrain_f1_floor,
            "seed": self.seed,
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "hidden_dim": self.train.hidden_dim,
                "code_dim": self.train.code_dim,
                "seed": self.train.seed,
                "loss_mode": self.train.loss_mode.value,
                "feature_weights": dict(self.train.feature_weights),
            },
            "injections": [
                {
                    "kind": spec.kind.value,
                    "fraction": spec.fraction,
                    "distance_miles": spec.distance_miles,
                    "seed": spec.seed,
                }
                for spec in self.injections
            ],
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def stratified_sample(
    events: Sequence[LogEvent], fraction: float, repetitions: int, seed: int
) -> list[LogEvent]:
    """Bootstrap a training set by repeated per-actor Bernoulli sampling.

    Each repetition walks every actor's events (actors in sorted order,
    events in input order) and keeps each event independently with
    probability ``fraction``; the repetitions are concatenated, so events
    can appear multiple times. Expected output size is
    ``fraction * repetitions * len(events)``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    by_actor: dict[str, list[LogEvent]] = {}
    for event in events:
        by_actor.setdefault(event.actor_id, []).append(event)

    rng = np.random.default_rng(seed)
    sample: list[LogEvent] = []
    for _ in range(repetitions):
        for actor_id in sorted(by_actor):
            group = by_actor[actor_id]
            mask = rng.random(len(group)) < fraction
            sample.extend(event for event, keep in zip(group, mask) if keep)
    return sample


def _actor_seed(base_seed: int, actor_id: str, stream: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{actor_id}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _group_by_actor(events: Sequence[LogEvent]) -> dict[str, list[LogEvent]]:
    groups: dict[str, list[LogEvent]] = {}
    for event in events:
        groups.setdefault(event.actor_id, []).append(event)
    return groups


def _dataset_hash(events: Sequence[LogEvent]) -> str:
    digest = hashlib.sha256()
    for event in events:
        digest.update(event.to_json_line().encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


@dataclass
class ActorTrainReport:
    """Per-actor outcome of the train workflow."""

    actor_id: str
    entry: RegistryEntry | None
    skipped_reason: str | None = None

    @property
    def trained(self) -> bool:
        return self.entry is not None


@dataclass
class TrainWorkflowResult:
    reports: list[ActorTrainReport]
    config: PipelineConfig

    @property
    def entries(self) -> list[RegistryEntry]:
        return [r.entry for r in self.reports if r.entry is not None]

    def to_summary(self) -> dict:
        """Deterministic summary of the run (no wall-clock fields)."""
        actors = {}
        skipped = {}
        for report in self.reports:
            if report.entry is None:
                skipped[report.actor_id] = report.skipped_reason
                continue
            entry = report.entry
            model = entry.model
            actors[report.actor_id] = {
                "status": entry.status.value,
                "best_f1": entry.metrics["best_f1"],
                "best_n": entry.metrics["best_n"],
                "confusion": entry.metrics["confusion"],
                "train_size": entry.metrics["train_size"],
                "sample_size": entry.metrics["sample_size"],
                "val_size": entry.metrics["val_size"],
                "train_mu": model.train_mu,
                "train_sigma": model.train_sigma,
                "per_kind": {
                    kind: {
                        "best_f1": result["best_f1"],
                        "best_n": result["best_n"],
                        "confusion": result["confusion"],
                    }
                    for kind, result in entry.metrics["per_kind"].items()
                },
            }
        return {
            "config_hash": self.config.config_hash(),
            "actors": actors,
            "skipped": skipped,
        }

    def to_summary_json(self) -> str:
        return json.dumps(self.to_summary(), sort_keys=True, indent=2)


def _encode_actor_events(
    events: Sequence[LogEvent],
    labels: Sequence[Label] | None,
    encoder: EncoderState,
) -> list[EncodedEvent]:
    encoded = []
    for position, event in enumerate(events):
        encoded.append(
            encode_event(
                event,
                encoder.superset.known_app(event.actor_id, event.app_id),
                encoder.indices,
                precision=encoder.geohash_precision,
                time_mode=encoder.time_mode,
                active_hours=encoder.active_hours,
                label=Label.NORMAL if labels is None else labels[position],
            )
        )
    return encoded


def _train_single_actor(
    actor_id: str,
    actor_events: Sequence[LogEvent],
    config: PipelineConfig,
) -> tuple[RegistryEntry | None, str | None]:
    """Run the whole per-actor pipeline; returns (entry, skip_reason)."""
    count = len(actor_events)
    if count < config.min_events:
        return None, f"only {count} events, need {config.min_events}"

    ordered = sorted(
        range(count), key=lambda i: (actor_events[i].timestamp, i)
    )
    events = [actor_events[i] for i in ordered]
    split_at = int(count * config.train_split)
    train_part, val_part = events[:split_at], events[split_at:]
    if not train_part or not val_part:
        return None, "time split produced an empty partition"

    indices = build_event_indices(train_part, config.geohash_precision)
    active_hours = observed_hours(train_part)
    superset = build_superset(
        login_frequencies(train_part, config.wilson_z), config.superset_threshold
    )
    encoder = EncoderState(
        geohash_precision=config.geohash_precision,
        time_mode=config.time_mode,
        active_hours=active_hours,
        indices=indices,
        superset=superset,
    )

    sample = stratified_sample(
        train_part,
        config.sample_fraction,
        config.sample_repetitions,
        _actor_seed(config.seed, actor_id, "sample"),
    )
    if not sample:
        return None, "bootstrap sample came back empty"

    encoded_sample = _encode_actor_events(sample, None, encoder)
    sizes = feature_sizes(indices, config.time_mode)
    train_config = dataclasses.replace(
        config.train, seed=_actor_seed(config.seed, actor_id, "train")
    )
    try:
        model = train(encoded_sample, train_config, sizes)
    except TrainingDivergedError as exc:
        logger.warning("training diverged for %s: %s", actor_id, exc)
        return None, f"training diverged: {exc}"

    stats = LossStats(mu=model.train_mu, sigma=model.train_sigma, count=len(sample))
    per_kind: dict[str, SweepResult] = {}
    for spec in config.injections:
        seeded = dataclasses.replace(
            spec, seed=_actor_seed(config.seed, actor_id, f"inject:{spec.kind.value}")
        )
        mutated, labels = inject(val_part, seeded)
        encoded_val = _encode_actor_events(mutated, labels, encoder)
        losses = model.losses(encoded_val)
        scored = [
            (float(loss), encoded.label)
            for loss, encoded in zip(losses, encoded_val)
        ]
        per_kind[spec.kind.value] = sweep_threshold(scored, stats)

    primary = per_kind[config.injections[0].kind.value]
    model.chosen_n = primary.best_n
    status = (
        EntryStatus.ACTIVE
        if primary.best_f1 >= config.retrain_f1_floor
        else EntryStatus.NEEDS_RETRAIN
    )
    metrics = {
        "best_f1": primary.best_f1,
        "best_n": primary.best_n,
        "confusion": primary.confusion.to_dict(),
        "f1_curve": list(primary.f1_curve),
        "per_kind": {kind: result.to_dict() for kind, result in per_kind.items()},
        "train_size": len(train_part),
        "sample_size": len(sample),
        "val_size": len(val_part),
    }
    metadata = {
        "dataset_hash": _dataset_hash(train_part),
        "config_hash": config.config_hash(),
        "epoch_losses": list(model.epoch_losses),
    }
    entry = RegistryEntry(
        actor_id=actor_id,
        model=model,
        encoder=encoder,
        status=status,
        metrics=metrics,
        metadata=metadata,
    )
    return entry, None


def run_train_workflow(
    events: Sequence[LogEvent],
    config: PipelineConfig,
    registry: ModelRegistry | None = None,
) -> TrainWorkflowResult:
    """Train and persist per-actor models over a raw event stream.

    Actors below the minimum event floor are skipped with a warning. When
    ``registry`` is given every trained entry is saved to it.

    Raises:
        WorkflowError: the filtered stream contains no actors at all.
    """
    filtered = filter_entry_events(events, config.filter_mode)
    groups = _group_by_actor(filtered)
    if not groups:
        raise WorkflowError("no events left after filtering")

    reports: list[ActorTrainReport] = []
    for actor_id in sorted(groups):
        entry, reason = _train_single_actor(actor_id, groups[actor_id], config)
        if entry is None:
            logger.warning("skipping actor %s: %s", actor_id, reason)
            reports.append(ActorTrainReport(actor_id, None, reason))
            continue
        if registry is not None:
            registry.save(entry)
        reports.append(ActorTrainReport(actor_id, entry))
    if not any(report.trained for report in reports):
        logger.warning("train workflow produced no models")
    return TrainWorkflowResult(reports=reports, config=config)


@dataclass
class ScoreWorkflowResult:
    reports: dict[str, DetectionReport]
    unscorable: list[str]
    retrained: list[str]

    def to_summary(self) -> dict:
        return {
            "actors": {
                actor_id: {
                    "event_count": len(report.records),
                    "anomaly_count": report.anomaly_count,
                    "anomaly_rate": report.anomaly_rate,
                    "threshold_n": report.threshold_n,
                }
                for actor_id, report in sorted(self.reports.items())
            },
            "unscorable": sorted(self.unscorable),
            "retrained": sorted(self.retrained),
        }

    def to_summary_json(self) -> str:
        return json.dumps(self.to_summary(), sort_keys=True, indent=2)


def run_score_workflow(
    events: Sequence[LogEvent],
    config: PipelineConfig,
    registry: ModelRegistry,
) -> ScoreWorkflowResult:
    """Score a live stream against stored per-actor models.

    Actors without a stored model are reported as unscorable. A stored model
    flagged NEEDS_RETRAIN is retrained on the actor's new events first,
    provided enough of them arrived; otherwise the stale model still scores.
    """
    filtered = filter_entry_events(events, config.filter_mode)
    groups = _group_by_actor(filtered)
    if not groups:
        raise WorkflowError("no events left after filtering")

    reports: dict[str, DetectionReport] = {}
    unscorable: list[str] = []
    retrained: list[str] = []
    for actor_id in sorted(groups):
        actor_events = groups[actor_id]
        try:
            entry = registry.load(actor_id)
        except RegistryNotFoundError:
            unscorable.append(actor_id)
            continue

        if (
            entry.status is EntryStatus.NEEDS_RETRAIN
            and len(actor_events) >= config.min_events
        ):
            fresh, reason = _train_single_actor(actor_id, actor_events, config)
            if fresh is not None:
                registry.save(fresh)
                entry = fresh
                retrained.append(actor_id)
            else:
                logger.warning(
                    "retrain of %s failed (%s); scoring with stored model",
                    actor_id,
                    reason,
                )

        encoded = _encode_actor_events(actor_events, None, entry.encoder)
        reports[actor_id] = score_events(entry.model, encoded)
    return ScoreWorkflowResult(
        reports=reports, unscorable=unscorable, retrained=retrained
    )
