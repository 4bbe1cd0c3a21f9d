"""Anomaly thresholding and evaluation.

An event is anomalous when its reconstruction loss exceeds mu + n * sigma,
where mu and sigma summarize the model's training losses and n is chosen by
sweeping a fixed grid and keeping the best F1 against injected ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from loginwatch.encoding import EncodedEvent, Label
from loginwatch.model import Autoencoder

# n runs 0.0 .. 10.0 in steps of 0.1, inclusive.
SWEEP_GRID = tuple(i / 10 for i in range(101))


class Classification(str, Enum):
    NORMAL = "NORMAL"
    ANOMALY = "ANOMALY"


class UndefinedMetricError(ValueError):
    """F1 requested for an empty confusion (tp = fp = fn = 0)."""


class DegenerateValidationError(ValueError):
    """The sweep needs at least one injected and one normal event."""


@dataclass(frozen=True)
class LossStats:
    """Mean and population standard deviation of a loss sample."""

    mu: float
    sigma: float
    count: int


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class SweepResult:
    """Outcome of the threshold sweep on one validation set."""

    best_n: float
    best_f1: float
    confusion: Confusion
    f1_curve: tuple[float, ...]  # one value per grid point

    def to_dict(self) -> dict:
        return {
            "best_n": self.best_n,
            "best_f1": self.best_f1,
            "confusion": self.confusion.to_dict(),
            "f1_curve": list(self.f1_curve),
        }


@dataclass(frozen=True)
class ScoredEvent:
    """One scored event in a report, identified by its input position."""

    position: int
    actor_id: str
    loss: float
    classification: Classification
    label: Label | None = None


@dataclass
class DetectionReport:
    """Scoring output for one actor's event batch."""

    actor_id: str
    threshold_n: float
    mu: float
    sigma: float
    records: list[ScoredEvent] = field(default_factory=list)

    @property
    def anomaly_count(self) -> int:
        return sum(
            1 for r in self.records if r.classification is Classification.ANOMALY
        )

    @property
    def anomaly_rate(self) -> float:
        return self.anomaly_count / len(self.records) if self.records else 0.0

    def confusion(self) -> Confusion | None:
        """Confusion against labels, when every record carries one."""
        if not self.records or any(r.label is None for r in self.records):
            return None
        tp = fp = fn = tn = 0
        for r in self.records:
            flagged = r.classification is Classification.ANOMALY
            injected = r.label is Label.INJECTED
            if flagged and injected:
                tp += 1
            elif flagged:
                fp += 1
            elif injected:
                fn += 1
            else:
                tn += 1
        return Confusion(tp=tp, fp=fp, fn=fn, tn=tn)

    def to_dict(self) -> dict:
        confusion = self.confusion()
        out = {
            "actor_id": self.actor_id,
            "threshold_n": self.threshold_n,
            "mu": self.mu,
            "sigma": self.sigma,
            "event_count": len(self.records),
            "anomaly_count": self.anomaly_count,
            "anomaly_rate": self.anomaly_rate,
            "records": [
                {
                    "position": r.position,
                    "actor_id": r.actor_id,
                    "loss": r.loss,
                    "classification": r.classification.value,
                    "label": r.label.value if r.label is not None else None,
                }
                for r in self.records
            ],
        }
        if confusion is not None:
            out["confusion"] = confusion.to_dict()
            try:
                out["f1"] = f1_score(confusion.tp, confusion.fp, confusion.fn)
            except UndefinedMetricError:
                out["f1"] = None
        return out


def loss_stats(losses: Sequence[float]) -> LossStats:
    """Mean and population (1/N) standard deviation of training losses."""
    arr = np.asarray(losses, dtype=float)
    if arr.size == 0:
        raise ValueError("losses must be non-empty")
    return LossStats(mu=float(arr.mean()), sigma=float(arr.std()), count=arr.size)


def classify(loss: float, stats: LossStats, n: float) -> Classification:
    """ANOMALY when the loss sits strictly above mu + n * sigma.

    With sigma = 0 the rule degenerates to a strict comparison against mu.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    threshold = stats.mu + n * stats.sigma
    return Classification.ANOMALY if loss > threshold else Classification.NORMAL


def f1_score(tp: int, fp: int, fn: int) -> float:
    """F1 from confusion counts: 2*tp / (2*tp + fp + fn).

    Zero when nothing was detected but positives existed; undefined (error)
    when tp = fp = fn = 0.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be >= 0")
    if tp == 0:
        if fp == 0 and fn == 0:
            raise UndefinedMetricError("f1 undefined for an empty confusion")
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def sweep_threshold(
    scored: Sequence[tuple[float, Label]], stats: LossStats
) -> SweepResult:
    """Grid-search n over 0.0..10.0 (step 0.1) for the best F1.

    Args:
        scored: (loss, label) pairs for a labelled validation set.
        stats: training-loss statistics supplying mu and sigma.

    Returns:
        SweepResult with the winning n (ties resolved toward the largest n),
        its F1 and confusion, and the full F1 curve over the grid.

    Raises:
        DegenerateValidationError: the set lacks injected or normal events.
    """
    if not scored:
        raise DegenerateValidationError("validation set is empty")
    losses = np.array([loss for loss, _ in scored], dtype=float)
    injected = np.array([label is Label.INJECTED for _, label in scored], dtype=bool)
    if not injected.any() or injected.all():
        raise DegenerateValidationError(
            "sweep needs at least one injected and one normal event"
        )

    positives = int(injected.sum())
    curve: list[float] = []
    best_index = 0
    best_f1 = -1.0
    best_confusion = Confusion(0, 0, 0, 0)
    for i, n in enumerate(SWEEP_GRID):
        flagged = losses > stats.mu + n * stats.sigma
        tp = int((flagged & injected).sum())
        fp = int((flagged & ~injected).sum())
        fn = positives - tp
        tn = int((~flagged & ~injected).sum())
        value = f1_score(tp, fp, fn) if (tp or fp or fn) else 0.0
        curve.append(value)
        if value >= best_f1:  # >= pushes ties toward the largest n
            best_f1 = value
            best_index = i
            best_confusion = Confusion(tp=tp, fp=fp, fn=fn, tn=tn)
    return SweepResult(
        best_n=SWEEP_GRID[best_index],
        best_f1=best_f1,
        confusion=best_confusion,
        f1_curve=tuple(curve),
    )


def score_events(
    model: Autoencoder,
    events: Sequence[EncodedEvent],
    n: float | None = None,
    *,
    with_labels: bool = False,
) -> DetectionReport:
    """Score events with a trained model and its stored threshold.

    Args:
        model: trained autoencoder carrying train_mu/train_sigma (and
            chosen_n, unless ``n`` overrides it).
        events: encoded events to score.
        n: threshold multiplier; defaults to the model's chosen_n.
        with_labels: carry event labels into the report (validation runs).

    Returns:
        DetectionReport with records sorted by loss descending.
    """
    if model.train_mu is None or model.train_sigma is None:
        raise ValueError("model has no training statistics")
    threshold_n = model.chosen_n if n is None else n
    if threshold_n is None:
        raise ValueError("no threshold multiplier: train sweep not run and n not given")
    stats = LossStats(mu=model.train_mu, sigma=model.train_sigma, count=0)
    losses = model.losses(events)
    records = [
        ScoredEvent(
            position=i,
            actor_id=event.actor_id,
            loss=float(losses[i]),
            classification=classify(float(losses[i]), stats, threshold_n),
            label=event.label if with_labels else None,
        )
        for i, event in enumerate(events)
    ]
    records.sort(key=lambda r: (-r.loss, r.position))
    return DetectionReport(
        actor_id=model.actor_id,
        threshold_n=float(threshold_n),
        mu=model.train_mu,
        sigma=model.train_sigma,
        records=records,
    )
