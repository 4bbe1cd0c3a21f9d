"""Per-actor under-complete autoencoder over entity embeddings.

Each categorical feature of a login event owns a trainable embedding table.
An event is the concatenation of its feature embeddings; a small tanh
encoder compresses it to a code narrower than the input, and a decoder ends
in one reconstruction head per feature. Training minimizes a weighted
combination of per-feature dice dissimilarities between the (sigmoid
squashed) input embedding and its reconstruction, with gradients derived by
hand and applied by plain mini-batch SGD to the network weights and the
embedding rows alike.

The loss of an event doubles as its anomaly score: events built from
patterns the model never learned reconstruct poorly and score high.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from loginwatch.encoding import (
    FEATURE_ORDER,
    EmbeddingMatrix,
    EncodedEvent,
    embedding_dim,
    init_embedding,
)

logger = logging.getLogger(__name__)

_EPS = 1e-12


class LossMode(str, Enum):
    """How per-feature dissimilarities combine into one event loss."""

    SUM = "SUM"
    PRODUCT = "PRODUCT"


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.01
    hidden_dim: int = 16
    code_dim: int = 8
    seed: int = 0
    loss_mode: LossMode = LossMode.SUM
    feature_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        self.loss_mode = LossMode(self.loss_mode)
        for name, weight in self.feature_weights.items():
            if weight < 0:
                raise ValueError(f"feature weight {name} must be >= 0, got {weight}")


def dice_coefficient(p: np.ndarray, g: np.ndarray) -> float:
    """Dice similarity 2*sum(p*g) / (sum(p^2) + sum(g^2)).

    Equals 1 for identical vectors, 0 for orthogonal ones, and by convention
    1.0 when both vectors are all zero. Symmetric, but sensitive to scale:
    comparing a vector against twice itself gives 4/5, not 1.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    denom = float(np.dot(p, p) + np.dot(g, g))
    if denom == 0.0:
        return 1.0
    return float(2.0 * np.dot(p, g) / denom)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Autoencoder:
    """Under-complete autoencoder for one actor's encoded login events.

    Layer stack, for an input x built by concatenating per-feature embedding
    rows (total width ``input_dim``):

        a1 = tanh(W1 x + b1)          encoder hidden
        h  = tanh(W2 a1 + b2)         code, code_dim < input_dim
        a3 = tanh(W3 h + b3)          decoder hidden
        r_f = H_f a3 + c_f            linear head per feature, width dim(f)

    The event loss compares sigmoid(r_f) against sigmoid(e_f) per feature
    with the dice dissimilarity and combines features per ``loss_mode``.
    """

    def __init__(
        self,
        actor_id: str,
        feature_sizes: Mapping[str, int],
        *,
        hidden_dim: int = 16,
        code_dim: int = 8,
        seed: int = 0,
        loss_mode: LossMode = LossMode.SUM,
        feature_weights: Mapping[str, float] | None = None,
    ):
        missing = [name for name in FEATURE_ORDER if name not in feature_sizes]
        if missing:
            raise ValueError(f"feature_sizes missing {missing}")
        if hidden_dim < 1 or code_dim < 1:
            raise ValueError("hidden_dim and code_dim must be >= 1")

        self.actor_id = actor_id
        self.loss_mode = LossMode(loss_mode)
        self.feature_sizes = {name: int(feature_sizes[name]) for name in FEATURE_ORDER}
        weights = dict(feature_weights or {})
        self.feature_weights = {
            name: float(weights.get(name, 1.0)) for name in FEATURE_ORDER
        }
        self._w_vec = np.array(
            [self.feature_weights[name] for name in FEATURE_ORDER], dtype=float
        )

        seeds = np.random.SeedSequence(seed).generate_state(len(FEATURE_ORDER) + 1)
        self.embeddings: dict[str, EmbeddingMatrix] = {}
        self._slices: dict[str, slice] = {}
        offset = 0
        for name, child_seed in zip(FEATURE_ORDER, seeds):
            m = self.feature_sizes[name]
            dim = embedding_dim(max(m, 1))
            self.embeddings[name] = init_embedding(m, dim, int(child_seed), name)
            self._slices[name] = slice(offset, offset + dim)
            offset += dim
        self.input_dim = offset
        if not code_dim < self.input_dim:
            raise ValueError(
                f"code_dim {code_dim} must be < input_dim {self.input_dim}"
            )
        self.hidden_dim = hidden_dim
        self.code_dim = code_dim

        rng = np.random.default_rng(int(seeds[-1]))

        def glorot(fan_out: int, fan_in: int) -> np.ndarray:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_out, fan_in))

        self.w1 = glorot(hidden_dim, self.input_dim)
        self.b1 = np.zeros(hidden_dim)
        self.w2 = glorot(code_dim, hidden_dim)
        self.b2 = np.zeros(code_dim)
        self.w3 = glorot(hidden_dim, code_dim)
        self.b3 = np.zeros(hidden_dim)
        self.heads: dict[str, np.ndarray] = {}
        self.head_biases: dict[str, np.ndarray] = {}
        for name in FEATURE_ORDER:
            dim = self.embeddings[name].dim
            self.heads[name] = glorot(dim, hidden_dim)
            self.head_biases[name] = np.zeros(dim)

        self.train_mu: float | None = None
        self.train_sigma: float | None = None
        self.chosen_n: float | None = None
        self.epoch_losses: list[float] = []

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _indices(self, events: Sequence[EncodedEvent]) -> np.ndarray:
        rows = np.empty((len(events), len(FEATURE_ORDER)), dtype=np.int64)
        for i, event in enumerate(events):
            rows[i] = event.feature_indices()
        for f, name in enumerate(FEATURE_ORDER):
            bad = (rows[:, f] < 0) | (rows[:, f] > self.feature_sizes[name])
            if bad.any():
                raise ValueError(
                    f"{name}: index {rows[bad][0][f]} outside "
                    f"[0, {self.feature_sizes[name]}]"
                )
        return rows

    def _forward(self, idx: np.ndarray) -> dict:
        """Run a batch of index rows through the network, keeping the cache."""
        batch = idx.shape[0]
        x = np.empty((batch, self.input_dim))
        emb_in: dict[str, np.ndarray] = {}
        for f, name in enumerate(FEATURE_ORDER):
            rows = self.embeddings[name].weights[idx[:, f]]
            emb_in[name] = rows
            x[:, self._slices[name]] = rows

        a1 = np.tanh(x @ self.w1.T + self.b1)
        h = np.tanh(a1 @ self.w2.T + self.b2)
        a3 = np.tanh(h @ self.w3.T + self.b3)

        rec: dict[str, np.ndarray] = {}
        p: dict[str, np.ndarray] = {}
        g: dict[str, np.ndarray] = {}
        dissim = np.empty((batch, len(FEATURE_ORDER)))
        dice_parts: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for f, name in enumerate(FEATURE_ORDER):
            r = a3 @ self.heads[name].T + self.head_biases[name]
            rec[name] = r
            pf = _sigmoid(r)
            gf = _sigmoid(emb_in[name])
            p[name] = pf
            g[name] = gf
            overlap = np.sum(pf * gf, axis=1)
            denom = np.sum(pf * pf, axis=1) + np.sum(gf * gf, axis=1)
            dissim[:, f] = 1.0 - 2.0 * overlap / denom
            dice_parts[name] = (overlap, denom)

        if self.loss_mode is LossMode.SUM:
            losses = dissim @ self._w_vec
        else:
            safe = np.maximum(dissim, _EPS)
            losses = np.exp((np.log(safe) * self._w_vec).sum(axis=1))

        return {
            "idx": idx,
            "x": x,
            "emb_in": emb_in,
            "a1": a1,
            "h": h,
            "a3": a3,
            "rec": rec,
            "p": p,
            "g": g,
            "dissim": dissim,
            "dice_parts": dice_parts,
            "losses": losses,
        }

    def forward(
        self, event: EncodedEvent
    ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        """Per-feature reconstructions and the input embeddings they target.

        Returns:
            (reconstructions, inputs): raw linear head outputs and the
            embedding rows the event looked up, both keyed by feature name
            with matching widths.
        """
        cache = self._forward(self._indices([event]))
        rec = {name: cache["rec"][name][0].copy() for name in FEATURE_ORDER}
        emb = {name: cache["emb_in"][name][0].copy() for name in FEATURE_ORDER}
        return rec, emb

    def losses(self, events: Sequence[EncodedEvent]) -> np.ndarray:
        """Loss of every event, in input order."""
        if not events:
            return np.zeros(0)
        return self._forward(self._indices(events))["losses"].copy()

    def event_loss(self, event: EncodedEvent) -> float:
        """Combined weighted dice dissimilarity of one event."""
        return float(self.losses([event])[0])

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------

    def _backward(self, cache: dict) -> dict:
        """Gradients of the mean batch loss w.r.t. every parameter."""
        idx = cache["idx"]
        batch = idx.shape[0]
        dissim = cache["dissim"]

        # d(mean loss)/d(dissim_f) per event
        if self.loss_mode is LossMode.SUM:
            coef = np.broadcast_to(self._w_vec, dissim.shape).copy()
        else:
            safe = np.maximum(dissim, _EPS)
            total = np.exp((np.log(safe) * self._w_vec).sum(axis=1))
            coef = self._w_vec * total[:, None] / safe
        coef /= batch

        a3 = cache["a3"]
        d_a3 = np.zeros_like(a3)
        grads: dict = {"heads": {}, "head_biases": {}, "emb": {}}
        d_emb_target: dict[str, np.ndarray] = {}
        for f, name in enumerate(FEATURE_ORDER):
            pf, gf = cache["p"][name], cache["g"][name]
            overlap, denom = cache["dice_parts"][name]
            # d(1 - dice)/dp and /dg for dice = 2*overlap/denom
            scale = coef[:, f] / (denom * denom)
            d_p = (4.0 * overlap[:, None] * pf - 2.0 * gf * denom[:, None]) * scale[:, None]
            d_g = (4.0 * overlap[:, None] * gf - 2.0 * pf * denom[:, None]) * scale[:, None]
            d_r = d_p * pf * (1.0 - pf)
            d_emb_target[name] = d_g * gf * (1.0 - gf)
            grads["heads"][name] = d_r.T @ a3
            grads["head_biases"][name] = d_r.sum(axis=0)
            d_a3 += d_r @ self.heads[name]

        d_z3 = d_a3 * (1.0 - a3 * a3)
        grads["w3"] = d_z3.T @ cache["h"]
        grads["b3"] = d_z3.sum(axis=0)
        d_h = d_z3 @ self.w3

        d_z2 = d_h * (1.0 - cache["h"] * cache["h"])
        grads["w2"] = d_z2.T @ cache["a1"]
        grads["b2"] = d_z2.sum(axis=0)
        d_a1 = d_z2 @ self.w2

        d_z1 = d_a1 * (1.0 - cache["a1"] * cache["a1"])
        grads["w1"] = d_z1.T @ cache["x"]
        grads["b1"] = d_z1.sum(axis=0)
        d_x = d_z1 @ self.w1

        for f, name in enumerate(FEATURE_ORDER):
            d_rows = d_x[:, self._slices[name]] + d_emb_target[name]
            table = np.zeros_like(self.embeddings[name].weights)
            np.add.at(table, idx[:, f], d_rows)
            grads["emb"][name] = table
        return grads

    def _apply(self, grads: dict, learning_rate: float) -> None:
        self.w1 -= learning_rate * grads["w1"]
        self.b1 -= learning_rate * grads["b1"]
        self.w2 -= learning_rate * grads["w2"]
        self.b2 -= learning_rate * grads["b2"]
        self.w3 -= learning_rate * grads["w3"]
        self.b3 -= learning_rate * grads["b3"]
        for name in FEATURE_ORDER:
            self.heads[name] -= learning_rate * grads["heads"][name]
            self.head_biases[name] -= learning_rate * grads["head_biases"][name]
            self.embeddings[name].weights -= learning_rate * grads["emb"][name]

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def to_state(self) -> dict:
        """Plain-type snapshot of every parameter and training statistic."""
        return {
            "actor_id": self.actor_id,
            "feature_sizes": dict(self.feature_sizes),
            "feature_weights": dict(self.feature_weights),
            "hidden_dim": self.hidden_dim,
            "code_dim": self.code_dim,
            "loss_mode": self.loss_mode.value,
            "embeddings": {
                name: self.embeddings[name].weights.tolist() for name in FEATURE_ORDER
            },
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
            "w3": self.w3.tolist(),
            "b3": self.b3.tolist(),
            "heads": {name: self.heads[name].tolist() for name in FEATURE_ORDER},
            "head_biases": {
                name: self.head_biases[name].tolist() for name in FEATURE_ORDER
            },
            "train_mu": self.train_mu,
            "train_sigma": self.train_sigma,
            "chosen_n": self.chosen_n,
            "epoch_losses": list(self.epoch_losses),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Autoencoder":
        model = cls(
            state["actor_id"],
            state["feature_sizes"],
            hidden_dim=state["hidden_dim"],
            code_dim=state["code_dim"],
            loss_mode=LossMode(state["loss_mode"]),
            feature_weights=state["feature_weights"],
        )
        for name in FEATURE_ORDER:
            weights = np.array(state["embeddings"][name], dtype=float)
            if weights.shape != model.embeddings[name].weights.shape:
                raise ValueError(f"embedding shape mismatch for {name}")
            model.embeddings[name].weights = weights
        model.w1 = np.array(state["w1"], dtype=float)
        model.b1 = np.array(state["b1"], dtype=float)
        model.w2 = np.array(state["w2"], dtype=float)
        model.b2 = np.array(state["b2"], dtype=float)
        model.w3 = np.array(state["w3"], dtype=float)
        model.b3 = np.array(state["b3"], dtype=float)
        for name in FEATURE_ORDER:
            model.heads[name] = np.array(state["heads"][name], dtype=float)
            model.head_biases[name] = np.array(state["head_biases"][name], dtype=float)
        model.train_mu = state.get("train_mu")
        model.train_sigma = state.get("train_sigma")
        model.chosen_n = state.get("chosen_n")
        model.epoch_losses = list(state.get("epoch_losses", []))
        return model


def _sizes_from_data(dataset: Sequence[EncodedEvent]) -> dict[str, int]:
    sizes = {name: 1 for name in FEATURE_ORDER}
    for event in dataset:
        for name, index in zip(FEATURE_ORDER, event.feature_indices()):
            sizes[name] = max(sizes[name], index)
    return sizes


def train(
    dataset: Sequence[EncodedEvent],
    config: TrainConfig,
    feature_sizes: Mapping[str, int] | None = None,
) -> Autoencoder:
    """Fit an autoencoder to one actor's encoded events by mini-batch SGD.

    Embedding rows are parameters: each step updates them together with the
    layer weights. After the last epoch the model's ``train_mu`` and
    ``train_sigma`` are set to the mean and population standard deviation of
    the final per-event losses over the whole dataset.

    Args:
        dataset: encoded events of a single actor.
        config: hyperparameters.
        feature_sizes: largest valid index per feature. When omitted it is
            inferred from the data, which is only safe if the dataset covers
            every index the model will ever see.

    Returns:
        The trained model, with ``epoch_losses`` holding one mean loss per
        epoch.

    Raises:
        ValueError: empty dataset or events from several actors.
        TrainingDivergedError: a non-finite loss appeared.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    actors = {event.actor_id for event in dataset}
    if len(actors) > 1:
        raise ValueError(f"dataset mixes actors: {sorted(actors)}")

    sizes = dict(feature_sizes) if feature_sizes else _sizes_from_data(dataset)
    model = Autoencoder(
        dataset[0].actor_id,
        sizes,
        hidden_dim=config.hidden_dim,
        code_dim=config.code_dim,
        seed=config.seed,
        loss_mode=config.loss_mode,
        feature_weights=config.feature_weights,
    )
    idx_all = model._indices(dataset)
    count = idx_all.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, count]))

    for epoch in range(config.epochs):
        order = rng.permutation(count)
        loss_sum = 0.0
        for start in range(0, count, config.batch_size):
            batch_idx = idx_all[order[start : start + config.batch_size]]
            cache = model._forward(batch_idx)
            batch_losses = cache["losses"]
            if not np.all(np.isfinite(batch_losses)):
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch + 1}"
                )
            loss_sum += float(batch_losses.sum())
            model._apply(model._backward(cache), config.learning_rate)
        model.epoch_losses.append(loss_sum / count)

    final_losses = model.losses(dataset)
    model.train_mu = float(final_losses.mean())
    model.train_sigma = float(final_losses.std())
    return model


def gradient_check(
    model: Autoencoder, event: EncodedEvent, epsilon: float = 1e-5
) -> float:
    """Compare analytic gradients against central finite differences.

    Every parameter entry is perturbed by +/- epsilon, including every
    embedding row (used or not). Returns the maximum relative error
    |analytic - numeric| / max(|analytic| + |numeric|, 1e-6); the floor
    keeps float64 roundoff in the difference quotient (about 1e-11 at
    the default epsilon) from dominating near-zero gradient entries.
    """
    idx = model._indices([event])
    grads = model._backward(model._forward(idx))

    def loss() -> float:
        return float(model._forward(idx)["losses"][0])

    arrays: list[tuple[np.ndarray, np.ndarray]] = [
        (model.w1, grads["w1"]),
        (model.b1, grads["b1"]),
        (model.w2, grads["w2"]),
        (model.b2, grads["b2"]),
        (model.w3, grads["w3"]),
        (model.b3, grads["b3"]),
    ]
    for name in FEATURE_ORDER:
        arrays.append((model.heads[name], grads["heads"][name]))
        arrays.append((model.head_biases[name], grads["head_biases"][name]))
        arrays.append((model.embeddings[name].weights, grads["emb"][name]))

    worst = 0.0
    for params, analytic in arrays:
        flat = params.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            up = loss()
            flat[i] = original - epsilon
            down = loss()
            flat[i] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = float(flat_grad[i])
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
