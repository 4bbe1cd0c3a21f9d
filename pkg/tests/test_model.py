"""Tests for the per-actor autoencoder: loss plumbing, gradients, training."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from loginwatch.encoding import FEATURE_ORDER, EncodedEvent
from loginwatch.model import (
    Autoencoder,
    LossMode,
    TrainConfig,
    TrainingDivergedError,
    dice_coefficient,
    gradient_check,
    train,
)

SIZES = {
    "geohash": 3,
    "app_id": 3,
    "known_app": 1,
    "outcome": 2,
    "event_hour": 24,
    "weekday": 7,
    "client_os": 2,
    "client_device": 2,
}


def random_events(count: int, seed: int, actor: str = "u1") -> list[EncodedEvent]:
    rng = np.random.default_rng(seed)
    events = []
    for _ in range(count):
        events.append(
            EncodedEvent(
                actor_id=actor,
                geohash=int(rng.integers(0, SIZES["geohash"] + 1)),
                app_id=int(rng.integers(0, SIZES["app_id"] + 1)),
                known_app=int(rng.integers(0, 2)),
                outcome=int(rng.integers(0, SIZES["outcome"] + 1)),
                event_hour=int(rng.integers(1, 25)),
                weekday=int(rng.integers(1, 8)),
                client_os=int(rng.integers(0, SIZES["client_os"] + 1)),
                client_device=int(rng.integers(0, SIZES["client_device"] + 1)),
            )
        )
    return events


def oracle_dissim(rec_row: np.ndarray, emb_row: np.ndarray) -> float:
    """Per-feature dissimilarity recomputed with scalar math."""
    p = [1.0 / (1.0 + math.exp(-v)) for v in rec_row.tolist()]
    g = [1.0 / (1.0 + math.exp(-v)) for v in emb_row.tolist()]
    overlap = sum(a * b for a, b in zip(p, g))
    denom = sum(a * a for a in p) + sum(b * b for b in g)
    return 1.0 - 2.0 * overlap / denom


class TestDiceCoefficient:
    def test_identical_vectors_give_one(self):
        v = np.array([0.3, 0.7, 0.1])
        assert dice_coefficient(v, v) == pytest.approx(1.0)

    def test_orthogonal_vectors_give_zero(self):
        assert dice_coefficient(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_partial_overlap(self):
        # 2*1 / (2 + 1) = 2/3
        got = dice_coefficient(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert got == pytest.approx(2.0 / 3.0)

    def test_scale_sensitivity(self):
        # v against 2v: 2*2|v|^2 / (|v|^2 + 4|v|^2) = 4/5
        v = np.array([0.2, -0.4, 0.6])
        assert dice_coefficient(v, 2 * v) == pytest.approx(0.8)

    def test_both_all_zero_is_one(self):
        z = np.zeros(4)
        assert dice_coefficient(z, z) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            assert dice_coefficient(a, b) == pytest.approx(dice_coefficient(b, a))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dice_coefficient(np.zeros(3), np.zeros(4))


class TestForward:
    def test_event_loss_matches_scalar_recomputation(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=3)
        for event in random_events(5, seed=9):
            rec, emb = model.forward(event)
            expected = sum(oracle_dissim(rec[n], emb[n]) for n in FEATURE_ORDER)
            assert model.event_loss(event) == pytest.approx(expected, rel=1e-10)

    def test_product_mode_multiplies_dissimilarities(self):
        model = Autoencoder(
            "u1", SIZES, hidden_dim=6, code_dim=4, seed=3, loss_mode=LossMode.PRODUCT
        )
        event = random_events(1, seed=4)[0]
        rec, emb = model.forward(event)
        expected = 1.0
        for name in FEATURE_ORDER:
            expected *= oracle_dissim(rec[name], emb[name])
        assert model.event_loss(event) == pytest.approx(expected, rel=1e-9)

    def test_feature_weights_scale_sum_terms(self):
        weights = {"geohash": 2.0, "app_id": 0.5, "client_os": 0.0}
        model = Autoencoder(
            "u1", SIZES, hidden_dim=6, code_dim=4, seed=3, feature_weights=weights
        )
        event = random_events(1, seed=4)[0]
        rec, emb = model.forward(event)
        expected = 0.0
        for name in FEATURE_ORDER:
            expected += weights.get(name, 1.0) * oracle_dissim(rec[name], emb[name])
        assert model.event_loss(event) == pytest.approx(expected, rel=1e-10)

    def test_head_widths_match_embeddings(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=0)
        rec, emb = model.forward(random_events(1, seed=1)[0])
        for name in FEATURE_ORDER:
            assert rec[name].shape == emb[name].shape
            assert rec[name].shape == (model.embeddings[name].dim,)

    def test_losses_matches_per_event_loop(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=7)
        events = random_events(40, seed=8)
        batched = model.losses(events)
        single = np.array([model.event_loss(e) for e in events])
        assert batched == pytest.approx(single, rel=1e-10)

    def test_losses_empty_input(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=7)
        assert model.losses([]).shape == (0,)

    def test_out_of_range_index_rejected(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=0)
        event = EncodedEvent(
            actor_id="u1",
            geohash=SIZES["geohash"] + 1,
            app_id=0,
            known_app=0,
            outcome=0,
            event_hour=1,
            weekday=1,
            client_os=0,
            client_device=0,
        )
        with pytest.raises(ValueError, match="geohash"):
            model.event_loss(event)


class TestConstruction:
    def test_code_must_be_narrower_than_input(self):
        tiny = {name: 1 for name in FEATURE_ORDER}
        # every vocab of 1 embeds in 1 dimension, input width 8
        with pytest.raises(ValueError, match="code_dim"):
            Autoencoder("u1", tiny, hidden_dim=8, code_dim=8)
        model = Autoencoder("u1", tiny, hidden_dim=8, code_dim=7)
        assert model.input_dim == 8

    def test_missing_feature_size_rejected(self):
        sizes = dict(SIZES)
        del sizes["weekday"]
        with pytest.raises(ValueError, match="weekday"):
            Autoencoder("u1", sizes)

    def test_embedding_tables_have_oov_rows(self):
        model = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=0)
        for name in FEATURE_ORDER:
            table = model.embeddings[name]
            assert table.weights.shape == (SIZES[name] + 1, table.dim)
            assert np.all(np.abs(table.weights) <= 0.05)

    def test_seed_controls_init(self):
        events = random_events(10, seed=0)
        a = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=1)
        b = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=1)
        c = Autoencoder("u1", SIZES, hidden_dim=6, code_dim=4, seed=2)
        assert np.array_equal(a.losses(events), b.losses(events))
        assert not np.array_equal(a.losses(events), c.losses(events))


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_analytic_matches_finite_differences(self, seed):
        model = Autoencoder("u1", SIZES, hidden_dim=5, code_dim=3, seed=seed)
        event = random_events(1, seed=seed + 100)[0]
        assert gradient_check(model, event) < 1e-4

    def test_product_mode_gradients(self):
        model = Autoencoder(
            "u1", SIZES, hidden_dim=5, code_dim=3, seed=4, loss_mode=LossMode.PRODUCT
        )
        event = random_events(1, seed=40)[0]
        assert gradient_check(model, event) < 1e-4

    def test_weighted_gradients(self):
        model = Autoencoder(
            "u1",
            SIZES,
            hidden_dim=5,
            code_dim=3,
            seed=5,
            feature_weights={"geohash": 3.0, "outcome": 0.25},
        )
        event = random_events(1, seed=50)[0]
        assert gradient_check(model, event) < 1e-4

    def test_untouched_embedding_rows_get_zero_gradient(self):
        model = Autoencoder("u1", SIZES, hidden_dim=5, code_dim=3, seed=6)
        event = random_events(1, seed=60)[0]
        grads = model._backward(model._forward(model._indices([event])))
        for name, used in zip(FEATURE_ORDER, event.feature_indices()):
            table = grads["emb"][name]
            for row in range(table.shape[0]):
                if row == used:
                    assert np.any(table[row] != 0.0)
                else:
                    assert np.all(table[row] == 0.0)

    def test_zero_weight_silences_head_gradient(self):
        model = Autoencoder(
            "u1", SIZES, hidden_dim=5, code_dim=3, seed=7,
            feature_weights={"client_os": 0.0},
        )
        event = random_events(1, seed=70)[0]
        grads = model._backward(model._forward(model._indices([event])))
        assert np.all(grads["heads"]["client_os"] == 0.0)
        assert np.all(grads["head_biases"]["client_os"] == 0.0)
        # the feature still feeds the encoder, so its embedding gradient survives
        assert np.any(grads["emb"]["client_os"] != 0.0)


class TestTraining:
    def test_memorizes_a_single_pattern(self):
        event = random_events(1, seed=11)[0]
        dataset = [event] * 32
        config = TrainConfig(epochs=300, batch_size=32, learning_rate=0.1, seed=0)
        model = train(dataset, config, feature_sizes=SIZES)
        assert model.epoch_losses[-1] < 0.01
        assert model.epoch_losses[-1] < model.epoch_losses[0]

    def test_epoch_losses_and_stats_recorded(self):
        events = random_events(64, seed=12)
        model = train(events, TrainConfig(epochs=5, seed=1), feature_sizes=SIZES)
        assert len(model.epoch_losses) == 5
        assert model.train_mu is not None
        assert model.train_sigma is not None
        assert model.train_sigma >= 0.0
        final = model.losses(events)
        assert model.train_mu == pytest.approx(float(final.mean()))
        assert model.train_sigma == pytest.approx(float(final.std()))

    def test_deterministic_given_seed(self):
        events = random_events(48, seed=13)
        config = TrainConfig(epochs=4, seed=9)
        a = train(events, config, feature_sizes=SIZES)
        b = train(events, config, feature_sizes=SIZES)
        assert a.epoch_losses == b.epoch_losses
        assert np.array_equal(a.losses(events), b.losses(events))
        c = train(events, TrainConfig(epochs=4, seed=10), feature_sizes=SIZES)
        assert not np.array_equal(a.losses(events), c.losses(events))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train([], TrainConfig())

    def test_mixed_actors_rejected(self):
        events = random_events(3, seed=0, actor="u1") + random_events(3, seed=1, actor="u2")
        with pytest.raises(ValueError, match="actors"):
            train(events, TrainConfig())

    def test_index_beyond_declared_size_rejected(self):
        events = random_events(4, seed=14)
        sizes = dict(SIZES)
        sizes["event_hour"] = 1
        with pytest.raises(ValueError, match="event_hour"):
            train(events, TrainConfig(epochs=1), feature_sizes=sizes)

    def test_sizes_inferred_from_data_when_omitted(self):
        events = random_events(30, seed=15)
        model = train(events, TrainConfig(epochs=1, seed=0))
        for name in FEATURE_ORDER:
            observed = max(
                e.feature_indices()[FEATURE_ORDER.index(name)] for e in events
            )
            assert model.feature_sizes[name] == max(observed, 1)

    def test_non_finite_loss_raises(self, monkeypatch):
        events = random_events(8, seed=16)

        def bad_forward(self, idx):
            return {"losses": np.full(idx.shape[0], np.nan)}

        monkeypatch.setattr(Autoencoder, "_forward", bad_forward)
        with pytest.raises(TrainingDivergedError, match="epoch 1"):
            train(events, TrainConfig(epochs=2), feature_sizes=SIZES)


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(feature_weights={"geohash": -1.0})

    def test_loss_mode_coerced_from_string(self):
        assert TrainConfig(loss_mode="PRODUCT").loss_mode is LossMode.PRODUCT


class TestPersistence:
    def test_state_round_trip_is_bit_exact(self):
        events = random_events(40, seed=17)
        model = train(events, TrainConfig(epochs=3, seed=2), feature_sizes=SIZES)
        state = model.to_state()
        json.dumps(state)
        restored = Autoencoder.from_state(state)
        assert np.array_equal(model.losses(events), restored.losses(events))
        assert restored.train_mu == model.train_mu
        assert restored.train_sigma == model.train_sigma
        assert restored.epoch_losses == model.epoch_losses

    def test_state_survives_json_serialization(self):
        events = random_events(20, seed=18)
        model = train(events, TrainConfig(epochs=2, seed=3), feature_sizes=SIZES)
        rehydrated = json.loads(json.dumps(model.to_state()))
        restored = Autoencoder.from_state(rehydrated)
        assert np.array_equal(model.losses(events), restored.losses(events))

    def test_embedding_shape_mismatch_rejected(self):
        model = Autoencoder("u1", SIZES, hidden_dim=5, code_dim=3, seed=0)
        state = model.to_state()
        state["embeddings"]["geohash"] = [[0.0]]
        with pytest.raises(ValueError, match="geohash"):
            Autoencoder.from_state(state)
