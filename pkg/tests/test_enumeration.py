# tests/test_enumeration.py - Exhaustive drop-set search
import json

import numpy as np
import pytest

import config
from core.exceptions import ConfigurationError
from core.moe import layer_forward, layer_inputs, model_forward
from grouping.greedy import partition_greedy
from merging.merge import drop_experts
from modelio.calibration import CalibrationBatch
from pipeline.enumeration import apply_drops, check_enumeration_guard, enumerate_drop, write_enumeration
from pipeline.evaluate import mse
from similarity.matrix import Metric, build_layer_similarity
from similarity.representations import RepresentationKind
from tests.factories import planted_model, random_model

TWIN = {0: 1, 1: 0, 2: 3, 3: 2, 4: 5, 5: 4}


@pytest.fixture(params=[False, True], ids=["softmax-weights", "renormalized"])
def six_experts(request):
    """Three planted pairs routed with K=2"""
    return planted_model(0.0, n_experts=6, renormalize_topk=request.param)


@pytest.fixture
def lossless_six():
    """Three planted pairs with K=1 and renormalized weights, where dropping one twin is exact"""
    return planted_model(0.0, n_experts=6, top_k=1, renormalize_topk=True)


class TestEnumerateDrop:
    def test_every_pair_is_tried(self, rng):
        m = random_model(rng, n_layers=1, n_experts=4, top_k=1)
        result = enumerate_drop(m, 2, CalibrationBatch(rng.normal(size=(16, 4))))
        table = result.layers[0]
        assert [row.dropped for row in table.rows] == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
        assert table.best_loss == min(row.loss for row in table.rows)

    def test_dropping_nothing(self, rng):
        m = random_model(rng, n_layers=2, n_experts=4)
        result = enumerate_drop(m, 0, rng.normal(size=(8, 4)))
        for table in result.layers:
            assert len(table.rows) == 1
            assert table.rows[0].dropped == [] and table.rows[0].loss == 0.0

    def test_losses_are_layer_local(self, rng):
        m = random_model(rng, n_layers=2, n_experts=4, top_k=1)
        X = rng.normal(size=(12, 4))
        table = enumerate_drop(m, 1, X).layers[1]
        X_1 = layer_inputs(m, X)[1]
        reduced = drop_experts(m.layers[1], [2])
        assert table.rows[2].loss == mse(layer_forward(m.layers[1], X_1), layer_forward(reduced, X_1))

    def test_protected_experts_are_skipped(self, rng):
        m = random_model(rng, n_layers=1, n_experts=4, top_k=1)
        m = m.with_layers([m.layers[0].replace(protected=frozenset({0}))])
        table = enumerate_drop(m, 2, rng.normal(size=(8, 4))).layers[0]
        assert all(0 not in row.dropped for row in table.rows)
        assert len(table.rows) == 3

    def test_guard(self, rng, monkeypatch):
        m = random_model(rng, n_layers=1, n_experts=4)
        monkeypatch.setattr(config, "ENUM_MAX_COMBINATIONS", 5)
        with pytest.raises(ConfigurationError, match="greedy"):
            check_enumeration_guard(m, 2)
        with pytest.raises(ConfigurationError):
            enumerate_drop(m, 4, rng.normal(size=(8, 4)))

    def test_threads_keep_layer_order(self, rng):
        m = random_model(rng, n_layers=3, n_experts=4, top_k=1)
        X = rng.normal(size=(8, 4))
        assert enumerate_drop(m, 1, X, threads=3) == enumerate_drop(m, 1, X, threads=1)


class TestAgreementWithGrouping:
    def test_best_drop_set_keeps_one_of_each_twin(self, six_experts, batch):
        result = enumerate_drop(six_experts, 2, batch)
        for table in result.layers:
            assert len(table.best) == 2
            assert all(TWIN[i] not in table.best for i in table.best)

    def test_single_expert_routing_drops_twins_exactly(self, lossless_six, batch):
        for table in enumerate_drop(lossless_six, 2, batch).layers:
            assert table.best_loss <= 1e-12
            assert all(TWIN[i] not in table.best for i in table.best)

    def test_greedy_grouping_finds_the_same_pairs(self, six_experts, batch):
        result = enumerate_drop(six_experts, 2, batch)
        inputs = layer_inputs(six_experts, batch.embeddings)
        for index, table in enumerate(result.layers):
            layer_batch = CalibrationBatch(inputs[index])
            sim = build_layer_similarity(six_experts.layers[index], RepresentationKind.DATA, Metric.NEG_MSE, batch=layer_batch)
            groups = partition_greedy(sim, 3).groups
            assert groups == ((0, 1), (2, 3), (4, 5))
            for i in table.best:
                assert any(i in g and len(g) == 2 for g in groups)

    def test_enumeration_is_no_worse_than_grouping_drops(self, six_experts, batch):
        result = enumerate_drop(six_experts, 2, batch)
        inputs = layer_inputs(six_experts, batch.embeddings)
        for index, table in enumerate(result.layers):
            layer = six_experts.layers[index]
            grouped_drop = mse(layer_forward(layer, inputs[index]), layer_forward(drop_experts(layer, [1, 3]), inputs[index]))
            assert table.best_loss <= grouped_drop

    def test_noisy_pairs_still_drop_twins(self, batch):
        m = planted_model(0.01, n_experts=6, top_k=1, renormalize_topk=True)
        for table in enumerate_drop(m, 2, batch).layers:
            assert all(TWIN[i] not in table.best for i in table.best)


def test_apply_and_write(tmp_path, lossless_six, batch):
    result = enumerate_drop(lossless_six, 2, batch)
    pruned = apply_drops(lossless_six, result)
    assert [layer.n_experts for layer in pruned.layers] == [4, 4]
    X = np.asarray(batch.embeddings)
    assert mse(model_forward(lossless_six, X), model_forward(pruned, X)) <= 1e-12

    write_enumeration(result, tmp_path)
    summary = json.loads((tmp_path / "enum.json").read_text())
    assert summary["drop_count"] == 2
    assert [entry["dropped"] for entry in summary["best"]] == result.best_sets
    lines = (tmp_path / "enum_layer0.csv").read_text().splitlines()
    assert lines[0] == "dropped,loss"
    assert len(lines) == 1 + 15
