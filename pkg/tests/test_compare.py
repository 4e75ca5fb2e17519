# tests/test_compare.py - Strategy comparison and the count-guided baseline
import numpy as np
import pytest

from core.exceptions import ConfigurationError
from merging.merge import TopKPolicy
from modelio.calibration import fit_eval_split, read_embeddings
from pipeline.compare import COUNT_GUIDED, compare_strategies, count_guided_model, least_visited
from pipeline.evaluate import evaluate_models
from pipeline.hints import count_visits
from pipeline.models import PruneJob
from pipeline.runner import execute_job
from tests.factories import planted_model


class TestLeastVisited:
    def test_lowest_counts(self):
        assert least_visited(np.array([3, 1, 1, 5]), 2) == [1, 2]

    def test_ties_drop_the_higher_index(self):
        assert least_visited(np.array([1, 1, 1]), 1) == [2]
        assert least_visited(np.array([0, 4, 0, 0]), 2) == [2, 3]

    def test_protected_are_kept(self):
        assert least_visited(np.array([0, 4, 9, 2]), 1, protected={0}) == [3]

    def test_too_many(self):
        with pytest.raises(ConfigurationError):
            least_visited(np.array([1, 2]), 2, protected={0})


class TestCountGuided:
    def test_keeps_the_most_visited(self, planted, batch):
        pruned = count_guided_model(planted, batch, 6)
        counts = count_visits(planted, batch).counts
        for index, layer in enumerate(pruned.layers):
            assert layer.n_experts == 6
            kept = [i for i in range(8) if i not in least_visited(counts[index], 2)]
            np.testing.assert_array_equal(layer.router, planted.layers[index].router[kept])

    def test_r_out_of_range(self, planted, batch):
        with pytest.raises(ConfigurationError, match="^layer 0:"):
            count_guided_model(planted, batch, 9)


class TestCompareStrategies:
    def test_empty(self):
        assert compare_strategies([]).rows == []

    def test_identical_jobs_give_identical_rows(self, planted_file, calib_file):
        job = PruneJob.parse_job({"model_path": str(planted_file), "calib_path": str(calib_file), "r": 4})
        table = compare_strategies([job, job])
        assert [row.strategy for row in table.rows] == ["uniform", COUNT_GUIDED, "uniform"]
        assert table.rows[0] == table.rows[2]

    def test_baseline_can_be_skipped(self, planted_file, calib_file):
        job = PruneJob.parse_job({"model_path": str(planted_file), "calib_path": str(calib_file), "r": 4})
        assert [row.strategy for row in compare_strategies([job], count_guided=False).rows] == ["uniform"]

    def test_no_baseline_without_calibration(self, planted_file):
        job = PruneJob.parse_job({"model_path": str(planted_file), "r": 4, "representation": "vectorized"})
        assert len(compare_strategies([job]).rows) == 1

    def test_exact_pairs_beat_count_guided(self, planted_file, calib_file):
        job = PruneJob.parse_job(
            {"model_path": str(planted_file), "calib_path": str(calib_file), "r": 4, "top_k_policy": "scale"}
        )
        guided, baseline = compare_strategies([job]).rows
        assert guided.end_to_end_mse <= 1e-8 < baseline.end_to_end_mse
        assert guided.expert_params_after == baseline.expert_params_after


@pytest.mark.parametrize("noise", [0.01, 0.05, 0.1])
def test_similarity_merging_degrades_gracefully(calib_file, noise):
    m = planted_model(noise)
    embeddings, _ = read_embeddings(calib_file)
    fit, held_out = fit_eval_split(embeddings, 200, 64, seed=0)
    base = {"model_path": "planted.bin", "calib_path": str(calib_file), "r": 6, "top_k_policy": "preserve"}

    guided = execute_job(m, PruneJob.parse_job(base), fit, held_out).report.end_to_end_mse
    random_pairs = np.mean([
        execute_job(
            m, PruneJob.parse_job({**base, "algorithm": "random", "representation": "surrogate", "seed": seed}),
            fit, held_out,
        ).report.end_to_end_mse
        for seed in range(20)
    ])
    dropped = count_guided_model(m, fit, 6, top_k_policy=TopKPolicy.PRESERVE)
    count_guided = evaluate_models(m, dropped, held_out.embeddings).end_to_end_mse

    assert guided < random_pairs
    assert guided < count_guided
