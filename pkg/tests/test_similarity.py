# tests/test_similarity.py - HSIC/CKA, expert representations and similarity matrices
import numpy as np
import pytest

from core.exceptions import ConfigurationError, DataError, DegenerateInputError, UndefinedSimilarityError
from core.experts import ExpertParams, expert_forward
from modelio.calibration import CalibrationBatch
from similarity.kernels import Kernel, cka, hsic, rbf_kernel
from similarity.matrix import (
    Metric,
    SimilarityMatrix,
    build_layer_similarity,
    read_similarity_csv,
    similarity_matrix,
    write_similarity_csv,
)
from similarity.representations import (
    ExpertRepresentation,
    RepresentationKind,
    mixup,
    represent_data_centric,
    represent_layer,
    represent_router_logits,
    represent_surrogate,
    represent_vectorized,
)
from tests.factories import planted_model, random_expert, random_layer, scalar_expert

ALL_METRICS = list(Metric)
ALL_KINDS = list(RepresentationKind)


class TestHsic:
    def test_identity_kernels_two_samples(self):
        assert hsic(np.eye(2), np.eye(2)) == pytest.approx(1.0, abs=1e-12)

    def test_hand_case(self):
        assert hsic(np.eye(2), np.diag([1.0, 0.0])) == pytest.approx(0.5, abs=1e-12)

    def test_constant_kernel_is_annihilated(self, rng):
        K = rng.normal(size=(5, 5))
        assert hsic(np.ones((5, 5)), K @ K.T) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric(self, rng):
        A, B = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
        assert hsic(A @ A.T, B @ B.T) == pytest.approx(hsic(B @ B.T, A @ A.T), abs=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(DegenerateInputError):
            hsic(np.ones((1, 1)), np.ones((1, 1)))


class TestCka:
    @pytest.mark.parametrize("kernel", list(Kernel))
    def test_self_alignment(self, rng, kernel):
        R = rng.normal(size=(20, 5))
        assert cka(R, R, kernel) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("kernel", list(Kernel))
    def test_symmetric(self, rng, kernel):
        A, B = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
        assert cka(A, B, kernel) == pytest.approx(cka(B, A, kernel), abs=1e-9)

    def test_linear_invariances(self, rng):
        R, other = rng.normal(size=(30, 6)), rng.normal(size=(30, 6))
        Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        assert cka(R @ Q * 3.5, other) == pytest.approx(cka(R, other), abs=1e-6)

    def test_orthogonal_centered_columns(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        Y = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
        assert cka(X, Y) == pytest.approx(0.0, abs=1e-12)

    def test_in_unit_interval(self, rng):
        for _ in range(10):
            A, B = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
            assert 0.0 <= cka(A, B) <= 1.0

    def test_constant_representation_is_undefined(self, rng):
        with pytest.raises(UndefinedSimilarityError):
            cka(np.ones((5, 3)), rng.normal(size=(5, 3)))

    def test_single_row_reads_entries_as_samples(self, rng):
        a = rng.normal(size=(1, 40))
        b = 2.0 * a + 1.0
        assert cka(a, b) == pytest.approx(1.0, abs=1e-9)
        c = rng.normal(size=(1, 40))
        corr = np.corrcoef(a[0], c[0])[0, 1]
        assert cka(a, c) == pytest.approx(corr ** 2, abs=1e-9)

    def test_rbf_constant_rows_give_ones_kernel(self):
        np.testing.assert_array_equal(rbf_kernel(np.ones((4, 2))), np.ones((4, 4)))


class TestRepresentations:
    def test_identical_experts_identical_outputs(self, rng):
        e = random_expert(rng)
        layer = random_layer(rng).replace(experts=(e, e, random_expert(rng), random_expert(rng)))
        reps = represent_data_centric(layer, CalibrationBatch(rng.normal(size=(8, 4))))
        np.testing.assert_array_equal(reps[0].data, reps[1].data)

    def test_data_centric_is_expert_output(self, rng):
        layer = random_layer(rng)
        batch = CalibrationBatch(rng.normal(size=(8, 4)))
        reps = represent_data_centric(layer, batch)
        np.testing.assert_array_equal(reps[2].data, expert_forward(layer.experts[2], batch.embeddings))

    def test_augmentation_is_seeded(self, rng):
        layer = random_layer(rng)
        batch = CalibrationBatch(rng.normal(size=(8, 4)))
        first = represent_data_centric(layer, batch, augment=True, seed=3)
        second = represent_data_centric(layer, batch, augment=True, seed=3)
        np.testing.assert_array_equal(first[0].data, second[0].data)
        assert not np.array_equal(first[0].data, represent_data_centric(layer, batch)[0].data)

    def test_mixup_stays_in_convex_hull(self, rng):
        X = rng.normal(size=(10, 2))
        mixed = mixup(X, seed=0)
        assert mixed.shape == X.shape
        assert np.all(mixed.min(axis=0) >= X.min(axis=0) - 1e-12)
        assert np.all(mixed.max(axis=0) <= X.max(axis=0) + 1e-12)

    def test_vectorized_scalar_expert(self):
        np.testing.assert_array_equal(represent_vectorized(scalar_expert(1.0, 2.0, 3.0)).data, [[1.0, 2.0, 3.0]])

    def test_vectorized_length(self, rng):
        e = random_expert(rng, d_model=3, d_ff=5)
        assert represent_vectorized(e).shape == (1, 3 * 5 * 3)

    def test_surrogate_all_ones(self):
        ones = np.ones((3, 3))
        e = ExpertParams(ones, np.eye(3), ones)
        np.testing.assert_array_equal(represent_surrogate(e).data, ones)

    def test_surrogate_zero_gate(self, rng):
        e = random_expert(rng)
        zero = ExpertParams(np.zeros_like(e.theta1), e.theta2, e.theta3)
        assert not np.any(represent_surrogate(zero).data)

    def test_surrogate_matches_triple_loop(self, rng):
        e = random_expert(rng, d_model=2, d_ff=3)
        t1, t2, t3 = (t.astype(np.float64) for t in (e.theta1, e.theta2, e.theta3))
        expected = np.array([
            [sum(t2[o, j] * t1[j, i] * t3[j, i] for j in range(3)) for i in range(2)]
            for o in range(2)
        ])
        np.testing.assert_allclose(represent_surrogate(e).data, expected, atol=1e-12)

    def test_router_logits(self, rng):
        layer = random_layer(rng)
        batch = CalibrationBatch(rng.normal(size=(6, 4)))
        reps = represent_router_logits(layer, batch)
        assert len(reps) == 4 and reps[0].shape == (6, 1)
        np.testing.assert_allclose(reps[1].data[:, 0], batch.embeddings @ layer.router[1].astype(np.float64))

    @pytest.mark.parametrize("kind", [RepresentationKind.DATA, RepresentationKind.ROUTER])
    def test_calibration_required(self, rng, kind):
        with pytest.raises(ConfigurationError):
            represent_layer(random_layer(rng), kind)


class TestSimilarityMatrix:
    @pytest.mark.parametrize("metric", ALL_METRICS)
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_planted_duplicates_score_maximum(self, planted, batch, metric, kind):
        sim = build_layer_similarity(planted.layers[0], kind, metric, batch=batch)
        for a, b in ((0, 1), (2, 3), (4, 5), (6, 7)):
            assert sim.scores[a, b] == pytest.approx(metric.maximum, abs=1e-9)
        np.testing.assert_array_equal(np.diag(sim.scores), np.full(8, metric.maximum))
        np.testing.assert_array_equal(sim.scores, sim.scores.T)

    def test_neg_mse_arithmetic(self):
        reps = [ExpertRepresentation(RepresentationKind.VECTORIZED, [[1.0]]),
                ExpertRepresentation(RepresentationKind.VECTORIZED, [[3.0]])]
        sim = similarity_matrix(reps, Metric.NEG_MSE)
        assert sim.scores[0, 1] == -4.0
        assert sim.scores[0, 0] == 0.0

    def test_noisy_copies_stand_out(self, batch):
        m = planted_model(0.01)
        sim = build_layer_similarity(m.layers[0], RepresentationKind.DATA, Metric.CKA_LINEAR, batch=batch)
        pairs = {(0, 1), (2, 3), (4, 5), (6, 7)}
        within = [sim.scores[a, b] for a, b in pairs]
        cross = [sim.scores[a, b] for a in range(8) for b in range(a + 1, 8) if (a, b) not in pairs]
        assert min(within) > 0.7
        assert min(within) > max(cross)

    def test_zero_variance_expert_scores_zero(self, rng, caplog):
        reps = [
            ExpertRepresentation(RepresentationKind.DATA, np.zeros((6, 3))),
            ExpertRepresentation(RepresentationKind.DATA, rng.normal(size=(6, 3))),
            ExpertRepresentation(RepresentationKind.DATA, rng.normal(size=(6, 3))),
        ]
        sim = similarity_matrix(reps, Metric.CKA_LINEAR)
        assert sim.scores[0, 1] == 0.0 and sim.scores[0, 2] == 0.0
        assert sim.scores[0, 0] == 1.0
        assert "zero-variance" in caplog.text

    def test_mixed_kinds_rejected(self, rng):
        reps = [ExpertRepresentation(RepresentationKind.DATA, rng.normal(size=(3, 2))),
                ExpertRepresentation(RepresentationKind.SURROGATE, rng.normal(size=(3, 2)))]
        with pytest.raises(DataError):
            similarity_matrix(reps, Metric.COSINE)

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(DataError):
            SimilarityMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]), Metric.COSINE)

    def test_csv_round_trip_infers_metric(self, tmp_path, planted):
        sim = build_layer_similarity(planted.layers[0], RepresentationKind.SURROGATE, Metric.NEG_MSE)
        write_similarity_csv(sim, tmp_path / "sim.csv")
        loaded = read_similarity_csv(tmp_path / "sim.csv")
        assert loaded.metric is Metric.NEG_MSE
        np.testing.assert_allclose(loaded.scores, sim.scores, rtol=1e-8)

    def test_csv_explicit_metric(self, tmp_path, planted):
        sim = build_layer_similarity(planted.layers[1], RepresentationKind.VECTORIZED, Metric.COSINE)
        write_similarity_csv(sim, tmp_path / "sim.csv")
        assert read_similarity_csv(tmp_path / "sim.csv", Metric.COSINE).metric is Metric.COSINE
