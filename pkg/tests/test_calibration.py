# tests/test_calibration.py - Calibration files, seeded sampling and fit/held-out splits
import numpy as np
import pytest

from core.exceptions import ConfigurationError, DataError, DegenerateInputError
from modelio.calibration import (
    CalibrationBatch,
    fit_eval_split,
    load_calibration,
    random_embeddings,
    read_embeddings,
    sample_batches,
    save_calibration,
)


@pytest.fixture
def ten_rows():
    return np.arange(30, dtype=np.float32).reshape(10, 3)


class TestSampling:
    def test_fixed_seed_is_reproducible(self, ten_rows):
        first = sample_batches(ten_rows, 2, 1, seed=5)
        second = sample_batches(ten_rows, 2, 1, seed=5)
        np.testing.assert_array_equal(first[0].embeddings, second[0].embeddings)
        assert first[0].s == 2

    def test_rows_drawn_without_replacement(self, ten_rows):
        batches = sample_batches(ten_rows, 5, 2, seed=0)
        rows = np.concatenate([b.embeddings for b in batches])
        assert len({tuple(r) for r in rows}) == 10

    def test_too_many_rows(self, ten_rows):
        with pytest.raises(ConfigurationError):
            sample_batches(ten_rows, 11, 1, seed=0)

    def test_seeds_give_different_batches(self):
        embeddings = random_embeddings(200, 4, seed=0)
        a = sample_batches(embeddings, 10, 1, seed=1)[0].embeddings
        b = sample_batches(embeddings, 10, 1, seed=2)[0].embeddings
        assert not np.array_equal(a, b)

    def test_fit_and_held_out_are_disjoint(self, ten_rows):
        fit, held_out = fit_eval_split(ten_rows, 6, 4, seed=3)
        assert (fit.s, held_out.s) == (6, 4)
        fit_rows = {tuple(r) for r in fit.embeddings}
        assert not fit_rows & {tuple(r) for r in held_out.embeddings}


class TestBatch:
    def test_single_row_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            CalibrationBatch(np.ones((1, 3)))

    def test_non_finite_rejected(self):
        X = np.ones((3, 2))
        X[1, 0] = np.nan
        with pytest.raises(DataError):
            CalibrationBatch(X)

    def test_upcasts_to_float64(self):
        assert CalibrationBatch(np.ones((2, 2), dtype=np.float32)).embeddings.dtype == np.float64


class TestFiles:
    def test_round_trip(self, tmp_path):
        embeddings = random_embeddings(20, 5, seed=4)
        save_calibration(embeddings, tmp_path / "c.bin", source_id="c4-sample")
        loaded, source_id = read_embeddings(tmp_path / "c.bin")
        np.testing.assert_array_equal(loaded, embeddings)
        assert source_id == "c4-sample"

    def test_load_calibration_batches(self, calib_file):
        batches = load_calibration(calib_file, 16, 3, seed=0)
        assert [b.s for b in batches] == [16, 16, 16]
        assert batches[0].source_id == "fixture#0"

    def test_random_embeddings_are_seeded(self):
        np.testing.assert_array_equal(random_embeddings(4, 3, seed=9), random_embeddings(4, 3, seed=9))
        assert random_embeddings(4, 3, seed=9).dtype == np.float32
