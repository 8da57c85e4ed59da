import logging

import numpy as np
import pytest

from srfe.ingest import EmptyAfterCleaning, MissingTarget, NoNumericFeatures, ingest_csv


def _write(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


class TestIngestCsv:
    def test_shape(self, tmp_path, rng):
        rows = rng.normal(size=(100, 4)).round(6)
        d = ingest_csv(_write(tmp_path / "a.csv", ["a", "b", "c", "y"], rows), "y")
        assert (d.n, d.m) == (100, 3)
        assert d.feature_names == ["a", "b", "c"]
        np.testing.assert_array_equal(d.y, rows[:, 3])

    def test_text_column_dropped(self, tmp_path, caplog):
        rows = [[1.0, "red", 2.0, 3.0], [2.0, "blue", 1.0, 0.5], [3.0, "red", 0.0, 1.0]]
        path = _write(tmp_path / "b.csv", ["a", "colour", "b", "y"], rows)
        with caplog.at_level(logging.WARNING):
            d = ingest_csv(path, "y")
        assert d.feature_names == ["a", "b"]
        assert "colour" in caplog.text
        np.testing.assert_array_equal(d.X[:, 0], [1.0, 2.0, 3.0])

    def test_missing_row_dropped(self, tmp_path):
        rows = [[1, 2, 3], [4, "NA", 6], [7, 8, 9]]
        d = ingest_csv(_write(tmp_path / "c.csv", ["a", "b", "y"], rows), "y")
        assert d.n == 2
        assert d.info["dropped_rows"] == 1

    def test_missing_target(self, tmp_path):
        with pytest.raises(MissingTarget):
            ingest_csv(_write(tmp_path / "d.csv", ["a", "b"], [[1, 2]]), "y")

    def test_text_target(self, tmp_path):
        with pytest.raises(MissingTarget):
            ingest_csv(_write(tmp_path / "e.csv", ["a", "y"], [[1, "hi"]]), "y")

    def test_no_numeric_features(self, tmp_path):
        with pytest.raises(NoNumericFeatures):
            ingest_csv(_write(tmp_path / "f.csv", ["name", "y"], [["x", 1], ["z", 2]]), "y")

    def test_empty_after_cleaning(self, tmp_path):
        with pytest.raises(EmptyAfterCleaning):
            ingest_csv(_write(tmp_path / "g.csv", ["a", "y"], [["", 1], ["nan", 2]]), "y")
