from parabolic_msa import utilities
from parabolic_msa.exceptions import DimensionError
from parabolic_msa.grid import Grid
import numpy as np
import pandas as pd
import pytest


@pytest.fixture
def g():
    return Grid(nx=2, ny=1, nt=2)


class TestMeshReshaper:
    @pytest.fixture
    def wide_array(self, g):
        return np.reshape(np.arange(6.0), g.slice_shape)

    def test_slice_to_long(self, g, wide_array):
        actual = utilities.MeshReshaper(g).slice_to_long(wide_array)
        expected = pd.DataFrame(
            {
                "x": [0.0, 0.0, 0.5, 0.5, 1.0, 1.0],
                "y": [0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
                "value": np.arange(6.0),
            }
        )
        pd.testing.assert_frame_equal(actual, expected)

    def test_field_to_long(self, g):
        values = np.reshape(np.arange(18.0), g.field_shape)
        actual = utilities.MeshReshaper(g).field_to_long(values)
        assert list(actual.columns) == ["x", "y", "t", "value"]
        assert len(actual) == 18
        np.testing.assert_array_equal(actual["t"].to_numpy()[[0, 5, 6, 17]], [0, 0, 0.5, 1])
        np.testing.assert_array_equal(actual["value"].to_numpy(), np.arange(18.0))

    def test_boundary_to_long(self, g):
        values = g.constant_boundary_field(2.0)
        actual = utilities.MeshReshaper(g).boundary_to_long(values)
        assert list(actual.columns) == ["s", "t", "value"]
        assert len(actual) == g.boundary_field_shape[0] * g.n_boundary
        np.testing.assert_array_equal(actual["s"].to_numpy()[: g.n_boundary], g.arclength)

    def test_wrong_shape(self, g):
        with pytest.raises(DimensionError):
            utilities.MeshReshaper(g).slice_to_long(np.zeros((2, 2)))


class TestSaver:
    @pytest.fixture
    def frame(self):
        return pd.DataFrame({"iter": [1, 2], "J": [0.5, 0.25]})

    def test_save_frame(self, tmp_path, frame):
        saver = utilities.Saver(tmp_path / "out")
        path = saver.save_frame(frame, "history.csv")

        assert path == tmp_path / "out" / "history.csv"
        assert path.read_bytes() == b"iter,J\n1,0.5\n2,0.25\n"
        assert saver.saved_files == [path]

    def test_save_frame_round_trip(self, tmp_path, frame):
        path = utilities.Saver(tmp_path).save_frame(frame, "history.csv")
        pd.testing.assert_frame_equal(pd.read_csv(path), frame)

    def test_save_text(self, tmp_path):
        saver = utilities.Saver(tmp_path)
        path = saver.save_text("rho = 1.0\n", "manifest.txt")
        assert path.read_text() == "rho = 1.0\n"


class TestRowAppender:
    def test_header_only(self, tmp_path):
        table = utilities.RowAppender(tmp_path / "sweep.csv", ["rho", "final_J"])
        assert table.path.read_text() == "rho,final_J\n"

    def test_append(self, tmp_path):
        table = utilities.RowAppender(tmp_path / "sweep.csv", ["rho", "final_J"])
        table.append({"rho": 0.5, "final_J": 1.25})
        table.append({"final_J": 2.0, "rho": 1.0})

        actual = pd.read_csv(table.path)
        expected = pd.DataFrame({"rho": [0.5, 1.0], "final_J": [1.25, 2.0]})
        pd.testing.assert_frame_equal(actual, expected)


if __name__ == "__main__":
    pytest.main()
