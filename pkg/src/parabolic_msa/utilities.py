import logging
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np
import pandas as pd

from parabolic_msa.grid import Array, Grid

# create logging configuration
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Create a console handler
console_handler = logging.StreamHandler()
console_handler.setLevel(logging.INFO)

# Set the formatter for the console handler
formatter = logging.Formatter(
    "%(name)s:%(levelname)s:%(funcName)s:%(message)s",
)
console_handler.setFormatter(formatter)

# Add the console handler to the logger
logger.addHandler(console_handler)

PathLike = Union[str, Path]


class MeshReshaper:
    """Turn grid arrays into long tables with one row per node."""

    def __init__(self, g: Grid):
        self.g = g

    def slice_to_long(self, values: Array) -> pd.DataFrame:
        """Columns x, y, value; x varies slowest."""
        self.g.check_slice(values)
        x, y = self.g.points
        return pd.DataFrame(
            {"x": x.ravel(), "y": y.ravel(), "value": np.asarray(values).ravel()}
        )

    def field_to_long(self, values: Array) -> pd.DataFrame:
        """Columns x, y, t, value; time varies slowest."""
        self.g.check_field(values)
        x, y = self.g.points
        n_levels = values.shape[0]
        return pd.DataFrame(
            {
                "x": np.tile(x.ravel(), n_levels),
                "y": np.tile(y.ravel(), n_levels),
                "t": np.repeat(self.g.times, x.size),
                "value": np.asarray(values).ravel(),
            }
        )

    def boundary_to_long(self, values: Array) -> pd.DataFrame:
        """Columns s, t, value in boundary traversal order; time varies slowest."""
        self.g.check_boundary_field(values)
        s = self.g.arclength
        n_levels = values.shape[0]
        return pd.DataFrame(
            {
                "s": np.tile(s, n_levels),
                "t": np.repeat(self.g.times, s.size),
                "value": np.asarray(values).ravel(),
            }
        )


class Saver(object):
    """Write tables as CSV with a header row, LF line endings and shortest round-trip floats."""

    def __init__(self, output_dir: PathLike):
        self.output_dir = Path(output_dir)
        self.saved_files: list[Path] = []

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def save_frame(self, frame: pd.DataFrame, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(name)
        frame.to_csv(path, index=False, lineterminator="\n")
        self.saved_files.append(path)
        logger.info(f"wrote {path}")
        return path

    def save_text(self, text: str, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(name)
        path.write_text(text, encoding="utf-8", newline="\n")
        self.saved_files.append(path)
        logger.info(f"wrote {path}")
        return path


class RowAppender(object):
    """A CSV file that grows one row at a time, flushed after every row."""

    def __init__(self, path: PathLike, columns: Iterable[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=self.columns).to_csv(self.path, index=False, lineterminator="\n")

    def append(self, row: Mapping[str, object]) -> None:
        frame = pd.DataFrame([row], columns=self.columns)
        frame.to_csv(self.path, mode="a", header=False, index=False, lineterminator="\n")
