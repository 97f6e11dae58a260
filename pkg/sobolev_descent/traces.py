"""
Descent traces and point cloud files.

Every csv file is written through pandas with FLOAT_FORMAT so that two
identical runs give byte identical files.
"""

import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from sobolev_descent.errors import DataIOError, ParameterError

FLOAT_FORMAT = "%.17g"
KERNEL_COLUMNS = ["step", "t", "mmd2", "rksd2", "first_variation", "wall_ms"]
NEURAL_COLUMNS = KERNEL_COLUMNS + ["lambda_alm", "omega_hat", "ehat"]
POINT_COLUMNS = ["x", "y", "z"]


@dataclass
class TraceRecord:
    """One recorded step of a descent."""
    step: int
    t: float
    mmd2: float
    rksd2: float = np.nan
    first_variation: float = np.nan
    wall_ms: float = 0.0
    extras: dict = field(default_factory=dict)

    def as_row(self):
        row = asdict(self)
        row.update(row.pop("extras"))
        return row


class DescentTrace:
    """
    Ordered list of TraceRecord with strictly increasing step indices.

    :param columns: column order of the csv file, KERNEL_COLUMNS by default.
     Extra columns (eval_mmd2, lambda_alm, ...) are read from the records'
     extras.
    :param metadata: free dictionary (lambda, seeds, ...) kept alongside the
     records, not written in the csv
    """

    def __init__(self, columns=None, metadata=None):
        self.columns = list(columns or KERNEL_COLUMNS)
        self.metadata = dict(metadata or {})
        self.records = []
        # step -> (n, d) copy of the particle cloud
        self.snapshots = {}

    def append(self, record):
        if self.records and record.step <= self.records[-1].step:
            raise ParameterError(
                f"Trace steps must increase, got {record.step} after "
                f"{self.records[-1].step}")
        for key in record.extras:
            if key not in self.columns:
                self.columns.append(key)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    def __repr__(self):
        return f"DescentTrace({len(self)} records, columns={self.columns})"

    def column(self, name):
        """Values of one column as a float array."""
        return self.to_frame()[name].to_numpy(dtype=np.float64)

    @property
    def steps(self):
        return np.array([r.step for r in self.records], dtype=int)

    @property
    def mmd2(self):
        return np.array([r.mmd2 for r in self.records], dtype=np.float64)

    def to_frame(self):
        frame = pd.DataFrame([r.as_row() for r in self.records])
        if frame.empty:
            return pd.DataFrame(columns=self.columns)
        return frame.reindex(columns=self.columns)

    def to_csv(self, path):
        """Write the trace, header step,t,mmd2,rksd2,first_variation,wall_ms[,...]."""
        try:
            self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        except OSError as e:
            raise DataIOError(f"Could not write trace {path}: {e}")

    @classmethod
    def from_csv(cls, path):
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as e:
            raise DataIOError(f"Could not read trace {path}: {e}")

        trace = cls(columns=list(frame.columns))
        base = set(KERNEL_COLUMNS)
        for row in frame.to_dict(orient="records"):
            trace.append(TraceRecord(
                step=int(row["step"]),
                t=row["t"],
                mmd2=row["mmd2"],
                rksd2=row.get("rksd2", np.nan),
                first_variation=row.get("first_variation", np.nan),
                wall_ms=row.get("wall_ms", 0.0),
                extras={k: v for k, v in row.items() if k not in base},
            ))
        return trace


def point_columns(d):
    """Header of a point cloud csv: x, x,y or x,y,z."""
    if d <= len(POINT_COLUMNS):
        return POINT_COLUMNS[:d]
    return [f"x{a}" for a in range(d)]


def write_points_csv(path, points):
    """
    Save a point cloud, one point per line.

    :param path: output csv file
    :param points: ParticleSet or array of shape (n, d)
    """
    points = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    frame = pd.DataFrame(points, columns=point_columns(points.shape[1]))
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise DataIOError(f"Could not write points {path}: {e}")


def read_points_csv(path):
    """
    Load a point cloud written by write_points_csv.

    :return: float64 array of shape (n, d)
    """
    if not os.path.isfile(path):
        raise DataIOError(f"No such point file: {path}")
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataIOError(f"Could not read points {path}: {e}")

    expected = point_columns(frame.shape[1])
    if list(frame.columns) != expected:
        raise DataIOError(
            f"{path}: expected header {','.join(expected)}, "
            f"got {','.join(map(str, frame.columns))}")
    return frame.to_numpy(dtype=np.float64)
