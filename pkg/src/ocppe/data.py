"""Datasets and the (tau1, tau2, sigma) index."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

# Smallest admissible width of a quantile range; keeps 1/(tau2 - tau1) bounded.
MIN_TAU_GAP = 0.01


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations of (Y, D, X). Arrays are copied and made read-only."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or d.ndim != 1 or x.ndim != 2:
            raise DataError("y and d must be vectors and x a matrix")
        n = y.shape[0]
        if d.shape[0] != n or x.shape[0] != n:
            raise DataError(
                f"column lengths differ: y={n}, d={d.shape[0]}, x={x.shape[0]}"
            )
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        for name, arr in (("y", y), ("d", d), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        if self.columns is not None and len(self.columns) != x.shape[1]:
            raise DataError("number of column names does not match x")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "x", _frozen(x))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.d[idx], self.x[idx], self.columns)

    def column(self, name: str) -> np.ndarray:
        """Control column by name (``x1``-style names work without a header)."""
        if self.columns is not None and name in self.columns:
            return self.x[:, self.columns.index(name)]
        if name.startswith("x") and name[1:].isdigit():
            j = int(name[1:]) - 1
            if 0 <= j < self.p_x:
                return self.x[:, j]
        raise DataError(f"unknown control column {name!r}")

    @classmethod
    def from_csv(cls, path) -> Dataset:
        """Read a CSV with a header row.

        Columns ``y`` and ``d`` are required; every other column is a control,
        kept in file order.
        """
        path = Path(path)
        try:
            fh = path.open(newline="")
        except OSError as exc:
            raise DataError(f"cannot open {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if "y" not in header or "d" not in header:
                raise DataError(f"{path}: header must contain 'y' and 'd' columns")
            if len(set(header)) != len(header):
                raise DataError(f"{path}: duplicate column names in header")
            iy, id_ = header.index("y"), header.index("d")
            ctrl = [k for k, h in enumerate(header) if k not in (iy, id_)]
            rows = []
            for rec in reader:
                line = reader.line_num
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != len(header):
                    raise DataError(
                        f"{path}: line {line}: expected {len(header)} fields, got {len(rec)}"
                    )
                try:
                    vals = [float(c) for c in rec]
                except ValueError:
                    raise DataError(f"{path}: line {line}: non-numeric field") from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError(f"{path}: line {line}: non-finite value")
                rows.append(vals)
        if len(rows) < 2:
            raise DataError(f"{path}: need at least 2 data rows")
        arr = np.array(rows)
        x = arr[:, ctrl] if ctrl else np.zeros((arr.shape[0], 0))
        return cls(arr[:, iy], arr[:, id_], x, tuple(header[k] for k in ctrl))


@dataclass(frozen=True, order=True)
class IndexU:
    """A point u = (tau1, tau2, sigma) of the index set."""

    tau1: float
    tau2: float
    sigma: tuple[float, ...] = field(default=())

    def __post_init__(self):
        t1, t2 = float(self.tau1), float(self.tau2)
        if not (0.0 < t1 < t2 < 1.0):
            raise ValueError(f"need 0 < tau1 < tau2 < 1, got ({t1}, {t2})")
        if t2 - t1 < MIN_TAU_GAP - 1e-12:
            raise ValueError(f"tau2 - tau1 must be at least {MIN_TAU_GAP}")
        sigma = self.sigma
        if np.isscalar(sigma):
            sigma = (sigma,)
        object.__setattr__(self, "tau1", t1)
        object.__setattr__(self, "tau2", t2)
        object.__setattr__(self, "sigma", tuple(float(s) for s in sigma))

    @property
    def width(self) -> float:
        return self.tau2 - self.tau1
