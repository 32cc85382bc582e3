"""Logged pricing data and the inequality-aversion parameters."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DomainError, SchemaError

SUPPORT_PAD = 1.05


@dataclass(frozen=True)
class ObservationSet:
    """Logged purchase decisions ``(X_i, P_i, Y_i)``.

    Parameters
    ----------
    features : ndarray of shape (n, d)
        Customer features. ``d`` may be zero.
    prices : ndarray of shape (n,)
        Offered prices, all finite.
    outcomes : ndarray of shape (n,)
        Purchase indicators in {0, 1}.
    price_support : tuple of float, optional
        Integration window ``(p_min, p_max)``. Defaults to the observed
        minimum and ``1.05`` times the observed maximum.
    """

    features: np.ndarray
    prices: np.ndarray
    outcomes: np.ndarray
    price_support: tuple[float, float] | None = None

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float).reshape(-1)
        y = np.asarray(self.outcomes, dtype=float).reshape(-1)
        n = p.shape[0]
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
        if x.ndim != 2 or x.shape[0] != n or y.shape[0] != n:
            raise SchemaError(
                f"features {x.shape}, prices {p.shape} and outcomes {y.shape} "
                "must share the row count"
            )
        if n == 0:
            raise SchemaError("observation set is empty")
        if not np.all(np.isfinite(p)):
            raise SchemaError("prices must be finite")
        if not np.all(np.isfinite(x)):
            raise SchemaError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise SchemaError("outcomes must be 0 or 1")
        if self.price_support is None:
            hi = float(p.max())
            support = (float(p.min()), SUPPORT_PAD * hi if hi > 0 else hi + 1.0)
        else:
            support = (float(self.price_support[0]), float(self.price_support[1]))
        lo, hi = support
        if not hi > lo:
            raise DomainError(f"price support {support} is empty")
        tol = 1e-9 * max(1.0, abs(hi))
        if p.min() < lo - tol or p.max() > hi + tol:
            raise DomainError(f"observed prices leave the price support {support}")
        for name, arr in (("features", x), ("prices", p), ("outcomes", y)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "price_support", support)

    @property
    def n(self) -> int:
        return self.prices.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> ObservationSet:
        """Rows selected by an integer or boolean index, same support."""
        return ObservationSet(
            self.features[index], self.prices[index], self.outcomes[index], self.price_support
        )

    @classmethod
    def from_csv(cls, path, price_support=None) -> ObservationSet:
        return load_csv(path, price_support=price_support)[0]

    def to_csv(self, path, extra: dict[str, list] | None = None) -> None:
        write_csv(path, self, extra)


def _parse_float(text, column, row):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"column {column!r}, row {row}: {text!r} is not numeric") from None
    if not math.isfinite(value):
        raise SchemaError(f"column {column!r}, row {row}: non-finite value {text!r}")
    return value


def load_csv(path, price_support=None) -> tuple[ObservationSet, dict[str, list[str]]]:
    """Read ``x0..x{d-1}, p, y`` columns; other columns come back as strings.

    Feature columns are the headers ``x0, x1, ...`` in numeric order and must
    be contiguous from ``x0``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    missing = [c for c in ("p", "y") if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    feats = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()),
                   key=lambda c: int(c[1:]))
    if [int(c[1:]) for c in feats] != list(range(len(feats))):
        raise SchemaError(f"{path}: feature columns must run x0..x{{d-1}}, got {feats}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    x = np.empty((len(rows), len(feats)))
    p = np.empty(len(rows))
    y = np.empty(len(rows))
    for i, row in enumerate(rows, start=2):  # header is line 1
        for j, c in enumerate(feats):
            x[i - 2, j] = _parse_float(row[c], c, i)
        p[i - 2] = _parse_float(row["p"], "p", i)
        yi = _parse_float(row["y"], "y", i)
        if yi not in (0.0, 1.0):
            raise SchemaError(f"column 'y', row {i}: outcome {row['y']!r} is not 0/1")
        y[i - 2] = yi
    extra = {c: [row[c] for row in rows] for c in header if c not in feats and c not in ("p", "y")}
    return ObservationSet(x, p, y, price_support), extra


def write_csv(path, data: ObservationSet, extra: dict[str, list] | None = None) -> None:
    """Write ``data`` (plus string columns) to a path or an open text stream."""
    extra = extra or {}
    header = [f"x{j}" for j in range(data.d)] + ["p", "y"] + list(extra)

    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row += [repr(float(data.prices[i])), str(int(data.outcomes[i]))]
            row += [extra[c][i] for c in extra]
            w.writerow(row)

    if hasattr(path, "write"):
        dump(path)
    else:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            dump(fh)


@dataclass(frozen=True)
class InequalityParams:
    """Inequality aversion ``r`` (``r = 1`` is plain surplus, ``r < 1`` favours
    low-surplus customers) and the floor on conditional surplus applied before
    raising it to ``r - 1``."""

    r: float = 1.0
    eps_h: float = 1e-6

    def __post_init__(self):
        if not math.isfinite(self.r) or self.r == 0:
            raise DomainError(f"inequality parameter r must be finite and nonzero, got {self.r}")
        if not 0 < self.eps_h <= 1:
            raise DomainError(f"eps_h must lie in (0, 1], got {self.eps_h}")
