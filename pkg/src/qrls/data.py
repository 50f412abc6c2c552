"""Series generation, lag embedding, causal standardization, CSV input.

The synthetic benchmark process is the bounded chaotic map

    x_t = 2 x_{t-1} / (1 + 0.8 x_{t-1}^2) + e_t,  e_t ~ U(-1, 1),

with x_0 ~ U(-1, 1).  The map's magnitude peaks at sqrt(1/0.8) at
x = 1/sqrt(0.8), so |x_t| <= sqrt(1.25) + 1 for every t.

Standardization is strictly causal: the z-score of x_t uses mean and
standard deviation of earlier observations only, guarded by a small
floor on the deviation.  The very first outputs are therefore large
(statistics of an empty or single-point prefix); downstream feature maps
are bounded, so this warm-up transient is benign and deliberate - no
future information ever leaks backwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EPS_SD",
    "Series",
    "LaggedSample",
    "OnlineStandardizer",
    "gen_nonlinear_ar",
    "lag_embed",
    "standardize_push",
    "standardize_series",
    "read_csv_series",
]

# Floor on the running standard deviation used by the causal z-score.
EPS_SD = 1e-8


@dataclass
class Series:
    """Ordered real sequence; sample_seed is 0 for external data."""

    values: np.ndarray
    name: str = "series"
    sample_seed: int = 0


@dataclass
class LaggedSample:
    """Input lags (most recent first) and the target they precede."""

    x: np.ndarray  # (x_{t-1}, ..., x_{t-L})
    y: float  # x_t
    t: int


@dataclass
class OnlineStandardizer:
    """Welford accumulator producing prior-only z-scores.

    mode "expanding" ingests each value after transforming it; "frozen"
    keeps the statistics fixed (used after a training prefix).
    """

    count: int = 0
    running_mean: float = 0.0
    running_m2: float = 0.0
    mode: str = "expanding"

    def sd(self) -> float:
        if self.count < 1:
            return 0.0
        return math.sqrt(self.running_m2 / self.count)


def gen_nonlinear_ar(n: int, seed: int) -> Series:
    """Generate n points of the chaotic map; deterministic per seed."""
    if n < 1:
        raise ValueError(f"series length must be >= 1, got {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    x = np.empty(n)
    x[0] = rng.uniform(-1.0, 1.0)
    eps = rng.uniform(-1.0, 1.0, size=n - 1)
    for t in range(1, n):
        prev = x[t - 1]
        x[t] = 2.0 * prev / (1.0 + 0.8 * prev * prev) + eps[t - 1]
    return Series(values=x, name="nonlinear-ar", sample_seed=int(seed))


def lag_embed(series: Series, lags: int) -> list[LaggedSample]:
    """Turn a series into (lag-vector, next-value) pairs in time order.

    Sample t carries x = (values[t-1], ..., values[t-lags]) and
    y = values[t]; nothing at an index >= t is ever read for x.
    """
    vals = np.asarray(series.values, dtype=float)
    if lags < 1:
        raise ValueError(f"lag order must be >= 1, got {lags}")
    if vals.size < lags + 1:
        raise ValueError(
            f"series of length {vals.size} too short for {lags} lags "
            f"(need at least {lags + 1})"
        )
    out = []
    for t in range(lags, vals.size):
        x = vals[t - lags : t][::-1].copy()
        out.append(LaggedSample(x=x, y=float(vals[t]), t=t))
    return out


def standardize_push(s: OnlineStandardizer, x: float) -> float:
    """Causal z-score of x, then (in expanding mode) ingest x."""
    out = (x - s.running_mean) / max(s.sd(), EPS_SD)
    if s.mode == "expanding":
        s.count += 1
        delta = x - s.running_mean
        s.running_mean += delta / s.count
        s.running_m2 += delta * (x - s.running_mean)
    return out


def standardize_series(series: Series, s: OnlineStandardizer | None = None) -> Series:
    """Causally standardize a whole series with one shared accumulator."""
    if s is None:
        s = OnlineStandardizer()
    vals = np.asarray(series.values, dtype=float)
    out = np.empty_like(vals)
    for i, v in enumerate(vals):
        out[i] = standardize_push(s, float(v))
    return Series(values=out, name=series.name + "-std", sample_seed=series.sample_seed)


def read_csv_series(path: str, column: str | int = 0) -> Series:
    """Read one numeric column from a CSV file, preserving row order.

    The header line is auto-detected (a first row that does not parse as
    numbers is treated as a header).  Columns may be addressed by header
    name or zero-based index.  Malformed cells are reported with their
    file line number.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=1) if row]
    if not rows:
        raise ValueError(f"{path}: file has no data rows")

    def _numeric(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    first = rows[0][1]
    has_header = not all(_numeric(c) for c in first if c.strip() != "")
    if isinstance(column, str):
        if not has_header:
            raise ValueError(f"{path}: no header row, cannot look up column {column!r}")
        try:
            col_idx = first.index(column)
        except ValueError:
            raise ValueError(
                f"{path}: no column named {column!r} (header: {first})"
            ) from None
    else:
        col_idx = int(column)
    data_rows = rows[1:] if has_header else rows
    if not data_rows:
        raise ValueError(f"{path}: header only, no data rows")
    values = np.empty(len(data_rows))
    for i, (lineno, row) in enumerate(data_rows):
        if col_idx >= len(row):
            raise ValueError(f"{path}: row {lineno} has no column {col_idx}")
        cell = row[col_idx]
        try:
            values[i] = float(cell)
        except ValueError:
            raise ValueError(
                f"{path}: row {lineno}: cell {cell!r} in column {col_idx} is not numeric"
            ) from None
    if not np.isfinite(values).all():
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValueError(f"{path}: row {data_rows[bad][0]}: non-finite value")
    name = column if isinstance(column, str) else f"col{col_idx}"
    return Series(values=values, name=str(name), sample_seed=0)
