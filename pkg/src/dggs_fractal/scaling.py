"""Scaling-range selection and box-counting dimension fits."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .covering import CoverTable
from .dggs.grid import GridKind
from .errors import DegenerateAbscissaError, EmptyInputError, InsufficientRangeError


@dataclass(frozen=True)
class RangePolicy:
    bbox_ratio_min: float = 0.1
    slope_low: float = 0.10
    slope_high: float = 1.95
    min_points: int = 4

    def __post_init__(self):
        if not 0.0 < self.bbox_ratio_min < 1.0:
            raise ValueError("bbox_ratio_min must lie in (0, 1)")
        if not self.slope_low < self.slope_high:
            raise ValueError("slope_low must be below slope_high")
        if self.min_points < 3:
            raise ValueError("min_points must be >= 3")


@dataclass(frozen=True)
class ScalingFit:
    grid: GridKind | None
    d_b: float
    intercept: float
    se_ols: float
    se_corrected: float
    p_value: float
    k_used: tuple
    n_points: int

    def to_dict(self, policy: RangePolicy | None = None):
        out = {
            "grid": self.grid.value if self.grid is not None else None,
            "d_b": self.d_b,
            "intercept": self.intercept,
            "se_ols": self.se_ols,
            "se_corrected": self.se_corrected,
            "p_value": self.p_value,
            "resolutions_used": list(self.k_used),
            "n_points": self.n_points,
        }
        if policy is not None:
            out["policy"] = asdict(policy)
        return out


@dataclass(frozen=True)
class AggregateFit:
    d_b_mean: float
    se_mean: float
    per_grid: tuple = field(default_factory=tuple)

    def to_dict(self, policy: RangePolicy | None = None):
        return {
            "d_b_mean": self.d_b_mean,
            "se_mean": self.se_mean,
            "per_grid": [f.to_dict(policy) for f in self.per_grid],
        }


def local_slopes(log_n, log_inv_delta):
    log_n = np.asarray(log_n, dtype=float)
    x = np.asarray(log_inv_delta, dtype=float)
    dx = np.diff(x)
    if np.any(dx == 0):
        raise DegenerateAbscissaError("two rows share the same delta")
    return np.diff(log_n) / dx


def select_range(table: CoverTable, policy: RangePolicy = RangePolicy()):
    """Resolutions of the longest run free of saturation, sparse rows and sharp slope changes.

    A row is rejected when every bbox cell is hit or when the hit fraction
    of bbox cells falls below ``bbox_ratio_min``. A step between
    consecutive rows is rejected when its local slope leaves
    [slope_low, slope_high]. The run may not contain rejected rows or steps.
    """
    k, d, n, b = table.arrays()
    if len(k) < policy.min_points:
        raise InsufficientRangeError(f"table has {len(k)} rows, need at least {policy.min_points}")
    row_ok = (n < b) & (n >= policy.bbox_ratio_min * b) & (n > 0)
    with np.errstate(divide="ignore"):
        s = local_slopes(np.log(np.maximum(n, 1)), -np.log(d))
    step_ok = (s >= policy.slope_low) & (s <= policy.slope_high)
    best = (0, 0)
    i = 0
    while i < len(k):
        if not row_ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(k) and row_ok[j + 1] and step_ok[j]:
            j += 1
        if j - i + 1 > best[1] - best[0]:
            best = (i, j + 1)
        i = j + 1
    run = [int(x) for x in k[best[0]:best[1]]]
    if len(run) < policy.min_points:
        raise InsufficientRangeError(
            f"longest usable run has {len(run)} resolutions, need {policy.min_points}")
    return run


def corrected_se(log_n, log_inv_delta) -> float:
    """Standard error from the spread of per-step slopes: sd(s) / sqrt(m)."""
    s = local_slopes(log_n, log_inv_delta)
    if len(s) < 2:
        raise InsufficientRangeError("corrected SE needs at least 3 points")
    return float(np.std(s, ddof=1) / math.sqrt(len(s)))


def ols(x, y):
    """Slope, intercept and the textbook slope SE (n - 2 degrees of freedom)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0 or not np.isfinite(sxx):
        raise DegenerateAbscissaError("all abscissae are equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    n = len(x)
    if n > 2:
        resid = y - (intercept + slope * x)
        se = math.sqrt(float(np.sum(resid ** 2)) / (n - 2) / sxx)
    else:
        se = math.nan
    return slope, intercept, se


def fit_points(delta, n_cells, grid=None, k_used=()) -> ScalingFit:
    """Fit log N against log(1/delta) for explicit series."""
    delta = np.asarray(delta, dtype=float)
    n_cells = np.asarray(n_cells, dtype=float)
    if len(delta) < 3:
        raise InsufficientRangeError("a fit needs at least 3 points")
    x = -np.log(delta)
    y = np.log(n_cells)
    slope, intercept, se_ols = ols(x, y)
    order = np.argsort(x)
    se_c = corrected_se(y[order], x[order])
    m = len(x) - 1
    if se_c > 0:
        t = slope / se_c
        p = float(2.0 * stats.t.sf(abs(t), df=m - 1))
    else:
        p = 0.0
    return ScalingFit(grid, slope, intercept, se_ols, se_c, p, tuple(int(k) for k in k_used), len(x))


def fit_dimension(table: CoverTable, retained=None, policy: RangePolicy = RangePolicy()) -> ScalingFit:
    if retained is None:
        retained = select_range(table, policy)
    if len(retained) < policy.min_points:
        raise InsufficientRangeError(f"{len(retained)} resolutions retained, need {policy.min_points}")
    rec = {r.resolution: r for r in table.records}
    try:
        rows = [rec[k] for k in retained]
    except KeyError as exc:
        raise ValueError(f"resolution {exc.args[0]} is not in the table") from None
    return fit_points([r.delta for r in rows], [r.n_cells for r in rows], table.grid, retained)


def aggregate(fits) -> AggregateFit:
    fits = tuple(fits)
    if not fits:
        raise EmptyInputError("nothing to aggregate")
    return AggregateFit(float(np.mean([f.d_b for f in fits])), float(np.mean([f.se_corrected for f in fits])), fits)


def write_report(obj: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")
