"""Uncertainty-based filtering and aggregation of footprints into lat/lon rasters."""
from __future__ import annotations

import enum
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyInput, Unachievable

log = logging.getLogger(__name__)

VEG_KEY = "veg_prob"


class FilterKind(enum.Enum):
    ABSOLUTE = "ABSOLUTE"
    RELATIVE = "RELATIVE"
    ADAPTIVE = "ADAPTIVE"


@dataclass(frozen=True)
class FilterPolicy:
    kind: FilterKind = FilterKind.ADAPTIVE
    max_std_m: float = math.inf
    max_cv: float = math.inf
    tau: float = math.inf
    epsilon_m: float = 10.0
    drop_negative_heights: bool = True
    min_vegetation_prob: float | None = 0.70

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        for name in ("max_std_m", "max_cv", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.epsilon_m >= 0:
            raise ValueError("epsilon_m must be >= 0")

    @classmethod
    def adaptive(cls, tau, epsilon_m=10.0, **kw):
        return cls(FilterKind.ADAPTIVE, tau=tau, epsilon_m=epsilon_m, **kw)

    @classmethod
    def absolute(cls, max_std_m, **kw):
        return cls(FilterKind.ABSOLUTE, max_std_m=max_std_m, **kw)

    @classmethod
    def relative(cls, max_cv, **kw):
        return cls(FilterKind.RELATIVE, max_cv=max_cv, **kw)

    def with_tau(self, tau) -> "FilterPolicy":
        from dataclasses import replace
        return replace(self, tau=tau)


def _veg_probs(metadata, n):
    """Per-record vegetation probability; NaN where the column is absent."""
    out = np.full(n, np.nan)
    if metadata is None:
        return out
    for i, m in enumerate(metadata):
        if m and VEG_KEY in m:
            out[i] = float(m[VEG_KEY])
    return out


def gate_mask(mean, policy: FilterPolicy, metadata=None):
    """Negative-height and vegetation gates, applied before any std threshold."""
    mean = np.asarray(mean, dtype=np.float64)
    ok = np.ones(mean.shape, dtype=bool)
    if policy.drop_negative_heights:
        ok &= mean >= 0
    if policy.min_vegetation_prob is not None:
        veg = _veg_probs(metadata, mean.size)
        ok &= ~(veg < policy.min_vegetation_prob)  # absent column passes
    return ok


def keep_mask(mean, std, policy: FilterPolicy, metadata=None):
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    ok = gate_mask(mean, policy, metadata)
    if policy.kind is FilterKind.ADAPTIVE:
        ok &= std < policy.tau * (mean + policy.epsilon_m)
    elif policy.kind is FilterKind.ABSOLUTE:
        ok &= std < policy.max_std_m
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            ok &= (mean > 0) & (std / np.where(mean > 0, mean, 1.0) < policy.max_cv)
    return ok


def keep(pred, policy: FilterPolicy, metadata=None) -> bool:
    return bool(keep_mask([pred.mean_m], [pred.std_total_m], policy,
                          None if metadata is None else [metadata])[0])


def ranking_score(mean, std, policy: FilterPolicy, metadata=None):
    """Score whose thresholding reproduces the policy; gated records score +inf."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if policy.kind is FilterKind.ADAPTIVE:
        den = mean + policy.epsilon_m
    elif policy.kind is FilterKind.ABSOLUTE:
        den = np.ones_like(mean)
    else:
        den = mean
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(den > 0, std / np.where(den > 0, den, 1.0), np.inf)
    score[~gate_mask(mean, policy, metadata)] = np.inf
    return score


def calibrate_tau(mean, std, target_recall=0.70, epsilon_m=10.0, metadata=None,
                  policy: FilterPolicy | None = None) -> float:
    """Smallest tau whose adaptive filter keeps ``ceil(target_recall * n)`` records.

    Recall is counted against all ``n`` records, so gated records count as
    dropped. ``target_recall`` 1.0 returns ``inf`` when every record passes
    the gates.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    n = mean.size
    if n == 0:
        raise EmptyInput("no validation pairs")
    if not 0 < target_recall <= 1:
        raise ValueError("target_recall must be in (0, 1]")
    base = FilterPolicy.adaptive(math.inf, epsilon_m) if policy is None else \
        FilterPolicy(FilterKind.ADAPTIVE, tau=math.inf, epsilon_m=epsilon_m,
                     drop_negative_heights=policy.drop_negative_heights,
                     min_vegetation_prob=policy.min_vegetation_prob)
    need = int(math.ceil(target_recall * n - 1e-9))
    score = ranking_score(mean, std, base, metadata)
    finite = np.sort(score[np.isfinite(score)])
    if finite.size < need:
        raise Unachievable(f"only {finite.size}/{n} records pass the gates; "
                           f"recall {target_recall} needs {need}")
    if target_recall >= 1:
        return math.inf

    def count(tau):
        return int(keep_mask(mean, std, base.with_tau(tau), metadata).sum())

    # bisection on the real predicate; the score is only a starting bracket
    lo = 0.0
    hi = max(float(np.nextafter(finite[need - 1], np.inf)), np.finfo(float).tiny)
    while count(hi) < need:
        hi *= 2
    for _ in range(200):
        mid = lo + (hi - lo) / 2
        if mid <= lo or mid >= hi:
            break
        if count(mid) >= need:
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# raster


@dataclass(frozen=True)
class GridConfig:
    cell_size_deg: float = 0.5
    lon_min: float = -180.0
    lat_min: float = -90.0
    lon_max: float = 180.0
    lat_max: float = 90.0

    def __post_init__(self):
        if not self.cell_size_deg > 0:
            raise ValueError("cell size must be > 0")
        if not (self.lon_max > self.lon_min and self.lat_max > self.lat_min):
            raise ValueError("empty grid bounds")

    @property
    def ncols(self):
        return int(math.ceil((self.lon_max - self.lon_min) / self.cell_size_deg - 1e-9))

    @property
    def nrows(self):
        return int(math.ceil((self.lat_max - self.lat_min) / self.cell_size_deg - 1e-9))


class RasterGrid:
    """Per-cell accumulators; cells are half-open ``[lo, lo + size)`` via floor.

    Accumulator columns: count, sum height, sum of the three variances, sum
    of the three stds, max height. Two grids with the same configuration
    merge by adding sums and taking the max.
    """

    COLUMNS = ("count", "sum_h", "sum_var_total", "sum_var_aleatoric", "sum_var_epistemic",
               "sum_std_total", "sum_std_aleatoric", "sum_std_epistemic", "max_h")

    def __init__(self, config: GridConfig = GridConfig()):
        self.config = config
        self.acc = np.zeros((config.nrows * config.ncols, kernels.N_ACC))
        self.acc[:, 8] = -np.inf
        self.n_out_of_bounds = 0

    def cell_index(self, lat, lon):
        """(row, col) from the south-west corner; -1 where out of bounds."""
        c = self.config
        row = np.floor((np.asarray(lat, dtype=np.float64) - c.lat_min) / c.cell_size_deg).astype(np.int64)
        col = np.floor((np.asarray(lon, dtype=np.float64) - c.lon_min) / c.cell_size_deg).astype(np.int64)
        bad = (row < 0) | (row >= c.nrows) | (col < 0) | (col >= c.ncols)
        row[bad] = -1
        col[bad] = -1
        return row, col

    def add(self, lat, lon, mean, var_total, var_aleatoric, var_epistemic):
        row, col = self.cell_index(lat, lon)
        inside = row >= 0
        n_out = int((~inside).sum())
        if n_out:
            log.warning("skipping %d footprints outside the grid bounds", n_out)
            self.n_out_of_bounds += n_out
        cell = (row * self.config.ncols + col)[inside]
        cols = [np.asarray(a, dtype=np.float64)[inside]
                for a in (mean, var_total, var_aleatoric, var_epistemic)]
        # fixed per-cell order makes the sums independent of input order
        order = np.lexsort(tuple(reversed([cell] + cols)))
        kernels.grid_accumulate(self.acc, np.ascontiguousarray(cell[order]),
                                *(np.ascontiguousarray(c[order]) for c in cols))
        return self

    def merge(self, other: "RasterGrid") -> "RasterGrid":
        if other.config != self.config:
            raise ValueError("cannot merge grids with different layouts")
        out = RasterGrid(self.config)
        out.acc[:, :8] = self.acc[:, :8] + other.acc[:, :8]
        out.acc[:, 8] = np.maximum(self.acc[:, 8], other.acc[:, 8])
        out.n_out_of_bounds = self.n_out_of_bounds + other.n_out_of_bounds
        return out

    @property
    def count(self):
        return self.acc[:, 0].reshape(self.config.nrows, self.config.ncols)

    def statistic(self, name):
        """(nrows, ncols) array, south row first, NaN for empty cells.

        ``mean_std_*`` is the mean of per-footprint stds; ``pooled_std_*``
        is the square root of the mean variance.
        """
        a, n = self.acc, self.acc[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            table = {
                "count": n,
                "mean_height": a[:, 1] / n,
                "max_height": np.where(n > 0, a[:, 8], np.nan),
                "mean_std_total": a[:, 5] / n,
                "mean_std_aleatoric": a[:, 6] / n,
                "mean_std_epistemic": a[:, 7] / n,
                "pooled_std_total": np.sqrt(a[:, 2] / n),
                "pooled_std_aleatoric": np.sqrt(a[:, 3] / n),
                "pooled_std_epistemic": np.sqrt(a[:, 4] / n),
            }
        if name not in table:
            raise KeyError(f"unknown statistic {name!r}; choose from {sorted(table)}")
        v = table[name].astype(np.float64)
        if name != "count":
            v = np.where(n > 0, v, np.nan)
        return v.reshape(self.config.nrows, self.config.ncols)

    STATISTICS = ("count", "mean_height", "max_height", "mean_std_total", "mean_std_aleatoric",
                  "mean_std_epistemic", "pooled_std_total", "pooled_std_aleatoric",
                  "pooled_std_epistemic")

    def cells(self):
        """Non-empty cells as dicts, in row-major order from the south-west."""
        c = self.config
        nz = np.nonzero(self.acc[:, 0] > 0)[0]
        stats = {s: self.statistic(s).ravel() for s in self.STATISTICS}
        out = []
        for k in nz:
            r, q = divmod(int(k), c.ncols)
            rec = {"row": r, "col": q,
                   "lat_center": c.lat_min + (r + 0.5) * c.cell_size_deg,
                   "lon_center": c.lon_min + (q + 0.5) * c.cell_size_deg}
            rec.update({s: float(stats[s][k]) for s in self.STATISTICS})
            rec["count"] = int(rec["count"])
            out.append(rec)
        return out


def grid(lat, lon, mean, var_total, var_aleatoric, var_epistemic, policy: FilterPolicy | None,
         config: GridConfig = GridConfig(), metadata=None) -> RasterGrid:
    """Filter by ``policy`` (None keeps everything) and accumulate into cells."""
    mean = np.asarray(mean, dtype=np.float64)
    var_total = np.asarray(var_total, dtype=np.float64)
    m = np.ones(mean.shape, dtype=bool) if policy is None else \
        keep_mask(mean, np.sqrt(var_total), policy, metadata)
    sel = lambda a: np.asarray(a, dtype=np.float64)[m]
    return RasterGrid(config).add(sel(lat), sel(lon), sel(mean), sel(var_total),
                                  sel(var_aleatoric), sel(var_epistemic))


def grid_table(table, policy, config: GridConfig = GridConfig(), metadata=None) -> RasterGrid:
    """:func:`grid` over a prediction table with std columns."""
    return grid(table.lat, table.lon, table.mean_m, table.std_total_m ** 2,
                table.std_aleatoric_m ** 2, table.std_epistemic_m ** 2, policy, config, metadata)


def latitudinal_profile(g: RasterGrid):
    """Count-weighted mean and max height per latitude row with data.

    Returns a list of ``(lat_center, mean_height, max_height, count)``.
    """
    cnt = g.count
    if cnt.sum() == 0:
        raise EmptyInput("grid holds no footprints")
    sum_h = g.acc[:, 1].reshape(cnt.shape)
    max_h = g.acc[:, 8].reshape(cnt.shape)
    out = []
    for r in range(cnt.shape[0]):
        n = cnt[r].sum()
        if n == 0:
            continue
        lat = g.config.lat_min + (r + 0.5) * g.config.cell_size_deg
        out.append((lat, float(sum_h[r].sum() / n), float(max_h[r].max()), int(n)))
    return out


NODATA = -9999.0


def ascii_grid(g: RasterGrid, statistic: str) -> str:
    """ESRI ASCII raster of one statistic; rows run north to south."""
    c = g.config
    v = g.statistic(statistic)[::-1]
    buf = io.StringIO()
    buf.write(f"ncols {c.ncols}\nnrows {c.nrows}\nxllcorner {float(c.lon_min)!r}\n"
              f"yllcorner {float(c.lat_min)!r}\ncellsize {float(c.cell_size_deg)!r}\nNODATA_value {NODATA!r}\n")
    for row in v:
        buf.write(" ".join(repr(float(x)) if np.isfinite(x) else repr(NODATA) for x in row))
        buf.write("\n")
    return buf.getvalue()


def cells_csv(g: RasterGrid) -> str:
    cols = ["row", "col", "lat_center", "lon_center", *RasterGrid.STATISTICS]
    lines = [",".join(cols)]
    for rec in g.cells():
        lines.append(",".join(repr(rec[k]) for k in cols))
    return "\n".join(lines) + "\n"
