"""Validation analyses: strength vs GDP, flow clouds, volume distributions,
and the binned test of the fluctuation-response relation on yearly changes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .ensemble import EnsembleParams, expected_shares
from .errors import DataError
from .ingest import Snapshot, relative_view

# reporting floor of the trade data: 1000 USD in millions USD
CENSOR_THRESHOLD = 1e-3
MIN_EXPECTED_SHARE = 1e-4
MIN_BIN_COUNT = 1000


@dataclass(frozen=True)
class StrengthFit:
    year: int
    A_theory: float
    A_fit_out: float
    A_fit_in: float
    loglog_slope_out: float
    loglog_slope_in: float


def _fit_direction(s: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    mask = s > 0
    if mask.sum() < 3:
        raise DataError("need at least 3 countries with positive strength")
    s, x = s[mask], x[mask]
    a_fit = float(np.dot(s, x) / np.dot(x, x))
    slope = float(np.polyfit(np.log(x), np.log(s), 1)[0])
    return a_fit, slope


def strength_fit(snapshot: Snapshot) -> StrengthFit:
    """Regress total export/import on GDP, through the origin and in log-log."""
    a_out, b_out = _fit_direction(snapshot.s_out, snapshot.x)
    a_in, b_in = _fit_direction(snapshot.s_in, snapshot.x)
    return StrengthFit(snapshot.year, snapshot.T / snapshot.X, a_out, a_in, b_out, b_in)


@dataclass(frozen=True, eq=False)
class FlowCloud:
    """Observed flows against GDP products, plus log-binned means."""

    i: np.ndarray
    j: np.ndarray
    gdp_product: np.ndarray
    observed: np.ndarray
    expected: np.ndarray
    bin_edges: np.ndarray
    bin_count: np.ndarray
    bin_mean_observed: np.ndarray
    bin_mean_expected: np.ndarray


def flow_cloud(snapshot: Snapshot, params: EnsembleParams,
               censor_threshold: float = CENSOR_THRESHOLD, n_bins: int = 20) -> FlowCloud:
    """Flows above ``censor_threshold`` with their gravity expectation.

    Bins are logarithmic in ``x_i x_j`` over the retained pairs; empty bins
    carry NaN means.
    """
    if snapshot.countries != params.countries:
        raise ValueError("snapshot and params are indexed on different countries")
    coo = snapshot.w.tocoo()
    keep = coo.data > censor_threshold
    i, j, w = coo.row[keep], coo.col[keep], coo.data[keep]
    order = np.lexsort((j, i))
    i, j, w = i[order], j[order], w[order]
    prod = snapshot.x[i] * snapshot.x[j]
    expected = params.T / params.X ** 2 * prod

    if prod.size:
        lo, hi = np.log10(prod.min()), np.log10(prod.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.logspace(lo, hi, n_bins + 1)
        which = np.clip(np.searchsorted(edges, prod, side="right") - 1, 0, n_bins - 1)
    else:
        edges = np.array([])
        which = np.array([], dtype=int)
        n_bins = 0
    count = np.bincount(which, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_obs = np.bincount(which, weights=w, minlength=n_bins) / count
        mean_exp = np.bincount(which, weights=expected, minlength=n_bins) / count
    return FlowCloud(i, j, prod, w, expected, edges, count, mean_obs, mean_exp)


@dataclass(frozen=True, eq=False)
class VolumeHistogram:
    edges: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    source: str

    @property
    def mass(self) -> np.ndarray:
        return self.density * np.diff(self.edges)


def log_bin_edges(values, n_bins: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = np.log10(values.min()), np.log10(values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.logspace(lo, hi, n_bins + 1)
    # guard the extreme values against rounding in logspace
    edges[0] = min(edges[0], values.min())
    edges[-1] = max(edges[-1], values.max())
    return edges


def volume_distribution(values, n_bins: int = 30, source: str = "real",
                        edges=None) -> VolumeHistogram:
    """Logarithmically binned probability density of positive volumes."""
    if source not in ("real", "simulated", "expected"):
        raise ValueError(f"unknown source {source!r}")
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise DataError("no values to histogram")
    if np.any(values <= 0):
        raise DataError("volumes must be positive for logarithmic binning")
    if edges is None:
        if n_bins < 5:
            raise ValueError("need at least 5 bins")
        edges = log_bin_edges(values, n_bins)
    edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(values, bins=edges)
    total = counts.sum()
    if total == 0:
        raise DataError("no values fall inside the bin range")
    density = counts / (total * np.diff(edges))
    return VolumeHistogram(edges, density, counts, source)


def expected_distribution(params: EnsembleParams, n_bins: int = 30,
                          edges=None) -> VolumeHistogram:
    """Distribution of expected shares ``<v_ij>`` over all ordered pairs."""
    return volume_distribution(expected_shares(params), n_bins, "expected", edges)


def mixture_bin_probabilities(params: EnsembleParams, edges) -> np.ndarray:
    """Probability that a share drawn from a uniformly chosen pair lands in
    each bin, when each pair's share is exponential with mean ``<v_ij>``.
    """
    mu = expected_shares(params)
    edges = np.asarray(edges, dtype=float)
    # survival exp(-e/mu) at each edge, averaged over pairs
    surv = np.exp(-edges[None, :] / mu[:, None]).mean(axis=0)
    return surv[:-1] - surv[1:]


@dataclass(frozen=True)
class FrPoint:
    i: int
    j: int
    eta_ij: float
    rel_dv: float
    rel_dxi_sum: float


@dataclass(frozen=True, eq=False)
class FrPoints:
    """Year-over-year changes of every directed pair, column-oriented.

    Indices refer to ``countries`` (the intersection of both years).
    """

    countries: tuple[str, ...]
    i: np.ndarray
    j: np.ndarray
    eta: np.ndarray
    rel_dv: np.ndarray
    rel_dxi_sum: np.ndarray

    def __len__(self) -> int:
        return self.i.size

    def __iter__(self) -> Iterator[FrPoint]:
        for row in zip(self.i, self.j, self.eta, self.rel_dv, self.rel_dxi_sum):
            yield FrPoint(int(row[0]), int(row[1]), *map(float, row[2:]))

    def __getitem__(self, k) -> FrPoint:
        return FrPoint(int(self.i[k]), int(self.j[k]), float(self.eta[k]),
                       float(self.rel_dv[k]), float(self.rel_dxi_sum[k]))

    @classmethod
    def concat(cls, parts: Sequence["FrPoints"]) -> "FrPoints":
        """Pool points from several transitions; indices lose their meaning."""
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        return cls((), cat("i"), cat("j"), cat("eta"), cat("rel_dv"), cat("rel_dxi_sum"))

    @property
    def expected_share(self) -> np.ndarray:
        return 1.0 / self.eta


def fr_points(snapshot_t: Snapshot, snapshot_t1: Snapshot,
              params_t: EnsembleParams) -> FrPoints:
    """Relative changes of normalized flows and of GDP shares between years.

    Both years are restricted to the countries present in each; shares are
    recomputed on that common set. ``eta`` comes from ``params_t``. Pairs
    with zero flow in either year are skipped, as are the (pathological)
    pairs whose GDP factor ``1 + rel_dxi_sum`` is not positive.
    """
    common = set(snapshot_t.countries) & set(snapshot_t1.countries)
    if not common:
        raise DataError(f"no countries common to {snapshot_t.year} and {snapshot_t1.year}")
    a = snapshot_t.restrict(common)
    b = snapshot_t1.reindex(a.countries)
    ra, rb = relative_view(a), relative_view(b)

    va, vb = ra.v.tocsr(), rb.v.tocsr()
    both = va.multiply(vb > 0).tocoo()
    order = np.lexsort((both.col, both.row))
    i, j = both.row[order], both.col[order]
    v0 = np.asarray(va[i, j]).ravel()
    v1 = np.asarray(vb[i, j]).ravel()

    rel_xi = rb.xi / ra.xi - 1.0
    dxi_sum = rel_xi[i] + rel_xi[j]

    pidx = params_t.index()
    theta = params_t.theta[[pidx[c] for c in a.countries]]
    eta = params_t.T * theta[i] * theta[j]

    ok = 1.0 + dxi_sum > 0
    return FrPoints(a.countries, i[ok], j[ok], eta[ok], (v1 / v0 - 1.0)[ok], dxi_sum[ok])


@dataclass(frozen=True)
class FrBin:
    m: int
    n: int
    count: int
    geo_mean_dv: float
    geo_mean_dxi: float
    mean_expected_share: float


def fr_cell(eta, rel_dxi_sum) -> tuple[np.ndarray, np.ndarray]:
    """Cell indices: ``m - 1 <= ln eta < m`` and ``n - 1 <= 100 s < n``."""
    m = np.floor(np.log(eta)).astype(np.int64) + 1
    n = np.floor(100.0 * np.asarray(rel_dxi_sum)).astype(np.int64) + 1
    return m, n


def fr_bin_points(points: FrPoints, min_expected_share: float | None = None,
                  min_count: int | None = None) -> list[FrBin]:
    """Group points into (m, n) cells and average them geometrically.

    Averages are taken over ratios ``1 + rel`` in log space and converted
    back to relative changes. ``min_expected_share`` keeps points whose
    ``<v_ij>`` exceeds it; ``min_count`` keeps cells with more members.
    """
    share = points.expected_share
    keep = np.ones(len(points), dtype=bool)
    if min_expected_share is not None:
        keep &= share > min_expected_share
    m, n = fr_cell(points.eta[keep], points.rel_dxi_sum[keep])
    log_dv = np.log1p(points.rel_dv[keep])
    log_dxi = np.log1p(points.rel_dxi_sum[keep])
    share = share[keep]

    cells, inverse, counts = np.unique(np.stack([m, n], axis=1), axis=0,
                                       return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    k = len(cells)
    mean_dv = np.bincount(inverse, weights=log_dv, minlength=k) / counts
    mean_dxi = np.bincount(inverse, weights=log_dxi, minlength=k) / counts
    mean_share = np.bincount(inverse, weights=share, minlength=k) / counts

    bins = []
    for c in range(k):
        if min_count is not None and counts[c] <= min_count:
            continue
        bins.append(FrBin(int(cells[c, 0]), int(cells[c, 1]), int(counts[c]),
                          float(np.expm1(mean_dv[c])), float(np.expm1(mean_dxi[c])),
                          float(mean_share[c])))
    return bins


@dataclass(frozen=True)
class FrAggregate:
    n: int
    geo_mean_dxi: float
    geo_mean_dv: float
    cells: int


@dataclass(frozen=True, eq=False)
class FrReport:
    bins: list
    aggregate: list

    def rows(self) -> list[tuple]:
        return [(b.m, b.n, b.count, b.geo_mean_dxi, b.geo_mean_dv) for b in self.bins]

    def line_fit(self) -> tuple[float, float]:
        """Least-squares slope and intercept of aggregated dv against dxi."""
        x = np.array([a.geo_mean_dxi for a in self.aggregate])
        y = np.array([a.geo_mean_dv for a in self.aggregate])
        if x.size < 2:
            raise DataError("need at least two aggregated points for a line fit")
        slope, intercept = np.polyfit(x, y, 1)
        return float(slope), float(intercept)


def fr_report(bins: Sequence[FrBin]) -> FrReport:
    """Cell table plus, for each n, the arithmetic mean of cells across m."""
    if not bins:
        raise DataError("no bins to report")
    bins = sorted(bins, key=lambda b: (b.m, b.n))
    by_n: dict[int, list[FrBin]] = {}
    for b in bins:
        by_n.setdefault(b.n, []).append(b)
    agg = [FrAggregate(n, math.fsum(b.geo_mean_dxi for b in group) / len(group),
                       math.fsum(b.geo_mean_dv for b in group) / len(group), len(group))
           for n, group in sorted(by_n.items())]
    return FrReport(bins, agg)
