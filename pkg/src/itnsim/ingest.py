"""Parsing of bilateral-flow and GDP tables into yearly trade snapshots.

Flows CSV header::

    year,exporter,importer,export_musd,import_musd

GDP CSV header::

    year,country,gdp_pc_usd,population

All monetary quantities are kept in millions of current US dollars.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

FLOW_HEADER = ("year", "exporter", "importer", "export_musd", "import_musd")
GDP_HEADER = ("year", "country", "gdp_pc_usd", "population")


@dataclass(frozen=True)
class FlowRecord:
    year: int
    exporter: str
    importer: str
    reported_export: float | None
    reported_import: float | None = None

    def __post_init__(self):
        if self.exporter == self.importer:
            raise DataError(f"self-flow {self.exporter}->{self.importer}")
        if self.reported_export is None and self.reported_import is None:
            raise DataError("flow record carries neither export nor import report")
        for v in (self.reported_export, self.reported_import):
            if v is not None and not v >= 0:
                raise DataError(f"negative or NaN flow value {v}")

    @property
    def volume(self) -> float:
        """Symmetrized volume: mean of both reports, or the single one present."""
        if self.reported_export is None:
            return self.reported_import
        if self.reported_import is None:
            return self.reported_export
        return (self.reported_export + self.reported_import) / 2


@dataclass(frozen=True)
class GdpRecord:
    year: int
    country: str
    gdp_per_capita: float
    population: float

    def __post_init__(self):
        if not self.gdp_per_capita > 0:
            raise DataError(f"nonpositive GDP per capita for {self.country}")
        if not self.population > 0:
            raise DataError(f"nonpositive population for {self.country}")

    @property
    def gdp_musd(self) -> float:
        return self.gdp_per_capita * (self.population / 1e6)


def _text_stream(stream) -> IO[str]:
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(bytes(stream).decode("utf-8-sig"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    # binary file-like
    return io.TextIOWrapper(stream, encoding="utf-8-sig", newline="")


def _rows(stream, header: Sequence[str]):
    reader = csv.reader(_text_stream(stream))
    first = None
    for first in reader:
        if first and not first[0].startswith("#"):
            break
    if first is None or tuple(c.strip() for c in first) != tuple(header):
        raise FormatError(f"expected header {','.join(header)!r}, got {first!r}")
    for lineno, row in enumerate(reader, start=2):
        if not row or row[0].startswith("#"):
            continue
        if len(row) != len(header):
            raise FormatError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row]


def _number(text: str, lineno: int, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {lineno}: unparseable {name} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {lineno}: non-finite {name} {text!r}")
    return value


def _year(text: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"row {lineno}: unparseable year {text!r}") from None


def parse_flows(stream) -> list[FlowRecord]:
    """Parse a flows CSV (bytes, str, or file object) into records."""
    records = []
    for lineno, (year, exp, imp, export, imports) in _rows(stream, FLOW_HEADER):
        e = _number(export, lineno, "export_musd") if export else None
        m = _number(imports, lineno, "import_musd") if imports else None
        try:
            records.append(FlowRecord(_year(year, lineno), exp, imp, e, m))
        except DataError as err:
            raise DataError(f"row {lineno}: {err}") from None
    return records


def parse_gdp(stream) -> list[GdpRecord]:
    """Parse a GDP CSV; duplicate (year, country) keys are an error."""
    records = []
    seen = set()
    for lineno, (year, country, gdp_pc, pop) in _rows(stream, GDP_HEADER):
        key = (_year(year, lineno), country)
        if key in seen:
            raise DataError(f"row {lineno}: duplicate key {key}")
        seen.add(key)
        try:
            records.append(GdpRecord(key[0], country,
                                     _number(gdp_pc, lineno, "gdp_pc_usd"),
                                     _number(pop, lineno, "population")))
        except DataError as err:
            raise DataError(f"row {lineno}: {err}") from None
    return records


@dataclass(frozen=True, eq=False)
class Snapshot:
    """One year of the weighted directed trade network.

    ``w`` is a CSR matrix in millions USD with an empty diagonal; ``x`` holds
    total GDPs in the same unit. ``dropped`` lists trading countries that had
    no GDP record and were removed with their flows.
    """

    year: int
    countries: tuple[str, ...]
    w: sp.csr_matrix
    x: np.ndarray
    dropped: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.countries)
        if self.w.shape != (n, n) or self.x.shape != (n,):
            raise ValueError("shape mismatch between countries, w and x")
        if self.w.diagonal().any():
            raise ValueError("nonzero diagonal in trade matrix")
        if self.w.nnz and self.w.data.min() < 0:
            raise ValueError("negative trade weight")
        self.x.setflags(write=False)
        self.w.data.setflags(write=False)

    @property
    def N(self) -> int:
        return len(self.countries)

    @cached_property
    def X(self) -> float:
        return float(math.fsum(self.x))

    @cached_property
    def T(self) -> float:
        return float(math.fsum(self.w.data))

    @property
    def s_out(self) -> np.ndarray:
        return np.asarray(self.w.sum(axis=1)).ravel()

    @property
    def s_in(self) -> np.ndarray:
        return np.asarray(self.w.sum(axis=0)).ravel()

    def index(self) -> dict[str, int]:
        return {c: k for k, c in enumerate(self.countries)}

    def with_weights(self, w) -> "Snapshot":
        """Same countries and GDPs, different weights (e.g. an ensemble sample)."""
        coo = sp.coo_matrix(w, dtype=float)
        off = (coo.row != coo.col) & (coo.data != 0)
        w = sp.csr_matrix((coo.data[off], (coo.row[off], coo.col[off])), shape=coo.shape)
        return Snapshot(self.year, self.countries, w, self.x.copy())

    def restrict(self, countries: Iterable[str]) -> "Snapshot":
        """Sub-network induced on ``countries`` (kept in this snapshot's order)."""
        keep = set(countries)
        idx = [k for k, c in enumerate(self.countries) if c in keep]
        w = self.w[idx][:, idx].tocsr()
        return Snapshot(self.year, tuple(self.countries[k] for k in idx), w,
                        self.x[idx].copy())

    def reindex(self, countries: Sequence[str]) -> "Snapshot":
        """Sub-network on ``countries`` in exactly the given order."""
        pos = self.index()
        idx = [pos[c] for c in countries]
        w = self.w[idx][:, idx].tocsr()
        return Snapshot(self.year, tuple(countries), w, self.x[idx].copy())

    def to_flows(self) -> list[FlowRecord]:
        coo = self.w.tocoo()
        return [FlowRecord(self.year, self.countries[i], self.countries[j], float(v))
                for i, j, v in zip(coo.row, coo.col, coo.data)]

    def to_gdps(self) -> list[GdpRecord]:
        # population 1e6 makes gdp_pc numerically equal to x in millions USD
        return [GdpRecord(self.year, c, float(v), 1e6) for c, v in zip(self.countries, self.x)]


def build_snapshot(year: int, flows: Iterable[FlowRecord],
                   gdps: Iterable[GdpRecord]) -> Snapshot:
    """Assemble the snapshot for ``year`` from parsed records.

    Records from other years are ignored. Countries with GDP but no trade are
    kept; countries that trade but lack GDP are dropped with their flows.
    """
    gdp = {g.country: g.gdp_musd for g in gdps if g.year == year}
    if not gdp:
        raise DataError(f"no usable countries in {year}")
    countries = tuple(sorted(gdp))
    index = {c: k for k, c in enumerate(countries)}

    pairs: dict[tuple[str, str], float] = {}
    dropped = set()
    for f in flows:
        if f.year != year:
            continue
        missing = [c for c in (f.exporter, f.importer) if c not in index]
        if missing:
            dropped.update(missing)
            continue
        key = (f.exporter, f.importer)
        if key in pairs:
            raise DataError(f"duplicate flow {key} in {year}")
        pairs[key] = f.volume
    if dropped:
        logger.warning("%d: dropped %d trading countries without GDP: %s",
                       year, len(dropped), ",".join(sorted(dropped)))

    n = len(countries)
    if pairs:
        rows, cols, vals = zip(*((index[a], index[b], v) for (a, b), v in sorted(pairs.items())))
    else:
        rows, cols, vals = (), (), ()
    w = sp.csr_matrix((np.asarray(vals, dtype=float), (np.asarray(rows, dtype=int),
                                                        np.asarray(cols, dtype=int))),
                      shape=(n, n))
    w.eliminate_zeros()
    x = np.array([gdp[c] for c in countries], dtype=float)
    return Snapshot(year, countries, w, x, tuple(sorted(dropped)))


@dataclass(frozen=True, eq=False)
class RelativeView:
    """Shares of world GDP and world trade."""

    xi: np.ndarray
    sigma_out: np.ndarray
    sigma_in: np.ndarray
    v: sp.csr_matrix


def relative_view(snapshot: Snapshot) -> RelativeView:
    T, X = snapshot.T, snapshot.X
    if not T > 0:
        raise DataError(f"degenerate snapshot {snapshot.year}: no trade")
    if not X > 0:
        raise DataError(f"degenerate snapshot {snapshot.year}: no GDP")
    v = (snapshot.w / T).tocsr()
    return RelativeView(
        xi=snapshot.x / X,
        sigma_out=np.asarray(v.sum(axis=1)).ravel(),
        sigma_in=np.asarray(v.sum(axis=0)).ravel(),
        v=v,
    )
