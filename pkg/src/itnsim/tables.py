"""CSV files exchanged between pipeline stages.

Every file starts with ``#`` comment lines of ``key=value`` metadata,
followed by a header row and data rows. Floats are written with ``repr`` so
that a reload reproduces them bit for bit.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .ensemble import EnsembleParams
from .errors import FormatError
from .ingest import Snapshot


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence],
                meta: Mapping[str, object] | None = None) -> Path:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_table(path: Path, header: Sequence[str]) -> tuple[dict[str, str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file {path}")
    meta = {}
    rows = []
    seen_header = False
    with path.open(newline="") as fh:
        for line in fh:
            if not seen_header and line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
                continue
            if not seen_header:
                if next(csv.reader([line])) != list(header):
                    raise FormatError(f"{path}: expected header {','.join(header)}")
                seen_header = True
                continue
            if line.strip():
                rows.append(next(csv.reader([line])))
    if not seen_header:
        raise FormatError(f"{path}: no header row")
    return meta, rows


def snapshot_paths(directory: Path, year: int) -> tuple[Path, Path]:
    d = Path(directory)
    return d / f"snapshot-{year}.csv", d / f"countries-{year}.csv"


def write_snapshot(snapshot: Snapshot, directory: Path, meta=None) -> tuple[Path, Path]:
    wpath, cpath = snapshot_paths(directory, snapshot.year)
    coo = snapshot.w.tocoo()
    order = np.lexsort((coo.col, coo.row))
    c = snapshot.countries
    write_table(wpath, ("i", "j", "w_ij"),
                ((c[coo.row[k]], c[coo.col[k]], coo.data[k]) for k in order),
                {**(meta or {}), "year": snapshot.year})
    write_table(cpath, ("country", "x_i"), zip(c, snapshot.x),
                {**(meta or {}), "year": snapshot.year,
                 "dropped": ";".join(snapshot.dropped)})
    return wpath, cpath


def read_snapshot(directory: Path, year: int) -> Snapshot:
    wpath, cpath = snapshot_paths(directory, year)
    meta, crows = read_table(cpath, ("country", "x_i"))
    countries = tuple(r[0] for r in crows)
    x = np.array([float(r[1]) for r in crows])
    index = {cc: k for k, cc in enumerate(countries)}
    _, wrows = read_table(wpath, ("i", "j", "w_ij"))
    n = len(countries)
    if wrows:
        rows = np.array([index[r[0]] for r in wrows])
        cols = np.array([index[r[1]] for r in wrows])
        vals = np.array([float(r[2]) for r in wrows])
    else:
        rows = cols = np.array([], dtype=int)
        vals = np.array([])
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    dropped = tuple(d for d in meta.get("dropped", "").split(";") if d)
    return Snapshot(year, countries, w, x, dropped)


def params_path(directory: Path, year: int) -> Path:
    return Path(directory) / f"params-{year}.csv"


def write_params(params: EnsembleParams, directory: Path, meta=None) -> Path:
    rows = zip(params.countries, params.x, params.xi, params.theta)
    return write_table(params_path(directory, params.year),
                       ("country", "x_i", "xi_i", "theta_i"), rows,
                       {**(meta or {}), "year": params.year, "T": params.T, "X": params.X})


def read_params(directory: Path, year: int) -> EnsembleParams:
    meta, rows = read_table(params_path(directory, year), ("country", "x_i", "xi_i", "theta_i"))
    try:
        T, X = float(meta["T"]), float(meta["X"])
    except KeyError as err:
        raise FormatError(f"params file for {year} lacks {err.args[0]} metadata") from None
    return EnsembleParams(year, tuple(r[0] for r in rows),
                          np.array([float(r[3]) for r in rows]), T, X,
                          np.array([float(r[1]) for r in rows]))


def write_weights(path: Path, weights: np.ndarray, countries: Sequence[str], meta=None) -> Path:
    """Dense sampled weights as ``i,j,w_ij`` rows over all off-diagonal pairs."""
    n = len(countries)
    rows = ((countries[i], countries[j], weights[i, j])
            for i in range(n) for j in range(n) if i != j)
    return write_table(path, ("i", "j", "w_ij"), rows, meta)


def read_weights(path: Path, countries: Sequence[str]) -> np.ndarray:
    _, rows = read_table(path, ("i", "j", "w_ij"))
    index = {c: k for k, c in enumerate(countries)}
    w = np.zeros((len(countries), len(countries)))
    for a, b, v in rows:
        w[index[a], index[b]] = float(v)
    return w
