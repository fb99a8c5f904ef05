"""Synthetic snapshots drawn from the model itself.

Real trade and GDP tables cannot ship with the package, so model-generated
panels stand in for them in tests and demos.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .ensemble import EnsembleParams, expected_weights
from .ingest import FlowRecord, GdpRecord, Snapshot
from .sampler import sample_direct


def country_codes(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n - 1)))
    return tuple(f"C{k:0{width}d}" for k in range(n))


def random_gdp(n: int, rng: np.random.Generator, spread: float = 1.0,
               scale: float = 1e5) -> np.ndarray:
    """Lognormal GDPs in millions USD."""
    return scale * rng.lognormal(0.0, spread, n)


def model_snapshot(x, T: float, year: int = 0, countries=None, mode: str = "expected",
                   seed: int | None = None) -> Snapshot:
    """Snapshot whose flows come from the ensemble fitted to ``(x, T)``.

    ``mode="expected"`` uses the mean flows ``T x_i x_j / X**2``;
    ``mode="sampled"`` draws one exact realization with ``seed``.
    """
    x = np.asarray(x, dtype=float)
    if countries is None:
        countries = country_codes(len(x))
    params = EnsembleParams.from_gdp(x, T, countries, year)
    if mode == "expected":
        w = expected_weights(params)
    elif mode == "sampled":
        w = sample_direct(params, seed).weights
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return Snapshot(year, tuple(countries), sp.csr_matrix(w), x.copy())


def perturb_gdp(x, max_shift: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply each GDP by ``1 + e`` with ``e`` uniform on ``[-max_shift, max_shift]``."""
    x = np.asarray(x, dtype=float)
    return x * (1.0 + rng.uniform(-max_shift, max_shift, x.size))


def model_panel(n_countries: int, years, max_shift: float = 0.05, seed: int = 0,
                T: float = 1e6, spread: float = 1.0, mode: str = "expected") -> list[Snapshot]:
    """Consecutive yearly snapshots with GDPs following a multiplicative walk."""
    rng = np.random.default_rng(seed)
    countries = country_codes(n_countries)
    x = random_gdp(n_countries, rng, spread)
    panel = []
    for k, year in enumerate(years):
        if k:
            x = perturb_gdp(x, max_shift, rng)
        panel.append(model_snapshot(x, T, year, countries, mode, seed=seed * 7919 + k))
    return panel


def panel_records(panel) -> tuple[list[FlowRecord], list[GdpRecord]]:
    flows, gdps = [], []
    for snap in panel:
        flows.extend(snap.to_flows())
        gdps.extend(snap.to_gdps())
    return flows, gdps


def write_inputs(panel, flows_path, gdp_path) -> None:
    """Write a panel as flows and GDP CSV inputs."""
    flows, gdps = panel_records(panel)
    with open(flows_path, "w", newline="") as fh:
        fh.write("year,exporter,importer,export_musd,import_musd\n")
        for f in flows:
            fh.write(f"{f.year},{f.exporter},{f.importer},{f.reported_export!r},\n")
    with open(gdp_path, "w", newline="") as fh:
        fh.write("year,country,gdp_pc_usd,population\n")
        for g in gdps:
            fh.write(f"{g.year},{g.country},{g.gdp_per_capita!r},{g.population!r}\n")
