"""Command-line pipeline: ingest -> fit -> simulate -> analyze.

Each stage reads the files written by the previous one from the output
directory, so stages can be rerun independently.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (CENSOR_THRESHOLD, MIN_BIN_COUNT, MIN_EXPECTED_SHARE, FrPoints,
                       expected_distribution, flow_cloud, fr_bin_points, fr_points,
                       fr_report, log_bin_edges, strength_fit, volume_distribution)
from .ensemble import expected_shares, fit_params, fit_residual
from .errors import ConfigError, DataError, FormatError
from .ingest import build_snapshot, parse_flows, parse_gdp, relative_view
from .sampler import ChainConfig, chain_diagnostics, compare_marginals, run_chain, sample_direct
from .tables import (params_path, read_params, read_snapshot, read_weights, snapshot_paths,
                     write_params, write_snapshot, write_table, write_weights)

logger = logging.getLogger("itnsim")

MAX_KS_PAIRS = 500


@dataclass
class RunConfig:
    flows_path: Path | None = None
    gdp_path: Path | None = None
    years: list[int] | None = None
    output_dir: Path = Path("itn-out")
    seed: int = 0
    method: str = "direct"
    samples: int = 1
    chain: ChainConfig = field(default_factory=ChainConfig)
    min_expected_share: float = MIN_EXPECTED_SHARE
    min_bin_count: int = MIN_BIN_COUNT
    censor_threshold: float = CENSOR_THRESHOLD
    hist_bins: int = 30
    cloud_bins: int = 20

    def meta(self, stage: str) -> dict:
        """Parameters recorded at the top of every output file."""
        c = self.chain
        return {
            "itnsim": __version__, "stage": stage, "seed": self.seed,
            "method": self.method, "samples": self.samples,
            "sweeps": c.sweeps, "burn_in": c.burn_in, "thin": c.thin,
            "step_scale": c.step_scale, "init": c.init,
            "min_expected_share": self.min_expected_share,
            "min_bin_count": self.min_bin_count,
            "censor_threshold": self.censor_threshold,
            "hist_bins": self.hist_bins, "cloud_bins": self.cloud_bins,
        }


def parse_years(spec) -> list[int]:
    """``"1973..1975"``, ``"1973,1995"``, an int, or a list of ints."""
    if spec is None:
        return None
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        years = []
        for item in spec:
            years.extend(parse_years(item))
        return sorted(set(years))
    text = str(spec).strip()
    years = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if a > b:
                raise ConfigError(f"empty year range {part!r}")
            years.update(range(a, b + 1))
        elif re.fullmatch(r"-?\d+", part):
            years.add(int(part))
        else:
            raise ConfigError(f"cannot parse years {part!r}")
    if not years:
        raise ConfigError("no years requested")
    return sorted(years)


_CHAIN_KEYS = {f.name for f in dataclasses.fields(ChainConfig)} - {"seed"}


def load_config(path: Path | None, overrides: dict) -> RunConfig:
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        raw = yaml.safe_load(path.read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        base = path.parent
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}

    def as_path(key):
        v = raw.pop(key, None)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else base / p

    flows = as_path("flows")
    gdp = as_path("gdp")
    output = as_path("output") or Path("itn-out")
    chain_raw = raw.pop("chain", {}) or {}
    filters = raw.pop("filters", {}) or {}
    unknown = set(chain_raw) - _CHAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown chain settings: {sorted(unknown)}")
    try:
        seed = int(raw.pop("seed", 0))
        chain = ChainConfig(seed=seed, **chain_raw)
        cfg = RunConfig(
            flows_path=flows, gdp_path=gdp, years=parse_years(raw.pop("years", None)),
            output_dir=output, seed=seed, chain=chain,
            method=raw.pop("method", "direct"),
            samples=int(raw.pop("samples", 1)),
            min_expected_share=float(filters.pop("min_expected_share", MIN_EXPECTED_SHARE)),
            min_bin_count=int(filters.pop("min_bin_count", MIN_BIN_COUNT)),
            censor_threshold=float(raw.pop("censor_threshold", CENSOR_THRESHOLD)),
            hist_bins=int(raw.pop("hist_bins", 30)),
            cloud_bins=int(raw.pop("cloud_bins", 20)),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    if raw or filters:
        raise ConfigError(f"unknown config keys: {sorted(set(raw) | set(filters))}")
    if cfg.method not in ("direct", "metropolis", "both"):
        raise ConfigError(f"method must be direct, metropolis or both, got {cfg.method!r}")
    if cfg.samples < 1:
        raise ConfigError("samples must be at least 1")
    return cfg


def _stored_years(directory: Path) -> list[int]:
    years = []
    for p in Path(directory).glob("snapshot-*.csv"):
        m = re.fullmatch(r"snapshot-(-?\d+)\.csv", p.name)
        if m:
            years.append(int(m.group(1)))
    return sorted(years)


def _years(cfg: RunConfig) -> list[int]:
    years = cfg.years if cfg.years is not None else _stored_years(cfg.output_dir)
    if not years:
        raise ConfigError("no years requested and no snapshots found")
    return years


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {what}: {path}")
    return path


def cmd_ingest(cfg: RunConfig) -> list[Path]:
    for p, name in ((cfg.flows_path, "flows"), (cfg.gdp_path, "gdp")):
        if p is None:
            raise ConfigError(f"no {name} file configured")
        if not Path(p).exists():
            raise ConfigError(f"{name} file {p} not found")
    with open(cfg.flows_path, "rb") as fh:
        flows = parse_flows(fh)
    with open(cfg.gdp_path, "rb") as fh:
        gdps = parse_gdp(fh)
    available = sorted({g.year for g in gdps})
    years = cfg.years if cfg.years is not None else available
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for year in years:
        if year not in available:
            logger.warning("%d: no GDP data, year skipped", year)
            continue
        snap = build_snapshot(year, flows, gdps)
        if snap.T == 0:
            logger.warning("%d: no trade flows, year skipped", year)
            continue
        written.extend(write_snapshot(snap, cfg.output_dir, cfg.meta("ingest")))
        print(f"{year}: N={snap.N} X={snap.X!r} T={snap.T!r} dropped={len(snap.dropped)}")
    return written


def cmd_fit(cfg: RunConfig) -> list[Path]:
    written = []
    for year in _years(cfg):
        if not snapshot_paths(cfg.output_dir, year)[0].exists():
            raise DataError(f"missing snapshot for year {year}")
        params = fit_params(read_snapshot(cfg.output_dir, year))
        written.append(write_params(params, cfg.output_dir, cfg.meta("fit")))
        print(f"{year}: residual={fit_residual(params):.3e}")
    return written


def _sample_path(directory: Path, year: int, seed: int, k: int | None = None) -> Path:
    if k is None:
        return Path(directory) / f"sample-{year}-{seed}.csv"
    return Path(directory) / f"sample-{year}-{seed}-metropolis-{k}.csv"


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    chain_cfg = cfg.chain
    written = []
    meta = cfg.meta("simulate")
    for year in _years(cfg):
        _require(params_path(cfg.output_dir, year), f"params for year {year}")
        params = read_params(cfg.output_dir, year)
        if cfg.method in ("direct", "both"):
            for k in range(cfg.samples):
                g = sample_direct(params, cfg.seed + k)
                written.append(write_weights(_sample_path(cfg.output_dir, year, g.seed),
                                             g.weights, params.countries, meta))
        if cfg.method in ("metropolis", "both"):
            n_pairs = params.N * (params.N - 1)
            track = None
            if n_pairs > MAX_KS_PAIRS:
                rng = np.random.default_rng(cfg.seed)
                track = np.sort(rng.choice(n_pairs, MAX_KS_PAIRS, replace=False))
            chain = run_chain(params, chain_cfg, keep=cfg.samples, track=track)
            for k, g in enumerate(chain.samples):
                written.append(write_weights(_sample_path(cfg.output_dir, year, cfg.seed, k),
                                             g.weights, params.countries, meta))
            report = chain_diagnostics(chain, params)
            written.append(write_table(cfg.output_dir / f"chain-{year}.csv", ("sweep", "H"),
                                       enumerate(report.h_trace), {**meta, "year": year}))
            print(f"{year}: metropolis acceptance={report.acceptance_rate:.3f} "
                  f"tail<H>={report.tail_mean():.6g} expected={report.h_expected:.6g}")
            if cfg.method == "both":
                cmp = compare_marginals(chain, params, seed=cfg.seed)
                n = params.N
                rows = ((params.countries[(p2 := chain.pair_index[p]) // n],
                         params.countries[p2 % n], s, pv, t)
                        for p, s, pv, t in zip(cmp.pairs, cmp.statistic, cmp.pvalue, cmp.tau))
                written.append(write_table(cfg.output_dir / f"ks-{year}.csv",
                                           ("i", "j", "statistic", "pvalue", "tau"), rows,
                                           {**meta, "year": year}))
                print(f"{year}: KS pass fraction at 0.01 = {cmp.pass_fraction(0.01):.3f} "
                      f"over {len(cmp.pairs)} pairs")
    return written


def _simulated_weights(cfg: RunConfig, year: int, countries) -> np.ndarray:
    direct = _sample_path(cfg.output_dir, year, cfg.seed)
    mh = _sample_path(cfg.output_dir, year, cfg.seed, 0)
    if cfg.method != "metropolis" and direct.exists():
        return read_weights(direct, countries)
    if mh.exists():
        return read_weights(mh, countries)
    raise DataError(f"missing simulated sample for year {year}: {direct}")


def _fr_rows(points: FrPoints, cfg: RunConfig):
    panels = {
        "a": (None, None),
        "b": (cfg.min_expected_share, None),
        "c": (None, cfg.min_bin_count),
        "d": (cfg.min_expected_share, cfg.min_bin_count),
    }
    cells, agg = [], []
    for name, (share, count) in panels.items():
        bins = fr_bin_points(points, share, count)
        cells.extend((name, b.m, b.n, b.count, b.geo_mean_dxi, b.geo_mean_dv) for b in bins)
        if bins:
            agg.extend((name, a.n, a.cells, a.geo_mean_dxi, a.geo_mean_dv)
                       for a in fr_report(bins).aggregate)
    return cells, agg


def _write_fr(cfg: RunConfig, tag: str, points: FrPoints, meta) -> list[Path]:
    cells, agg = _fr_rows(points, cfg)
    d = cfg.output_dir
    return [
        write_table(d / f"fr-{tag}.csv",
                    ("panel", "m", "n", "count", "geo_mean_dxi", "geo_mean_dv"), cells, meta),
        write_table(d / f"fragg-{tag}.csv",
                    ("panel", "n", "cells", "geo_mean_dxi", "geo_mean_dv"), agg, meta),
    ]


def cmd_analyze(cfg: RunConfig) -> list[Path]:
    years = _years(cfg)
    d = cfg.output_dir
    meta = cfg.meta("analyze")
    written = []
    snaps, params = {}, {}
    strength_rows = []
    for year in years:
        _require(snapshot_paths(d, year)[0], f"snapshot for year {year}")
        _require(params_path(d, year), f"params for year {year}")
        snap = snaps[year] = read_snapshot(d, year)
        par = params[year] = read_params(d, year)
        sim = _simulated_weights(cfg, year, par.countries)

        fit = strength_fit(snap)
        strength_rows.append((year, fit.A_theory, fit.A_fit_out, fit.A_fit_in,
                              fit.loglog_slope_out, fit.loglog_slope_in))

        cloud = flow_cloud(snap, par, cfg.censor_threshold, cfg.cloud_bins)
        ymeta = {**meta, "year": year}
        c = par.countries
        written.append(write_table(
            d / f"cloud-{year}.csv", ("i", "j", "gdp_product", "w_observed", "w_expected"),
            zip((c[k] for k in cloud.i), (c[k] for k in cloud.j), cloud.gdp_product,
                cloud.observed, cloud.expected), ymeta))
        edges = cloud.bin_edges
        written.append(write_table(
            d / f"cloud-bins-{year}.csv",
            ("bin_lo", "bin_hi", "count", "mean_observed", "mean_expected"),
            zip(edges[:-1], edges[1:], cloud.bin_count, cloud.bin_mean_observed,
                cloud.bin_mean_expected), ymeta))

        real = relative_view(snap).v.data
        real = real[real * snap.T > cfg.censor_threshold]
        simulated = sim[~np.eye(par.N, dtype=bool)] / par.T
        simulated = simulated[simulated > 0]
        expected = expected_shares(par)
        hist_edges = log_bin_edges(np.concatenate([real, simulated, expected]), cfg.hist_bins)
        for source, values in (("real", real), ("simulated", simulated)):
            h = volume_distribution(values, source=source, edges=hist_edges)
            written.append(_write_hist(d, year, h, ymeta))
        written.append(_write_hist(d, year, expected_distribution(par, edges=hist_edges), ymeta))

    written.append(write_table(
        d / "strength.csv",
        ("year", "A_theory", "A_fit_out", "A_fit_in", "loglog_slope_out", "loglog_slope_in"),
        strength_rows, meta))

    pooled = []
    for t in years:
        if t + 1 not in snaps:
            continue
        pts = fr_points(snaps[t], snaps[t + 1], params[t])
        pooled.append(pts)
        tag = f"{t}-{t + 1}"
        written.append(write_table(
            d / f"frpoints-{tag}.csv", ("i", "j", "eta", "rel_dv", "rel_dxi_sum"),
            zip((pts.countries[k] for k in pts.i), (pts.countries[k] for k in pts.j),
                pts.eta, pts.rel_dv, pts.rel_dxi_sum), meta))
        written.extend(_write_fr(cfg, tag, pts, meta))
        print(f"{tag}: {len(pts)} FR points")
    if len(pooled) > 1:
        written.extend(_write_fr(cfg, f"pooled-{years[0]}-{years[-1]}",
                                 FrPoints.concat(pooled), meta))
    for row in strength_rows:
        print(f"{row[0]}: A_theory={row[1]:.6g} A_out={row[2]:.6g} A_in={row[3]:.6g} "
              f"slope_out={row[4]:.3f} slope_in={row[5]:.3f}")
    return written


def _write_hist(d: Path, year: int, h, meta) -> Path:
    return write_table(d / f"hist-{year}-{h.source}.csv", ("bin_lo", "bin_hi", "density"),
                       zip(h.edges[:-1], h.edges[1:], h.density), meta)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--years", help="year range a..b or comma-separated list")
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=("direct", "metropolis", "both"))
    common.add_argument("--output", type=Path, help="output directory")
    common.add_argument("--flows", type=Path, help="flows CSV (ingest)")
    common.add_argument("--gdp", type=Path, help="GDP CSV (ingest)")
    common.add_argument("--samples", type=int, help="number of samples to write (simulate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="itnsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("ingest", "build yearly snapshots from flows and GDP CSVs"),
                        ("fit", "fit node fields for each snapshot"),
                        ("simulate", "sample the fitted ensemble"),
                        ("analyze", "strength fits, flow clouds, histograms, FR tables")):
        sub.add_parser(name, parents=[common], help=help_)
    return parser


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "simulate": cmd_simulate,
            "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {"years": args.years, "seed": args.seed, "method": args.method,
                 "output": args.output, "flows": args.flows, "gdp": args.gdp,
                 "samples": args.samples}
    # command-line paths are relative to the working directory, not the config
    for key in ("output", "flows", "gdp"):
        if overrides[key] is not None:
            overrides[key] = overrides[key].resolve()
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"itnsim: config error: {err}", file=sys.stderr)
        return 1
    except (DataError, FormatError, FileNotFoundError) as err:
        print(f"itnsim: data error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
