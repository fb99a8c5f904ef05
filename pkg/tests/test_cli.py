import filecmp
import re
from pathlib import Path

import numpy as np
import pytest
import yaml

from itnsim.cli import load_config, main, parse_years
from itnsim.ensemble import EnsembleParams
from itnsim.errors import ConfigError
from itnsim.synth import model_panel, write_inputs
from itnsim.tables import (read_params, read_snapshot, read_table, read_weights,
                           write_params, write_snapshot, write_weights)


@pytest.fixture()
def inputs(tmp_path):
    panel = model_panel(10, [1973, 1974], mode="sampled", seed=3)
    flows, gdp = tmp_path / "flows.csv", tmp_path / "gdp.csv"
    write_inputs(panel, flows, gdp)
    return tmp_path, flows, gdp


def run(*argv):
    return main([str(a) for a in argv])


def outputs(directory):
    return sorted(p.name for p in Path(directory).iterdir())


def test_parse_years():
    assert parse_years("1973..1975") == [1973, 1974, 1975]
    assert parse_years("1995,1973") == [1973, 1995]
    assert parse_years([1973, "1990..1991"]) == [1973, 1990, 1991]
    with pytest.raises(ConfigError):
        parse_years("1975..1973")
    with pytest.raises(ConfigError):
        parse_years("soon")


def test_config_defaults_match_published_constants():
    cfg = load_config(None, {})
    assert cfg.min_expected_share == 1e-4
    assert cfg.min_bin_count == 1000
    assert cfg.censor_threshold == 0.001


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({
        "flows": "f.csv", "gdp": "g.csv", "years": "1973..1974", "seed": 5,
        "chain": {"sweeps": 2000, "burn_in": 100, "thin": 5},
        "filters": {"min_bin_count": 10},
    }))
    cfg = load_config(path, {"seed": 9})
    assert cfg.flows_path == tmp_path / "f.csv"
    assert cfg.years == [1973, 1974]
    assert cfg.seed == 9 and cfg.chain.seed == 9
    assert cfg.chain.sweeps == 2000 and cfg.min_bin_count == 10
    path.write_text(yaml.safe_dump({"chain": {"sweeps": 10, "burn_in": 20}}))
    with pytest.raises(ConfigError):
        load_config(path, {})
    path.write_text(yaml.safe_dump({"colour": "blue"}))
    with pytest.raises(ConfigError):
        load_config(path, {})


def test_snapshot_round_trip(tmp_path):
    snap = model_panel(8, [2000], mode="sampled")[0]
    write_snapshot(snap, tmp_path)
    back = read_snapshot(tmp_path, 2000)
    assert back.countries == snap.countries
    np.testing.assert_array_equal(back.x, snap.x)
    assert (back.w != snap.w).nnz == 0
    assert back.T == snap.T


def test_params_round_trip(tmp_path):
    p = EnsembleParams.from_gdp([1.0, 1.0], 4.0, ("A", "B"), 1999)
    path = write_params(p, tmp_path)
    assert path.name == "params-1999.csv"
    _, rows = read_table(path, ("country", "x_i", "xi_i", "theta_i"))
    assert [float(r[3]) for r in rows] == [1.0, 1.0]
    back = read_params(tmp_path, 1999)
    np.testing.assert_array_equal(back.theta, p.theta)
    assert (back.T, back.X) == (p.T, p.X)


def test_weights_round_trip(tmp_path):
    w = np.array([[0, 1.5, 2.25], [3.0, 0, 1e-300], [7.0, 8.0, 0]])
    write_weights(tmp_path / "s.csv", w, ("a", "b", "c"))
    np.testing.assert_array_equal(read_weights(tmp_path / "s.csv", ("a", "b", "c")), w)


def test_pipeline(inputs, capsys):
    d, flows, gdp = inputs
    out = d / "out"
    assert run("ingest", "--flows", flows, "--gdp", gdp, "--output", out) == 0
    assert {"snapshot-1973.csv", "countries-1973.csv",
            "snapshot-1974.csv", "countries-1974.csv"} <= set(outputs(out))
    assert "1973: N=10" in capsys.readouterr().out

    assert run("fit", "--output", out) == 0
    printed = capsys.readouterr().out
    for r in re.findall(r"residual=(\S+)", printed):
        assert float(r) < 1e-10
    assert (out / "params-1974.csv").exists()

    assert run("simulate", "--output", out, "--method", "direct", "--seed", "4") == 0
    first = (out / "sample-1973-4.csv").read_bytes()
    assert run("simulate", "--output", out, "--method", "direct", "--seed", "4") == 0
    assert (out / "sample-1973-4.csv").read_bytes() == first

    assert run("analyze", "--output", out, "--seed", "4") == 0
    names = outputs(out)
    assert [n for n in names if re.fullmatch(r"fr-\d+-\d+\.csv", n)] == ["fr-1973-1974.csv"]
    for year in (1973, 1974):
        for source in ("real", "simulated", "expected"):
            _, rows = read_table(out / f"hist-{year}-{source}.csv", ("bin_lo", "bin_hi", "density"))
            mass = sum((float(b) - float(a)) * float(dens) for a, b, dens in rows)
            assert abs(mass - 1) < 1e-6
    meta, rows = read_table(out / "fr-1973-1974.csv",
                            ("panel", "m", "n", "count", "geo_mean_dxi", "geo_mean_dv"))
    assert meta["min_bin_count"] == "1000" and meta["min_expected_share"] == "0.0001"
    # 90 points cannot fill a cell beyond the 1000-count floor
    assert all(int(r[3]) > 1000 for r in rows if r[0] in ("c", "d"))
    assert sum(int(r[3]) for r in rows if r[0] == "a") == 90


def test_dropped_country_reported(inputs, capsys):
    d, flows, gdp = inputs
    with open(flows, "a") as fh:
        fh.write("1973,C000,ZZZ,5.0,\n")
    assert run("ingest", "--flows", flows, "--gdp", gdp, "--output", d / "out") == 0
    out = capsys.readouterr().out
    assert "1973: N=10" in out and "dropped=1" in out.splitlines()[0]
    assert "dropped=0" in out.splitlines()[1]


def test_rerun_is_byte_identical(inputs):
    d, flows, gdp = inputs
    for out in (d / "a", d / "b"):
        for argv in (("ingest", "--flows", flows, "--gdp", gdp), ("fit",),
                     ("simulate", "--method", "both", "--samples", "2"), ("analyze",)):
            assert run(*argv, "--output", out) == 0
    assert outputs(d / "a") == outputs(d / "b")
    _, mismatch, errors = filecmp.cmpfiles(d / "a", d / "b", outputs(d / "a"), shallow=False)
    assert mismatch == [] and errors == []


def test_fit_year_list(tmp_path):
    years = [1973, 1974, 1975, 1995]
    panel = model_panel(6, years, mode="sampled")
    write_inputs(panel, tmp_path / "f.csv", tmp_path / "g.csv")
    out = tmp_path / "out"
    assert run("ingest", "--flows", tmp_path / "f.csv", "--gdp", tmp_path / "g.csv",
               "--output", out) == 0
    assert run("fit", "--output", out, "--years", "1973,1974,1975,1995") == 0
    assert sorted(p.name for p in out.glob("params-*.csv")) == [f"params-{y}.csv" for y in years]


def test_fit_two_equal_countries(tmp_path):
    (tmp_path / "f.csv").write_text("year,exporter,importer,export_musd,import_musd\n"
                                    "2000,A,B,3.0,\n2000,B,A,1.0,\n")
    (tmp_path / "g.csv").write_text("year,country,gdp_pc_usd,population\n"
                                    "2000,A,1.0,1000000\n2000,B,1.0,1000000\n")
    out = tmp_path / "out"
    assert run("ingest", "--flows", tmp_path / "f.csv", "--gdp", tmp_path / "g.csv",
               "--output", out) == 0
    assert run("fit", "--output", out) == 0
    _, rows = read_table(out / "params-2000.csv", ("country", "x_i", "xi_i", "theta_i"))
    assert [float(r[3]) for r in rows] == [1.0, 1.0]


@pytest.mark.slow
def test_simulate_metropolis_equilibrium(inputs):
    d, flows, gdp = inputs
    out = d / "out"
    run("ingest", "--flows", flows, "--gdp", gdp, "--output", out, "--years", "1973")
    run("fit", "--output", out)
    cfg = d / "run.yaml"
    cfg.write_text(yaml.safe_dump({"chain": {"sweeps": 50_000}}))
    assert run("simulate", "--config", cfg, "--output", out, "--method", "metropolis") == 0
    _, rows = read_table(out / "chain-1973.csv", ("sweep", "H"))
    h = np.array([float(r[1]) for r in rows])
    assert len(h) == 50_001
    assert abs(h[len(h) // 2:].mean() - 90) / 90 < 0.02


def test_simulate_both_writes_ks_summary(inputs, capsys):
    d, flows, gdp = inputs
    out = d / "out"
    run("ingest", "--flows", flows, "--gdp", gdp, "--output", out, "--years", "1973")
    run("fit", "--output", out)
    capsys.readouterr()
    assert run("simulate", "--output", out, "--method", "both") == 0
    assert "KS pass fraction" in capsys.readouterr().out
    _, rows = read_table(out / "ks-1973.csv", ("i", "j", "statistic", "pvalue", "tau"))
    assert len(rows) == 90


def test_exit_codes(inputs, tmp_path, capsys):
    d, flows, gdp = inputs
    assert run("ingest", "--flows", d / "nope.csv", "--gdp", gdp, "--output", d / "o") == 1
    assert run("fit", "--output", d / "o", "--years", "1999") == 2
    assert "1999" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("bogus")
    assert exc.value.code == 1
    bad = d / "bad.yaml"
    bad.write_text(yaml.safe_dump({"chain": {"thin": 0}}))
    assert run("simulate", "--config", bad, "--output", d / "o") == 1
    bad_flows = d / "bad.csv"
    bad_flows.write_text("year,exporter,importer,export_musd,import_musd\n1,A,A,1,\n")
    assert run("ingest", "--flows", bad_flows, "--gdp", gdp, "--output", d / "o") == 2


def test_missing_year_skipped_with_warning(inputs, caplog):
    d, flows, gdp = inputs
    assert run("ingest", "--flows", flows, "--gdp", gdp, "--output", d / "o",
               "--years", "1972..1973") == 0
    assert "1972" in caplog.text
    assert not (d / "o" / "snapshot-1972.csv").exists()


def test_analyze_missing_prerequisite(inputs, capsys):
    d, flows, gdp = inputs
    out = d / "out"
    run("ingest", "--flows", flows, "--gdp", gdp, "--output", out)
    assert run("analyze", "--output", out) == 2
    assert "params" in capsys.readouterr().err
