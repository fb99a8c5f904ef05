import math

import numpy as np
import pytest
from scipy import stats

from itnsim.ensemble import EnsembleParams, hamiltonian, link_weight_density
from itnsim.errors import ConfigError
from itnsim.sampler import (ChainConfig, acceptance_probability, chain_diagnostics,
                            compare_marginals, draw_exponential, integrated_autocorr_time,
                            metropolis_run, proposal_density, run_chain, sample_direct)


@pytest.fixture(scope="module")
def ten_nodes():
    rng = np.random.default_rng(7)
    return EnsembleParams.from_gdp(rng.lognormal(0, 1, 10), 1e3)


def unit_pair():
    # x = (1, 1), T = 4 gives theta_i = 1, so the single pair rate is 1
    return EnsembleParams.from_gdp([1.0, 1.0], 4.0)


def test_direct_is_deterministic(ten_nodes):
    a, b = sample_direct(ten_nodes, 11), sample_direct(ten_nodes, 11)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, sample_direct(ten_nodes, 12).weights)
    assert a.method == "direct" and a.seed == 11


def test_direct_shape_and_support(ten_nodes):
    w = sample_direct(ten_nodes, 0).weights
    assert w.shape == (10, 10)
    assert np.all(np.diag(w) == 0)
    assert np.all(w[~np.eye(10, dtype=bool)] > 0)


def test_direct_moments_unit_rate():
    p = unit_pair()
    draws = np.array([sample_direct(p, s).weights[0, 1] for s in range(100_000)])
    assert abs(draws.mean() - 1) < 0.01
    assert abs(draws.var() - 1) < 0.03


def test_direct_ks_against_exponential_cdf():
    rng = np.random.default_rng(0)
    draws = draw_exponential(np.float64(2.5), 100_000, rng)
    res = stats.kstest(draws, lambda w: 1 - np.exp(-2.5 * w))
    # one-sample KS critical value at significance 0.01
    assert res.statistic < 1.628 / math.sqrt(draws.size)


def test_chain_config_validation():
    with pytest.raises(ConfigError):
        ChainConfig(sweeps=10, burn_in=10)
    with pytest.raises(ConfigError):
        ChainConfig(thin=0)
    with pytest.raises(ConfigError):
        ChainConfig(step_scale=0.0)
    with pytest.raises(ConfigError):
        ChainConfig(burn_in=0)
    assert ChainConfig(sweeps=1100, burn_in=100, thin=10).n_retained == 100


def test_null_move_always_accepted():
    assert acceptance_probability(3.0, 1.25, 1.25) == 1.0
    assert acceptance_probability(3.0, 1.25, -0.1) == 0.0


def test_detailed_balance_grid():
    theta, delta = 1.7, 0.8
    grid = np.linspace(0, 3, 61)
    w, w2 = np.meshgrid(grid, grid)
    p = link_weight_density(theta, w)
    p2 = link_weight_density(theta, w2)
    lhs = p * proposal_density(w, w2, delta) * acceptance_probability(theta, w, w2)
    rhs = p2 * proposal_density(w2, w, delta) * acceptance_probability(theta, w2, w)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=0)
    assert np.count_nonzero(lhs) > 100


def test_chain_is_deterministic(ten_nodes):
    cfg = ChainConfig(sweeps=300, burn_in=100, thin=20, seed=4)
    a, b = run_chain(ten_nodes, cfg), run_chain(ten_nodes, cfg)
    np.testing.assert_array_equal(a.h_trace, b.h_trace)
    np.testing.assert_array_equal(a.traces, b.traces)


def test_chain_retention(ten_nodes):
    cfg = ChainConfig(sweeps=1000, burn_in=100, thin=30)
    chain = run_chain(ten_nodes, cfg, keep=3)
    assert chain.traces.shape == (30, 90)
    assert chain.kept_sweeps == [940, 970, 1000]
    np.testing.assert_array_equal(chain.kept[-1], chain.traces[-1])
    samples = metropolis_run(ten_nodes, cfg)
    assert len(samples) == 30
    for g in samples:
        assert g.method == "metropolis"
        assert np.all(np.diag(g.weights) == 0) and np.all(g.weights >= 0)


def test_initial_energy_at_mean(ten_nodes):
    chain = run_chain(ten_nodes, ChainConfig(sweeps=20, burn_in=10, thin=1))
    assert math.isclose(chain.h_trace[0], 90.0, rel_tol=1e-12)


@pytest.mark.slow
def test_single_pair_chain_mean():
    chain = run_chain(unit_pair(), ChainConfig(sweeps=100_000, burn_in=1000, thin=10))
    assert abs(chain.traces.mean() - 1.0) < 0.02


@pytest.mark.slow
def test_equilibrium_energy(ten_nodes):
    chain = run_chain(ten_nodes, ChainConfig(sweeps=50_000, seed=1))
    rep = chain_diagnostics(chain, ten_nodes)
    assert rep.h_expected == 90.0
    assert abs(rep.h_trace[1000:].mean() - 90) / 90 < 0.02
    assert 0.3 < rep.acceptance_rate < 0.9


def test_cold_start_relaxes(ten_nodes):
    chain = run_chain(ten_nodes, ChainConfig(sweeps=2000, burn_in=10, init="zero"))
    rep = chain_diagnostics(chain, ten_nodes)
    assert rep.h_trace[0] == 0.0
    assert rep.tail_mean(0.25) > rep.h_trace[0]
    assert abs(rep.tail_mean(0.25) - 90) / 90 < 0.05


def test_diagnostics_from_graph_list(ten_nodes):
    samples = [sample_direct(ten_nodes, s) for s in range(5)]
    rep = chain_diagnostics(samples, ten_nodes)
    np.testing.assert_allclose(rep.h_trace, [hamiltonian(g.weights, ten_nodes) for g in samples])
    with pytest.raises(ValueError):
        chain_diagnostics([], ten_nodes)


def test_autocorr_time_ar1():
    rng = np.random.default_rng(3)
    rho = 0.6
    x = np.empty(200_000)
    x[0] = 0
    noise = rng.normal(size=x.size)
    for k in range(1, x.size):
        x[k] = rho * x[k - 1] + noise[k]
    # exact value for AR(1): (1 + rho) / (1 - rho) = 4
    assert abs(integrated_autocorr_time(x) - 4.0) < 0.3
    assert abs(integrated_autocorr_time(noise) - 1.0) < 0.1


@pytest.mark.slow
def test_metropolis_matches_direct(ten_nodes):
    chain = run_chain(ten_nodes, ChainConfig(sweeps=100_000, seed=2))
    cmp = compare_marginals(chain, ten_nodes, seed=3)
    assert cmp.pass_fraction(0.01) >= 0.95
