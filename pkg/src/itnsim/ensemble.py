"""Factorized exponential ensemble of weighted directed networks.

Every directed pair (i, j), i != j, carries an independent exponential weight
with rate ``theta_ij = theta_i * theta_j``. With per-node fields fitted from
GDP, ``theta_i = X / (sqrt(T) * x_i)``, the mean weight reduces to the gravity
form ``<w_ij> = T x_i x_j / X**2`` and, in shares, ``<v_ij> = xi_i xi_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .ingest import Snapshot


@dataclass(frozen=True, eq=False)
class EnsembleParams:
    """Fitted node fields for one year.

    ``theta`` is in (millions USD)**-1/2 so that ``theta_i * theta_j`` is the
    rate of the exponential law of ``w_ij`` in millions USD.
    """

    year: int
    countries: tuple[str, ...]
    theta: np.ndarray
    T: float
    X: float
    x: np.ndarray

    def __post_init__(self):
        if self.theta.shape != (len(self.countries),):
            raise ValueError("theta length does not match country list")
        if not np.all(self.theta > 0):
            raise DataError("all node fields must be positive")
        self.theta.setflags(write=False)
        self.x.setflags(write=False)

    @classmethod
    def from_gdp(cls, x, T: float, countries=None, year: int = 0) -> "EnsembleParams":
        x = np.asarray(x, dtype=float)
        if not np.all(x > 0):
            raise DataError("GDP must be positive for every country")
        if not T > 0:
            raise DataError("total trade must be positive")
        if countries is None:
            countries = tuple(str(k) for k in range(len(x)))
        X = math.fsum(x)
        theta = X / (math.sqrt(T) * x)
        return cls(year, tuple(countries), theta, float(T), X, x.copy())

    @property
    def N(self) -> int:
        return len(self.countries)

    @property
    def xi(self) -> np.ndarray:
        return self.x / self.X

    def theta_pairs(self) -> np.ndarray:
        """Dense ``theta_ij``; the diagonal is meaningless and set to inf."""
        t = np.outer(self.theta, self.theta)
        np.fill_diagonal(t, np.inf)
        return t

    def eta_pairs(self) -> np.ndarray:
        """Dense relative fields ``eta_ij = T theta_ij = 1 / (xi_i xi_j)``."""
        return self.T * self.theta_pairs()

    def pair(self, i: int, j: int) -> "PairField":
        if i == j:
            raise ValueError("no field on the diagonal")
        t = self.theta[i] * self.theta[j]
        return PairField(i, j, t, self.T * t)

    def index(self) -> dict[str, int]:
        return {c: k for k, c in enumerate(self.countries)}


@dataclass(frozen=True)
class PairField:
    i: int
    j: int
    theta_ij: float
    eta_ij: float


def fit_params(snapshot: Snapshot) -> EnsembleParams:
    """Fit node fields so that expected strengths track GDP."""
    if not snapshot.T > 0:
        raise DataError(f"degenerate snapshot {snapshot.year}: no trade")
    if not np.all(snapshot.x > 0):
        raise DataError(f"nonpositive GDP in {snapshot.year}")
    return EnsembleParams.from_gdp(snapshot.x, snapshot.T, snapshot.countries, snapshot.year)


def fit_residual(params: EnsembleParams) -> float:
    """Relative deviation of ``sum(1/theta_i)`` from ``sqrt(T)``."""
    root = math.sqrt(params.T)
    return abs(math.fsum(1.0 / params.theta) - root) / root


def expected_weight(params: EnsembleParams, i: int, j: int) -> float:
    if i == j:
        raise ValueError("no self-trade: i == j")
    return 1.0 / (params.theta[i] * params.theta[j])


def expected_weights(params: EnsembleParams) -> np.ndarray:
    """Dense matrix of ``<w_ij>`` with zero diagonal."""
    inv = 1.0 / params.theta
    m = np.outer(inv, inv)
    np.fill_diagonal(m, 0.0)
    return m


def expected_shares(params: EnsembleParams) -> np.ndarray:
    """``<v_ij> = xi_i xi_j`` for every ordered pair i != j (flat array)."""
    xi = params.xi
    m = np.outer(xi, xi)
    return m[~np.eye(params.N, dtype=bool)]


def expected_strengths(params: EnsembleParams) -> tuple[np.ndarray, np.ndarray]:
    """Expected (out, in) strengths, summing over partners j != i only.

    Compared with ``(T/X) x_i`` this is low by a relative ``xi_i`` because the
    self-pair is excluded.
    """
    inv = 1.0 / params.theta
    s = (inv.sum() - inv) * inv
    return s, s.copy()


def _check_weights(weights, params: EnsembleParams):
    n = params.N
    if weights.shape != (n, n):
        raise ValueError(f"weights have shape {weights.shape}, expected {(n, n)}")
    diag = weights.diagonal()
    if np.any(diag != 0):
        raise ValueError("weights must have a zero diagonal")


def hamiltonian(weights, params: EnsembleParams) -> float:
    """``H = sum_{i != j} theta_ij w_ij`` for dense or sparse weights."""
    _check_weights(weights, params)
    th = params.theta
    if sp.issparse(weights):
        coo = weights.tocoo()
        return float(np.sum(th[coo.row] * th[coo.col] * coo.data))
    return float(th @ np.asarray(weights) @ th)


def hamiltonian_relative(v, params: EnsembleParams) -> float:
    """Same energy written with shares: ``sum_{i != j} eta_ij v_ij``."""
    _check_weights(v, params)
    xi = params.xi
    inv = 1.0 / xi
    if sp.issparse(v):
        coo = v.tocoo()
        return float(np.sum(inv[coo.row] * inv[coo.col] * coo.data))
    return float(inv @ np.asarray(v) @ inv)


def log_partition(params: EnsembleParams) -> float:
    """``ln Z = -sum_{i != j} ln theta_ij``.

    Each node field appears in 2(N - 1) ordered pairs.
    """
    return -2.0 * (params.N - 1) * math.fsum(np.log(params.theta))


def link_weight_density(theta_ij, w):
    """Exponential density ``theta_ij * exp(-theta_ij * w)`` of a link weight."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("link weights are nonnegative")
    out = theta_ij * np.exp(-theta_ij * w)
    return float(out) if out.ndim == 0 else out


def fr_identity_check(eta: float) -> tuple[float, float]:
    """Return (variance, susceptibility) of a share with field ``eta``.

    Variance is ``<v^2> - <v>^2 = 2/eta^2 - 1/eta^2``; susceptibility is
    ``-d<v>/d eta = 1/eta^2``.
    """
    inv2 = 1.0 / (eta * eta)
    variance = 2.0 * inv2 - inv2
    return variance, inv2


def fr_predict(rel_dxi_i, rel_dxi_j):
    """Predicted relative change of a normalized flow from GDP-share changes."""
    return rel_dxi_i + rel_dxi_j
