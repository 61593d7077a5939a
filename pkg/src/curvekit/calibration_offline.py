"""Historical analysis: weighted PCA, model-vs-history statistics, and
factor-series extraction.

These routines back out the slow-moving model parameters (mean reversion,
volatility ratio, factor correlation) from daily returns of constant-nearby
futures, with more recent observations weighted up exponentially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateDataError,
    DomainError,
    ShapeError,
    SingularInversionError,
    UnsupportedSpecError,
)
from .factor_model import CalibratedModel, FactorSpec, log_covariance
from .simulation import SimGrid, simulate_factors

DEFAULT_HALF_LIFE = 125.0


def exponential_weights(n_rows: int, half_life: float) -> np.ndarray:
    """Per-row weights decaying by half every ``half_life`` rows.

    The newest (last) row has unit weight before normalization; the
    result sums to one.
    """
    if half_life <= 0.0:
        raise DomainError(f"half life must be positive, got {half_life}")
    if n_rows < 1:
        raise DomainError("need at least one row")
    ages = np.arange(n_rows - 1, -1, -1, dtype=float)
    w = 2.0 ** (-ages / half_life)
    return w / w.sum()


@dataclass(frozen=True)
class ReturnPanel:
    """Daily log returns of constant-nearby futures with row weights."""

    returns: np.ndarray
    weights: np.ndarray
    tenor_indices: tuple[int, ...]
    dates: tuple | None = None

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if r.ndim != 2:
            raise ShapeError("returns must be a 2-d matrix (rows x tenors)")
        if w.shape != (r.shape[0],):
            raise ShapeError("one weight per return row required")
        if np.any(w <= 0.0):
            raise DomainError("weights must be positive")
        if len(self.tenor_indices) != r.shape[1]:
            raise ShapeError("one tenor index per column required")
        if self.dates is not None and len(self.dates) != r.shape[0]:
            raise ShapeError("one date per return row required")
        r.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tenor_indices", tuple(self.tenor_indices))

    @classmethod
    def from_returns(
        cls, returns, half_life: float = DEFAULT_HALF_LIFE,
        tenor_indices=None, dates=None,
    ) -> "ReturnPanel":
        returns = np.asarray(returns, dtype=float)
        if tenor_indices is None:
            tenor_indices = tuple(range(1, returns.shape[1] + 1))
        return cls(
            returns,
            exponential_weights(returns.shape[0], half_life),
            tuple(tenor_indices),
            dates,
        )

    @classmethod
    def from_prices(
        cls, prices, half_life: float = DEFAULT_HALF_LIFE,
        tenor_indices=None, dates=None,
    ) -> "ReturnPanel":
        """Log returns of constant-nearby settlement prices."""
        prices = np.asarray(prices, dtype=float)
        if prices.shape[0] < 2:
            raise DegenerateDataError("need at least two price rows")
        if np.any(prices <= 0.0):
            raise DomainError("settlement prices must be positive")
        returns = np.diff(np.log(prices), axis=0)
        if dates is not None:
            dates = tuple(dates)[1:]
        return cls.from_returns(returns, half_life, tenor_indices, dates)


@dataclass(frozen=True)
class PcaResult:
    """Loadings (one per row), explained variances, and cumulative ratio."""

    components: np.ndarray
    eigenvalues: np.ndarray
    explained_fraction: np.ndarray
    rank_deficient: bool = False

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        e = np.asarray(self.eigenvalues, dtype=float)
        f = np.asarray(self.explained_fraction, dtype=float)
        c.setflags(write=False)
        e.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "eigenvalues", e)
        object.__setattr__(self, "explained_fraction", f)


def _sign_fix(components: np.ndarray) -> np.ndarray:
    fixed = components.copy()
    for row in fixed:
        if row[np.argmax(np.abs(row))] < 0.0:
            row *= -1.0
    return fixed


def _decompose(cov: np.ndarray) -> PcaResult:
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    components = _sign_fix(eigvecs[:, order].T)
    rank_deficient = bool(eigvals.min() <= 1e-12 * max(eigvals.max(), 0.0))
    eigvals = np.clip(eigvals, 0.0, None)
    total = eigvals.sum()
    if total > 0.0:
        explained = np.cumsum(eigvals) / total
    else:
        explained = np.zeros_like(eigvals)
    return PcaResult(components, eigvals, explained, rank_deficient)


def weighted_pca(panel: ReturnPanel) -> PcaResult:
    """Eigen-decomposition of the weighted covariance of panel returns.

    Returns are demeaned with the same exponential weights.  Components
    are sign-fixed so each loading's largest-magnitude element is
    positive.
    """
    r = panel.returns
    if r.shape[0] < 2 or r.shape[1] < 2:
        raise DegenerateDataError("PCA needs at least 2 rows and 2 tenors")
    w = panel.weights / panel.weights.sum()
    mean = w @ r
    centered = r - mean
    cov = centered.T @ (centered * w[:, None])
    return _decompose(0.5 * (cov + cov.T))


def instantaneous_covariance(spec: FactorSpec, tenors) -> np.ndarray:
    """Instantaneous log-return covariance across tenor offsets.

    C_ab = sum_ij p_i p_j rho_ij exp(-beta_i tau_a - beta_j tau_b).
    """
    tau = np.atleast_1d(np.asarray(tenors, dtype=float))
    if np.any(tau < 0.0):
        raise DomainError("tenor offsets must be non-negative")
    loadings = spec.p_const[None, :] * np.exp(
        -np.outer(tau, spec.beta)
    )
    return loadings @ spec.rho @ loadings.T


def model_implied_loadings(spec: FactorSpec, tenors) -> PcaResult:
    """First two principal components implied by a two-factor spec."""
    if spec.n_factors != 2:
        raise UnsupportedSpecError(
            f"model-implied loadings are defined for 2 factors, "
            f"got {spec.n_factors}"
        )
    cov = instantaneous_covariance(spec, tenors)
    result = _decompose(cov)
    return PcaResult(
        result.components[:2],
        result.eigenvalues[:2],
        result.explained_fraction[:2],
        result.rank_deficient,
    )


@dataclass(frozen=True)
class TwoFactorFit:
    beta: float
    vol_ratio: float
    rho: float
    fit_residual: float
    converged: bool


def _scaled_loadings(result: PcaResult, count: int = 2) -> np.ndarray:
    return result.components[:count] * np.sqrt(result.eigenvalues[:count, None])


def _fit_objective(params, tenors, target_scaled):
    beta, ratio, rho = params
    if not (0.0 <= beta <= 10.0 and 0.05 <= ratio <= 50.0 and -0.999 <= rho <= 0.999):
        return 1e6
    spec = FactorSpec(
        beta=[beta, 0.0],
        p_const=[ratio, 1.0],
        q_const=[ratio, 1.0],
        rho=[[1.0, rho], [rho, 1.0]],
    )
    model_scaled = _scaled_loadings(model_implied_loadings(spec, tenors))
    num = float(np.sum(model_scaled * target_scaled))
    den = float(np.sum(model_scaled * model_scaled))
    scale = max(num / den, 0.0) if den > 0.0 else 0.0
    return float(np.sum((scale * model_scaled - target_scaled) ** 2))


def fit_two_factor_to_pca(target: PcaResult, tenors) -> TwoFactorFit:
    """Least-squares fit of (beta, vol ratio, rho) to historical PCA.

    The long factor's mean reversion is pinned at zero and the overall
    vol level is profiled out, so only the shape of the first two
    scaled components matters.  Coarse grid search, then a
    derivative-free polish.
    """
    if target.components.shape[0] < 2:
        raise DegenerateDataError("target PCA needs at least two components")
    tenors = np.atleast_1d(np.asarray(tenors, dtype=float))
    target_scaled = _scaled_loadings(target)

    best = None
    for beta in np.linspace(0.05, 3.0, 13):
        for ratio in np.linspace(1.0, 5.0, 9):
            for rho in np.linspace(-0.9, 0.9, 7):
                val = _fit_objective((beta, ratio, rho), tenors, target_scaled)
                if best is None or val < best[0]:
                    best = (val, (beta, ratio, rho))
    result = minimize(
        _fit_objective,
        x0=np.array(best[1]),
        args=(tenors, target_scaled),
        method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 4000},
    )
    x = result.x if result.fun <= best[0] else np.array(best[1])
    residual = float(min(result.fun, best[0]))
    return TwoFactorFit(
        beta=float(x[0]),
        vol_ratio=float(x[1]),
        rho=float(x[2]),
        fit_residual=residual,
        converged=bool(result.success),
    )


@dataclass(frozen=True)
class ModelStatistics:
    tenors: np.ndarray
    vol_ratio_curve: np.ndarray
    correlation_curve: np.ndarray


def model_statistics(
    spec: FactorSpec, tenors, reference_tenor: int
) -> ModelStatistics:
    """Vol ratios and correlations of each tenor against a reference nearby.

    ``reference_tenor`` indexes ``tenors`` 1-based, matching nearby
    numbering.
    """
    tau = np.atleast_1d(np.asarray(tenors, dtype=float))
    if not 1 <= reference_tenor <= tau.size:
        raise DomainError(
            f"reference tenor {reference_tenor} outside 1..{tau.size}"
        )
    cov = instantaneous_covariance(spec, tau)
    ref = reference_tenor - 1
    diag = np.diag(cov)
    vol_ratio = np.sqrt(diag / diag[ref])
    correlation = cov[:, ref] / np.sqrt(diag * diag[ref])
    return ModelStatistics(tau, vol_ratio, correlation)


@dataclass(frozen=True)
class FactorSeries:
    """Realized short/long factor shock series, one entry per return."""

    short_shocks: np.ndarray
    long_shocks: np.ndarray
    dates: tuple | None = None

    def __post_init__(self):
        s = np.asarray(self.short_shocks, dtype=float)
        l = np.asarray(self.long_shocks, dtype=float)
        if s.shape != l.shape or s.ndim != 1:
            raise ShapeError("shock series must be congruent 1-d arrays")
        s.setflags(write=False)
        l.setflags(write=False)
        object.__setattr__(self, "short_shocks", s)
        object.__setattr__(self, "long_shocks", l)


def extract_factor_series(
    returns_front, returns_back, beta: float, tau1: float, tau2: float,
    dates=None,
) -> FactorSeries:
    """Invert two nearby-contract returns into short/long factor shocks.

    With r_a = s * exp(-beta tau_a) + l for tenor offsets tau1 < tau2:

        s = (r1 - r2) / (exp(-beta tau1) - exp(-beta tau2))
        l = (exp(-beta (tau2 - tau1)) r1 - r2) / (exp(-beta (tau2 - tau1)) - 1)
    """
    r1 = np.atleast_1d(np.asarray(returns_front, dtype=float))
    r2 = np.atleast_1d(np.asarray(returns_back, dtype=float))
    if r1.shape != r2.shape:
        raise ShapeError("front and back return series must be aligned")
    if beta <= 0.0:
        raise DomainError(f"beta must be positive, got {beta}")
    if tau1 == tau2:
        raise DomainError("tenor offsets must differ")
    gap = np.exp(-beta * (tau2 - tau1))
    if abs(gap - 1.0) < 1e-14:
        raise SingularInversionError(
            f"beta * (tau2 - tau1) = {beta * (tau2 - tau1):.3e} too small "
            "to separate the factors"
        )
    short = (r1 - r2) / (np.exp(-beta * tau1) - np.exp(-beta * tau2))
    long = (gap * r1 - r2) / (gap - 1.0)
    return FactorSeries(short, long, dates)


def relative_value_target(
    realized_ratio: float, implied_vanilla_vol: float
) -> float:
    """Swaption vol target: realized swap/futures vol ratio times the
    vanilla implied vol."""
    if realized_ratio <= 0.0 or implied_vanilla_vol <= 0.0:
        raise DomainError("ratio and vol must be positive")
    return realized_ratio * implied_vanilla_vol


def realized_swap_futures_ratio(swap_prices, futures_prices) -> float:
    """Ratio of realized swap vol to realized futures vol.

    Both are sample standard deviations of daily log returns; the
    annualization factor cancels.
    """
    swap = np.atleast_1d(np.asarray(swap_prices, dtype=float))
    fut = np.atleast_1d(np.asarray(futures_prices, dtype=float))
    if swap.shape != fut.shape:
        raise ShapeError("series must be aligned")
    if swap.size < 2:
        raise DegenerateDataError("need at least two prices")
    if np.any(swap <= 0.0) or np.any(fut <= 0.0):
        raise DomainError("prices must be positive")
    r_swap = np.diff(np.log(swap))
    r_fut = np.diff(np.log(fut))
    if r_swap.size < 2:
        raise DegenerateDataError("need at least two returns per series")
    sd_fut = r_fut.std(ddof=1)
    if sd_fut == 0.0:
        raise DegenerateDataError("futures series has zero variance")
    return float(r_swap.std(ddof=1) / sd_fut)


def synthetic_nearby_panel(
    m: CalibratedModel,
    n_days: int,
    tenor_offsets,
    seed: int,
    dt: float = 1.0 / 252.0,
    half_life: float = DEFAULT_HALF_LIFE,
) -> ReturnPanel:
    """Constant-nearby return panel simulated from the model itself.

    Each day's return holds the sampling contract fixed (the roll
    happens between days, never inside a return), so the panel matches
    the instantaneous covariance structure of the model.
    """
    tau = np.atleast_1d(np.asarray(tenor_offsets, dtype=float))
    if n_days < 2:
        raise DomainError("need at least two days")
    grid = SimGrid(dt * np.arange(1, n_days + 1))
    factors = simulate_factors(m, grid, 1, seed).factors[0]
    beta = m.spec.beta
    returns = np.empty((n_days, tau.size))
    y_prev = np.zeros(m.spec.n_factors)
    t_prev = 0.0
    for k in range(n_days):
        t_k = float(grid.dates[k])
        y_k = factors[k]
        for a, off in enumerate(tau):
            big_t = t_prev + off
            shock = float(
                (m.q_eff(big_t) * np.exp(-beta * (big_t - t_k))) @ y_k
            ) - float(
                (m.q_eff(big_t) * np.exp(-beta * (big_t - t_prev))) @ y_prev
            )
            drift = -0.5 * log_covariance(m, big_t, big_t, t_prev, t_k)
            returns[k, a] = shock + drift
        y_prev, t_prev = y_k, t_k
    indices = tuple(int(round(o * 12)) for o in tau)
    return ReturnPanel.from_returns(returns, half_life, indices)
