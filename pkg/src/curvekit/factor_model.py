"""N-factor mean-reverting forward-curve model.

The futures price follows

    dF(t,T)/F(t,T) = sum_i p_i(t) q_i(T) exp(-beta_i (T - t)) dW_i(t)

with correlated Brownian drivers, <dW_i, dW_j> = rho_ij dt.  Writing the
local volatilities as p_i(t) = p_i^(1-eps) * alpha(t) and
q_i(T) = q_i^eps * lambda(T)^eps, the non-fungibility parameter eps blends
the time-scaled (eps=0) and expiry-scaled (eps=1) variants of the model.

Everything priced or simulated downstream reduces to the integrated log
covariance of pairs of contracts, which this module evaluates in closed
form per alpha-knot segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DomainError,
    NotPositiveSemiDefiniteError,
    OrderingError,
    ShapeError,
)
from .termstructure import ContractSchedule, ForwardCurve, StepFunction

# Below this value of beta*(b-a) the exponential difference switches to a
# 4-term Taylor series; the closed form divides by beta and cancels
# catastrophically near zero.
SERIES_SWITCH = 1e-8

# Correlation matrices failing Cholesky by less than this eigenvalue
# tolerance are repaired by clipping; larger violations are hard errors.
PSD_REPAIR_TOL = 1e-10


def repair_correlation(rho: np.ndarray, tol: float = PSD_REPAIR_TOL) -> np.ndarray:
    """Validate a correlation matrix, repairing tiny PSD violations.

    Negative eigenvalues above ``-tol`` are clipped to zero and the
    diagonal renormalized back to one; anything worse raises.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"correlation matrix must be square, got {rho.shape}")
    if not np.allclose(rho, rho.T, atol=1e-12, rtol=0.0):
        raise DomainError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(rho), 1.0, atol=1e-12, rtol=0.0):
        raise DomainError("correlation matrix must have unit diagonal")
    if np.any(np.abs(rho) > 1.0 + 1e-12):
        raise DomainError("correlation entries must lie in [-1, 1]")
    rho = 0.5 * (rho + rho.T)
    try:
        np.linalg.cholesky(rho)
        return rho
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(rho)
    if w.min() < -tol:
        raise NotPositiveSemiDefiniteError(
            f"correlation matrix has eigenvalue {w.min():.3e} below -{tol:.0e}",
            pivot=float(w.min()),
        )
    repaired = (v * np.clip(w, 0.0, None)) @ v.T
    d = np.sqrt(np.diag(repaired))
    if np.any(d <= 0.0):
        raise NotPositiveSemiDefiniteError(
            "correlation matrix collapsed to zero variance under repair"
        )
    repaired = repaired / np.outer(d, d)
    np.fill_diagonal(repaired, 1.0)
    return 0.5 * (repaired + repaired.T)


def segment_integral(beta_sum: float, a: float, b: float) -> float:
    """Closed form of the exponential integral (e^(beta*b) - e^(beta*a)) / beta.

    Continuously extended to ``b - a`` when ``beta_sum * (b - a)`` falls
    below the series switch, via a 4-term Taylor expansion.
    """
    if b < a:
        raise OrderingError(f"b ({b}) before a ({a})")
    if beta_sum < 0.0:
        raise DomainError(f"beta_sum must be non-negative, got {beta_sum}")
    h = b - a
    x = beta_sum * h
    if abs(x) < SERIES_SWITCH:
        core = h * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0)
    else:
        core = np.expm1(x) / beta_sum
    return float(np.exp(beta_sum * a) * core)


def _phi(beta_sum: np.ndarray, h: float) -> np.ndarray:
    """Vectorized integral of e^(-beta*u) over [0, h].

    Equals exp(-beta*b) * segment_integral(beta, a, b) with h = b - a; the
    shifted form keeps every exponent non-positive so large expiries
    cannot overflow.
    """
    x = beta_sum * h
    small = x < SERIES_SWITCH
    safe = np.where(small, 1.0, beta_sum)
    exact = -np.expm1(-x) / safe
    series = h * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0)
    return np.where(small, series, exact)


@dataclass(frozen=True)
class FactorSpec:
    """Static model parameters: mean reversions, constant vols, correlation.

    ``epsilon`` is the non-fungibility blend in [0, 1]; 0 is the pure
    time-scaled model, 1 the pure expiry-scaled one.
    """

    beta: np.ndarray
    p_const: np.ndarray
    q_const: np.ndarray
    rho: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        p = np.atleast_1d(np.asarray(self.p_const, dtype=float))
        q = np.atleast_1d(np.asarray(self.q_const, dtype=float))
        n = beta.size
        if n < 1:
            raise DomainError("at least one factor required")
        if p.shape != (n,) or q.shape != (n,):
            raise ShapeError("beta, p_const and q_const must share length")
        if np.any(~np.isfinite(beta)) or np.any(beta < 0.0):
            raise DomainError("mean reversion rates must be finite and >= 0")
        if np.any(p <= 0.0) or np.any(q <= 0.0):
            raise DomainError("constant volatilities must be positive")
        eps = float(self.epsilon)
        if not 0.0 <= eps <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {eps}")
        rho = repair_correlation(self.rho)
        if rho.shape != (n, n):
            raise ShapeError(
                f"correlation matrix shape {rho.shape} does not match {n} factors"
            )
        for arr in (beta, p, q, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "p_const", p)
        object.__setattr__(self, "q_const", q)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "epsilon", eps)

    @property
    def n_factors(self) -> int:
        return self.beta.size

    def with_updates(self, **changes) -> "FactorSpec":
        current = dict(
            beta=self.beta,
            p_const=self.p_const,
            q_const=self.q_const,
            rho=self.rho,
            epsilon=self.epsilon,
        )
        current.update(changes)
        return FactorSpec(**current)


@dataclass(frozen=True)
class FactorState:
    """Mean-reverting factor values Y_i at a single time."""

    t: float
    y: np.ndarray

    def __post_init__(self):
        t = float(self.t)
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if not np.isfinite(t) or t < 0.0:
            raise DomainError(f"state time must be finite and >= 0, got {t}")
        if np.any(~np.isfinite(y)):
            raise DomainError("factor values must be finite")
        if t == 0.0 and np.any(y != 0.0):
            raise DomainError("factors must start from zero at t = 0")
        y.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class CrossCorrelation:
    """Correlations between factor i of one asset and factor j of another."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if np.any(~np.isfinite(m)) or np.any(np.abs(m) > 1.0):
            raise DomainError("cross correlations must be finite and in [-1, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape


def stacked_correlation(
    blocks: list[list[np.ndarray]], tol: float = PSD_REPAIR_TOL
) -> np.ndarray:
    """Assemble and validate the full correlation matrix across assets.

    ``blocks[a][b]`` is the (N_a x N_b) correlation block between the
    factors of assets a and b; diagonal blocks are the assets' own
    matrices.  Tiny PSD violations are repaired, larger ones raise.
    """
    stacked = np.block(blocks)
    return repair_correlation(stacked, tol=tol)


@dataclass(frozen=True)
class CalibratedModel:
    """A factor spec bound to a contract schedule with solved scalings.

    ``alpha_knots[k]`` applies on [t_{k-1}, t_k) between consecutive
    option expiries (t_0 = 0) and extends flat past the last knot;
    ``lambda_samples[k]`` is the expiry scaling at the k-th contract's
    futures expiry, extended flat between samples.
    """

    spec: FactorSpec
    schedule: ContractSchedule
    alpha_knots: np.ndarray
    lambda_samples: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha_knots, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lambda_samples, dtype=float))
        m = len(self.schedule)
        if alpha.shape != (m,) or lam.shape != (m,):
            raise ShapeError(
                f"alpha_knots and lambda_samples must have one value per "
                f"contract ({m}), got {alpha.shape} and {lam.shape}"
            )
        if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0.0):
            raise DomainError("alpha knots must be finite and positive")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0.0):
            raise DomainError("lambda samples must be finite and positive")
        if self.schedule.entries[0].option_expiry <= 0.0:
            raise DomainError("first option expiry must be positive")
        alpha.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "alpha_knots", alpha)
        object.__setattr__(self, "lambda_samples", lam)

    @cached_property
    def alpha(self) -> StepFunction:
        breaks = np.concatenate(([0.0], self.schedule.option_expiries[:-1]))
        return StepFunction(breaks, self.alpha_knots)

    @cached_property
    def _lambda_step(self) -> StepFunction:
        expiries = self.schedule.futures_expiries
        order = np.argsort(expiries, kind="stable")
        t_sorted = expiries[order]
        v_sorted = self.lambda_samples[order]
        keep_t, keep_v = [t_sorted[0]], [v_sorted[0]]
        for t, v in zip(t_sorted[1:], v_sorted[1:]):
            if t == keep_t[-1]:
                if abs(v - keep_v[-1]) > 1e-12 * max(abs(v), 1.0):
                    raise DomainError(
                        f"conflicting lambda samples at futures expiry {t}"
                    )
            else:
                keep_t.append(t)
                keep_v.append(v)
        return StepFunction(np.array(keep_t), np.array(keep_v))

    def lambda_at(self, T) -> np.ndarray | float:
        return self._lambda_step(T)

    @cached_property
    def p_eff(self) -> np.ndarray:
        """Constant part of the local time volatility, p_i^(1-eps)."""
        v = self.spec.p_const ** (1.0 - self.spec.epsilon)
        v.setflags(write=False)
        return v

    def q_eff(self, T: float) -> np.ndarray:
        """Expiry volatility vector q_i^eps * lambda(T)^eps."""
        eps = self.spec.epsilon
        return self.spec.q_const**eps * float(self._lambda_step(T)) ** eps


def _merged_segments(step1: StepFunction, step2: StepFunction, t1, t2):
    """Pieces of [t1, t2] on which both step functions are constant."""
    if t2 < t1:
        raise OrderingError(f"t2 ({t2}) before t1 ({t1})")
    if t1 == t2:
        return
    cuts = np.union1d(step1.breaks, step2.breaks)
    cuts = cuts[(cuts > t1) & (cuts < t2)]
    bounds = np.concatenate(([t1], cuts, [t2]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield float(a), float(b), float(step1(a)), float(step2(a))


def _cov_core(m1: CalibratedModel, m2: CalibratedModel, corr, T1, T2, t1, t2):
    beta1 = m1.spec.beta[:, None]
    beta2 = m2.spec.beta[None, :]
    bsum = beta1 + beta2
    acc = np.zeros((m1.spec.n_factors, m2.spec.n_factors))
    for a, b, a1, a2 in _merged_segments(m1.alpha, m2.alpha, t1, t2):
        decay = np.exp(-beta1 * (T1 - b) - beta2 * (T2 - b))
        acc += (a1 * a2) * decay * _phi(bsum, b - a)
    w1 = m1.q_eff(T1) * m1.p_eff
    w2 = m2.q_eff(T2) * m2.p_eff
    return float(np.sum(np.outer(w1, w2) * corr * acc))


def _check_window(T1, T2, t1, t2):
    if t1 < 0.0:
        raise DomainError(f"t1 must be >= 0, got {t1}")
    if t2 < t1:
        raise OrderingError(f"t2 ({t2}) before t1 ({t1})")
    if t2 > min(T1, T2):
        raise DomainError(
            f"integration end {t2} exceeds earliest expiry {min(T1, T2)}; "
            "log covariance past expiry is undefined"
        )


def log_covariance(
    m: CalibratedModel, T1: float, T2: float, t1: float, t2: float
) -> float:
    """Integrated log covariance of contracts T1 and T2 over [t1, t2].

    sum_ij q_i(T1) q_j(T2) rho_ij * integral of
    p_i(s) p_j(s) exp(-beta_i (T1 - s) - beta_j (T2 - s)) ds,
    evaluated in closed form on each alpha-knot segment.
    """
    _check_window(T1, T2, t1, t2)
    if t1 == t2:
        return 0.0
    return _cov_core(m, m, m.spec.rho, T1, T2, t1, t2)


def quadratic_variation(m: CalibratedModel, T: float, t: float) -> float:
    """Black variance of contract T accumulated from time 0 to t."""
    if t > T:
        raise DomainError(f"t ({t}) past contract expiry ({T})")
    return log_covariance(m, T, T, 0.0, t)


def cross_asset_log_covariance(
    m1: CalibratedModel,
    m2: CalibratedModel,
    xc: CrossCorrelation,
    T1: float,
    T2: float,
    t1: float,
    t2: float,
) -> float:
    """Integrated log covariance between contracts of two distinct assets."""
    if xc.shape != (m1.spec.n_factors, m2.spec.n_factors):
        raise ShapeError(
            f"cross correlation shape {xc.shape} does not match factor "
            f"counts ({m1.spec.n_factors}, {m2.spec.n_factors})"
        )
    _check_window(T1, T2, t1, t2)
    if t1 == t2:
        return 0.0
    return _cov_core(m1, m2, xc.matrix, T1, T2, t1, t2)


def reconstruct_futures(
    m: CalibratedModel, curve: ForwardCurve, state: FactorState, T: float
) -> float:
    """Futures price implied by the factor state.

    F(t,T) = F(0,T) * exp(sum_i q_i(T) e^(-beta_i (T-t)) Y_i(t)
                          - 0.5 * QV(T, t)).
    At t = 0 with zero factors this returns today's curve price.
    """
    if state.y.size != m.spec.n_factors:
        raise ShapeError(
            f"state has {state.y.size} factors, model has {m.spec.n_factors}"
        )
    if state.t > T:
        raise DomainError(f"state time {state.t} past contract expiry {T}")
    f0 = curve.price(T)
    coeff = m.q_eff(T) * np.exp(-m.spec.beta * (T - state.t))
    exponent = float(coeff @ state.y) - 0.5 * quadratic_variation(m, T, state.t)
    return f0 * float(np.exp(exponent))


def flat_model(
    spec: FactorSpec,
    schedule: ContractSchedule,
    alpha: float = 1.0,
    lam: float = 1.0,
) -> CalibratedModel:
    """Model with constant scalings; handy for tests and uncalibrated use."""
    m = len(schedule)
    return CalibratedModel(
        spec=spec,
        schedule=schedule,
        alpha_knots=np.full(m, float(alpha)),
        lambda_samples=np.full(m, float(lam)),
    )
