"""Online calibration: solve alpha(t) and lambda(T) to reprice the vanilla strip.

Three modes share one bootstrapping engine:

* non-seasonal (eps = 0): piecewise-constant alpha solved contract by
  contract, nearest expiry first; lambda is identically one.
* seasonal (eps = 1): lambda solved in closed form per contract expiry;
  alpha is identically one.
* hybrid: a full seasonal solve assigns lambda, the residual implied
  volatilities sigma_M / lambda(T_M)^eps are bootstrapped into alpha.

All three reproduce every input implied vol exactly (to rounding).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    DegenerateExpiryError,
    DegenerateSpecError,
    DomainError,
    InfeasibleCalibrationError,
    OrderingError,
    UnsupportedSpecError,
)
from .factor_model import CalibratedModel, FactorSpec, _phi, quadratic_variation
from .termstructure import ContractEntry, ContractSchedule


@dataclass(frozen=True)
class VolQuote:
    """Implied vol mark for one vanilla option on one futures contract."""

    label: str
    option_expiry: float
    futures_expiry: float
    vol: float

    def __post_init__(self):
        if self.vol <= 0.0 or not np.isfinite(self.vol):
            raise DomainError(f"vol for {self.label!r} must be positive")
        if self.option_expiry > self.futures_expiry:
            raise OrderingError(
                f"{self.label!r}: option expiry after futures expiry"
            )


@dataclass(frozen=True)
class VanillaVolStrip:
    quotes: tuple[VolQuote, ...]

    def __post_init__(self):
        quotes = tuple(self.quotes)
        object.__setattr__(self, "quotes", quotes)
        if not quotes:
            raise DomainError("vol strip must not be empty")
        for prev, cur in zip(quotes, quotes[1:]):
            if cur.option_expiry <= prev.option_expiry:
                raise OrderingError(
                    f"strip option expiries not strictly increasing at "
                    f"{cur.label!r}"
                )

    def __len__(self):
        return len(self.quotes)

    def __iter__(self):
        return iter(self.quotes)

    def to_schedule(self) -> ContractSchedule:
        return ContractSchedule(
            tuple(
                ContractEntry(q.label, q.option_expiry, q.futures_expiry)
                for q in self.quotes
            )
        )

    @cached_property
    def vols(self) -> np.ndarray:
        return np.array([q.vol for q in self.quotes])


@dataclass(frozen=True)
class SmileQuote:
    """ATM vol plus a quick-delta smile for one contract.

    ``pillars`` maps quick-delta levels in (0, 1) to vols; the 0.50
    pillar must equal the ATM vol.
    """

    label: str
    option_expiry: float
    futures_expiry: float
    atm_vol: float
    pillars: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pillars = tuple(sorted((float(q), float(v)) for q, v in self.pillars))
        object.__setattr__(self, "pillars", pillars)
        if self.atm_vol <= 0.0:
            raise DomainError(f"ATM vol for {self.label!r} must be positive")
        for qd, vol in pillars:
            if not 0.0 < qd < 1.0:
                raise DomainError(f"{self.label!r}: QD pillar {qd} outside (0, 1)")
            if vol <= 0.0:
                raise DomainError(f"{self.label!r}: pillar vol must be positive")
        atm_pillars = [v for qd, v in pillars if qd == 0.5]
        if atm_pillars and abs(atm_pillars[0] - self.atm_vol) > 1e-12:
            raise DomainError(
                f"{self.label!r}: 50-QD pillar {atm_pillars[0]} does not "
                f"equal ATM vol {self.atm_vol}"
            )

    def vol_at_qd(self, qd: float) -> tuple[float, bool]:
        """Smile vol at a quick delta; flags when flat extrapolation kicked in.

        Monotone piecewise-cubic across pillars, flat beyond the extremes.
        """
        if not self.pillars:
            return self.atm_vol, False
        qds = np.array([p[0] for p in self.pillars])
        vols = np.array([p[1] for p in self.pillars])
        clipped = bool(qd < qds[0] or qd > qds[-1])
        if len(self.pillars) == 1:
            return float(vols[0]), clipped
        x = min(max(qd, qds[0]), qds[-1])
        return float(PchipInterpolator(qds, vols)(x)), clipped


@dataclass(frozen=True)
class VolSurface:
    quotes: tuple[SmileQuote, ...]

    def __post_init__(self):
        quotes = tuple(self.quotes)
        object.__setattr__(self, "quotes", quotes)
        if not quotes:
            raise DomainError("vol surface must not be empty")
        for prev, cur in zip(quotes, quotes[1:]):
            if cur.option_expiry <= prev.option_expiry:
                raise OrderingError(
                    f"surface option expiries not strictly increasing at "
                    f"{cur.label!r}"
                )

    def __iter__(self):
        return iter(self.quotes)

    def atm_strip(self) -> VanillaVolStrip:
        return VanillaVolStrip(
            tuple(
                VolQuote(q.label, q.option_expiry, q.futures_expiry, q.atm_vol)
                for q in self.quotes
            )
        )

    def strip_at_qd(self, qd: float) -> tuple[VanillaVolStrip, bool]:
        quotes = []
        any_clipped = False
        for q in self.quotes:
            vol, clipped = q.vol_at_qd(qd)
            any_clipped |= clipped
            quotes.append(
                VolQuote(q.label, q.option_expiry, q.futures_expiry, vol)
            )
        return VanillaVolStrip(tuple(quotes)), any_clipped


def _knot_times(strip: VanillaVolStrip) -> np.ndarray:
    t = np.array([q.option_expiry for q in strip.quotes])
    if t[0] <= 0.0:
        raise DegenerateExpiryError(
            f"first option expiry must be positive, got {t[0]}"
        )
    return t


def _bootstrap_alpha(
    spec: FactorSpec, const_vols: np.ndarray, strip: VanillaVolStrip,
    target_variances: np.ndarray,
) -> np.ndarray:
    """Sequentially solve alpha_k so each contract's total variance matches.

    The first contract's variance depends only on alpha_1, the second on
    alpha_1 and alpha_2, and so on; each step is a scalar square root.
    """
    t = _knot_times(strip)
    expiries = np.array([q.futures_expiry for q in strip.quotes])
    knots = np.concatenate(([0.0], t))
    bsum = spec.beta[:, None] + spec.beta[None, :]
    weights = np.outer(const_vols, const_vols) * spec.rho

    n = len(strip)
    alphas = np.empty(n)
    for m_idx in range(n):
        t_m, big_t = t[m_idx], expiries[m_idx]
        coeffs = np.empty(m_idx + 1)
        for k in range(m_idx + 1):
            decay = np.exp(-bsum * (big_t - knots[k + 1]))
            coeffs[k] = np.sum(
                weights * decay * _phi(bsum, knots[k + 1] - knots[k])
            )
        prior = float(coeffs[:m_idx] @ (alphas[:m_idx] ** 2))
        residual = target_variances[m_idx] - prior
        if residual <= 0.0:
            raise InfeasibleCalibrationError(
                strip.quotes[m_idx].label, np.sqrt(max(prior, 0.0) / t_m)
            )
        if coeffs[m_idx] <= 0.0:
            raise DegenerateSpecError(
                f"zero marginal variance for knot of {strip.quotes[m_idx].label!r}"
            )
        alphas[m_idx] = np.sqrt(residual / coeffs[m_idx])
    return alphas


def _seasonal_denominators(
    spec: FactorSpec, strip: VanillaVolStrip
) -> np.ndarray:
    """Per-contract variance per unit lambda^2, using the constant q vector."""
    expiries = [q.futures_expiry for q in strip.quotes]
    if len(set(expiries)) != len(expiries):
        dup = next(x for i, x in enumerate(expiries) if x in expiries[:i])
        raise DegenerateSpecError(
            f"duplicate futures expiry {dup} in strip: lambda(T) would be "
            "multiply defined"
        )
    t = _knot_times(strip)
    bsum = spec.beta[:, None] + spec.beta[None, :]
    weights = np.outer(spec.q_const, spec.q_const) * spec.rho
    denoms = np.empty(len(strip))
    for i, (t_m, big_t) in enumerate(zip(t, expiries)):
        decay = np.exp(-bsum * (big_t - t_m))
        denoms[i] = np.sum(weights * decay * _phi(bsum, t_m))
        if denoms[i] <= 0.0:
            raise DegenerateSpecError(
                f"non-positive variance denominator for "
                f"{strip.quotes[i].label!r}"
            )
    return denoms


def calibrate_nonseasonal(
    spec: FactorSpec, strip: VanillaVolStrip
) -> CalibratedModel:
    """Bootstrap the time scaling alpha against the strip; lambda stays one."""
    if spec.epsilon != 0.0:
        raise UnsupportedSpecError(
            f"non-seasonal calibration requires epsilon = 0, got {spec.epsilon}"
        )
    t = _knot_times(strip)
    targets = strip.vols**2 * t
    alphas = _bootstrap_alpha(spec, spec.p_const, strip, targets)
    return CalibratedModel(
        spec, strip.to_schedule(), alphas, np.ones(len(strip))
    )


def calibrate_seasonal(
    spec: FactorSpec, strip: VanillaVolStrip
) -> CalibratedModel:
    """Solve lambda(T_M) in closed form per contract; alpha stays one."""
    if spec.epsilon != 1.0:
        raise UnsupportedSpecError(
            f"seasonal calibration requires epsilon = 1, got {spec.epsilon}"
        )
    t = _knot_times(strip)
    denoms = _seasonal_denominators(spec, strip)
    lam = strip.vols * np.sqrt(t / denoms)
    return CalibratedModel(spec, strip.to_schedule(), np.ones(len(strip)), lam)


def calibrate_hybrid(spec: FactorSpec, strip: VanillaVolStrip) -> CalibratedModel:
    """Blend seasonal and non-seasonal calibration via the spec's epsilon.

    First a full seasonal solve assigns lambda, then the residual vols
    sigma_M / lambda(T_M)^eps are bootstrapped into alpha.  Requires the
    constant vol vectors p and q to coincide; at eps = 0 or 1 the result
    reprices identically to the corresponding pure mode.
    """
    if not np.array_equal(spec.p_const, spec.q_const):
        raise UnsupportedSpecError(
            "hybrid calibration assumes p_const == q_const"
        )
    eps = spec.epsilon
    t = _knot_times(strip)
    if eps == 0.0:
        lam = np.ones(len(strip))
        targets = strip.vols**2 * t
    else:
        denoms = _seasonal_denominators(spec, strip)
        lam = strip.vols * np.sqrt(t / denoms)
        targets = strip.vols**2 * t / lam ** (2.0 * eps)
    alphas = _bootstrap_alpha(spec, spec.p_const, strip, targets)
    return CalibratedModel(spec, strip.to_schedule(), alphas, lam)


def calibrate(spec: FactorSpec, strip: VanillaVolStrip) -> CalibratedModel:
    """Dispatch on epsilon: 0 non-seasonal, 1 seasonal, otherwise hybrid."""
    if spec.epsilon == 0.0:
        return calibrate_nonseasonal(spec, strip)
    if spec.epsilon == 1.0:
        return calibrate_seasonal(spec, strip)
    return calibrate_hybrid(spec, strip)


def implied_vanilla_vol(m: CalibratedModel, contract: ContractEntry) -> float:
    """Black vol the model assigns to a vanilla option on ``contract``."""
    if contract.option_expiry <= 0.0:
        raise DegenerateExpiryError(
            f"contract {contract.label!r} has non-positive option expiry"
        )
    qv = quadratic_variation(m, contract.futures_expiry, contract.option_expiry)
    return float(np.sqrt(qv / contract.option_expiry))


def strip_roundtrip_errors(m: CalibratedModel, strip: VanillaVolStrip):
    """Per-contract |model vol - market vol|; the calibration report."""
    rows = []
    for q in strip.quotes:
        entry = ContractEntry(q.label, q.option_expiry, q.futures_expiry)
        model_vol = implied_vanilla_vol(m, entry)
        rows.append((q.label, q.vol, model_vol, abs(model_vol - q.vol)))
    return rows
