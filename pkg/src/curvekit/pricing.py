"""Semi-analytic pricers for vanilla, Asian, swaption and quanto options.

Asian options and swaptions are priced by matching the first two moments
of the weighted futures average to a lognormal; the resulting log
variance feeds the Black formula.  The quick-delta smile adjustment
recalibrates the whole model at the instrument's moneyness and reprices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr, ndtri

from .calibration_online import (
    VolSurface,
    calibrate,
    implied_vanilla_vol,
)
from .errors import (
    DegenerateDataError,
    DegenerateExpiryError,
    DomainError,
    OrderingError,
    ShapeError,
)
from .factor_model import (
    CalibratedModel,
    FactorSpec,
    _phi,
    log_covariance,
    quadratic_variation,
    repair_correlation,
)
from .termstructure import ContractEntry, ForwardCurve, StepFunction

VANILLA = "vanilla"
ASIAN = "asian"
SWAPTION = "swaption"
_KINDS = (VANILLA, ASIAN, SWAPTION)


@dataclass(frozen=True)
class SamplePoint:
    """One sampling observation: contract T_k sampled at date t_k.

    ``undiscounted_weight`` is u_k and ``discount_factor`` d_k; the
    effective weight is their product.
    """

    sample_date: float
    contract_expiry: float
    undiscounted_weight: float = 1.0
    discount_factor: float = 1.0

    def __post_init__(self):
        if self.sample_date < 0.0:
            raise DomainError("sample date must be non-negative")
        if self.sample_date > self.contract_expiry:
            raise OrderingError(
                f"sample date {self.sample_date} past contract expiry "
                f"{self.contract_expiry}"
            )
        if self.undiscounted_weight < 0.0:
            raise DomainError("weights must be non-negative")
        if not 0.0 < self.discount_factor <= 1.0:
            raise DomainError("discount factors must lie in (0, 1]")

    @property
    def weight(self) -> float:
        return self.undiscounted_weight * self.discount_factor


@dataclass(frozen=True)
class SamplingSchedule:
    points: tuple[SamplePoint, ...]

    def __post_init__(self):
        points = tuple(self.points)
        object.__setattr__(self, "points", points)
        if not points:
            raise DomainError("sampling schedule must not be empty")
        if all(p.undiscounted_weight == 0.0 for p in points):
            raise DegenerateDataError("all sampling weights are zero")

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.points])

    @cached_property
    def sample_dates(self) -> np.ndarray:
        return np.array([p.sample_date for p in self.points])

    @cached_property
    def contract_expiries(self) -> np.ndarray:
        return np.array([p.contract_expiry for p in self.points])

    @classmethod
    def single(cls, sample_date: float, contract_expiry: float) -> "SamplingSchedule":
        return cls((SamplePoint(sample_date, contract_expiry),))

    @classmethod
    def swaption_strip(
        cls, expiry: float, contract_expiries, weights=None, discounts=None
    ) -> "SamplingSchedule":
        """All sample dates collapsed to the swaption expiry."""
        contract_expiries = list(contract_expiries)
        m = len(contract_expiries)
        weights = [1.0 / m] * m if weights is None else list(weights)
        discounts = [1.0] * m if discounts is None else list(discounts)
        return cls(
            tuple(
                SamplePoint(expiry, big_t, u, d)
                for big_t, u, d in zip(contract_expiries, weights, discounts)
            )
        )


@dataclass(frozen=True)
class OptionSpec:
    kind: str
    strike: float
    call_put: str
    expiry: float
    schedule: SamplingSchedule
    settlement_discount: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown option kind {self.kind!r}")
        if self.strike <= 0.0:
            raise DomainError("strike must be positive")
        if self.call_put not in ("call", "put"):
            raise DomainError(f"call_put must be 'call' or 'put', got {self.call_put!r}")
        if self.expiry < 0.0:
            raise DomainError("expiry must be non-negative")
        if not 0.0 < self.settlement_discount <= 1.0:
            raise DomainError("settlement discount must lie in (0, 1]")
        if self.kind == VANILLA and len(self.schedule) != 1:
            raise ShapeError("vanilla options take a single-entry schedule")
        if self.kind == SWAPTION:
            if any(p.sample_date != self.expiry for p in self.schedule):
                raise DomainError(
                    "swaption sample dates must all equal the expiry"
                )
        if self.kind == ASIAN:
            if self.expiry < max(p.sample_date for p in self.schedule):
                raise OrderingError("asian expiry before last sample date")

    @property
    def is_call(self) -> bool:
        return self.call_put == "call"


def black_price(
    forward: float,
    strike: float,
    vol: float,
    expiry: float,
    discount: float = 1.0,
    call: bool = True,
) -> float:
    """Black-76 price of a European option on a forward.

    Zero vol or zero expiry collapse to discounted intrinsic value.
    """
    if forward <= 0.0 or strike <= 0.0:
        raise DomainError("forward and strike must be positive")
    if vol < 0.0 or expiry < 0.0:
        raise DomainError("vol and expiry must be non-negative")
    stdev = vol * np.sqrt(expiry)
    if stdev == 0.0:
        intrinsic = forward - strike if call else strike - forward
        return discount * max(intrinsic, 0.0)
    d1 = (np.log(forward / strike) + 0.5 * stdev * stdev) / stdev
    d2 = d1 - stdev
    if call:
        return discount * (forward * ndtr(d1) - strike * ndtr(d2))
    return discount * (strike * ndtr(-d2) - forward * ndtr(-d1))


def quick_delta(strike: float, forward: float, sigma_atm: float, expiry: float) -> float:
    """Moneyness as N(log(K/F) / (sigma sqrt(T))); exactly 0.5 at the money."""
    if strike <= 0.0 or forward <= 0.0:
        raise DomainError("strike and forward must be positive")
    if sigma_atm <= 0.0 or expiry <= 0.0:
        raise DomainError(
            "degenerate moneyness: sigma and expiry must be positive"
        )
    return float(ndtr(np.log(strike / forward) / (sigma_atm * np.sqrt(expiry))))


def strike_from_quick_delta(
    qd: float, forward: float, sigma_atm: float, expiry: float
) -> float:
    """Dollar strike at a given quick delta; exact inverse of quick_delta."""
    if not 0.0 < qd < 1.0:
        raise DomainError(f"quick delta must lie in (0, 1), got {qd}")
    if forward <= 0.0:
        raise DomainError("forward must be positive")
    if sigma_atm <= 0.0 or expiry <= 0.0:
        raise DomainError(
            "degenerate moneyness: sigma and expiry must be positive"
        )
    return forward * float(np.exp(sigma_atm * np.sqrt(expiry) * ndtri(qd)))


def _contract_of(opt: OptionSpec) -> ContractEntry:
    point = opt.schedule.points[0]
    return ContractEntry("_vanilla", opt.expiry, point.contract_expiry)


def vanilla_price(m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec) -> float:
    """Black price at the model's implied vol for the referenced contract."""
    if opt.kind != VANILLA:
        raise DomainError(f"vanilla_price got kind {opt.kind!r}")
    forward = curve.price(opt.schedule.points[0].contract_expiry)
    if opt.expiry == 0.0:
        return black_price(
            forward, opt.strike, 0.0, 0.0, opt.settlement_discount, opt.is_call
        )
    vol = implied_vanilla_vol(m, _contract_of(opt))
    return black_price(
        forward, opt.strike, vol, opt.expiry, opt.settlement_discount, opt.is_call
    )


def average_log_variance(
    m: CalibratedModel, curve: ForwardCurve, sched: SamplingSchedule
) -> float:
    """Moment-matched log variance of the weighted futures average.

    V[log F] = log E[F^2] - 2 log E[F] with
    E[F^2] = sum_jk w_j w_k F_j(0) F_k(0) exp(<log F_j, log F_k>) over
    the common window [0, min(t_j, t_k)].  A single sample reduces
    exactly to that contract's quadratic variation.
    """
    w = sched.weights
    if np.all(w == 0.0):
        raise DegenerateDataError("all effective sampling weights are zero")
    if len(sched) == 1:
        p = sched.points[0]
        return quadratic_variation(m, p.contract_expiry, p.sample_date)
    f0 = np.array([curve.price(p.contract_expiry) for p in sched.points])
    y = w * f0
    y_hat = y / y.sum()
    t = sched.sample_dates
    big_t = sched.contract_expiries
    n = len(sched)
    cov = np.empty((n, n))
    for j in range(n):
        for k in range(j, n):
            c = log_covariance(m, big_t[j], big_t[k], 0.0, min(t[j], t[k]))
            cov[j, k] = cov[k, j] = c
    second_moment = float(y_hat @ np.exp(cov) @ y_hat)
    return float(np.log(second_moment))


def _moment_matched_price(
    m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec
) -> tuple[float, float, float]:
    """Shared Asian/swaption machinery: (price, composite vol, mean forward)."""
    w = opt.schedule.weights
    f0 = np.array([curve.price(p.contract_expiry) for p in opt.schedule.points])
    mean_forward = float(w @ f0)
    variance = average_log_variance(m, curve, opt.schedule)
    if opt.expiry == 0.0:
        vol = 0.0
    else:
        vol = float(np.sqrt(variance / opt.expiry))
    price = black_price(
        mean_forward, opt.strike, vol, opt.expiry,
        opt.settlement_discount, opt.is_call,
    )
    return price, vol, mean_forward


def asian_price(m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec) -> float:
    if opt.kind != ASIAN:
        raise DomainError(f"asian_price got kind {opt.kind!r}")
    return _moment_matched_price(m, curve, opt)[0]


def swaption_price(m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec) -> float:
    """Asian machinery with every sample date collapsed to the expiry.

    Discount factors from swap settlement to expiry are expected to be
    baked into the sampling weights (u_k * d_k).
    """
    if opt.kind != SWAPTION:
        raise DomainError(f"swaption_price got kind {opt.kind!r}")
    return _moment_matched_price(m, curve, opt)[0]


def price_option(m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec) -> float:
    if opt.kind == VANILLA:
        return vanilla_price(m, curve, opt)
    if opt.kind == ASIAN:
        return asian_price(m, curve, opt)
    return swaption_price(m, curve, opt)


def _composite_vol_and_forward(
    m: CalibratedModel, curve: ForwardCurve, opt: OptionSpec
) -> tuple[float, float, float]:
    if opt.kind == VANILLA:
        forward = curve.price(opt.schedule.points[0].contract_expiry)
        vol = implied_vanilla_vol(m, _contract_of(opt))
        price = black_price(
            forward, opt.strike, vol, opt.expiry,
            opt.settlement_discount, opt.is_call,
        )
        return price, vol, forward
    return _moment_matched_price(m, curve, opt)


@dataclass(frozen=True)
class SmileAdjustedResult:
    price: float
    atm_price: float
    composite_vol: float
    quick_delta: float
    clipped: bool


def smile_adjusted_price(
    spec: FactorSpec,
    surface: VolSurface,
    curve: ForwardCurve,
    opt: OptionSpec,
) -> SmileAdjustedResult:
    """Four-step quick-delta smile adjustment.

    (i) price off the ATM-calibrated model and record the composite vol;
    (ii) convert the strike to a quick delta at that vol; (iii) rebuild
    the strip from each contract's smile at that quick delta and
    recalibrate; (iv) reprice.  Quick deltas beyond the quoted pillars
    use the flat extrapolation of the smile and set ``clipped``.
    """
    model_atm = calibrate(spec, surface.atm_strip())
    atm_price, comp_vol, mean_forward = _composite_vol_and_forward(
        model_atm, curve, opt
    )
    qd = quick_delta(opt.strike, mean_forward, comp_vol, opt.expiry)
    strip_qd, clipped = surface.strip_at_qd(qd)
    model_qd = calibrate(spec, strip_qd)
    price, _, _ = _composite_vol_and_forward(model_qd, curve, opt)
    return SmileAdjustedResult(price, atm_price, comp_vol, qd, clipped)


@dataclass(frozen=True)
class FxSpec:
    """FX leg for quanto pricing: X is domestic per foreign, Y = 1/X.

    Rates are deterministic piecewise-constant short rates; ``rho_x``
    correlates the X-driving Brownian with each commodity factor and is
    negated internally when applied to Y.  The (N+1) correlation matrix
    augmented with ``factor_rho`` must be positive semi-definite.
    """

    spot_fx: float
    sigma_x: StepFunction
    r_d: StepFunction
    r_f: StepFunction
    rho_x: np.ndarray
    factor_rho: np.ndarray

    def __post_init__(self):
        if self.spot_fx <= 0.0:
            raise DomainError("spot FX must be positive")
        sigma_x = _as_step(self.sigma_x)
        r_d = _as_step(self.r_d)
        r_f = _as_step(self.r_f)
        if np.any(sigma_x.values < 0.0):
            raise DomainError("FX volatility must be non-negative")
        rho_x = np.atleast_1d(np.asarray(self.rho_x, dtype=float))
        if np.any(np.abs(rho_x) > 1.0):
            raise DomainError("FX-factor correlations must lie in [-1, 1]")
        factor_rho = np.asarray(self.factor_rho, dtype=float)
        if factor_rho.shape != (rho_x.size, rho_x.size):
            raise ShapeError(
                "factor correlation must be square and match rho_x length"
            )
        augmented = np.block(
            [[factor_rho, rho_x[:, None]], [rho_x[None, :], np.ones((1, 1))]]
        )
        repair_correlation(augmented)
        rho_x.setflags(write=False)
        object.__setattr__(self, "sigma_x", sigma_x)
        object.__setattr__(self, "r_d", r_d)
        object.__setattr__(self, "r_f", r_f)
        object.__setattr__(self, "rho_x", rho_x)
        object.__setattr__(self, "factor_rho", factor_rho)

    def forward_y(self, t: float) -> float:
        """Forward foreign-per-domestic FX rate for delivery at t."""
        rate_gap = self.r_f.integral(0.0, t) - self.r_d.integral(0.0, t)
        return (1.0 / self.spot_fx) * float(np.exp(rate_gap))

    def foreign_discount(self, t: float) -> float:
        return float(np.exp(-self.r_f.integral(0.0, t)))

    def domestic_discount(self, t: float) -> float:
        return float(np.exp(-self.r_d.integral(0.0, t)))


def _as_step(obj) -> StepFunction:
    if isinstance(obj, StepFunction):
        return obj
    return StepFunction.constant(float(obj))


def _fx_variance(fx: FxSpec, tau: float) -> float:
    """<log Y>_0^tau = integral of sigma_X^2."""
    return sum(v * v * (b - a) for a, b, v in fx.sigma_x.segments(0.0, tau))


def _fx_commodity_covariance(
    m: CalibratedModel, fx: FxSpec, big_t: float, tau: float
) -> float:
    """<log F^T, log X>_0^tau; the Y covariance is its negation.

    Single-factor cross-asset integral with the FX leg's beta = 0 and
    local vol sigma_X(s).
    """
    total = 0.0
    beta = m.spec.beta
    w = m.q_eff(big_t) * m.p_eff * fx.rho_x
    cuts = np.union1d(m.alpha.breaks, fx.sigma_x.breaks)
    cuts = cuts[(cuts > 0.0) & (cuts < tau)]
    bounds = np.concatenate(([0.0], cuts, [tau]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        alpha = float(m.alpha(a))
        sig = float(fx.sigma_x(a))
        if alpha == 0.0 or sig == 0.0:
            continue
        decay = np.exp(-beta * (big_t - b))
        total += alpha * sig * float(np.sum(w * decay * _phi(beta, b - a)))
    return total


def quanto_average_log_variance(
    m: CalibratedModel, fx: FxSpec, curve: ForwardCurve, sched: SamplingSchedule
) -> float:
    """Moment-matched log variance of the foreign-currency futures average.

    The log covariance of G = F * Y decomposes into the four terms
    <F,F> + <F,Y> + <Y,F> + <Y,Y>; the FX process acts as one extra
    factor and cov(log F, log Y) = -cov(log F, log X).
    """
    w = sched.weights
    f0 = np.array([curve.price(p.contract_expiry) for p in sched.points])
    fwd_y = np.array([fx.forward_y(p.sample_date) for p in sched.points])
    y = w * f0 * fwd_y
    if np.all(y == 0.0):
        raise DegenerateDataError("all effective sampling weights are zero")
    y_hat = y / y.sum()
    t = sched.sample_dates
    big_t = sched.contract_expiries
    n = len(sched)
    cov = np.empty((n, n))
    for j in range(n):
        for k in range(j, n):
            tau = min(t[j], t[k])
            c = log_covariance(m, big_t[j], big_t[k], 0.0, tau)
            c -= _fx_commodity_covariance(m, fx, big_t[j], tau)
            c -= _fx_commodity_covariance(m, fx, big_t[k], tau)
            c += _fx_variance(fx, tau)
            cov[j, k] = cov[k, j] = c
    second_moment = float(y_hat @ np.exp(cov) @ y_hat)
    return float(np.log(second_moment))


def quanto_price(
    m: CalibratedModel, fx: FxSpec, curve: ForwardCurve, opt: OptionSpec
) -> float:
    """Foreign-currency option on the futures average, in foreign units.

    Priced in the foreign measure; schedule discount factors and the
    settlement discount are foreign-curve quantities.  Strike and the
    resulting price are in foreign currency per unit.
    """
    w = opt.schedule.weights
    f0 = np.array([curve.price(p.contract_expiry) for p in opt.schedule.points])
    fwd_y = np.array([fx.forward_y(p.sample_date) for p in opt.schedule.points])
    mean_forward = float(w @ (f0 * fwd_y))
    variance = quanto_average_log_variance(m, fx, curve, opt.schedule)
    vol = 0.0 if opt.expiry == 0.0 else float(np.sqrt(variance / opt.expiry))
    return black_price(
        mean_forward, opt.strike, vol, opt.expiry,
        opt.settlement_discount, opt.is_call,
    )


@dataclass(frozen=True)
class Quote:
    """External quote: consensus and/or a broker bid-offer pair."""

    label: str
    quote_date: str = ""
    ref_swap: float | None = None
    bid: float | None = None
    offer: float | None = None
    consensus: float | None = None

    def __post_init__(self):
        if (
            self.bid is not None
            and self.offer is not None
            and self.bid > self.offer
        ):
            raise DomainError(f"{self.label!r}: bid above offer")


@dataclass(frozen=True)
class QuoteSet:
    quotes: tuple[Quote, ...]

    def __iter__(self):
        return iter(self.quotes)


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    model_price: float
    consensus: float | None
    diff_pct: float | None
    bid: float | None
    offer: float | None
    position: str
    flag: str


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    unmatched: tuple[str, ...]


def compare_quotes(model_prices, quotes: QuoteSet) -> ComparisonReport:
    """Model-vs-market check with the recalibration trigger.

    Flags RECALIBRATE when the model is more aggressive than both the
    consensus and the broker offer, or more conservative than both the
    consensus and the broker bid; otherwise OK.
    """
    prices = dict(model_prices)
    rows = []
    unmatched = []
    for q in quotes:
        if q.label not in prices:
            unmatched.append(q.label)
            continue
        model = float(prices.pop(q.label))
        diff_pct = None
        if q.consensus is not None and q.consensus != 0.0:
            diff_pct = 100.0 * (model - q.consensus) / q.consensus
        if q.bid is not None and model < q.bid:
            position = "below_bid"
        elif q.offer is not None and model > q.offer:
            position = "above_offer"
        elif q.bid is not None or q.offer is not None:
            position = "inside"
        else:
            position = "no_market"
        aggressive = (
            q.consensus is not None
            and q.offer is not None
            and model > q.consensus
            and model > q.offer
        )
        conservative = (
            q.consensus is not None
            and q.bid is not None
            and model < q.consensus
            and model < q.bid
        )
        flag = "RECALIBRATE" if aggressive or conservative else "OK"
        rows.append(
            ComparisonRow(
                q.label, model, q.consensus, diff_pct, q.bid, q.offer,
                position, flag,
            )
        )
    unmatched.extend(sorted(prices))
    return ComparisonReport(tuple(rows), tuple(unmatched))
