import math

import numpy as np
import pytest

from curvekit.calibration_online import (
    SmileQuote,
    VolQuote,
    VanillaVolStrip,
    VolSurface,
    calibrate_nonseasonal,
    implied_vanilla_vol,
)
from curvekit.errors import DomainError, OrderingError
from curvekit.factor_model import (
    CalibratedModel,
    CrossCorrelation,
    FactorSpec,
    cross_asset_log_covariance,
    flat_model,
    quadratic_variation,
)
from curvekit.pricing import (
    FxSpec,
    OptionSpec,
    Quote,
    QuoteSet,
    SamplePoint,
    SamplingSchedule,
    asian_price,
    average_log_variance,
    black_price,
    compare_quotes,
    quanto_average_log_variance,
    quanto_price,
    quick_delta,
    smile_adjusted_price,
    strike_from_quick_delta,
    swaption_price,
    vanilla_price,
)
from curvekit.simulation import SimGrid, curve_paths, simulate_factors
from curvekit.termstructure import (
    ContractEntry,
    ContractSchedule,
    ForwardCurve,
    StepFunction,
)


def oracle_black(forward, strike, vol, expiry, df=1.0, call=True):
    """Textbook Black-76 via the error function; independent of scipy."""
    def cdf(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    s = vol * math.sqrt(expiry)
    if s == 0.0:
        pay = forward - strike if call else strike - forward
        return df * max(pay, 0.0)
    d1 = (math.log(forward / strike) + 0.5 * s * s) / s
    d2 = d1 - s
    if call:
        return df * (forward * cdf(d1) - strike * cdf(d2))
    return df * (strike * cdf(-d2) - forward * cdf(-d1))


@pytest.fixture(scope="module")
def wti_model(wti_spec, monthly_strip):
    return calibrate_nonseasonal(wti_spec, monthly_strip)


@pytest.fixture(scope="module")
def curve():
    t = np.arange(1, 37) / 12.0
    return ForwardCurve(t, 90.0 + 2.0 * t)


# ---------------------------------------------------------------------------
# Black formula
# ---------------------------------------------------------------------------

def test_black_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = rng.uniform(20, 200)
        k = rng.uniform(20, 200)
        vol = rng.uniform(0.05, 0.9)
        t = rng.uniform(0.01, 5.0)
        df = rng.uniform(0.7, 1.0)
        for call in (True, False):
            got = black_price(f, k, vol, t, df, call)
            want = oracle_black(f, k, vol, t, df, call)
            assert got == pytest.approx(want, abs=1e-12 * f)


def test_black_zero_vol_is_intrinsic():
    assert black_price(110.0, 100.0, 0.0, 2.0, 0.9, True) == pytest.approx(9.0)
    assert black_price(90.0, 100.0, 0.0, 2.0, 0.9, True) == 0.0
    assert black_price(110.0, 100.0, 0.3, 0.0, 1.0, False) == 0.0


def test_black_tiny_strike_approaches_forward():
    assert black_price(100.0, 1e-10, 0.2, 1.0, 0.95) == pytest.approx(95.0)


def test_black_put_call_parity():
    c = black_price(100.0, 110.0, 0.25, 1.5, 0.92, True)
    p = black_price(100.0, 110.0, 0.25, 1.5, 0.92, False)
    assert c - p == pytest.approx(0.92 * (100.0 - 110.0), rel=1e-12)


# ---------------------------------------------------------------------------
# vanilla pricing
# ---------------------------------------------------------------------------

def test_vanilla_reprices_marked_vol(wti_model, curve, monthly_strip):
    q = monthly_strip.quotes[17]
    sched = SamplingSchedule.single(q.option_expiry, q.futures_expiry)
    opt = OptionSpec("vanilla", 95.0, "call", q.option_expiry, sched)
    got = vanilla_price(wti_model, curve, opt)
    want = black_price(curve.price(q.futures_expiry), 95.0, q.vol,
                       q.option_expiry)
    assert got == pytest.approx(want, abs=1e-10)


def test_vanilla_parity(wti_model, curve, monthly_strip):
    q = monthly_strip.quotes[5]
    sched = SamplingSchedule.single(q.option_expiry, q.futures_expiry)
    call = vanilla_price(wti_model, curve, OptionSpec(
        "vanilla", 60.0, "call", q.option_expiry, sched, 0.97))
    put = vanilla_price(wti_model, curve, OptionSpec(
        "vanilla", 60.0, "put", q.option_expiry, sched, 0.97))
    f = curve.price(q.futures_expiry)
    assert call - put == pytest.approx(0.97 * (f - 60.0), rel=1e-10)


def test_vanilla_zero_expiry_is_intrinsic(wti_model, curve):
    sched = SamplingSchedule.single(0.0, 1.0)
    opt = OptionSpec("vanilla", 80.0, "call", 0.0, sched)
    f = curve.price(1.0)
    assert vanilla_price(wti_model, curve, opt) == pytest.approx(f - 80.0)


# ---------------------------------------------------------------------------
# moment matching
# ---------------------------------------------------------------------------

def test_average_log_variance_single_sample_is_qv(wti_model, curve):
    sched = SamplingSchedule.single(1.0, 1.5)
    assert average_log_variance(wti_model, curve, sched) == \
        quadratic_variation(wti_model, 1.5, 1.0)


def test_averaging_reduces_variance(wti_model, curve):
    dates = [(k + 1) / 12 for k in range(12, 24)]
    sched = SamplingSchedule(tuple(
        SamplePoint(t - 1 / 24, t, 1.0 / 12) for t in dates
    ))
    var = average_log_variance(wti_model, curve, sched)
    max_qv = max(
        quadratic_variation(wti_model, p.contract_expiry, p.sample_date)
        for p in sched.points
    )
    assert 0.0 < var < max_qv


def test_average_log_variance_vs_monte_carlo(wti_model, curve):
    from curvekit.simulation import PathSet

    dates = [(k + 1) / 12 for k in range(12, 24)]
    sched = SamplingSchedule(tuple(
        SamplePoint(t - 1 / 24, t, 1.0 / 12) for t in dates
    ))
    grid = SimGrid(sched.sample_dates)
    paths = simulate_factors(wti_model, grid, 150_000, seed=21)
    sampled = np.zeros(paths.n_paths)
    for k, point in enumerate(sched.points):
        slice_k = PathSet(SimGrid(np.array([point.sample_date])),
                          paths.factors[:, k:k + 1, :], paths.seed)
        f_k = curve_paths(wti_model, curve, slice_k,
                          [point.contract_expiry])[:, 0, 0]
        sampled += point.weight * f_k
    mc_var = np.log(sampled).var(ddof=1)
    se = mc_var * math.sqrt(2.0 / (sampled.size - 1))
    got = average_log_variance(wti_model, curve, sched)
    assert abs(got - mc_var) < 3 * se


def test_asian_single_sample_equals_vanilla(wti_model, curve, monthly_strip):
    q = monthly_strip.quotes[11]
    sched = SamplingSchedule.single(q.option_expiry, q.futures_expiry)
    asian = asian_price(wti_model, curve, OptionSpec(
        "asian", 93.0, "call", q.option_expiry, sched))
    vanilla = vanilla_price(wti_model, curve, OptionSpec(
        "vanilla", 93.0, "call", q.option_expiry, sched))
    assert asian == pytest.approx(vanilla, rel=1e-12)


def test_asian_tiny_strike_is_discounted_average(wti_model, curve):
    dates = [(k + 1) / 12 for k in range(6, 12)]
    sched = SamplingSchedule(tuple(
        SamplePoint(t - 1 / 24, t, 1.0 / 6) for t in dates
    ))
    opt = OptionSpec("asian", 1e-9, "call", 1.0, sched, 0.95)
    mean_fwd = float(sched.weights @ np.array(
        [curve.price(p.contract_expiry) for p in sched.points]
    ))
    assert asian_price(wti_model, curve, opt) == pytest.approx(
        0.95 * mean_fwd, rel=1e-9
    )


def test_asian_put_call_parity(wti_model, curve):
    dates = [(k + 1) / 12 for k in range(6, 12)]
    sched = SamplingSchedule(tuple(
        SamplePoint(t - 1 / 24, t, 1.0 / 6) for t in dates
    ))
    mean_fwd = float(sched.weights @ np.array(
        [curve.price(p.contract_expiry) for p in sched.points]
    ))
    call = asian_price(wti_model, curve, OptionSpec(
        "asian", 92.0, "call", 1.0, sched, 0.93))
    put = asian_price(wti_model, curve, OptionSpec(
        "asian", 92.0, "put", 1.0, sched, 0.93))
    assert call - put == pytest.approx(0.93 * (mean_fwd - 92.0), rel=1e-10)


def test_swaption_single_contract_is_early_expiry_vanilla(wti_model, curve):
    expiry, big_t = 1.0, 2.0
    sched = SamplingSchedule((SamplePoint(expiry, big_t, 1.0),))
    swp = swaption_price(wti_model, curve, OptionSpec(
        "swaption", 94.0, "call", expiry, sched))
    vol = math.sqrt(quadratic_variation(wti_model, big_t, expiry) / expiry)
    want = black_price(curve.price(big_t), 94.0, vol, expiry)
    assert swp == pytest.approx(want, rel=1e-12)


def test_swaption_requires_samples_at_expiry():
    with pytest.raises(DomainError):
        OptionSpec("swaption", 90.0, "call", 1.0, SamplingSchedule((
            SamplePoint(1.5, 2.0, 1.0),
        )))


def test_swaption_vs_monte_carlo(wti_model, curve):
    expiry = 1.0 - 1 / 24
    contracts = [(k + 1) / 12 for k in range(12, 24)]
    sched = SamplingSchedule.swaption_strip(expiry, contracts)
    opt = OptionSpec("swaption", 93.0, "call", expiry, sched)
    analytic = swaption_price(wti_model, curve, opt)
    paths = simulate_factors(wti_model, SimGrid(np.array([expiry])), 200_000,
                             seed=33)
    prices = curve_paths(wti_model, curve, paths, contracts)[:, 0, :]
    basket = prices @ sched.weights
    payoff = np.maximum(basket - 93.0, 0.0)
    se = payoff.std(ddof=1) / math.sqrt(payoff.size)
    assert abs(analytic - payoff.mean()) < 3 * se


# ---------------------------------------------------------------------------
# quick delta
# ---------------------------------------------------------------------------

def test_quick_delta_atm_is_half():
    assert quick_delta(100.0, 100.0, 0.2, 1.0) == 0.5


def test_quick_delta_one_sigma():
    k = 100.0 * math.exp(0.2)
    qd = quick_delta(k, 100.0, 0.2, 1.0)
    want = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert qd == pytest.approx(want, abs=1e-12)


def test_quick_delta_strike_roundtrip():
    # strikes within a few standard deviations of the forward; the normal
    # CDF saturates in double precision far out in the tails
    rng = np.random.default_rng(8)
    for _ in range(200):
        f = rng.uniform(40, 200)
        vol = rng.uniform(0.05, 0.8)
        t = rng.uniform(0.05, 4.0)
        z = rng.uniform(-4.0, 4.0)
        k = f * math.exp(vol * math.sqrt(t) * z)
        qd = quick_delta(k, f, vol, t)
        assert strike_from_quick_delta(qd, f, vol, t) == pytest.approx(
            k, rel=1e-12
        )
        assert quick_delta(
            strike_from_quick_delta(qd, f, vol, t), f, vol, t
        ) == pytest.approx(qd, abs=1e-12)


def test_quick_delta_monotone_in_strike():
    strikes = np.linspace(50, 150, 40)
    qds = [quick_delta(k, 100.0, 0.3, 1.0) for k in strikes]
    assert all(b > a for a, b in zip(qds, qds[1:]))


def test_quick_delta_degenerate_inputs():
    with pytest.raises(DomainError):
        quick_delta(100.0, 100.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        quick_delta(100.0, 100.0, 0.2, 0.0)
    with pytest.raises(DomainError):
        strike_from_quick_delta(0.0, 100.0, 0.2, 1.0)
    with pytest.raises(DomainError):
        strike_from_quick_delta(1.0, 100.0, 0.2, 1.0)


# ---------------------------------------------------------------------------
# smile adjustment
# ---------------------------------------------------------------------------

def make_surface(monthly_strip, skew=0.0, curvature=0.0):
    quotes = []
    for q in monthly_strip.quotes:
        pillars = tuple(
            (x, q.vol + skew * (0.5 - x) + curvature * (x - 0.5) ** 2)
            for x in (0.10, 0.25, 0.50, 0.75, 0.90)
        )
        quotes.append(SmileQuote(q.label, q.option_expiry, q.futures_expiry,
                                 q.vol, pillars))
    return VolSurface(tuple(quotes))


def swaption_spec(monthly_strip, strike):
    quotes = monthly_strip.quotes[12:24]
    expiry = quotes[0].option_expiry
    sched = SamplingSchedule.swaption_strip(
        expiry, [q.futures_expiry for q in quotes]
    )
    return OptionSpec("swaption", strike, "call", expiry, sched)


def test_flat_smile_is_bit_identical(wti_spec, monthly_strip, curve):
    surface = make_surface(monthly_strip)
    opt = swaption_spec(monthly_strip, 80.0)
    result = smile_adjusted_price(wti_spec, surface, curve, opt)
    model = calibrate_nonseasonal(wti_spec, monthly_strip)
    assert result.price == swaption_price(model, curve, opt)
    assert result.price == result.atm_price


def test_atm_strike_prices_at_half_qd(wti_spec, monthly_strip, curve):
    surface = make_surface(monthly_strip, skew=0.04)
    opt_atm = swaption_spec(monthly_strip, 1.0)
    # replace strike by the mean forward so the instrument is dead ATM
    w = opt_atm.schedule.weights
    f = np.array([curve.price(p.contract_expiry)
                  for p in opt_atm.schedule.points])
    atm_strike = float(w @ f)
    opt = swaption_spec(monthly_strip, atm_strike)
    result = smile_adjusted_price(wti_spec, surface, curve, opt)
    assert result.quick_delta == pytest.approx(0.5, abs=1e-12)
    assert result.price == pytest.approx(result.atm_price, rel=1e-12)


def test_downward_skew_raises_low_strike_price(wti_spec, monthly_strip, curve):
    surface = make_surface(monthly_strip, skew=0.05)
    opt = swaption_spec(monthly_strip, 75.0)  # low strike -> low QD
    result = smile_adjusted_price(wti_spec, surface, curve, opt)
    assert result.quick_delta < 0.5
    assert result.price > result.atm_price


def test_clipped_quick_delta_flagged(wti_spec, monthly_strip, curve):
    surface = make_surface(monthly_strip, skew=0.02)
    opt = swaption_spec(monthly_strip, 30.0)  # absurdly low strike
    result = smile_adjusted_price(wti_spec, surface, curve, opt)
    assert result.clipped


# ---------------------------------------------------------------------------
# quanto
# ---------------------------------------------------------------------------

def make_fx(wti_spec, sigma=0.10, rho=(0.2, 0.15), spot=1.35,
            r_d=0.02, r_f=0.01):
    return FxSpec(
        spot_fx=spot,
        sigma_x=StepFunction.constant(sigma),
        r_d=StepFunction.constant(r_d),
        r_f=StepFunction.constant(r_f),
        rho_x=np.array(rho),
        factor_rho=wti_spec.rho,
    )


def asian_schedule():
    dates = [(k + 1) / 12 for k in range(6, 12)]
    return SamplingSchedule(tuple(
        SamplePoint(t - 1 / 24, t, 1.0 / 6) for t in dates
    ))


def test_quanto_reduces_to_domestic(wti_model, wti_spec, curve):
    fx = make_fx(wti_spec, sigma=0.0, spot=1.0, r_d=0.02, r_f=0.02)
    sched = asian_schedule()
    opt = OptionSpec("asian", 92.0, "call", 1.0, sched, 0.95)
    domestic = asian_price(wti_model, curve, opt)
    quanto = quanto_price(wti_model, fx, curve, opt)
    assert abs(quanto - domestic) < 1e-12
    assert quanto_average_log_variance(wti_model, fx, curve, sched) == \
        average_log_variance(wti_model, curve, sched)


def test_quanto_zero_correlation_is_additive_single_sample(wti_model, wti_spec, curve):
    fx = make_fx(wti_spec, sigma=0.12, rho=(0.0, 0.0), spot=1.0,
                 r_d=0.02, r_f=0.02)
    sched = SamplingSchedule.single(1.0, 1.5)
    got = quanto_average_log_variance(wti_model, fx, curve, sched)
    want = quadratic_variation(wti_model, 1.5, 1.0) + 0.12 ** 2 * 1.0
    assert got == pytest.approx(want, rel=1e-12)


def test_quanto_correlation_sign_moves_price_monotonically(wti_model, wti_spec, curve):
    sched = asian_schedule()
    opt = OptionSpec("asian", 92.0, "call", 1.0, sched)
    prices = []
    for rho in (-0.5, 0.0, 0.5):
        fx = make_fx(wti_spec, sigma=0.15, rho=(rho, rho), spot=1.0,
                     r_d=0.02, r_f=0.02)
        prices.append(quanto_price(wti_model, fx, curve, opt))
    # positive FX-commodity correlation lowers the foreign-currency variance
    assert prices[0] > prices[1] > prices[2]


def test_quanto_cross_term_matches_cross_asset_formula(wti_model, wti_spec):
    # the FX leg is literally a single-factor asset with beta = 0
    from curvekit.pricing import _fx_commodity_covariance

    fx = make_fx(wti_spec, sigma=0.11, rho=(0.3, -0.1))
    fx_spec = FactorSpec([0.0], [1.0], [1.0], [[1.0]], 0.0)
    fx_sched = ContractSchedule((ContractEntry("fx", 5.0, 5.0),))
    fx_model = CalibratedModel(fx_spec, fx_sched, np.array([0.11]),
                               np.array([1.0]))
    xc = CrossCorrelation(np.array([[0.3], [-0.1]]))
    got = _fx_commodity_covariance(wti_model, fx, 2.0, 1.3)
    want = cross_asset_log_covariance(wti_model, fx_model, xc, 2.0, 5.0,
                                      0.0, 1.3)
    assert got == pytest.approx(want, rel=1e-12)


def test_quanto_put_call_parity(wti_model, wti_spec, curve):
    fx = make_fx(wti_spec)
    sched = asian_schedule()
    call = quanto_price(wti_model, fx, curve, OptionSpec(
        "asian", 70.0, "call", 1.0, sched, 0.94))
    put = quanto_price(wti_model, fx, curve, OptionSpec(
        "asian", 70.0, "put", 1.0, sched, 0.94))
    fwd = float(sched.weights @ np.array([
        curve.price(p.contract_expiry) * fx.forward_y(p.sample_date)
        for p in sched.points
    ]))
    assert call - put == pytest.approx(0.94 * (fwd - 70.0), rel=1e-10)


def test_fx_spec_requires_psd_augmentation(wti_spec):
    from curvekit.errors import NotPositiveSemiDefiniteError

    with pytest.raises(NotPositiveSemiDefiniteError):
        make_fx(wti_spec, rho=(0.99, -0.99))


# ---------------------------------------------------------------------------
# quote comparison
# ---------------------------------------------------------------------------

def test_compare_table1_row():
    quotes = QuoteSet((Quote("Cal15", consensus=9.97),))
    report = compare_quotes({"Cal15": 9.49}, quotes)
    row = report.rows[0]
    assert row.diff_pct == pytest.approx(-4.81444, abs=1e-4)
    assert f"{row.diff_pct:.1f}%" == "-4.8%"
    assert row.flag == "OK"


def test_compare_inside_market_is_ok():
    quotes = QuoteSet((Quote("Cal15 ATM Call", bid=4.57, offer=4.97),))
    report = compare_quotes({"Cal15 ATM Call": 4.75}, quotes)
    assert report.rows[0].position == "inside"
    assert report.rows[0].flag == "OK"


def test_compare_recalibrate_when_above_both():
    quotes = QuoteSet((Quote("x", bid=4.0, offer=5.0, consensus=4.8),))
    report = compare_quotes({"x": 5.3}, quotes)
    assert report.rows[0].flag == "RECALIBRATE"
    assert report.rows[0].position == "above_offer"


def test_compare_recalibrate_when_below_both():
    quotes = QuoteSet((Quote("x", bid=4.0, offer=5.0, consensus=4.2),))
    report = compare_quotes({"x": 3.7}, quotes)
    assert report.rows[0].flag == "RECALIBRATE"


def test_compare_conservative_but_above_bid_is_ok():
    # paper's Table 1/2 situation: below consensus yet above the bid
    quotes = QuoteSet((Quote("x", bid=4.57, offer=4.97, consensus=5.2),))
    report = compare_quotes({"x": 4.75}, quotes)
    assert report.rows[0].flag == "OK"


def test_compare_lists_unmatched_labels():
    quotes = QuoteSet((Quote("a", consensus=1.0), Quote("b", consensus=1.0)))
    report = compare_quotes({"a": 1.0, "c": 2.0}, quotes)
    assert report.unmatched == ("b", "c")


def test_quote_rejects_crossed_market():
    with pytest.raises(DomainError):
        Quote("x", bid=5.0, offer=4.0)
