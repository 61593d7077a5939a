import datetime as dt
import math
from fractions import Fraction

import numpy as np
import pytest

from curvekit.errors import DomainError, MissingDataError, OrderingError
from curvekit.termstructure import (
    ContractEntry,
    ContractSchedule,
    ForwardCurve,
    StepFunction,
    nearby_expiry,
    year_fraction,
)


def test_year_fraction_identity():
    d = dt.date(2014, 1, 1)
    assert year_fraction(d, d) == 0.0


def test_year_fraction_whole_year():
    assert year_fraction(dt.date(2014, 1, 1), dt.date(2015, 1, 1)) == 1.0


def test_year_fraction_calendar_oracle():
    # independent day-count: walk the calendar one day at a time
    d1, d2 = dt.date(2013, 10, 8), dt.date(2014, 12, 16)
    days = 0
    cursor = d1
    while cursor < d2:
        cursor += dt.timedelta(days=1)
        days += 1
    assert year_fraction(d1, d2) == days / 365


def test_year_fraction_rejects_reversed_dates():
    with pytest.raises(OrderingError):
        year_fraction(dt.date(2014, 1, 2), dt.date(2014, 1, 1))


def test_year_fraction_additive():
    # exact at the rational (day-count) level; floats agree to 1 ulp
    rng = np.random.default_rng(5)
    base = dt.date(2012, 6, 1)
    for _ in range(200):
        a = base + dt.timedelta(days=int(rng.integers(0, 2000)))
        b = a + dt.timedelta(days=int(rng.integers(0, 2000)))
        c = b + dt.timedelta(days=int(rng.integers(0, 2000)))
        exact_ab = Fraction((b - a).days, 365)
        exact_bc = Fraction((c - b).days, 365)
        exact_ac = Fraction((c - a).days, 365)
        assert exact_ab + exact_bc == exact_ac
        assert math.isclose(
            year_fraction(a, b) + year_fraction(b, c),
            year_fraction(a, c),
            rel_tol=1e-15,
        )


@pytest.fixture
def schedule():
    return ContractSchedule(tuple(
        ContractEntry(f"m{i + 1}", (i + 1) / 12 - 1 / 24, (i + 1) / 12)
        for i in range(36)
    ))


def test_nearby_first_contract(schedule):
    assert nearby_expiry(schedule, 0.0, 1).label == "m1"
    just_before = schedule.entries[0].futures_expiry - 1e-9
    assert nearby_expiry(schedule, just_before, 1).label == "m1"


def test_nearby_rolls_after_expiry(schedule):
    after_first = schedule.entries[0].futures_expiry + 1e-9
    assert nearby_expiry(schedule, after_first, 1).label == "m2"


def test_nearby_enumeration_oracle(schedule):
    # count live contracts by brute force
    t = 0.0
    live = [e for e in schedule.entries if e.futures_expiry > t]
    assert nearby_expiry(schedule, t, 12) is live[11]
    assert nearby_expiry(schedule, t, 12).label == "m12"


def test_nearby_index_property(schedule):
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = float(rng.uniform(0, 2.5))
        n = int(rng.integers(1, 6))
        live = [e for e in schedule.entries if e.futures_expiry > t]
        if len(live) < n:
            continue
        assert nearby_expiry(schedule, t, n) is live[n - 1]


def test_nearby_out_of_range(schedule):
    with pytest.raises(MissingDataError):
        nearby_expiry(schedule, 2.9, 5)


def test_nearby_offset_continuous(schedule):
    assert schedule.nearby_offset(1.3, 3, continuous=True) == 3 / 12
    assert schedule.nearby_offset(0.0, 36, continuous=True) == 3.0


def test_schedule_rejects_unsorted():
    with pytest.raises(OrderingError):
        ContractSchedule((
            ContractEntry("a", 0.5, 0.6),
            ContractEntry("b", 0.4, 0.7),
        ))


def test_schedule_rejects_duplicate_labels():
    with pytest.raises(DomainError):
        ContractSchedule((
            ContractEntry("a", 0.5, 0.6),
            ContractEntry("a", 0.7, 0.8),
        ))


def test_contract_rejects_option_after_futures():
    with pytest.raises(OrderingError):
        ContractEntry("a", 0.7, 0.6)


def test_curve_interpolates_log_linear():
    curve = ForwardCurve(np.array([1.0, 2.0]), np.array([100.0, 121.0]))
    # halfway in log space is the geometric mean
    assert curve.price(1.5) == pytest.approx(110.0, rel=1e-12)
    assert curve.price(1.0) == 100.0
    assert curve.price(2.0) == 121.0


def test_curve_rejects_uncovered_expiry():
    curve = ForwardCurve(np.array([1.0, 2.0]), np.array([100.0, 121.0]))
    with pytest.raises(MissingDataError):
        curve.price(2.5)
    with pytest.raises(MissingDataError):
        curve.price(0.5)


def test_curve_rejects_negative_price():
    with pytest.raises(DomainError):
        ForwardCurve(np.array([1.0, 2.0]), np.array([100.0, -5.0]))


def test_step_function_lookup_and_segments():
    f = StepFunction(np.array([0.0, 1.0, 2.0]), np.array([10.0, 20.0, 30.0]))
    assert f(0.0) == 10.0
    assert f(0.99) == 10.0
    assert f(1.0) == 20.0
    assert f(5.0) == 30.0
    assert f(-1.0) == 10.0  # clipped to the first value
    segs = list(f.segments(0.5, 2.5))
    assert segs == [(0.5, 1.0, 10.0), (1.0, 2.0, 20.0), (2.0, 2.5, 30.0)]
    assert f.integral(0.5, 2.5) == pytest.approx(
        0.5 * 10 + 1.0 * 20 + 0.5 * 30
    )
