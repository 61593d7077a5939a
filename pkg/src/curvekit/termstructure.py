"""Calendar arithmetic, contract schedules and piecewise-constant time grids.

Times are ACT/365 year fractions from the valuation date.  All types are
immutable after construction and all functions are pure.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, MissingDataError, OrderingError

DAYS_PER_YEAR = 365


def year_fraction(d1: dt.date, d2: dt.date) -> float:
    """ACT/365 year fraction between two calendar dates.

    The day count is exact integer arithmetic; only the final division
    by 365 rounds.
    """
    if d2 < d1:
        raise OrderingError(f"d2 ({d2}) before d1 ({d1})")
    return (d2 - d1).days / DAYS_PER_YEAR


def _check_time(t: float, name: str = "t") -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0.0:
        raise DomainError(f"{name} must be finite and non-negative, got {t}")
    return t


@dataclass(frozen=True)
class ContractEntry:
    """One listed contract: option expiry t and futures expiry T."""

    label: str
    option_expiry: float
    futures_expiry: float

    def __post_init__(self):
        _check_time(self.option_expiry, "option_expiry")
        _check_time(self.futures_expiry, "futures_expiry")
        if self.option_expiry > self.futures_expiry:
            raise OrderingError(
                f"contract {self.label!r}: option expiry "
                f"{self.option_expiry} after futures expiry {self.futures_expiry}"
            )


@dataclass(frozen=True)
class ContractSchedule:
    """Ordered list of contracts, strictly increasing in option expiry."""

    entries: tuple[ContractEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise DomainError("schedule must contain at least one contract")
        labels = set()
        for prev, cur in zip(entries, entries[1:]):
            if cur.option_expiry <= prev.option_expiry:
                raise OrderingError(
                    f"option expiries not strictly increasing at {cur.label!r}"
                )
        for e in entries:
            if e.label in labels:
                raise DomainError(f"duplicate contract label {e.label!r}")
            labels.add(e.label)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @cached_property
    def option_expiries(self) -> np.ndarray:
        a = np.array([e.option_expiry for e in self.entries])
        a.setflags(write=False)
        return a

    @cached_property
    def futures_expiries(self) -> np.ndarray:
        a = np.array([e.futures_expiry for e in self.entries])
        a.setflags(write=False)
        return a

    def entry(self, label: str) -> ContractEntry:
        for e in self.entries:
            if e.label == label:
                return e
        raise MissingDataError(f"no contract labelled {label!r}")

    def nearby(self, t: float, n: int) -> ContractEntry:
        """The n-th contract (1-based) whose futures expiry exceeds ``t``."""
        if n < 1:
            raise DomainError(f"nearby index must be >= 1, got {n}")
        live = [e for e in self.entries if e.futures_expiry > t]
        if len(live) < n:
            raise MissingDataError(
                f"only {len(live)} contracts live at t={t}, requested nearby {n}"
            )
        return live[n - 1]

    def nearby_offset(self, t: float, n: int, continuous: bool = False) -> float:
        """Tenor offset T - t of the n-th nearby.

        With ``continuous=True`` uses the monthly-grid approximation
        T = t + n/12 instead of the listed schedule.
        """
        if continuous:
            if n < 1:
                raise DomainError(f"nearby index must be >= 1, got {n}")
            return n / 12.0
        return self.nearby(t, n).futures_expiry - t


def nearby_expiry(schedule: ContractSchedule, t: float, n: int) -> ContractEntry:
    """Module-level alias for :meth:`ContractSchedule.nearby`."""
    return schedule.nearby(t, n)


@dataclass(frozen=True)
class ForwardCurve:
    """Today's futures prices F(0) keyed by futures-expiry year fraction.

    Off-grid expiries are interpolated linearly in log price, which keeps
    interpolated prices positive.  Queries outside the quoted range raise.
    """

    expiries: np.ndarray
    prices: np.ndarray
    valuation_date: dt.date | None = None

    def __post_init__(self):
        exp = np.asarray(self.expiries, dtype=float)
        prc = np.asarray(self.prices, dtype=float)
        if exp.ndim != 1 or exp.shape != prc.shape:
            raise DomainError("expiries and prices must be 1-d and congruent")
        if exp.size == 0:
            raise DomainError("curve must contain at least one point")
        if np.any(~np.isfinite(exp)) or np.any(exp < 0.0):
            raise DomainError("expiries must be finite and non-negative")
        if np.any(np.diff(exp) <= 0.0):
            raise OrderingError("curve expiries must be strictly increasing")
        if np.any(~np.isfinite(prc)) or np.any(prc <= 0.0):
            raise DomainError("curve prices must be strictly positive")
        exp.setflags(write=False)
        prc.setflags(write=False)
        object.__setattr__(self, "expiries", exp)
        object.__setattr__(self, "prices", prc)

    @cached_property
    def _log_prices(self) -> np.ndarray:
        lp = np.log(self.prices)
        lp.setflags(write=False)
        return lp

    def price(self, expiry: float) -> float:
        lo, hi = self.expiries[0], self.expiries[-1]
        if expiry < lo or expiry > hi:
            raise MissingDataError(
                f"expiry {expiry} outside curve range [{lo}, {hi}]"
            )
        idx = int(np.searchsorted(self.expiries, expiry))
        if idx < self.expiries.size and self.expiries[idx] == expiry:
            return float(self.prices[idx])
        return float(np.exp(np.interp(expiry, self.expiries, self._log_prices)))

    def covers(self, expiry: float) -> bool:
        return self.expiries[0] <= expiry <= self.expiries[-1]


@dataclass(frozen=True)
class StepFunction:
    """Right-open piecewise-constant function of time.

    ``values[k]`` applies on ``[breaks[k], breaks[k+1])``; the last value
    extends flat to infinity and queries below ``breaks[0]`` clip to the
    first value.
    """

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or b.size == 0:
            raise DomainError("breaks and values must be congruent non-empty 1-d")
        if np.any(np.diff(b) <= 0.0):
            raise OrderingError("breaks must be strictly increasing")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float) -> "StepFunction":
        return cls(np.array([0.0]), np.array([float(value)]))

    def __call__(self, t):
        idx = np.clip(
            np.searchsorted(self.breaks, t, side="right") - 1, 0, self.values.size - 1
        )
        return self.values[idx]

    def segments(self, t1: float, t2: float):
        """Yield (a, b, value) pieces covering [t1, t2] on which self is constant."""
        if t2 < t1:
            raise OrderingError(f"t2 ({t2}) before t1 ({t1})")
        if t1 == t2:
            return
        cuts = self.breaks[(self.breaks > t1) & (self.breaks < t2)]
        bounds = np.concatenate(([t1], cuts, [t2]))
        for a, b in zip(bounds[:-1], bounds[1:]):
            yield float(a), float(b), float(self(a))

    def integral(self, t1: float, t2: float) -> float:
        return sum(v * (b - a) for a, b, v in self.segments(t1, t2))
