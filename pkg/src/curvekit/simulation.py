"""Exact-discretization Monte Carlo for the mean-reverting factors.

Each step draws the Gaussian stochastic integral with its exact
covariance (Ito isometry evaluated in closed form), so sample moments
match the continuous-time model at any step size; there is no
discretization bias.  Draws come from a counter-based generator keyed by
(seed, step index) with path-major ordering, so results are fully
deterministic and adding paths never perturbs existing ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .errors import (
    DegenerateSpecError,
    DomainError,
    NotPositiveSemiDefiniteError,
    OrderingError,
    ShapeError,
)
from .factor_model import (
    CalibratedModel,
    CrossCorrelation,
    _phi,
    reconstruct_futures,
    quadratic_variation,
    stacked_correlation,
)
from .termstructure import ForwardCurve

_MAGIC = b"CURVEKIT"
_VERSION = 1
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class SimGrid:
    """Strictly increasing positive sampling dates."""

    dates: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.dates, dtype=float))
        if d.size == 0:
            raise DomainError("simulation grid must not be empty")
        if d[0] <= 0.0 or np.any(np.diff(d) <= 0.0):
            raise OrderingError(
                "grid dates must be strictly increasing and positive"
            )
        d.setflags(write=False)
        object.__setattr__(self, "dates", d)

    def __len__(self):
        return self.dates.size

    def steps(self):
        """(start, end) pairs including the implicit start at zero."""
        prev = 0.0
        for t in self.dates:
            yield prev, float(t)
            prev = float(t)


@dataclass(frozen=True)
class PathSet:
    """Simulated factor values, shape (n_paths, n_dates, n_factors)."""

    grid: SimGrid
    factors: np.ndarray
    seed: int

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=float)
        if f.ndim != 3 or f.shape[1] != len(self.grid):
            raise ShapeError(
                f"factors must be (paths, {len(self.grid)} dates, factors), "
                f"got {f.shape}"
            )
        f.setflags(write=False)
        object.__setattr__(self, "factors", f)

    @property
    def n_paths(self) -> int:
        return self.factors.shape[0]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[2]


def step_covariance(m: CalibratedModel, a: float, b: float) -> np.ndarray:
    """Covariance of the factor stochastic integrals over (a, b].

    Entries are the closed-form alpha-knot-segment evaluation of
    integral_a^b exp(-(beta_i + beta_j)(b - s)) p_i(s) p_j(s) rho_ij ds.
    """
    if a < 0.0:
        raise DomainError(f"step start must be >= 0, got {a}")
    if a >= b:
        raise OrderingError(f"step start {a} not before end {b}")
    beta = m.spec.beta
    bsum = beta[:, None] + beta[None, :]
    acc = np.zeros_like(bsum)
    for s0, s1, alpha in m.alpha.segments(a, b):
        acc += (alpha * alpha) * np.exp(-bsum * (b - s1)) * _phi(bsum, s1 - s0)
    w = np.outer(m.p_eff, m.p_eff) * m.spec.rho
    return w * acc


def cholesky_psd(matrix: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of a PSD matrix, tolerating zero pivots.

    Pivots below 1e-12 of the largest diagonal clamp to zero (with their
    column); pivots more negative than that raise, naming the offending
    leading principal minor.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix must be square, got {a.shape}")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise DomainError("matrix must be symmetric")
    n = a.shape[0]
    tol = 1e-12 * max(np.diag(a).max(), 0.0)
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot < -tol:
            raise NotPositiveSemiDefiniteError.at_minor(j + 1, float(pivot))
        if pivot <= tol:
            continue
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (
                a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]
            ) / lower[j, j]
    return lower


def _gaussian_block(seed: int, step_index: int, n_paths: int, width: int):
    """Standard normals for one step, deterministic in (seed, step, row).

    Inverse-CDF transform of Philox uniforms; row p always consumes the
    same counter positions, so enlarging n_paths leaves earlier paths
    untouched.
    """
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, step_index]))
    )
    u = rng.random((n_paths, width))
    return ndtri(np.maximum(u, _TINY))


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0:
        raise DomainError(f"seed must be non-negative, got {seed}")
    return seed


def simulate_factors(
    m: CalibratedModel, grid: SimGrid, n_paths: int, seed: int
) -> PathSet:
    """Exact-in-distribution factor paths.

    Y_i(t_k) = exp(-beta_i dt) Y_i(t_{k-1}) + Gaussian increment with the
    step covariance; distributionally exact at any step size.
    """
    seed = _check_seed(seed)
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    n = m.spec.n_factors
    out = np.empty((n_paths, len(grid), n))
    state = np.zeros((n_paths, n))
    for k, (a, b) in enumerate(grid.steps()):
        lower = cholesky_psd(step_covariance(m, a, b))
        decay = np.exp(-m.spec.beta * (b - a))
        z = _gaussian_block(seed, k, n_paths, n)
        state = state * decay + z @ lower.T
        out[:, k, :] = state
    return PathSet(grid, out, seed)


def curve_paths(
    m: CalibratedModel,
    curve: ForwardCurve,
    paths: PathSet,
    expiries,
) -> np.ndarray:
    """Futures prices along the paths, shape (paths, dates, expiries).

    Pointwise application of the futures reconstruction formula,
    vectorized across paths.
    """
    expiries = np.atleast_1d(np.asarray(expiries, dtype=float))
    if paths.n_factors != m.spec.n_factors:
        raise ShapeError("path set factor count does not match model")
    out = np.empty((paths.n_paths, len(paths.grid), expiries.size))
    for k, t in enumerate(paths.grid.dates):
        for e, big_t in enumerate(expiries):
            if t > big_t:
                raise DomainError(
                    f"grid date {t} past requested expiry {big_t}"
                )
            f0 = curve.price(big_t)
            coeff = m.q_eff(big_t) * np.exp(-m.spec.beta * (big_t - t))
            drift = -0.5 * quadratic_variation(m, big_t, float(t))
            out[:, k, e] = f0 * np.exp(paths.factors[:, k, :] @ coeff + drift)
    return out


class AssetUniverse:
    """Several calibrated assets plus their cross-factor correlations.

    ``cross`` maps (label_a, label_b) pairs to CrossCorrelation blocks
    (either orientation); omitted pairs default to independence.  The
    stacked correlation over all (asset, factor) pairs must be PSD after
    the standard repair tolerance.
    """

    def __init__(self, assets, cross=None):
        self.assets = tuple((str(k), v) for k, v in dict(assets).items())
        if not self.assets:
            raise DomainError("universe must contain at least one asset")
        labels = [k for k, _ in self.assets]
        sizes = {k: v.spec.n_factors for k, v in self.assets}
        given = {}
        for (ka, kb), xc in (cross or {}).items():
            if ka not in sizes or kb not in sizes:
                raise ShapeError(f"cross correlation references unknown asset "
                                 f"({ka!r}, {kb!r})")
            if not isinstance(xc, CrossCorrelation):
                xc = CrossCorrelation(np.asarray(xc, dtype=float))
            given[(ka, kb)] = xc
        blocks = []
        for ka, ma in self.assets:
            row = []
            for kb, mb in self.assets:
                if ka == kb:
                    row.append(ma.spec.rho)
                elif (ka, kb) in given:
                    row.append(given[(ka, kb)].matrix)
                elif (kb, ka) in given:
                    row.append(given[(kb, ka)].matrix.T)
                else:
                    row.append(np.zeros((sizes[ka], sizes[kb])))
                if row[-1].shape != (sizes[ka], sizes[kb]):
                    raise ShapeError(
                        f"cross block ({ka!r}, {kb!r}) has shape "
                        f"{row[-1].shape}, expected {(sizes[ka], sizes[kb])}"
                    )
            blocks.append(row)
        self.labels = tuple(labels)
        self.stacked_rho = stacked_correlation(blocks)
        offsets = np.cumsum([0] + [sizes[k] for k in labels])
        self.offsets = tuple(int(o) for o in offsets)

    def model(self, label: str) -> CalibratedModel:
        for k, v in self.assets:
            if k == label:
                return v
        raise KeyError(label)


def simulate_multi_asset(
    universe: AssetUniverse, grid: SimGrid, n_paths: int, seed: int
) -> dict[str, PathSet]:
    """Correlated factor paths for every asset in the universe.

    One Cholesky of the stacked cross-asset correlation correlates the
    raw draws; each asset then de-correlates its own slice against its
    sub-correlation factor (triangular solve) and applies its exact
    single-asset step covariance.
    """
    seed = _check_seed(seed)
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    stack_lower = cholesky_psd(universe.stacked_rho)
    own_lowers = []
    for label, model in universe.assets:
        lower = cholesky_psd(model.spec.rho)
        if np.any(np.diag(lower) == 0.0):
            raise DegenerateSpecError(
                f"asset {label!r} has a singular factor correlation; "
                "cannot de-correlate its draws"
            )
        own_lowers.append(lower)
    total = universe.offsets[-1]
    states = [
        np.zeros((n_paths, m.spec.n_factors)) for _, m in universe.assets
    ]
    outs = [
        np.empty((n_paths, len(grid), m.spec.n_factors))
        for _, m in universe.assets
    ]
    for k, (a, b) in enumerate(grid.steps()):
        raw = _gaussian_block(seed, k, n_paths, total)
        correlated = raw @ stack_lower.T
        for idx, (label, model) in enumerate(universe.assets):
            lo, hi = universe.offsets[idx], universe.offsets[idx + 1]
            slab = correlated[:, lo:hi]
            z = solve_triangular(own_lowers[idx], slab.T, lower=True).T
            step_lower = cholesky_psd(step_covariance(model, a, b))
            decay = np.exp(-model.spec.beta * (b - a))
            states[idx] = states[idx] * decay + z @ step_lower.T
            outs[idx][:, k, :] = states[idx]
    return {
        label: PathSet(grid, outs[idx], seed)
        for idx, (label, _) in enumerate(universe.assets)
    }


def save_paths(paths: PathSet, path) -> None:
    """Binary path file: header then little-endian float64 blocks."""
    header = _MAGIC + struct.pack(
        "<IQII q",
        _VERSION,
        paths.n_paths,
        len(paths.grid),
        paths.n_factors,
        paths.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(paths.grid.dates.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(paths.factors, dtype="<f8").tobytes())


def load_paths(path) -> PathSet:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DomainError(f"not a curvekit path file: bad magic {magic!r}")
        version, n_paths, n_dates, n_factors, seed = struct.unpack(
            "<IQII q", fh.read(struct.calcsize("<IQII q"))
        )
        if version != _VERSION:
            raise DomainError(f"unsupported path file version {version}")
        dates = np.frombuffer(fh.read(8 * n_dates), dtype="<f8")
        data = np.frombuffer(
            fh.read(8 * n_paths * n_dates * n_factors), dtype="<f8"
        ).reshape(n_paths, n_dates, n_factors)
    return PathSet(SimGrid(dates.copy()), data.copy(), seed)


def paths_to_csv(paths: PathSet, path) -> None:
    """Plain-text export for small runs: one row per (path, date)."""
    with open(path, "w", newline="") as fh:
        cols = ",".join(f"y{i + 1}" for i in range(paths.n_factors))
        fh.write(f"path,date,{cols}\n")
        for p in range(paths.n_paths):
            for k, t in enumerate(paths.grid.dates):
                vals = ",".join(repr(v) for v in paths.factors[p, k, :])
                fh.write(f"{p},{t!r},{vals}\n")
