"""Command-line driver: calibrate, price, sensitivity, compare, history, simulate.

Every subcommand is deterministic given (bundle, flags, seed).  Exit
codes: 0 success, 1 numerical or calibration failure, 2 input/IO failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import marketdata_io as mio
from .calibration_offline import (
    DEFAULT_HALF_LIFE,
    ReturnPanel,
    extract_factor_series,
    fit_two_factor_to_pca,
    model_statistics,
    weighted_pca,
)
from .calibration_online import (
    calibrate_hybrid,
    calibrate_nonseasonal,
    calibrate_seasonal,
    strip_roundtrip_errors,
)
from .errors import (
    BundleLoadError,
    CurveKitError,
    InfeasibleCalibrationError,
    MissingDataError,
    ModelVersionError,
)
from .factor_model import quadratic_variation
from .pricing import (
    OptionSpec,
    SamplePoint,
    SamplingSchedule,
    average_log_variance,
    compare_quotes,
    price_option,
    quick_delta,
    smile_adjusted_price,
)
from .simulation import (
    AssetUniverse,
    SimGrid,
    curve_paths,
    paths_to_csv,
    save_paths,
    simulate_factors,
    simulate_multi_asset,
)
from .termstructure import year_fraction

_IO_ERRORS = (BundleLoadError, MissingDataError, ModelVersionError,
              FileNotFoundError, OSError)


def _worker_count() -> int:
    cap = os.environ.get("CURVEKIT_THREADS")
    default = min(4, os.cpu_count() or 1)
    if cap is None:
        return default
    try:
        return max(1, int(cap))
    except ValueError:
        return default


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_bundle(args):
    bundle = mio.load_bundle(args.bundle)
    for w in bundle.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return bundle


_BUNDLE_FILES = {
    "factor spec": "spec/{asset}.json",
    "vol strip": "vols/{asset}.csv",
    "vol surface": "vols/{asset}.csv",
    "forward curve": "curves/{asset}.csv",
    "contract schedule": "schedule/{asset}.csv",
    "history panel": "history/{asset}.csv",
    "quotes": "quotes/{asset}.csv",
}


def _need(bundle_map, asset, what):
    if asset not in bundle_map:
        where = _BUNDLE_FILES.get(what, "").format(asset=asset)
        raise MissingDataError(
            f"bundle has no {what} for asset {asset!r} (expected {where})"
        )
    return bundle_map[asset]


def _spec_for_mode(spec, args):
    mode = getattr(args, "mode", None)
    if mode == "nonseasonal":
        return spec.with_updates(epsilon=0.0)
    if mode == "seasonal":
        return spec.with_updates(epsilon=1.0)
    if mode == "hybrid":
        eps = args.epsilon if args.epsilon is not None else spec.epsilon
        return spec.with_updates(epsilon=eps)
    if getattr(args, "epsilon", None) is not None:
        return spec.with_updates(epsilon=args.epsilon)
    return spec


def _calibrate_for_mode(spec, strip, args):
    mode = getattr(args, "mode", None)
    spec = _spec_for_mode(spec, args)
    if mode == "nonseasonal":
        return calibrate_nonseasonal(spec, strip)
    if mode == "seasonal":
        return calibrate_seasonal(spec, strip)
    if mode == "hybrid":
        return calibrate_hybrid(spec, strip)
    if spec.epsilon == 0.0:
        return calibrate_nonseasonal(spec, strip)
    if spec.epsilon == 1.0:
        return calibrate_seasonal(spec, strip)
    return calibrate_hybrid(spec, strip)


def cmd_calibrate(args) -> int:
    bundle = _load_bundle(args)
    spec = _need(bundle.specs, args.asset, "factor spec")
    strip = _need(bundle.strips, args.asset, "vol strip")
    _need(bundle.curves, args.asset, "forward curve")
    _need(bundle.schedules, args.asset, "contract schedule")
    model = _calibrate_for_mode(spec, strip, args)
    out = args.out or (Path(args.bundle) / "model" / f"{args.asset}.json")
    mio.save_model(model, out)
    print(f"model written to {out}")
    print("label,market_vol,model_vol,abs_error")
    worst = 0.0
    for label, market, modeled, err in strip_roundtrip_errors(model, strip):
        worst = max(worst, err)
        print(f"{label},{market!r},{modeled!r},{err:.3e}")
    print(f"max_roundtrip_error {worst:.3e}")
    return 0


def _parse_multi(cell, count, default, caster=float):
    if not cell:
        return [default(count)] * count if callable(default) else [default] * count
    vals = [caster(v) for v in cell.split(";")]
    if len(vals) == 1 and count > 1:
        vals = vals * count
    if len(vals) != count:
        raise ValueError(f"expected {count} values, got {len(vals)}")
    return vals


def _load_instruments(path, schedule, curve, as_of_hint=None):
    """Instrument rows resolved against the model schedule.

    Returns (specs, diagnostics); specs is a list of
    (label, kind, option-or-list) where straddles expand to two legs.
    """
    as_of_text, header, rows = mio._read_csv(Path(path))
    as_of = None
    if as_of_text is not None:
        as_of = dt.date.fromisoformat(as_of_text)
    elif as_of_hint is not None:
        as_of = as_of_hint
    out, diags = [], []
    for lineno, row in rows:
        label = row.get("label", f"row{lineno}")
        try:
            kind = row.get("kind", "").strip().lower()
            if kind not in ("vanilla", "asian", "swaption"):
                raise ValueError(f"unknown instrument kind {kind!r}")
            cp = row.get("call_put", "call").strip().lower() or "call"
            if cp not in ("call", "put", "straddle"):
                raise ValueError(f"unknown call_put {cp!r}")
            contracts = [c for c in row.get("contracts", "").split(";") if c]
            if not contracts:
                raise ValueError("no contracts listed")
            entries = [schedule.entry(c) for c in contracts]
            expiry_cell = row.get("expiry", "").strip()
            if expiry_cell:
                if as_of is None:
                    raise ValueError("expiry date given but no as_of available")
                expiry = year_fraction(as_of, dt.date.fromisoformat(expiry_cell))
            elif kind == "vanilla":
                expiry = entries[0].option_expiry
            elif kind == "asian":
                expiry = max(e.option_expiry for e in entries)
            else:
                expiry = min(e.option_expiry for e in entries)
            weights = _parse_multi(row.get("weights", ""),
                                   len(entries), 1.0 / len(entries))
            discounts = _parse_multi(row.get("discounts", ""), len(entries), 1.0)
            sd_cell = row.get("settlement_discount", "").strip()
            settlement = float(sd_cell) if sd_cell else 1.0
            if kind == "vanilla":
                points = (SamplePoint(expiry, entries[0].futures_expiry),)
            elif kind == "swaption":
                points = tuple(
                    SamplePoint(expiry, e.futures_expiry, u, d)
                    for e, u, d in zip(entries, weights, discounts)
                )
            else:
                points = tuple(
                    SamplePoint(min(e.option_expiry, expiry),
                                e.futures_expiry, u, d)
                    for e, u, d in zip(entries, weights, discounts)
                )
            sched = SamplingSchedule(points)
            strike_cell = row.get("strike", "").strip().lower()
            if strike_cell in ("", "atm"):
                strike = float(
                    np.dot(sched.weights,
                           [curve.price(p.contract_expiry) for p in points])
                ) if kind != "vanilla" else curve.price(points[0].contract_expiry)
            else:
                strike = float(strike_cell)
            legs = ("call", "put") if cp == "straddle" else (cp,)
            opts = [
                OptionSpec(kind, strike, leg, expiry, sched, settlement)
                for leg in legs
            ]
            out.append((label, kind, opts))
        except (CurveKitError, ValueError, KeyError) as exc:
            diags.append(f"{path}:{lineno}: {label}: {exc}")
    return out, diags


def _resolve_model(bundle, args):
    if getattr(args, "model", None):
        return mio.load_model(args.model)
    if getattr(args, "calibrate", False):
        spec = _need(bundle.specs, args.asset, "factor spec")
        strip = _need(bundle.strips, args.asset, "vol strip")
        return _calibrate_for_mode(spec, strip, args)
    if args.asset in bundle.models:
        return bundle.models[args.asset]
    raise MissingDataError(
        f"no calibrated model for {args.asset!r}; pass --model or --calibrate"
    )


def cmd_price(args) -> int:
    bundle = _load_bundle(args)
    model = _resolve_model(bundle, args)
    curve = _need(bundle.curves, args.asset, "forward curve")
    surface = None
    if args.smile:
        surface = _need(bundle.surfaces, args.asset, "vol surface")
    instruments, diags = _load_instruments(
        args.instruments, model.schedule, curve, bundle.as_of
    )
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)

    def price_row(item):
        label, kind, opts = item
        if surface is not None:
            results = [
                smile_adjusted_price(model.spec, surface, curve, o)
                for o in opts
            ]
            price = sum(r.price for r in results)
            vol = results[0].composite_vol
            qd = results[0].quick_delta
            flag = "CLIPPED" if any(r.clipped for r in results) else "OK"
        else:
            price = sum(price_option(model, curve, o) for o in opts)
            opt = opts[0]
            if opt.kind == "vanilla":
                forward = curve.price(opt.schedule.points[0].contract_expiry)
            else:
                forward = float(np.dot(
                    opt.schedule.weights,
                    [curve.price(p.contract_expiry) for p in opt.schedule.points],
                ))
            qv_t = opt.expiry
            var = average_log_variance(model, curve, opt.schedule)
            vol = float(np.sqrt(var / qv_t)) if qv_t > 0 else 0.0
            qd = (
                quick_delta(opt.strike, forward, vol, qv_t)
                if vol > 0.0 and qv_t > 0.0
                else ""
            )
            flag = "OK"
        return label, price, vol, qd, flag

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(price_row, instruments))
    header = ["label", "price", "vol", "qd", "flag"]
    if args.out:
        mio.write_csv(args.out, header, rows)
        print(f"prices written to {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(mio._format_cell(c) for c in row))
    return 0


def _bumped_specs(spec, args):
    if spec.n_factors != 2:
        raise CurveKitError(
            "sensitivity bumps are defined for two-factor specs"
        )
    short = int(np.argmax(spec.beta))
    long_ = 1 - short
    beta = spec.beta.copy()
    beta[short] += args.mean_rev_bump
    mr = spec.with_updates(beta=beta)

    ratio = spec.p_const[short] / spec.p_const[long_]
    p = spec.p_const.copy()
    p[short] = spec.p_const[long_] * (ratio + args.vol_ratio_bump)
    q_ratio = spec.q_const[short] / spec.q_const[long_]
    q = spec.q_const.copy()
    q[short] = spec.q_const[long_] * (q_ratio + args.vol_ratio_bump)
    vr = spec.with_updates(p_const=p, q_const=q)

    rho = spec.rho.copy()
    bumped = float(np.clip(rho[0, 1] + args.corr_bump, -0.999, 0.999))
    rho[0, 1] = rho[1, 0] = bumped
    cr = spec.with_updates(rho=rho)
    return mr, vr, cr


def cmd_sensitivity(args) -> int:
    bundle = _load_bundle(args)
    spec = _spec_for_mode(_need(bundle.specs, args.asset, "factor spec"), args)
    strip = _need(bundle.strips, args.asset, "vol strip")
    curve = _need(bundle.curves, args.asset, "forward curve")
    base_model = _calibrate_for_mode(spec, strip, args)
    instruments, diags = _load_instruments(
        args.instruments, base_model.schedule, curve, bundle.as_of
    )
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    ladder = [(lab, opts) for lab, kind, opts in instruments
              if kind == "swaption"]
    if not ladder:
        return _fail("no swaption rows in instruments file", 2)

    def price_ladder(model):
        return [
            sum(price_option(model, curve, o) for o in opts)
            for _, opts in ladder
        ]

    base = price_ladder(base_model)
    bump_prices = []
    for bumped in _bumped_specs(spec, args):
        try:
            bump_prices.append(price_ladder(_calibrate_for_mode(bumped, strip, args)))
        except InfeasibleCalibrationError as exc:
            print(f"warning: bump infeasible: {exc}", file=sys.stderr)
            bump_prices.append([None] * len(ladder))
    rows = []
    for i, (label, _) in enumerate(ladder):
        row = [label, base[i]]
        for prices in bump_prices:
            if prices[i] is None:
                row.extend(["INFEASIBLE", ""])
            else:
                row.extend([prices[i], prices[i] - base[i]])
        rows.append(row)
    header = ["label", "base_price",
              "mean_rev_price", "mean_rev_diff",
              "vol_ratio_price", "vol_ratio_diff",
              "corr_price", "corr_diff"]
    if args.out:
        mio.write_csv(args.out, header, rows)
        print(f"sensitivity table written to {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(mio._format_cell(c) for c in row))
    return 0


def cmd_compare(args) -> int:
    bundle = _load_bundle(args)
    quotes = _need(bundle.quotes, args.asset, "quotes")
    _, header, rows = mio._read_csv(Path(args.prices))
    price_col = "model_price" if "model_price" in header else "price"
    if "label" not in header or price_col not in header:
        return _fail("prices file needs label and price columns", 2)
    prices = {}
    for lineno, row in rows:
        try:
            prices[row["label"]] = float(row[price_col])
        except (KeyError, ValueError) as exc:
            return _fail(f"{args.prices}:{lineno}: {exc}", 2)
    report = compare_quotes(prices, quotes)
    out_rows = []
    for r in report.rows:
        diff = f"{r.diff_pct:.1f}%" if r.diff_pct is not None else ""
        out_rows.append([
            r.label, r.model_price,
            "" if r.consensus is None else r.consensus, diff,
            "" if r.bid is None else r.bid,
            "" if r.offer is None else r.offer,
            r.position, r.flag,
        ])
    header = ["label", "model_price", "consensus", "diff_pct", "bid",
              "offer", "position", "flag"]
    if args.out:
        mio.write_csv(args.out, header, out_rows)
    print(",".join(header))
    for row in out_rows:
        print(",".join(mio._format_cell(c) for c in row))
    for label in report.unmatched:
        print(f"unmatched: {label}", file=sys.stderr)
    return 0


def cmd_history(args) -> int:
    bundle = _load_bundle(args)
    hist = _need(bundle.histories, args.asset, "history panel")
    if hist.prices.shape[0] < 3:
        return _fail("history needs at least 3 rows of prices", 2)
    panel = ReturnPanel.from_prices(
        hist.prices, args.half_life, hist.tenor_indices, hist.dates
    )
    schedule = bundle.schedules.get(args.asset)
    if args.continuous_tenors or schedule is None:
        offsets = np.array([k / 12.0 for k in hist.tenor_indices])
    else:
        try:
            offsets = np.array([
                schedule.nearby_offset(0.0, k) for k in hist.tenor_indices
            ])
        except MissingDataError:
            print("warning: schedule too short for panel tenors; using "
                  "continuous approximation", file=sys.stderr)
            offsets = np.array([k / 12.0 for k in hist.tenor_indices])
    pca = weighted_pca(panel)
    fit = fit_two_factor_to_pca(pca, offsets)
    fitted = mio.spec_from_dict({
        "beta": [fit.beta, 0.0],
        "p_const": [fit.vol_ratio, 1.0],
        "q_const": [fit.vol_ratio, 1.0],
        "rho": [[1.0, fit.rho], [fit.rho, 1.0]],
        "epsilon": 0.0,
    })
    ref = 12 if 12 in hist.tenor_indices else hist.tenor_indices[-1]
    ref_pos = hist.tenor_indices.index(ref) + 1
    stats = model_statistics(fitted, offsets, ref_pos)

    front = 3 if 3 in hist.tenor_indices else hist.tenor_indices[0]
    back = 36 if 36 in hist.tenor_indices else hist.tenor_indices[-1]
    fi, bi = hist.tenor_indices.index(front), hist.tenor_indices.index(back)
    factor_corr = ""
    if fi != bi:
        series = extract_factor_series(
            panel.returns[:, fi], panel.returns[:, bi],
            fit.beta, offsets[fi], offsets[bi],
        )
        factor_corr = float(np.corrcoef(
            series.short_shocks, series.long_shocks
        )[0, 1])

    print(f"rows {panel.returns.shape[0]} tenors {panel.returns.shape[1]} "
          f"half_life {args.half_life}")
    print(f"fitted beta {fit.beta!r}")
    print(f"fitted vol_ratio {fit.vol_ratio!r}")
    print(f"fitted rho {fit.rho!r}")
    print(f"fit_residual {fit.fit_residual!r} converged {fit.converged}")
    print(f"explained_pc1 {float(pca.explained_fraction[0])!r}")
    print(f"explained_pc2 {float(pca.explained_fraction[1])!r}")
    if factor_corr != "":
        print(f"factor_correlation(nearby {front} vs {back}) {factor_corr!r}")
    rows = [
        [int(hist.tenor_indices[a]), float(offsets[a]),
         float(pca.components[0][a]), float(pca.components[1][a]),
         float(stats.vol_ratio_curve[a]), float(stats.correlation_curve[a])]
        for a in range(len(hist.tenor_indices))
    ]
    header = ["nearby", "offset", "pc1", "pc2", "vol_ratio", "correlation"]
    if args.out:
        mio.write_csv(args.out, header, rows)
        print(f"loadings written to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    bundle = _load_bundle(args)
    assets = [a for a in (args.assets or "").split(",") if a] or [args.asset]
    models = {}
    for a in assets:
        if a in bundle.models:
            models[a] = bundle.models[a]
        elif len(assets) == 1:
            models[a] = _resolve_model(bundle, args)
        else:
            raise MissingDataError(f"no calibrated model for asset {a!r}")
    first = models[assets[0]]
    horizon = args.horizon
    if horizon is None:
        idx = min(11, len(first.schedule) - 1)
        horizon = float(first.schedule.option_expiries[idx])
    grid = SimGrid(horizon * np.arange(1, args.steps + 1) / args.steps)

    if len(assets) == 1:
        paths = {assets[0]: simulate_factors(first, grid, args.n_paths, args.seed)}
    else:
        cross = {}
        for (a, b), matrix in bundle.cross.items():
            if a in models and b in models:
                cross[(a, b)] = matrix
        universe = AssetUniverse(models, cross)
        paths = simulate_multi_asset(universe, grid, args.n_paths, args.seed)

    out = Path(args.out) if args.out else Path(f"paths_{assets[0]}.bin")
    for a in assets:
        target = out if len(assets) == 1 else out.with_name(
            f"{out.stem}_{a}{out.suffix}"
        )
        target.parent.mkdir(parents=True, exist_ok=True)
        save_paths(paths[a], target)
        if args.csv:
            paths_to_csv(paths[a], target.with_suffix(".csv"))
        print(f"{a}: paths written to {target}")
        curve = bundle.curves.get(a)
        model = models[a]
        if curve is None:
            print(f"{a}: no curve in bundle; skipping martingale summary")
            continue
        ref_t = float(model.schedule.futures_expiries[-1])
        if ref_t < horizon:
            return _fail(
                f"horizon {horizon} beyond last contract expiry {ref_t}", 1
            )
        prices = curve_paths(model, curve, paths[a], [ref_t])[:, :, 0]
        f0 = curve.price(ref_t)
        print(f"{a}: reference contract T={ref_t!r} F0={f0!r}")
        print("date,mean_ratio,mean_z,logvar_ratio,logvar_z")
        for k, t in enumerate(grid.dates):
            col = prices[:, k]
            mean = float(col.mean())
            se = float(col.std(ddof=1)) / np.sqrt(col.size)
            lv = float(np.log(col).var(ddof=1))
            qv = quadratic_variation(model, ref_t, float(t))
            lv_se = lv * np.sqrt(2.0 / (col.size - 1))
            print(
                f"{float(t)!r},{mean / f0!r},{abs(mean - f0) / se:.3f},"
                f"{lv / qv!r},{abs(lv - qv) / lv_se:.3f}"
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvekit",
        description="Multi-factor commodity forward-curve toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--bundle", required=True, help="data bundle directory")
    common.add_argument("--asset", required=True, help="asset label")
    common.add_argument("--out", help="output file path")

    modeflags = argparse.ArgumentParser(add_help=False)
    modeflags.add_argument(
        "--mode", choices=["nonseasonal", "seasonal", "hybrid"],
        help="calibration mode (default: dispatch on the spec's epsilon)",
    )
    modeflags.add_argument(
        "--epsilon", type=float,
        help="non-fungibility parameter for hybrid mode",
    )

    p = sub.add_parser("calibrate", parents=[common, modeflags],
                       help="solve alpha/lambda against the vanilla strip")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("price", parents=[common, modeflags],
                       help="price an instrument file")
    p.add_argument("--instruments", required=True)
    p.add_argument("--model", help="calibrated model JSON")
    p.add_argument("--calibrate", action="store_true",
                   help="calibrate from the bundle strip before pricing")
    p.add_argument("--smile", action="store_true",
                   help="apply the quick-delta smile adjustment")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("sensitivity", parents=[common, modeflags],
                       help="parameter-bump table for a swaption ladder")
    p.add_argument("--instruments", required=True)
    p.add_argument("--mean-rev-bump", type=float, default=0.1)
    p.add_argument("--vol-ratio-bump", type=float, default=0.1)
    p.add_argument("--corr-bump", type=float, default=0.1)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("compare", parents=[common],
                       help="compare model prices against quotes")
    p.add_argument("--prices", required=True,
                   help="CSV with label and price columns")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("history", parents=[common],
                       help="PCA, two-factor fit and statistics from history")
    p.add_argument("--half-life", type=float, default=DEFAULT_HALF_LIFE)
    p.add_argument("--continuous-tenors", action="store_true",
                   help="use the T = t + n/12 nearby approximation")
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate factor paths and a martingale summary")
    p.add_argument("--model", help="calibrated model JSON")
    p.add_argument("--calibrate", action="store_true")
    p.add_argument("--mode", choices=["nonseasonal", "seasonal", "hybrid"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--assets", help="comma-separated assets for multi-asset")
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--csv", action="store_true",
                   help="also write a CSV path export")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _IO_ERRORS as exc:
        return _fail(str(exc), 2)
    except CurveKitError as exc:
        return _fail(str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
