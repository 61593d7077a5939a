"""Data-bundle ingestion and model persistence.

A bundle is a directory tree of per-asset files::

    curves/<asset>.csv      expiry_date,price
    vols/<asset>.csv        label,option_expiry,futures_expiry,atm_vol
                            (optionally qd10,qd25,qd50,qd75,qd90)
    schedule/<asset>.csv    label,option_expiry,futures_expiry
    history/<asset>.csv     date,nearby_1,...,nearby_K
    quotes/<asset>.csv      label,quote_date,ref_swap,bid,offer,consensus
    spec/<asset>.json       static factor parameters
    fx/<pair>.json          FX leg for quanto pricing
    cross/<a>__<b>.json     cross-asset factor correlations
    model/<asset>.json      calibrated model (also written by the CLI)

Every file carries an ``as_of`` field (a ``# as_of:`` comment line in
CSVs); dates are ISO-8601 and converted to ACT/365 year fractions from
that date on load.  Malformed or invariant-violating rows are collected
as row-level diagnostics and reported together.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration_online import SmileQuote, VanillaVolStrip, VolQuote, VolSurface
from .errors import BundleLoadError, CurveKitError, ModelVersionError
from .factor_model import CalibratedModel, FactorSpec
from .pricing import FxSpec, Quote, QuoteSet
from .termstructure import (
    ContractEntry,
    ContractSchedule,
    ForwardCurve,
    StepFunction,
    year_fraction,
)

MODEL_FORMAT = "curvekit-model"
MODEL_VERSION = 1

_QD_COLUMNS = (("qd10", 0.10), ("qd25", 0.25), ("qd50", 0.50),
               ("qd75", 0.75), ("qd90", 0.90))


@dataclass
class Diagnostic:
    file: str
    line: int | None
    column: str | None
    message: str

    def __str__(self):
        where = self.file
        if self.line is not None:
            where += f":{self.line}"
        if self.column is not None:
            where += f" (column {self.column})"
        return f"{where}: {self.message}"


class _Collector:
    def __init__(self):
        self.diagnostics: list[Diagnostic] = []
        self.warnings: list[str] = []

    def error(self, file, line, column, message):
        self.diagnostics.append(Diagnostic(str(file), line, column, message))

    def warn(self, message):
        self.warnings.append(message)


@dataclass(frozen=True)
class HistoryPanel:
    """Raw constant-nearby settlement prices, one row per date."""

    dates: tuple
    tenor_indices: tuple[int, ...]
    prices: np.ndarray


@dataclass
class DataBundle:
    root: Path
    as_of: dt.date | None = None
    curves: dict = field(default_factory=dict)
    strips: dict = field(default_factory=dict)
    surfaces: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    quotes: dict = field(default_factory=dict)
    specs: dict = field(default_factory=dict)
    fx: dict = field(default_factory=dict)
    cross: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _read_csv(path: Path):
    """Rows plus the as_of date parsed from leading comment lines."""
    as_of = None
    rows = []
    with open(path, newline="") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                body = line.lstrip()[1:].strip()
                if body.lower().startswith("as_of:"):
                    as_of = body.split(":", 1)[1].strip()
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = [c.strip() for c in cells]
                continue
            rows.append((lineno, dict(zip(header, (c.strip() for c in cells)))))
    return as_of, header or [], rows


def _parse_date(text, path, line, column, col):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        col.error(path, line, column, f"invalid ISO date {text!r}")
        return None


def _parse_float(text, path, line, column, col, optional=False):
    if optional and text == "":
        return None
    try:
        return float(text)
    except ValueError:
        col.error(path, line, column, f"invalid number {text!r}")
        return None


def _file_as_of(as_of_text, path, col):
    if as_of_text is None:
        col.error(path, None, None, "missing '# as_of: YYYY-MM-DD' line")
        return None
    return _parse_date(as_of_text, path, None, "as_of", col)


def load_curve_csv(path, col: _Collector):
    as_of_text, header, rows = _read_csv(Path(path))
    as_of = _file_as_of(as_of_text, path, col)
    if set(header) < {"expiry_date", "price"}:
        col.error(path, None, None, "expected header expiry_date,price")
        return None, None
    expiries, prices = [], []
    for lineno, row in rows:
        d = _parse_date(row.get("expiry_date", ""), path, lineno, "expiry_date", col)
        p = _parse_float(row.get("price", ""), path, lineno, "price", col)
        if d is None or p is None or as_of is None:
            continue
        if p <= 0.0:
            col.error(path, lineno, "price", f"price must be positive, got {p}")
            continue
        expiries.append(year_fraction(as_of, d) if d >= as_of else -1.0)
        if expiries[-1] < 0.0:
            col.error(path, lineno, "expiry_date", "expiry before as_of date")
            expiries.pop()
            continue
        prices.append(p)
    if not expiries or as_of is None:
        return None, as_of
    try:
        return ForwardCurve(np.array(expiries), np.array(prices), as_of), as_of
    except CurveKitError as exc:
        col.error(path, None, None, str(exc))
        return None, as_of


def load_schedule_csv(path, col: _Collector):
    as_of_text, header, rows = _read_csv(Path(path))
    as_of = _file_as_of(as_of_text, path, col)
    needed = {"label", "option_expiry", "futures_expiry"}
    if set(header) < needed:
        col.error(path, None, None,
                  "expected header label,option_expiry,futures_expiry")
        return None, None
    entries = []
    for lineno, row in rows:
        t = _parse_date(row.get("option_expiry", ""), path, lineno,
                        "option_expiry", col)
        big_t = _parse_date(row.get("futures_expiry", ""), path, lineno,
                            "futures_expiry", col)
        if t is None or big_t is None or as_of is None:
            continue
        try:
            entries.append(ContractEntry(
                row.get("label", ""),
                year_fraction(as_of, t),
                year_fraction(as_of, big_t),
            ))
        except CurveKitError as exc:
            col.error(path, lineno, None, str(exc))
    if not entries or as_of is None:
        return None, as_of
    try:
        return ContractSchedule(tuple(entries)), as_of
    except CurveKitError as exc:
        col.error(path, None, None, str(exc))
        return None, as_of


def load_vols_csv(path, col: _Collector):
    """Returns (strip, surface, as_of); surface is None without QD columns."""
    as_of_text, header, rows = _read_csv(Path(path))
    as_of = _file_as_of(as_of_text, path, col)
    needed = {"label", "option_expiry", "futures_expiry", "atm_vol"}
    if set(header) < needed:
        col.error(path, None, None,
                  "expected header label,option_expiry,futures_expiry,atm_vol")
        return None, None, None
    has_smile = any(name in header for name, _ in _QD_COLUMNS)
    vol_quotes, smile_quotes = [], []
    for lineno, row in rows:
        t = _parse_date(row.get("option_expiry", ""), path, lineno,
                        "option_expiry", col)
        big_t = _parse_date(row.get("futures_expiry", ""), path, lineno,
                            "futures_expiry", col)
        atm = _parse_float(row.get("atm_vol", ""), path, lineno, "atm_vol", col)
        if None in (t, big_t, atm) or as_of is None:
            continue
        label = row.get("label", "")
        try:
            tf = year_fraction(as_of, t)
            bigf = year_fraction(as_of, big_t)
            vol_quotes.append(VolQuote(label, tf, bigf, atm))
            if has_smile:
                pillars = []
                for name, qd in _QD_COLUMNS:
                    v = _parse_float(row.get(name, ""), path, lineno, name,
                                     col, optional=True)
                    if v is not None:
                        pillars.append((qd, v))
                smile_quotes.append(
                    SmileQuote(label, tf, bigf, atm, tuple(pillars))
                )
        except CurveKitError as exc:
            col.error(path, lineno, None, str(exc))
    if not vol_quotes or as_of is None:
        return None, None, as_of
    try:
        strip = VanillaVolStrip(tuple(vol_quotes))
        surface = VolSurface(tuple(smile_quotes)) if has_smile else None
        return strip, surface, as_of
    except CurveKitError as exc:
        col.error(path, None, None, str(exc))
        return None, None, as_of


def load_history_csv(path, col: _Collector):
    as_of_text, header, rows = _read_csv(Path(path))
    as_of = _file_as_of(as_of_text, path, col)
    nearby_cols = [h for h in header if h.startswith("nearby_")]
    if "date" not in header or not nearby_cols:
        col.error(path, None, None, "expected header date,nearby_1,...")
        return None, as_of
    try:
        indices = tuple(int(h.split("_", 1)[1]) for h in nearby_cols)
    except ValueError:
        col.error(path, None, None, "nearby column suffixes must be integers")
        return None, as_of
    dates, matrix = [], []
    for lineno, row in rows:
        d = _parse_date(row.get("date", ""), path, lineno, "date", col)
        vals = []
        ok = d is not None
        for h in nearby_cols:
            v = _parse_float(row.get(h, ""), path, lineno, h, col)
            if v is None or v <= 0.0:
                if v is not None:
                    col.error(path, lineno, h, f"price must be positive, got {v}")
                ok = False
            else:
                vals.append(v)
        if ok:
            dates.append(d)
            matrix.append(vals)
    if not dates:
        return None, as_of
    return HistoryPanel(tuple(dates), indices, np.array(matrix)), as_of


def load_quotes_csv(path, col: _Collector):
    as_of_text, header, rows = _read_csv(Path(path))
    as_of = _file_as_of(as_of_text, path, col)
    if "label" not in header:
        col.error(path, None, None, "expected at least a label column")
        return None, as_of
    quotes = []
    for lineno, row in rows:
        try:
            quotes.append(Quote(
                label=row.get("label", ""),
                quote_date=row.get("quote_date", ""),
                ref_swap=_parse_float(row.get("ref_swap", ""), path, lineno,
                                      "ref_swap", col, optional=True),
                bid=_parse_float(row.get("bid", ""), path, lineno, "bid",
                                 col, optional=True),
                offer=_parse_float(row.get("offer", ""), path, lineno,
                                   "offer", col, optional=True),
                consensus=_parse_float(row.get("consensus", ""), path, lineno,
                                       "consensus", col, optional=True),
            ))
        except CurveKitError as exc:
            col.error(path, lineno, None, str(exc))
    return QuoteSet(tuple(quotes)), as_of


def _load_json(path, col: _Collector):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        col.error(path, None, None, f"cannot parse JSON: {exc}")
        return None


def spec_from_dict(doc: dict) -> FactorSpec:
    return FactorSpec(
        beta=np.asarray(doc["beta"], dtype=float),
        p_const=np.asarray(doc["p_const"], dtype=float),
        q_const=np.asarray(doc["q_const"], dtype=float),
        rho=np.asarray(doc["rho"], dtype=float),
        epsilon=float(doc.get("epsilon", 0.0)),
    )


def spec_to_dict(spec: FactorSpec) -> dict:
    return {
        "beta": spec.beta.tolist(),
        "p_const": spec.p_const.tolist(),
        "q_const": spec.q_const.tolist(),
        "rho": spec.rho.tolist(),
        "epsilon": spec.epsilon,
    }


def _step_from_obj(obj) -> StepFunction:
    if isinstance(obj, dict):
        return StepFunction(np.asarray(obj["breaks"], dtype=float),
                            np.asarray(obj["values"], dtype=float))
    return StepFunction.constant(float(obj))


def _step_to_obj(step: StepFunction):
    if step.breaks.size == 1 and step.breaks[0] == 0.0:
        return float(step.values[0])
    return {"breaks": step.breaks.tolist(), "values": step.values.tolist()}


def fx_from_dict(doc: dict, factor_rho: np.ndarray) -> FxSpec:
    return FxSpec(
        spot_fx=float(doc["spot_fx"]),
        sigma_x=_step_from_obj(doc["sigma_x"]),
        r_d=_step_from_obj(doc["r_d"]),
        r_f=_step_from_obj(doc["r_f"]),
        rho_x=np.asarray(doc["rho_x"], dtype=float),
        factor_rho=factor_rho,
    )


def fx_to_dict(pair_asset: str, fx: FxSpec, as_of=None) -> dict:
    doc = {
        "asset": pair_asset,
        "spot_fx": fx.spot_fx,
        "sigma_x": _step_to_obj(fx.sigma_x),
        "r_d": _step_to_obj(fx.r_d),
        "r_f": _step_to_obj(fx.r_f),
        "rho_x": fx.rho_x.tolist(),
    }
    if as_of is not None:
        doc["as_of"] = str(as_of)
    return doc


def model_to_dict(m: CalibratedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": spec_to_dict(m.spec),
        "schedule": [
            {
                "label": e.label,
                "option_expiry": e.option_expiry,
                "futures_expiry": e.futures_expiry,
            }
            for e in m.schedule
        ],
        "alpha_knots": m.alpha_knots.tolist(),
        "lambda_samples": m.lambda_samples.tolist(),
    }


def model_from_dict(doc: dict) -> CalibratedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelVersionError(
            f"not a {MODEL_FORMAT} document (format={doc.get('format')!r})"
        )
    if doc.get("version") != MODEL_VERSION:
        raise ModelVersionError(
            f"model version {doc.get('version')!r} is incompatible with "
            f"version {MODEL_VERSION}"
        )
    schedule = ContractSchedule(tuple(
        ContractEntry(e["label"], float(e["option_expiry"]),
                      float(e["futures_expiry"]))
        for e in doc["schedule"]
    ))
    return CalibratedModel(
        spec=spec_from_dict(doc["spec"]),
        schedule=schedule,
        alpha_knots=np.asarray(doc["alpha_knots"], dtype=float),
        lambda_samples=np.asarray(doc["lambda_samples"], dtype=float),
    )


def _dump_json(doc: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def save_model(m: CalibratedModel, path) -> None:
    """Canonical JSON serialization; floats keep full round-trip precision."""
    _dump_json(model_to_dict(m), path)


def load_model(path) -> CalibratedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


_REQUIRED_LAYOUT = (
    "curves/<asset>.csv, vols/<asset>.csv, schedule/<asset>.csv, "
    "history/<asset>.csv, quotes/<asset>.csv, spec/<asset>.json, "
    "fx/<pair>.json, cross/<a>__<b>.json, model/<asset>.json"
)


def load_bundle(root) -> DataBundle:
    """Load and validate every recognized file under ``root``.

    Raises BundleLoadError with row-level diagnostics if anything is
    malformed; per-file as_of mismatches are warnings on the bundle.
    """
    root = Path(root)
    if not root.is_dir():
        raise BundleLoadError(f"bundle root {root} is not a directory")
    col = _Collector()
    bundle = DataBundle(root=root)
    as_ofs = {}

    def note_as_of(name, as_of):
        if as_of is not None:
            as_ofs[name] = as_of

    for path in sorted(root.glob("curves/*.csv")):
        curve, as_of = load_curve_csv(path, col)
        if curve is not None:
            bundle.curves[path.stem] = curve
        note_as_of(str(path), as_of)
    for path in sorted(root.glob("schedule/*.csv")):
        sched, as_of = load_schedule_csv(path, col)
        if sched is not None:
            bundle.schedules[path.stem] = sched
        note_as_of(str(path), as_of)
    for path in sorted(root.glob("vols/*.csv")):
        strip, surface, as_of = load_vols_csv(path, col)
        if strip is not None:
            bundle.strips[path.stem] = strip
        if surface is not None:
            bundle.surfaces[path.stem] = surface
        note_as_of(str(path), as_of)
    for path in sorted(root.glob("history/*.csv")):
        hist, as_of = load_history_csv(path, col)
        if hist is not None:
            bundle.histories[path.stem] = hist
        note_as_of(str(path), as_of)
    for path in sorted(root.glob("quotes/*.csv")):
        quotes, as_of = load_quotes_csv(path, col)
        if quotes is not None:
            bundle.quotes[path.stem] = quotes
        note_as_of(str(path), as_of)
    for path in sorted(root.glob("spec/*.json")):
        doc = _load_json(path, col)
        if doc is None:
            continue
        try:
            bundle.specs[path.stem] = spec_from_dict(doc)
        except (CurveKitError, KeyError, TypeError, ValueError) as exc:
            col.error(path, None, None, f"invalid factor spec: {exc}")
    for path in sorted(root.glob("model/*.json")):
        doc = _load_json(path, col)
        if doc is None:
            continue
        try:
            bundle.models[path.stem] = model_from_dict(doc)
        except (CurveKitError, KeyError, TypeError, ValueError) as exc:
            col.error(path, None, None, f"invalid model: {exc}")
    for path in sorted(root.glob("fx/*.json")):
        doc = _load_json(path, col)
        if doc is None:
            continue
        asset = doc.get("asset")
        spec = bundle.specs.get(asset)
        if spec is None and asset in bundle.models:
            spec = bundle.models[asset].spec
        if spec is None:
            col.error(path, None, None,
                      f"fx file references asset {asset!r} with no spec")
            continue
        try:
            bundle.fx[path.stem] = (asset, fx_from_dict(doc, spec.rho))
        except (CurveKitError, KeyError, TypeError, ValueError) as exc:
            col.error(path, None, None, f"invalid fx spec: {exc}")
    for path in sorted(root.glob("cross/*.json")):
        doc = _load_json(path, col)
        if doc is None:
            continue
        try:
            a, b = doc["assets"]
            bundle.cross[(a, b)] = np.asarray(doc["matrix"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            col.error(path, None, None, f"invalid cross correlation: {exc}")

    if col.diagnostics:
        raise BundleLoadError(
            f"bundle at {root} has invalid files", col.diagnostics
        )
    if not any((bundle.curves, bundle.strips, bundle.schedules,
                bundle.histories, bundle.quotes, bundle.specs, bundle.models)):
        raise BundleLoadError(
            f"bundle at {root} is empty; expected files under "
            f"{_REQUIRED_LAYOUT}"
        )
    distinct = sorted({str(d) for d in as_ofs.values()})
    if len(distinct) > 1:
        col.warn(f"mixed as_of dates across bundle: {', '.join(distinct)}")
    bundle.warnings = col.warnings
    if as_ofs:
        bundle.as_of = sorted(as_ofs.values())[-1]
    return bundle


def write_csv(path, header, rows, as_of=None) -> None:
    """Deterministic CSV writer used by fixtures and CLI reports."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if as_of is not None:
            fh.write(f"# as_of: {as_of}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(c) for c in row])


def _format_cell(value):
    if isinstance(value, float):
        return repr(float(value))
    return value
