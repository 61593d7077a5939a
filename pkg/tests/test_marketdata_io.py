import json

import numpy as np
import pytest

import _fixtures as fx
from curvekit.calibration_online import calibrate_nonseasonal
from curvekit.errors import BundleLoadError, ModelVersionError
from curvekit.marketdata_io import (
    load_bundle,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from curvekit.pricing import OptionSpec, SamplingSchedule, swaption_price


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    fx.write_bundle(root, history_days=60)
    return root


def test_sample_bundle_loads_cleanly(bundle_dir):
    bundle = load_bundle(bundle_dir)
    assert "wti" in bundle.curves
    assert "wti" in bundle.strips
    assert "wti" in bundle.surfaces
    assert "wti" in bundle.schedules
    assert "wti" in bundle.histories
    assert "wti" in bundle.quotes
    assert "wti" in bundle.specs
    assert "eur" in bundle.fx
    assert ("wti", "brent") in bundle.cross
    assert bundle.warnings == []


def test_bundle_year_fractions_consistent(bundle_dir):
    bundle = load_bundle(bundle_dir)
    sched = bundle.schedules["wti"]
    strip = bundle.strips["wti"]
    assert len(sched) == len(strip)
    for entry, quote in zip(sched, strip):
        assert entry.label == quote.label
        assert entry.option_expiry == quote.option_expiry
        assert entry.futures_expiry == quote.futures_expiry


def test_empty_bundle_names_required_files(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(BundleLoadError) as err:
        load_bundle(tmp_path / "empty")
    assert "curves/<asset>.csv" in str(err.value)


def test_negative_price_is_row_level_rejection(tmp_path):
    root = tmp_path / "b"
    (root / "curves").mkdir(parents=True)
    (root / "curves" / "x.csv").write_text(
        "# as_of: 2014-01-02\nexpiry_date,price\n"
        "2014-02-20,95.0\n2014-03-20,-1.0\n"
    )
    with pytest.raises(BundleLoadError) as err:
        load_bundle(root)
    message = str(err.value)
    assert "x.csv:4" in message
    assert "price" in message
    assert "positive" in message


def test_malformed_row_reports_file_line_column(tmp_path):
    root = tmp_path / "b"
    (root / "curves").mkdir(parents=True)
    (root / "curves" / "x.csv").write_text(
        "# as_of: 2014-01-02\nexpiry_date,price\nnot-a-date,95.0\n"
    )
    with pytest.raises(BundleLoadError) as err:
        load_bundle(root)
    message = str(err.value)
    assert "x.csv:3" in message
    assert "expiry_date" in message


def test_missing_as_of_is_an_error(tmp_path):
    root = tmp_path / "b"
    (root / "curves").mkdir(parents=True)
    (root / "curves" / "x.csv").write_text(
        "expiry_date,price\n2014-02-20,95.0\n"
    )
    with pytest.raises(BundleLoadError) as err:
        load_bundle(root)
    assert "as_of" in str(err.value)


def test_mixed_as_of_is_warning_not_error(tmp_path):
    root = tmp_path / "b"
    (root / "curves").mkdir(parents=True)
    (root / "curves" / "x.csv").write_text(
        "# as_of: 2014-01-02\nexpiry_date,price\n2014-02-20,95.0\n"
    )
    (root / "curves" / "y.csv").write_text(
        "# as_of: 2014-01-03\nexpiry_date,price\n2014-02-20,96.0\n"
    )
    bundle = load_bundle(root)
    assert any("mixed as_of" in w for w in bundle.warnings)


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def calibrated(monthly_strip, wti_spec):
    return calibrate_nonseasonal(wti_spec, monthly_strip)


def test_model_roundtrip_value_exact(tmp_path, calibrated):
    path = tmp_path / "model.json"
    save_model(calibrated, path)
    back = load_model(path)
    assert np.array_equal(back.alpha_knots, calibrated.alpha_knots)
    assert np.array_equal(back.lambda_samples, calibrated.lambda_samples)
    assert np.array_equal(back.spec.beta, calibrated.spec.beta)
    assert np.array_equal(back.spec.rho, calibrated.spec.rho)
    assert back.schedule.entries == calibrated.schedule.entries


def test_model_save_load_save_byte_identical(tmp_path, calibrated):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(calibrated, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_roundtrip_preserves_prices(tmp_path, calibrated, flat_curve):
    sched = SamplingSchedule.swaption_strip(
        1.0 - 1 / 24, [(k + 13) / 12 for k in range(12)]
    )
    opt = OptionSpec("swaption", 88.0, "call", 1.0 - 1 / 24, sched)
    before = swaption_price(calibrated, flat_curve, opt)
    path = tmp_path / "model.json"
    save_model(calibrated, path)
    after = swaption_price(load_model(path), flat_curve, opt)
    assert before == after


def test_model_version_mismatch(tmp_path, calibrated):
    doc = model_to_dict(calibrated)
    doc["version"] = 99
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelVersionError):
        load_model(path)
    with pytest.raises(ModelVersionError):
        model_from_dict({"format": "something-else"})


def test_hand_edited_invalid_alpha_rejected(tmp_path, calibrated):
    doc = model_to_dict(calibrated)
    doc["alpha_knots"][3] = -0.2
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(Exception) as err:
        load_model(path)
    assert "alpha" in str(err.value)
