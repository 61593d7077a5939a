"""curvekit: multi-factor commodity forward-curve toolkit.

Calibration (online bootstrapping, seasonal and hybrid; offline PCA and
factor extraction), semi-analytic pricing of vanilla/Asian/swaption and
quanto options with quick-delta smile adjustment, and exact-discretization
Monte Carlo, all driven by the ``curvekit`` CLI.
"""

from .calibration_offline import (
    FactorSeries,
    ModelStatistics,
    PcaResult,
    ReturnPanel,
    TwoFactorFit,
    exponential_weights,
    extract_factor_series,
    fit_two_factor_to_pca,
    instantaneous_covariance,
    model_implied_loadings,
    model_statistics,
    realized_swap_futures_ratio,
    relative_value_target,
    synthetic_nearby_panel,
    weighted_pca,
)
from .calibration_online import (
    SmileQuote,
    VanillaVolStrip,
    VolQuote,
    VolSurface,
    calibrate,
    calibrate_hybrid,
    calibrate_nonseasonal,
    calibrate_seasonal,
    implied_vanilla_vol,
    strip_roundtrip_errors,
)
from .errors import (
    BundleLoadError,
    CurveKitError,
    DegenerateDataError,
    DegenerateExpiryError,
    DegenerateSpecError,
    DomainError,
    InfeasibleCalibrationError,
    MissingDataError,
    ModelVersionError,
    NotPositiveSemiDefiniteError,
    OrderingError,
    ShapeError,
    SingularInversionError,
    UnsupportedSpecError,
)
from .factor_model import (
    CalibratedModel,
    CrossCorrelation,
    FactorSpec,
    FactorState,
    cross_asset_log_covariance,
    flat_model,
    log_covariance,
    quadratic_variation,
    reconstruct_futures,
    repair_correlation,
    segment_integral,
    stacked_correlation,
)
from .marketdata_io import (
    DataBundle,
    load_bundle,
    load_model,
    save_model,
)
from .pricing import (
    ComparisonReport,
    FxSpec,
    OptionSpec,
    Quote,
    QuoteSet,
    SamplePoint,
    SamplingSchedule,
    SmileAdjustedResult,
    asian_price,
    average_log_variance,
    black_price,
    compare_quotes,
    price_option,
    quanto_average_log_variance,
    quanto_price,
    quick_delta,
    smile_adjusted_price,
    strike_from_quick_delta,
    swaption_price,
    vanilla_price,
)
from .simulation import (
    AssetUniverse,
    PathSet,
    SimGrid,
    cholesky_psd,
    curve_paths,
    load_paths,
    save_paths,
    simulate_factors,
    simulate_multi_asset,
    step_covariance,
)
from .termstructure import (
    ContractEntry,
    ContractSchedule,
    ForwardCurve,
    StepFunction,
    nearby_expiry,
    year_fraction,
)

__version__ = "0.1.0"
