"""Stochastic simulator and analysis toolkit for a cavity-enhanced type-II
down-conversion photon-pair source and its detection electronics."""

__version__ = "0.1.0"

from .params import (  # noqa: E402
    SPEED_OF_LIGHT,
    ConfigError,
    DerivedQuantities,
    SourceConfig,
    SpectralMetrics,
    bandwidth_to_wavelength,
    conditional_efficiency,
    derive_quantities,
    phase_matching_bandwidth,
    spectral_metrics,
)
from .source import MeasurementBasis, PairBatch, PairRecord, PhotonEvents  # noqa: E402
from .detection import TimeTagStream  # noqa: E402
from .simulation import simulate_stream  # noqa: E402
from .analysis import (  # noqa: E402
    Histogram,
    HomScanResult,
    accidental_rate,
    build_histogram,
    comb_contrast,
    count_coincidences,
    fit_triangle,
    run_hom_scan,
    visibility,
)
