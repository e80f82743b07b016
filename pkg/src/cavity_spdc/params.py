"""Source parameters and closed-form derived quantities.

All values are SI internally: lengths in m, times in s, frequencies in Hz,
powers in W.  Unit conversion happens only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

SPEED_OF_LIGHT = 299_792_458.0  # m/s

_PROBABILITY_FIELDS = (
    "escape_efficiency",
    "fiber_coupling_efficiency",
    "optics_transmission",
    "detector_quantum_efficiency",
    "hv_spectral_overlap",
    "chopper_duty_cycle",
)
_POSITIVE_FIELDS = (
    "crystal_length",
    "group_delay_mismatch",
    "effective_cavity_length",
    "finesse",
    "chopper_frequency",
    "coincidence_window",
    "tagger_resolution",
    "center_wavelength",
)
_NONNEGATIVE_FIELDS = (
    "pump_power",
    "pair_generation_rate_per_mw",
    "dark_count_rate",
    "dead_time",
    "timing_jitter",
)


class ConfigError(ValueError):
    """Invalid parameter value; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def phase_matching_bandwidth(crystal_length: float, group_delay_mismatch: float) -> float:
    """FWHM phase-matching bandwidth 1/(|k_s' - k_i'| L) in Hz."""
    if not crystal_length > 0:
        raise ConfigError("crystal_length", f"must be > 0, got {crystal_length!r}")
    if not group_delay_mismatch > 0:
        raise ConfigError("group_delay_mismatch", f"must be > 0, got {group_delay_mismatch!r}")
    return 1.0 / (group_delay_mismatch * crystal_length)


def bandwidth_to_wavelength(dnu: float, lambda0: float) -> float:
    """Convert a frequency width to a wavelength width: lambda0**2 * dnu / c."""
    if dnu < 0 or not math.isfinite(dnu):
        raise ConfigError("dnu", f"must be finite and >= 0, got {dnu!r}")
    if not lambda0 > 0:
        raise ConfigError("lambda0", f"must be > 0, got {lambda0!r}")
    return lambda0**2 * dnu / SPEED_OF_LIGHT


def _mismatch_for_bandwidth(bandwidth: float, crystal_length: float) -> float:
    return 1.0 / (bandwidth * crystal_length)


@dataclass(frozen=True)
class SourceConfig:
    crystal_length: float = 0.020
    # Only the product with crystal_length is known; chosen to give 148 GHz.
    group_delay_mismatch: float = field(default_factory=lambda: _mismatch_for_bandwidth(148e9, 0.020))
    effective_cavity_length: float = 0.610
    finesse: float = 70.0
    escape_efficiency: float = 0.82
    fiber_coupling_efficiency: float = 0.58
    optics_transmission: float = 0.90
    detector_quantum_efficiency: float = 0.49
    pump_power: float = 200e-6
    pair_generation_rate_per_mw: float = 3.4e6
    hv_spectral_overlap: float = 0.98
    chopper_frequency: float = 80.0
    chopper_duty_cycle: float = 0.24
    coincidence_window: float = 256e-9
    tagger_resolution: float = 1e-9
    center_wavelength: float = 795e-9
    path_difference_center: float = 0.0
    interfere_across_roundtrips: bool = True
    # detector imperfections, all off by default
    dark_count_rate: float = 0.0
    dead_time: float = 0.0
    timing_jitter: float = 0.0

    def __post_init__(self):
        for name in _PROBABILITY_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ConfigError(name, f"probability must lie in [0, 1], got {value!r}")
        for name in _POSITIVE_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be finite and > 0, got {value!r}")
        for name in _NONNEGATIVE_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(name, f"must be finite and >= 0, got {value!r}")
        if not math.isfinite(self.path_difference_center):
            raise ConfigError("path_difference_center", "must be finite")
        if self.coincidence_window < self.tagger_resolution:
            raise ConfigError(
                "coincidence_window",
                f"must be >= tagger_resolution ({self.coincidence_window!r} < {self.tagger_resolution!r})",
            )
        if self.finesse < 2 * math.pi:
            raise ConfigError("finesse", f"must be >= 2*pi so that 2*pi/finesse <= 1, got {self.finesse!r}")
        if self.chopper_duty_cycle == 0:
            raise ConfigError("chopper_duty_cycle", "must be > 0")

    @classmethod
    def reference(cls) -> "SourceConfig":
        return cls()

    def replace(self, **changes) -> "SourceConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def pump_power_mw(self) -> float:
        return self.pump_power * 1e3

    @property
    def pair_rate(self) -> float:
        """Pairs/s generated inside the cavity at the configured pump power."""
        return self.pair_generation_rate_per_mw * self.pump_power_mw

    @property
    def walkoff_width(self) -> float:
        """Total single-pass temporal walk-off L * |k_s' - k_i'| in s."""
        return self.crystal_length * self.group_delay_mismatch

    @property
    def roundtrip_termination_probability(self) -> float:
        return 2 * math.pi / self.finesse

    @property
    def detection_survival(self) -> float:
        """Per-photon survival after the cavity (coupling, optics, detector)."""
        return self.fiber_coupling_efficiency * self.optics_transmission * self.detector_quantum_efficiency


@dataclass(frozen=True)
class DerivedQuantities:
    fsr: float
    cavity_linewidth: float
    round_trip_time: float
    ring_down_time: float
    phase_matching_bandwidth: float
    bandwidth_nm: float  # stored in m despite the name; see bandwidth_to_wavelength
    zeta: float
    hom_base_width: float
    mode_count_fwhm: float
    degenerate_mode_fraction: float
    conditional_detection_efficiency: float
    roundtrip_termination_probability: float
    comb_envelope_decay: float

    def to_dict(self) -> dict:
        return asdict(self)


def conditional_efficiency(config: SourceConfig) -> float:
    return (
        config.detector_quantum_efficiency
        * config.fiber_coupling_efficiency
        * config.escape_efficiency
        * config.optics_transmission
    )


def derive_quantities(config: SourceConfig) -> DerivedQuantities:
    fsr = SPEED_OF_LIGHT / config.effective_cavity_length
    linewidth = fsr / config.finesse
    round_trip = 1.0 / fsr
    bandwidth = phase_matching_bandwidth(config.crystal_length, config.group_delay_mismatch)
    zeta = 4.0 / (config.crystal_length * config.group_delay_mismatch)
    modes = bandwidth / fsr
    p_term = config.roundtrip_termination_probability
    if p_term < 1.0:
        envelope = round_trip / -math.log1p(-p_term)
    else:
        envelope = 0.0
    return DerivedQuantities(
        fsr=fsr,
        cavity_linewidth=linewidth,
        round_trip_time=round_trip,
        ring_down_time=1.0 / (2 * math.pi * linewidth),
        phase_matching_bandwidth=bandwidth,
        bandwidth_nm=bandwidth_to_wavelength(bandwidth, config.center_wavelength),
        zeta=zeta,
        hom_base_width=4.0 * SPEED_OF_LIGHT / zeta,
        mode_count_fwhm=modes,
        degenerate_mode_fraction=1.0 / modes,
        conditional_detection_efficiency=conditional_efficiency(config),
        roundtrip_termination_probability=p_term,
        comb_envelope_decay=envelope,
    )


@dataclass(frozen=True)
class SpectralMetrics:
    pairs_per_s_mw: float
    pairs_per_s_mw_nm: float
    degenerate_pairs_per_s_mw_mhz: float
    true_pairs_per_s_mw: float

    def to_dict(self) -> dict:
        return asdict(self)


def spectral_metrics(corrected_pair_rate: float, config: SourceConfig, dq: DerivedQuantities | None = None) -> SpectralMetrics:
    """Brightness figures from a detected, accidental-corrected pair rate (pairs/s)."""
    if not config.pump_power > 0:
        raise ConfigError("pump_power", "must be > 0 to normalise brightness")
    if dq is None:
        dq = derive_quantities(config)
    per_mw = corrected_pair_rate / config.pump_power_mw
    eff = dq.conditional_detection_efficiency
    return SpectralMetrics(
        pairs_per_s_mw=per_mw,
        pairs_per_s_mw_nm=per_mw / (dq.bandwidth_nm * 1e9),
        degenerate_pairs_per_s_mw_mhz=per_mw * dq.degenerate_mode_fraction / (dq.cavity_linewidth / 1e6),
        true_pairs_per_s_mw=per_mw / eff**2 if eff > 0 else math.inf,
    )
