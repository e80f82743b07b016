"""Load and dump ``SourceConfig`` from TOML files with unit-suffixed keys."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import warnings
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .params import SPEED_OF_LIGHT, ConfigError, SourceConfig

CONFIG_ENV = "CAVITY_SPDC_CONFIG"
REFERENCE_CONFIG = "reference"

# (section, key) -> (SourceConfig field, multiplier to SI, required)
SCHEMA: dict[tuple[str, str], tuple[str, float, bool]] = {
    ("crystal", "length_mm"): ("crystal_length", 1e-3, True),
    ("crystal", "group_delay_mismatch_ps_per_mm"): ("group_delay_mismatch", 1e-12 / 1e-3, False),
    ("cavity", "effective_length_mm"): ("effective_cavity_length", 1e-3, True),
    ("cavity", "finesse"): ("finesse", 1.0, True),
    ("cavity", "escape_efficiency"): ("escape_efficiency", 1.0, True),
    ("pump", "power_uw"): ("pump_power", 1e-6, True),
    ("pump", "pair_rate_per_s_mw"): ("pair_generation_rate_per_mw", 1.0, True),
    ("pump", "center_wavelength_nm"): ("center_wavelength", 1e-9, True),
    ("collection", "fiber_coupling_efficiency"): ("fiber_coupling_efficiency", 1.0, True),
    ("collection", "optics_transmission"): ("optics_transmission", 1.0, True),
    ("collection", "detector_quantum_efficiency"): ("detector_quantum_efficiency", 1.0, True),
    ("collection", "hv_spectral_overlap"): ("hv_spectral_overlap", 1.0, True),
    ("chopper", "frequency_hz"): ("chopper_frequency", 1.0, True),
    ("chopper", "duty_cycle"): ("chopper_duty_cycle", 1.0, True),
    ("electronics", "coincidence_window_ns"): ("coincidence_window", 1e-9, True),
    ("electronics", "tagger_resolution_ns"): ("tagger_resolution", 1e-9, True),
    ("interference", "path_difference_center_mm"): ("path_difference_center", 1e-3, False),
    ("interference", "across_roundtrips"): ("interfere_across_roundtrips", None, False),
    ("detector", "dark_count_rate_hz"): ("dark_count_rate", 1.0, False),
    ("detector", "dead_time_ns"): ("dead_time", 1e-9, False),
    ("detector", "timing_jitter_ps"): ("timing_jitter", 1e-12, False),
}


def _to_si(value: float, mult: float) -> float:
    # divide by the integer inverse where possible: 200 / 1e6 is exactly 2e-4, 200 * 1e-6 is not
    inv = round(1.0 / mult)
    return value / inv if mult < 1 and math.isclose(inv * mult, 1.0, rel_tol=1e-12) else value * mult


def _from_si(value: float, mult: float) -> float:
    inv = round(1.0 / mult)
    return value * inv if mult < 1 and math.isclose(inv * mult, 1.0, rel_tol=1e-12) else value / mult


EXTRA_KEYS = {("crystal", "phase_matching_bandwidth_ghz"), ("cavity", "fsr_mhz")}
FSR_TOLERANCE = 0.01


class ConfigFileError(ConfigError):
    def __init__(self, field: str, message: str, path=None, line: int | None = None):
        where = f"{path or '<config>'}" + (f":{line}" if line else "")
        super().__init__(field, f"{message} ({where})")
        self.line = line
        self.path = path


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _section_line(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.split("#", 1)[0].strip() == f"[{section}]":
            return i
    return None


def default_config_text() -> str:
    return resources.files("cavity_spdc").joinpath("data/reference.toml").read_text()


def resolve_config_path(path: str | os.PathLike | None) -> str:
    if path is None:
        path = os.environ.get(CONFIG_ENV, REFERENCE_CONFIG)
    return str(path)


def read_config_text(path: str | os.PathLike | None) -> tuple[str, str]:
    path = resolve_config_path(path)
    if path == REFERENCE_CONFIG:
        return default_config_text(), REFERENCE_CONFIG
    try:
        return Path(path).read_text(), path
    except OSError as exc:
        raise ConfigFileError("config", f"cannot read config file: {exc.strerror}", path) from None


def parse_config(text: str, path: str = "<config>") -> SourceConfig:
    """Parse TOML text into a validated ``SourceConfig``.

    Raises ``ConfigFileError`` carrying the offending field and line.  An
    explicit ``cavity.fsr_mhz`` that disagrees with c / effective_length by
    more than 1% only triggers a warning.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigFileError("config", f"parse error: {exc}", path, int(m.group(1)) if m else None) from None

    values: dict[str, object] = {}
    for section, table in doc.items():
        if not isinstance(table, dict):
            raise ConfigFileError(section, "top-level keys must be inside a [section]", path, _key_line(text, "", section))
        for key, value in table.items():
            if (section, key) in EXTRA_KEYS:
                continue
            if (section, key) not in SCHEMA:
                raise ConfigFileError(f"{section}.{key}", "unknown key", path, _key_line(text, section, key))
            name, mult, _ = SCHEMA[(section, key)]
            line = _key_line(text, section, key)
            if mult is None:
                if not isinstance(value, bool):
                    raise ConfigFileError(f"{section}.{key}", "expected true/false", path, line)
                values[name] = value
            else:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigFileError(f"{section}.{key}", f"expected a number, got {value!r}", path, line)
                values[name] = _to_si(float(value), mult)

    for (section, key), (name, _, required) in SCHEMA.items():
        if required and name not in values:
            raise ConfigFileError(f"{section}.{key}", "missing required field", path, _section_line(text, section))

    crystal = doc.get("crystal", {})
    has_bw = "phase_matching_bandwidth_ghz" in crystal
    has_dk = "group_delay_mismatch_ps_per_mm" in crystal
    if has_bw and has_dk:
        raise ConfigFileError("crystal.phase_matching_bandwidth_ghz",
                              "give either phase_matching_bandwidth_ghz or group_delay_mismatch_ps_per_mm, not both",
                              path, _key_line(text, "crystal", "phase_matching_bandwidth_ghz"))
    if not (has_bw or has_dk):
        raise ConfigFileError("crystal.phase_matching_bandwidth_ghz",
                              "missing required field (or group_delay_mismatch_ps_per_mm)", path,
                              _section_line(text, "crystal"))
    if has_bw:
        bw = crystal["phase_matching_bandwidth_ghz"]
        if isinstance(bw, bool) or not isinstance(bw, (int, float)) or not bw > 0:
            raise ConfigFileError("crystal.phase_matching_bandwidth_ghz", f"must be a positive number, got {bw!r}",
                                  path, _key_line(text, "crystal", "phase_matching_bandwidth_ghz"))
        values["group_delay_mismatch"] = 1.0 / (float(bw) * 1e9 * values["crystal_length"])

    try:
        config = SourceConfig(**values)
    except ConfigError as exc:
        key = next(((s, k) for (s, k), (n, _, _) in SCHEMA.items() if n == exc.field), None)
        label = f"{key[0]}.{key[1]}" if key else exc.field
        line = _key_line(text, *key) if key else None
        raise ConfigFileError(label, str(exc).split(": ", 1)[-1], path, line) from None

    fsr = doc.get("cavity", {}).get("fsr_mhz")
    if fsr is not None:
        derived = SPEED_OF_LIGHT / config.effective_cavity_length / 1e6
        if not math.isclose(float(fsr), derived, rel_tol=FSR_TOLERANCE):
            warnings.warn(
                f"cavity.fsr_mhz = {fsr} is inconsistent with c / effective_length = {derived:.2f} MHz; "
                "the effective length is used",
                ConfigConsistencyWarning,
                stacklevel=2,
            )
    return config


class ConfigConsistencyWarning(UserWarning):
    pass


def load_config(path: str | os.PathLike | None = None) -> tuple[SourceConfig, str]:
    """Return (config, canonical text).  ``None`` uses $CAVITY_SPDC_CONFIG or the bundled defaults."""
    text, where = read_config_text(path)
    return parse_config(text, where), text


def config_hash(config: SourceConfig) -> str:
    # 12 significant digits so unit-conversion rounding does not change the hash
    canon = {k: float(f"{v:.12g}") if isinstance(v, float) else v for k, v in config.to_dict().items()}
    blob = json.dumps(canon, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def dump_config(config: SourceConfig) -> str:
    """Render a config as TOML (group-delay mismatch given explicitly)."""
    sections: dict[str, list[str]] = {}
    for (section, key), (name, mult, _) in SCHEMA.items():
        value = getattr(config, name)
        if mult is None:
            rendered = "true" if value else "false"
        else:
            rendered = repr(_from_si(float(value), mult))
        sections.setdefault(section, []).append(f"{key} = {rendered}")
    out = []
    for section, lines in sections.items():
        out.append(f"[{section}]")
        out.extend(lines)
        out.append("")
    return "\n".join(out)
