"""Monte Carlo biphoton source: pair creation, cavity ring-down, walk-off
compensation and polarisation-basis projection with two-photon interference.

Pairs and photons are held as struct-of-arrays batches so every operation is a
handful of vectorised numpy calls; ``PairRecord`` and ``PhotonEvent`` are the
per-element views.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .params import SPEED_OF_LIGHT, ConfigError, SourceConfig, derive_quantities

CHANNEL_A = 0
CHANNEL_B = 1


class MeasurementBasis(str, enum.Enum):
    HV = "hv"
    DIAG = "diag"

    @classmethod
    def parse(cls, value) -> "MeasurementBasis":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError("basis", f"unknown measurement basis {value!r} (expected 'hv' or 'diag')") from None


class ExitFate(enum.IntEnum):
    LOST_IN_CAVITY = 0
    ESCAPED = 1


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    creation_time: float
    crystal_position: float
    roundtrips_signal: int
    roundtrips_idler: int
    exit_signal: ExitFate
    exit_idler: ExitFate
    residual_delay: float
    compensator_delay: float


@dataclass(frozen=True)
class PhotonEvent:
    channel: str
    time: float
    origin_pair: int


@dataclass
class PairBatch:
    pair_id: np.ndarray
    creation_time: np.ndarray
    crystal_position: np.ndarray
    roundtrips_signal: np.ndarray
    roundtrips_idler: np.ndarray
    exit_signal: np.ndarray  # bool, True = escaped
    exit_idler: np.ndarray
    residual_delay: np.ndarray
    compensator_delay: np.ndarray

    @classmethod
    def fresh(cls, pair_id, creation_time, crystal_position) -> "PairBatch":
        n = len(creation_time)
        return cls(
            pair_id=np.asarray(pair_id, dtype=np.int64),
            creation_time=np.asarray(creation_time, dtype=np.float64),
            crystal_position=np.asarray(crystal_position, dtype=np.float64),
            roundtrips_signal=np.zeros(n, dtype=np.int64),
            roundtrips_idler=np.zeros(n, dtype=np.int64),
            exit_signal=np.ones(n, dtype=bool),
            exit_idler=np.ones(n, dtype=bool),
            residual_delay=np.zeros(n),
            compensator_delay=np.zeros(n),
        )

    @classmethod
    def empty(cls) -> "PairBatch":
        return cls.fresh(np.empty(0, np.int64), np.empty(0), np.empty(0))

    @classmethod
    def concat(cls, batches: Sequence["PairBatch"]) -> "PairBatch":
        if not batches:
            return cls.empty()
        return cls(**{f.name: np.concatenate([getattr(b, f.name) for b in batches]) for f in fields(cls)})

    def __len__(self) -> int:
        return len(self.creation_time)

    def __getitem__(self, i: int) -> PairRecord:
        return PairRecord(
            pair_id=int(self.pair_id[i]),
            creation_time=float(self.creation_time[i]),
            crystal_position=float(self.crystal_position[i]),
            roundtrips_signal=int(self.roundtrips_signal[i]),
            roundtrips_idler=int(self.roundtrips_idler[i]),
            exit_signal=ExitFate(int(self.exit_signal[i])),
            exit_idler=ExitFate(int(self.exit_idler[i])),
            residual_delay=float(self.residual_delay[i]),
            compensator_delay=float(self.compensator_delay[i]),
        )

    def copy(self) -> "PairBatch":
        return PairBatch(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


@dataclass
class PhotonEvents:
    channel: np.ndarray  # uint8, CHANNEL_A / CHANNEL_B
    time: np.ndarray
    origin: np.ndarray

    @classmethod
    def empty(cls) -> "PhotonEvents":
        return cls(np.empty(0, np.uint8), np.empty(0), np.empty(0, np.int64))

    @classmethod
    def concat(cls, parts: Sequence["PhotonEvents"]) -> "PhotonEvents":
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.channel for p in parts]),
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.origin for p in parts]),
        )

    def select(self, mask) -> "PhotonEvents":
        return PhotonEvents(self.channel[mask], self.time[mask], self.origin[mask])

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, i: int) -> PhotonEvent:
        return PhotonEvent("AB"[int(self.channel[i])], float(self.time[i]), int(self.origin[i]))


# ---------------------------------------------------------------------------
# random substreams

BLOCK_DURATION = 10e-3  # s; fixed so results do not depend on chunking


class Substream(enum.IntEnum):
    GENERATION = 0
    CAVITY = 1
    BASIS = 2
    LOSSES = 3
    DETECTOR = 4


def _entropy(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        seed = [int(seed)]
    out = [int(s) for s in seed]
    if any(s < 0 for s in out):
        raise ConfigError("seed", "seed values must be nonnegative integers")
    return out


def block_rng(seed, block: int, stream: Substream) -> np.random.Generator:
    """Independent generator for one (seed, time block, substream) triple."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed) + [int(block), int(stream)]))


def block_count(duration: float, block_duration: float = BLOCK_DURATION) -> int:
    if duration < 0:
        raise ConfigError("duration", f"must be >= 0, got {duration!r}")
    return int(np.ceil(duration / block_duration - 1e-12)) if duration > 0 else 0


# ---------------------------------------------------------------------------
# operations


def generate_block_pairs(config: SourceConfig, seed, block: int, duration: float,
                         block_duration: float = BLOCK_DURATION) -> PairBatch:
    t0 = block * block_duration
    t1 = min(duration, t0 + block_duration)
    rate = config.pair_rate
    if t1 <= t0 or rate <= 0:
        return PairBatch.empty()
    rng = block_rng(seed, block, Substream.GENERATION)
    n = rng.poisson(rate * (t1 - t0))
    times = t0 + np.sort(rng.uniform(0.0, t1 - t0, n))
    positions = rng.uniform(0.0, 1.0, n)
    ids = (np.int64(block) << 32) + np.arange(n, dtype=np.int64)
    return PairBatch.fresh(ids, times, positions)


def generate_pairs(config: SourceConfig, seed, duration: float) -> PairBatch:
    """Homogeneous Poisson pair creation over [0, duration).

    Rate is ``pair_generation_rate_per_mw * pump_mW``; crystal positions are
    uniform on [0, 1].  Deterministic in ``seed``.
    """
    n_blocks = block_count(duration)
    return PairBatch.concat([generate_block_pairs(config, seed, b, duration) for b in range(n_blocks)])


def cavity_exit(pairs: PairBatch, config: SourceConfig, rng: np.random.Generator) -> PairBatch:
    """Sample round-trip counts and escape fates for both photons.

    Each round trip ends the photon's stay with probability 2*pi/finesse, so
    the count (including the final, exiting pass) is geometric on {1, 2, ...}
    with mean finesse/(2*pi).  On termination it leaves through the output coupler with probability
    ``escape_efficiency`` and is otherwise lost inside the cavity.
    """
    n = len(pairs)
    p_term = config.roundtrip_termination_probability
    out = pairs.copy()
    out.roundtrips_signal = rng.geometric(p_term, n).astype(np.int64)
    out.roundtrips_idler = rng.geometric(p_term, n).astype(np.int64)
    out.exit_signal = rng.random(n) < config.escape_efficiency
    out.exit_idler = rng.random(n) < config.escape_efficiency
    return out


def apply_compensator(pairs: PairBatch, config: SourceConfig, path_difference: float) -> PairBatch:
    """Residual signal-idler delay after the adjustable delay line.

    The walk-off accumulated from the generation point to the crystal exit is
    (x - 1/2) L dk once the fixed compensator removes the mean; the delay line
    then subtracts (path_difference - center)/c.
    """
    out = pairs.copy()
    offset = (path_difference - config.path_difference_center) / SPEED_OF_LIGHT
    out.compensator_delay = np.full(len(pairs), offset)
    out.residual_delay = (pairs.crystal_position - 0.5) * config.walkoff_width - offset
    return out


def interference_capable(pairs: PairBatch, config: SourceConfig) -> np.ndarray:
    """True where the exchanged (signal <-> idler) amplitude exists.

    A pair with residual delay r interferes only if -r is also reachable from
    some generation point, i.e. |r - compensator_delay| <= L dk / 2.  Averaged
    over uniform generation points this is the triangular overlap kernel.
    """
    ok = np.abs(pairs.residual_delay - pairs.compensator_delay) <= 0.5 * config.walkoff_width
    if not config.interfere_across_roundtrips:
        ok &= pairs.roundtrips_signal == pairs.roundtrips_idler
    return ok


def triangle(x):
    """Unit triangle: 1 - |x| on |x| < 1, zero elsewhere."""
    return np.maximum(0.0, 1.0 - np.abs(x))


def expected_opposite_probability(config: SourceConfig, path_difference, visibility_max: float | None = None):
    """Ensemble opposite-port probability in the diagonal basis, 1/2 (1 - V Λ)."""
    vmax = config.hv_spectral_overlap if visibility_max is None else visibility_max
    zeta = derive_quantities(config).zeta
    x = (np.asarray(path_difference, dtype=float) - config.path_difference_center) * zeta / (2 * SPEED_OF_LIGHT)
    return 0.5 * (1.0 - vmax * triangle(x))


def project_basis(pairs: PairBatch, basis, config: SourceConfig, rng: np.random.Generator,
                  visibility_max: float | None = None) -> PhotonEvents:
    """Route escaped photons to channels A/B after HWP2 + PBS2.

    HV: signal -> A, idler -> B.  DIAG: two escaped photons leave through
    opposite ports with probability 1/2 (1 - V_max * overlap), otherwise
    both through one uniformly chosen port; a lone survivor picks a port
    uniformly.
    """
    basis = MeasurementBasis.parse(basis)
    vmax = config.hv_spectral_overlap if visibility_max is None else visibility_max
    if not 0.0 <= vmax <= 1.0:
        raise ConfigError("visibility_max", f"must lie in [0, 1], got {vmax!r}")
    n = len(pairs)
    # fixed draw count per pair keeps the stream aligned across bases
    u_coin = rng.random(n)
    u_port = rng.random(n)
    u_swap = rng.random(n)

    t_rt = config.effective_cavity_length / SPEED_OF_LIGHT
    t_sig = pairs.creation_time + pairs.roundtrips_signal * t_rt
    t_idl = pairs.creation_time + pairs.roundtrips_idler * t_rt
    esc_s = pairs.exit_signal.astype(bool)
    esc_i = pairs.exit_idler.astype(bool)

    if basis is MeasurementBasis.HV:
        ch_s = np.full(n, CHANNEL_A, dtype=np.uint8)
        ch_i = np.full(n, CHANNEL_B, dtype=np.uint8)
    else:
        both = esc_s & esc_i
        overlap = interference_capable(pairs, config)
        p_opp = 0.5 * (1.0 - vmax * overlap)
        opposite = both & (u_coin < p_opp)
        port = (u_port >= 0.5).astype(np.uint8)
        ch_s = port.copy()
        ch_i = port.copy()
        swap = (u_swap >= 0.5).astype(np.uint8)
        ch_s[opposite] = swap[opposite]
        ch_i[opposite] = 1 - swap[opposite]

    channel = np.concatenate([ch_s[esc_s], ch_i[esc_i]])
    time = np.concatenate([t_sig[esc_s], t_idl[esc_i]])
    origin = np.concatenate([pairs.pair_id[esc_s], pairs.pair_id[esc_i]])
    return PhotonEvents(channel, time, origin)
