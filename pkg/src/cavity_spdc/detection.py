"""Loss chain, chopper gating, detector hooks and time-tag quantisation.

Also owns the on-disk time-tag format (``PTAG``): a little-endian header
(magic, version u16, resolution ps u64, duration ps u64) followed by one block
per channel (channel id u8, count u64, count x u64 timestamps).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import SourceConfig
from .source import CHANNEL_A, CHANNEL_B, PhotonEvents

MAGIC = b"PTAG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
_BLOCK = struct.Struct("<BQ")


class StreamFormatError(ValueError):
    pass


@dataclass
class TimeTagStream:
    """Per-channel sorted integer timestamps in units of ``resolution``."""

    resolution: float
    duration: float
    live_time: float
    channels: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for ch in (CHANNEL_A, CHANNEL_B):
            self.channels.setdefault(ch, np.empty(0, dtype=np.int64))
        self.channels = {int(k): np.asarray(v, dtype=np.int64) for k, v in sorted(self.channels.items())}

    @property
    def a(self) -> np.ndarray:
        return self.channels[CHANNEL_A]

    @property
    def b(self) -> np.ndarray:
        return self.channels[CHANNEL_B]

    @property
    def max_tag(self) -> int:
        return int(round(self.duration / self.resolution))

    def singles(self, channel: int) -> int:
        return len(self.channels[channel])

    def check(self) -> None:
        for ch, tags in self.channels.items():
            if len(tags) and (np.any(np.diff(tags) < 0) or tags[0] < 0 or tags[-1] > self.max_tag):
                raise StreamFormatError(f"channel {ch}: timestamps unsorted or outside [0, duration]")

    # ---- binary -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, _to_ps(self.resolution), _to_ps(self.duration)))
        for ch, tags in self.channels.items():
            buf.write(_BLOCK.pack(ch, len(tags)))
            buf.write(np.ascontiguousarray(tags, dtype="<u8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, live_time: float | None = None) -> "TimeTagStream":
        if len(data) < _HEADER.size:
            raise StreamFormatError("truncated header")
        magic, version, res_ps, dur_ps = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise StreamFormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise StreamFormatError(f"unsupported version {version}")
        if res_ps == 0:
            raise StreamFormatError("zero resolution")
        pos = _HEADER.size
        channels = {}
        while pos < len(data):
            if pos + _BLOCK.size > len(data):
                raise StreamFormatError("truncated channel block header")
            ch, count = _BLOCK.unpack_from(data, pos)
            pos += _BLOCK.size
            end = pos + 8 * count
            if end > len(data):
                raise StreamFormatError(f"channel {ch}: expected {count} timestamps, file truncated")
            channels[ch] = np.frombuffer(data, dtype="<u8", count=count, offset=pos).astype(np.int64)
            pos = end
        duration = dur_ps * 1e-12
        return cls(res_ps * 1e-12, duration, duration if live_time is None else live_time, channels)

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path, live_time: float | None = None) -> "TimeTagStream":
        return cls.from_bytes(Path(path).read_bytes(), live_time)

    # ---- csv ----------------------------------------------------------------

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "timestamp"])
            for ch, tags in self.channels.items():
                for t in tags.tolist():
                    w.writerow([ch, t])

    @classmethod
    def read_csv(cls, path, resolution: float, duration: float, live_time: float | None = None) -> "TimeTagStream":
        per_channel: dict[int, list[int]] = {}
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header != ["channel", "timestamp"]:
                raise StreamFormatError("row 1: expected header 'channel,timestamp'")
            for lineno, row in enumerate(rows, start=2):
                try:
                    ch, t = int(row[0]), int(row[1])
                except (ValueError, IndexError):
                    raise StreamFormatError(f"row {lineno}: cannot parse {row!r}") from None
                per_channel.setdefault(ch, []).append(t)
        channels = {ch: np.sort(np.array(v, dtype=np.int64)) for ch, v in per_channel.items()}
        return cls(resolution, duration, duration if live_time is None else live_time, channels)


def _to_ps(seconds: float) -> int:
    return int(round(seconds * 1e12))


# ---------------------------------------------------------------------------


def apply_losses(events: PhotonEvents, config: SourceConfig, rng: np.random.Generator) -> PhotonEvents:
    """Independent per-photon thinning by coupling, optics and detector efficiency."""
    keep = rng.random(len(events)) < config.detection_survival
    return events.select(keep)


def gate_open(times, config: SourceConfig) -> np.ndarray:
    period = 1.0 / config.chopper_frequency
    if config.chopper_duty_cycle >= 1.0:
        return np.ones(np.shape(times), dtype=bool)
    return np.mod(times, period) < config.chopper_duty_cycle * period


def chopper_gate(events: PhotonEvents, config: SourceConfig) -> PhotonEvents:
    """Keep events inside the open part [0, duty * period) of each chopper period."""
    return events.select(gate_open(events.time, config))


def live_time(config: SourceConfig, duration: float) -> float:
    return config.chopper_duty_cycle * duration


def add_dark_counts(events: PhotonEvents, config: SourceConfig, rng: np.random.Generator,
                    t0: float, t1: float) -> PhotonEvents:
    """Uniform dark counts on both channels over [t0, t1); no-op at zero rate."""
    if config.dark_count_rate <= 0 or t1 <= t0:
        return events
    parts = [events]
    for ch in (CHANNEL_A, CHANNEL_B):
        n = rng.poisson(config.dark_count_rate * (t1 - t0))
        t = rng.uniform(t0, t1, n)
        parts.append(PhotonEvents(np.full(n, ch, np.uint8), t, np.full(n, -1, np.int64)))
    return PhotonEvents.concat(parts)


def apply_jitter(events: PhotonEvents, config: SourceConfig, rng: np.random.Generator) -> PhotonEvents:
    if config.timing_jitter <= 0:
        return events
    t = events.time + rng.normal(0.0, config.timing_jitter, len(events))
    return PhotonEvents(events.channel, t, events.origin)


def apply_dead_time(events: PhotonEvents, dead_time: float) -> PhotonEvents:
    """Non-paralysable dead time applied per channel on time-ordered events."""
    if dead_time <= 0 or len(events) == 0:
        return events
    keep = np.zeros(len(events), dtype=bool)
    for ch in np.unique(events.channel):
        idx = np.flatnonzero(events.channel == ch)
        idx = idx[np.argsort(events.time[idx], kind="stable")]
        last = -np.inf
        for i, t in zip(idx.tolist(), events.time[idx].tolist()):
            if t - last >= dead_time:
                keep[i] = True
                last = t
    return events.select(keep)


def quantize(events: PhotonEvents, config: SourceConfig, duration: float,
             resolution: float | None = None, live: float | None = None) -> TimeTagStream:
    """Floor-quantise event times into per-channel sorted tags.

    Events outside [0, duration) are dropped.  Live time defaults to the
    chopper duty cycle times ``duration``.
    """
    res = config.tagger_resolution if resolution is None else resolution
    if not res > 0:
        raise ValueError("resolution must be > 0")
    inside = (events.time >= 0) & (events.time < duration)
    channels = {}
    for ch in (CHANNEL_A, CHANNEL_B):
        sel = inside & (events.channel == ch)
        channels[ch] = np.sort(np.floor(events.time[sel] / res).astype(np.int64))
    return TimeTagStream(res, duration, live_time(config, duration) if live is None else live, channels)
