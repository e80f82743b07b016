"""End-to-end simulation: source -> cavity -> compensator -> basis -> detectors.

Time is cut into fixed blocks, each with its own seeded substreams, so a run
can be split into any number of chunks (and run in parallel) while producing
identical output.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .detection import (
    TimeTagStream,
    add_dark_counts,
    apply_dead_time,
    apply_jitter,
    apply_losses,
    chopper_gate,
    quantize,
)
from .params import ConfigError, SourceConfig
from .source import (
    BLOCK_DURATION,
    CHANNEL_A,
    CHANNEL_B,
    PhotonEvents,
    Substream,
    apply_compensator,
    block_count,
    block_rng,
    cavity_exit,
    generate_block_pairs,
    project_basis,
)

log = logging.getLogger(__name__)


def simulate_block(config: SourceConfig, basis, duration: float, seed, block: int,
                   path_difference: float | None = None) -> PhotonEvents:
    if path_difference is None:
        path_difference = config.path_difference_center
    pairs = generate_block_pairs(config, seed, block, duration)
    pairs = cavity_exit(pairs, config, block_rng(seed, block, Substream.CAVITY))
    pairs = apply_compensator(pairs, config, path_difference)
    events = project_basis(pairs, basis, config, block_rng(seed, block, Substream.BASIS))
    events = apply_losses(events, config, block_rng(seed, block, Substream.LOSSES))
    if config.dark_count_rate > 0 or config.timing_jitter > 0:
        rng = block_rng(seed, block, Substream.DETECTOR)
        t0 = block * BLOCK_DURATION
        events = add_dark_counts(events, config, rng, t0, min(duration, t0 + BLOCK_DURATION))
        events = apply_jitter(events, config, rng)
    return chopper_gate(events, config)


def _simulate_blocks(args) -> PhotonEvents:
    config, basis, duration, seed, blocks, path_difference = args
    return PhotonEvents.concat(
        [simulate_block(config, basis, duration, seed, b, path_difference) for b in blocks]
    )


def _chunks(n_blocks: int, n_chunks: int) -> list[range]:
    n_chunks = max(1, min(n_chunks, n_blocks)) if n_blocks else 1
    edges = np.linspace(0, n_blocks, n_chunks + 1).round().astype(int)
    return [range(edges[i], edges[i + 1]) for i in range(n_chunks)]


def simulate_events(config: SourceConfig, basis, duration: float, seed,
                    path_difference: float | None = None, n_chunks: int = 1,
                    workers: int = 1) -> PhotonEvents:
    """Detected (pre-quantisation) photon events over [0, duration)."""
    if duration < 0:
        raise ConfigError("duration", f"must be >= 0, got {duration!r}")
    n_blocks = block_count(duration)
    jobs = [(config, basis, duration, seed, r, path_difference) for r in _chunks(n_blocks, n_chunks)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_blocks, jobs))
    else:
        parts = [_simulate_blocks(j) for j in jobs]
    events = PhotonEvents.concat(parts)
    if config.dead_time > 0:
        events = apply_dead_time(events, config.dead_time)
    return events


def simulate_stream(config: SourceConfig, basis, duration: float, seed,
                    path_difference: float | None = None, n_chunks: int = 1,
                    workers: int = 1, resolution: float | None = None) -> TimeTagStream:
    """Run the full chain and return the quantised time-tag stream."""
    events = simulate_events(config, basis, duration, seed, path_difference, n_chunks, workers)
    stream = quantize(events, config, duration, resolution=resolution)
    log.debug("simulated %.3g s: %d / %d tags", duration, len(stream.a), len(stream.b))
    return stream


def poisson_stream(rate_a: float, rate_b: float, duration: float, seed,
                   resolution: float = 1e-9) -> TimeTagStream:
    """Two independent homogeneous Poisson tag streams (uncorrelated background)."""
    rng = np.random.default_rng(np.random.SeedSequence(list(np.atleast_1d(seed).tolist()) + [0x504F4953]))
    channels = {}
    for ch, rate in ((CHANNEL_A, rate_a), (CHANNEL_B, rate_b)):
        n = rng.poisson(rate * duration)
        channels[ch] = np.sort(np.floor(rng.uniform(0.0, duration, n) / resolution).astype(np.int64))
    return TimeTagStream(resolution, duration, duration, channels)
