"""Input corruption for reconstruction pretraining.

Three alterations applied to normalized feature sequences: zero out blocks
of consecutive frames, zero one contiguous band of mel channels, and add
Gaussian noise to a fraction of frames. Every function is pure given an
explicit rng and records exactly which cells it touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import AlterationConfig
from .rng import Rng


@dataclass
class AlteredBatch:
    altered: np.ndarray
    original: np.ndarray
    altered_positions: np.ndarray  # bool, True where cells were touched


def _fresh(x: np.ndarray) -> AlteredBatch:
    x = np.asarray(x, dtype=np.float32)
    return AlteredBatch(x.copy(), x, np.zeros(x.shape, dtype=bool))


def alter_time(x: np.ndarray, cfg: AlterationConfig, rng: Rng) -> AlteredBatch:
    """Zero non-overlapping blocks of consecutive frames.

    Targets ~time_mask_ratio of the frames in runs of time_block; a block
    starting near the end is truncated at the boundary.
    """
    batch = _fresh(x)
    t = batch.original.shape[0]
    if cfg.time_mask_ratio <= 0.0 or t == 0:
        return batch
    if t < cfg.time_block:
        warnings.warn(
            f"alter_time skipped: sequence length {t} < time_block {cfg.time_block}")
        return batch
    n_blocks = int(round(cfg.time_mask_ratio * t / cfg.time_block))
    if n_blocks == 0:
        return batch
    taken = np.zeros(t, dtype=bool)
    placed = 0
    for start in rng.permutation(t):
        if placed == n_blocks:
            break
        stop = min(start + cfg.time_block, t)
        if taken[start:stop].any():
            continue
        taken[start:stop] = True
        placed += 1
    batch.altered[taken, :] = 0.0
    batch.altered_positions[taken, :] = True
    return batch


def alter_channel(x: np.ndarray, cfg: AlterationConfig, rng: Rng) -> AlteredBatch:
    """Zero one contiguous band of at most channel_max mel channels."""
    batch = _fresh(x)
    d = batch.original.shape[1]
    if cfg.channel_max <= 0 or d == 0:
        return batch
    width = rng.randint(min(cfg.channel_max, d) + 1)
    if width == 0:
        return batch
    start = rng.randint(d - width + 1)
    batch.altered[:, start:start + width] = 0.0
    batch.altered_positions[:, start:start + width] = True
    return batch


def alter_magnitude(x: np.ndarray, cfg: AlterationConfig, rng: Rng) -> AlteredBatch:
    """Add Gaussian noise to a magnitude_noise_prob fraction of frames."""
    batch = _fresh(x)
    t, d = batch.original.shape
    if cfg.magnitude_noise_prob <= 0.0 or cfg.noise_std <= 0.0 or t == 0:
        return batch
    chosen = rng.uniforms(t) < cfg.magnitude_noise_prob
    n = int(chosen.sum())
    if n == 0:
        return batch
    noise = rng.normals((n, d)) * np.float32(cfg.noise_std)
    batch.altered[chosen, :] += noise
    batch.altered_positions[chosen, :] = True
    return batch


def compose_alterations(x: np.ndarray, cfg: AlterationConfig, rng: Rng) -> AlteredBatch:
    """Time, then channel, then magnitude; position maps unioned."""
    first = alter_time(x, cfg, rng)
    second = alter_channel(first.altered, cfg, rng)
    third = alter_magnitude(second.altered, cfg, rng)
    positions = first.altered_positions | second.altered_positions | third.altered_positions
    return AlteredBatch(third.altered, first.original, positions)
