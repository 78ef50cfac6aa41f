"""Integrate-and-fire spike camera simulator."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .spikes import SpikeStream

# Voltages within this relative margin of the threshold count as a crossing, so
# that e.g. ten accumulations of 0.1 fire against a threshold of 1.
THRESHOLD_RTOL = 1e-9


def _check_threshold(threshold: float) -> None:
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")


def simulate_pixel(currents: Sequence[float], threshold: float = 1.0) -> np.ndarray:
    """Spike train of a single pixel driven by per-step charge ``currents``.

    The voltage integrates the current each step; when it reaches the threshold at
    readout a spike is emitted and the voltage is reset to exactly zero (any charge
    above the threshold is discarded).
    """
    _check_threshold(threshold)
    currents = np.asarray(currents, dtype=np.float64)
    if np.any(currents < 0):
        raise ValueError("currents must be non-negative")
    fire_level = threshold * (1.0 - THRESHOLD_RTOL)
    out = np.zeros(currents.shape[0], dtype=np.uint8)
    v = 0.0
    for t, i in enumerate(currents):
        v += i
        if v >= fire_level:
            out[t] = 1
            v = 0.0
    return out


class IntegrateAndFire:
    """Vectorized per-pixel integrate-and-fire state for streaming simulation."""

    def __init__(self, shape: tuple[int, int], threshold: float = 1.0):
        _check_threshold(threshold)
        self.threshold = float(threshold)
        self.fire_level = self.threshold * (1.0 - THRESHOLD_RTOL)
        self.voltage = np.zeros(shape, dtype=np.float64)

    def step(self, current: np.ndarray) -> np.ndarray:
        self.voltage += current
        fired = self.voltage >= self.fire_level
        self.voltage[fired] = 0.0
        return fired.astype(np.uint8)


def simulate_stream(
    video: Iterable[np.ndarray],
    threshold: float = 1.0,
    gain: float = 1.0,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> SpikeStream:
    """Simulate a spike stream from a sequence of intensity frames (one frame per readout).

    Each pixel receives ``gain * intensity`` charge per step. ``noise_std`` adds
    Gaussian per-step current jitter (clipped at zero); it is off by default.
    """
    _check_threshold(threshold)
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    if noise_std > 0 and rng is None:
        rng = np.random.default_rng(0)

    frames = iter(video)
    spikes = []
    camera = None
    shape = None
    for frame in frames:
        frame = np.asarray(frame, dtype=np.float64)
        if camera is None:
            shape = frame.shape
            camera = IntegrateAndFire(shape, threshold)
        elif frame.shape != shape:
            raise ValueError(f"frame shape {frame.shape} differs from first frame {shape}")
        current = gain * frame
        if noise_std > 0:
            current = np.clip(current + rng.normal(0.0, noise_std, size=shape), 0.0, None)
        spikes.append(camera.step(current))
    if camera is None:
        raise ValueError("empty video")
    return SpikeStream(np.stack(spikes, axis=0))
