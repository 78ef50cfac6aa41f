"""Spike stream data model, window splitting and firing-rate reconstruction.

Streams are stored time-major: ``data[t, y, x]`` is 1 when pixel ``(y, x)``
fired at readout ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Capture geometry of the camera used for the real dataset.
DEFAULT_HEIGHT = 250
DEFAULT_WIDTH = 400
DEFAULT_STEPS = 2100
DEFAULT_W_AUX = 300
DEFAULT_BINS = 15


class BoundsError(ValueError):
    """Raised when a window, interval or bin count falls outside the stream."""


@dataclass(eq=False)
class SpikeStream:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"spike stream must be (T, H, W), got shape {self.data.shape}")

    @property
    def num_steps(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, num_steps: int) -> "SpikeStream":
        return cls(np.zeros((num_steps, height, width), dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, SpikeStream):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __len__(self):
        return self.num_steps


@dataclass(eq=False)
class WindowSplit:
    """The (minus, center, plus) temporal windows of one stream."""

    s_minus: SpikeStream
    s_center: SpikeStream
    s_plus: SpikeStream
    w_aux: int

    def concatenate(self) -> SpikeStream:
        return SpikeStream(np.concatenate([self.s_minus.data, self.s_center.data, self.s_plus.data], axis=0))

    @property
    def lengths(self) -> tuple[int, int, int]:
        return (self.s_minus.num_steps, self.s_center.num_steps, self.s_plus.num_steps)


@dataclass
class ValidationReport:
    checks: dict[str, bool] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def __bool__(self):
        return self.passed


def validate_stream(s: SpikeStream, w_aux: int | None = None) -> ValidationReport:
    """Check the stream invariants without raising; see ``ValidationReport.passed``."""
    report = ValidationReport()
    data = s.data
    dims_ok = data.ndim == 3 and all(d > 0 for d in data.shape)
    report.checks["positive dimensions"] = dims_ok
    if not dims_ok:
        report.messages.append(f"non-positive dimension in shape {data.shape}")

    binary = bool(np.all((data == 0) | (data == 1)))
    report.checks["binary elements"] = binary
    if not binary:
        report.messages.append("non-binary element")

    if w_aux is not None:
        long_enough = data.shape[0] >= 2 * w_aux + 1
        report.checks["long enough to split"] = long_enough
        if not long_enough:
            report.messages.append(f"num_steps {data.shape[0]} < 2*w_aux+1 = {2 * w_aux + 1}")
    return report


def split_windows(s: SpikeStream, w_aux: int = DEFAULT_W_AUX) -> WindowSplit:
    t = s.num_steps
    if w_aux <= 0 or 2 * w_aux >= t:
        raise BoundsError(f"w_aux={w_aux} invalid for a stream of {t} steps (need 0 < 2*w_aux < T)")
    return WindowSplit(
        s_minus=SpikeStream(s.data[:w_aux]),
        s_center=SpikeStream(s.data[w_aux:t - w_aux]),
        s_plus=SpikeStream(s.data[t - w_aux:]),
        w_aux=w_aux,
    )


def firing_rate_image(s: SpikeStream, t0: int, t1: int) -> np.ndarray:
    """Per-pixel spike count in ``[t0, t1)`` divided by the interval length."""
    if not (0 <= t0 < t1 <= s.num_steps):
        raise BoundsError(f"interval [{t0}, {t1}) is empty or outside [0, {s.num_steps}]")
    counts = s.data[t0:t1].sum(axis=0, dtype=np.int64)
    return counts / float(t1 - t0)


def accumulate_window(s: SpikeStream) -> np.ndarray:
    if s.num_steps == 0:
        raise BoundsError("cannot accumulate an empty window")
    return firing_rate_image(s, 0, s.num_steps)


def bin_lengths(num_steps: int, bins: int) -> np.ndarray:
    """Contiguous segment lengths; the first ``num_steps % bins`` segments get one extra step."""
    if not 1 <= bins <= num_steps:
        raise BoundsError(f"bins={bins} must lie in [1, {num_steps}]")
    base, extra = divmod(num_steps, bins)
    lengths = np.full(bins, base, dtype=np.int64)
    lengths[:extra] += 1
    return lengths


def bin_counts(s: SpikeStream, bins: int = DEFAULT_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Integer spike counts per temporal segment, shape ``(bins, H, W)``, plus segment lengths."""
    lengths = bin_lengths(s.num_steps, bins)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    # reduceat sums each [start_i, start_{i+1}) slice along time
    counts = np.add.reduceat(s.data.astype(np.uint16), starts, axis=0)
    return counts, lengths


def voxelize(s: SpikeStream, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Normalized per-bin firing rates, float32 of shape ``(bins, H, W)`` in [0, 1]."""
    counts, lengths = bin_counts(s, bins)
    return (counts / lengths[:, None, None]).astype(np.float32)
