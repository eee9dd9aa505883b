"""Univariate series container with sampling metadata."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteInput, SignalTooShort

MIN_SIGNAL_LENGTH = 8


@dataclass(frozen=True)
class Signal:
    """A finite, real-valued, regularly sampled series.

    ``start`` is the timestamp of the first sample as a numpy ``datetime64``
    (``None`` when unknown) and ``step`` the sampling interval.
    """

    samples: np.ndarray
    start: Optional[np.datetime64] = None
    step: np.timedelta64 = field(default_factory=lambda: np.timedelta64(1, "h"))

    def __post_init__(self):
        values = np.ascontiguousarray(self.samples, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {values.shape}")
        object.__setattr__(self, "samples", values)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def validate(self, min_length: int = MIN_SIGNAL_LENGTH) -> "Signal":
        """Raise unless the signal is finite and at least ``min_length`` long."""
        if not np.all(np.isfinite(self.samples)):
            bad = int(np.flatnonzero(~np.isfinite(self.samples))[0])
            raise NonFiniteInput(f"non-finite sample at index {bad}")
        if self.length < min_length:
            raise SignalTooShort(
                f"signal has {self.length} samples, need at least {min_length}")
        return self

    def slice(self, lo: int, hi: int) -> "Signal":
        start = None if self.start is None else self.start + lo * self.step
        return Signal(self.samples[lo:hi], start=start, step=self.step)

    def with_samples(self, samples) -> "Signal":
        return Signal(samples, start=self.start, step=self.step)

    def timestamps(self) -> np.ndarray:
        """Timestamps of every sample; hourly from the epoch when unknown."""
        start = self.start if self.start is not None else np.datetime64("1970-01-01T00", "h")
        return start + np.arange(self.length) * self.step


def as_array(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.samples
    return np.ascontiguousarray(x, dtype=np.float64)
