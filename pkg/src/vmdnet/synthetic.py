"""Synthetic series with known spectral content, used by tests and the CLI demo."""
from __future__ import annotations

import numpy as np

from .signal import Signal

HOURLY = np.timedelta64(1, "h")
DEFAULT_START = np.datetime64("2021-01-01T00:00")


def tones(freqs, amps, n: int, phases=None, noise: float = 0.0, seed: int = 0):
    """Sum of sinusoids ``a*sin(2*pi*f*t + phi)`` plus optional white noise.

    Returns ``(x, components)`` where ``components`` has one row per tone.
    """
    t = np.arange(n, dtype=np.float64)
    phases = np.zeros(len(freqs)) if phases is None else np.asarray(phases, dtype=np.float64)
    comps = np.stack([a * np.sin(2 * np.pi * f * t + p) for f, a, p in zip(freqs, amps, phases)])
    x = comps.sum(axis=0)
    if noise > 0:
        x = x + noise * np.random.default_rng(seed).standard_normal(n)
    return x, comps


def two_tone(n: int = 1024):
    """``sin(2*pi*0.01*t) + 0.5*sin(2*pi*0.12*t)``."""
    return tones((0.01, 0.12), (1.0, 0.5), n)


def three_tone(n: int = 4096, noise: float = 0.0, seed: int = 0):
    """Equal-amplitude tones at 0.01, 0.07 and 0.2 cycles/sample."""
    return tones((0.01, 0.07, 0.2), (1.0, 1.0, 1.0), n, noise=noise, seed=seed)


def periodic_series(n: int = 20000, seed: int = 0, daily: float = 1.0, weekly: float = 0.6,
                    ar_coef: float = 0.8, noise: float = 0.3, level: float = 10.0) -> Signal:
    """Hourly series: daily and weekly sinusoids (with a daily harmonic) plus AR(1) noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    x = (level + daily * np.sin(2 * np.pi * t / 24 + phase[0])
         + 0.4 * daily * np.sin(2 * np.pi * t / 12 + phase[1])
         + weekly * np.sin(2 * np.pi * t / 168 + phase[2]))
    eps = noise * rng.standard_normal(n)
    e = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = ar_coef * acc + eps[i]
        e[i] = acc
    return Signal(x + e, start=DEFAULT_START, step=HOURLY)


def write_csv(path, signal: Signal, timestamp_column: str = "timestamp", value_column: str = "value"):
    """Write ``signal`` as a two-column CSV with an ISO-8601 timestamp column."""
    ts = signal.timestamps()
    with open(path, "w") as fh:
        fh.write(f"{timestamp_column},{value_column}\n")
        for stamp, v in zip(ts, signal.samples):
            fh.write(f"{np.datetime_as_string(stamp, unit='s')},{float(v)!r}\n")
    return path
