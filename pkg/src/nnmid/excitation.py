"""Periodic random-phase multisines and phase-continuous stepped sines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .io import write_table_csv
from .validation import check_positive


@dataclass(frozen=True)
class MultisineSpec:
    """Flat-amplitude multisine design.

    Random phases come from :func:`numpy.random.default_rng` (PCG64), drawn
    in order of increasing excited line, which is stable across platforms.
    """

    f_min: float
    f_max: float
    samples_per_period: int
    fs: float
    rms: float
    periods: int = 1
    seed: int = 0

    def excited_lines(self):
        """DFT bins ``k`` with ``f_min <= k*fs/N <= f_max``, DC and Nyquist excluded."""
        n = self.samples_per_period
        k = np.arange(1, (n - 1) // 2 + 1)
        f = k * self.fs / n
        # Small slack so that band edges sitting exactly on a bin are kept.
        tol = 1e-9 * self.fs / n
        return k[(f >= self.f_min - tol) & (f <= self.f_max + tol)]


@dataclass(frozen=True)
class MultisineSignal:
    period: np.ndarray
    periods: int
    fs: float
    lines: np.ndarray
    phases: np.ndarray = field(repr=False)

    @property
    def samples_per_period(self):
        return self.period.size

    @property
    def signal(self):
        return np.tile(self.period, self.periods)

    @property
    def time(self):
        return np.arange(self.period.size * self.periods) / self.fs

    @property
    def frequencies(self):
        return self.lines * self.fs / self.period.size


def generate_multisine(spec):
    """Synthesize one period of a random-phase multisine.

    Returns
    -------
    MultisineSignal
        One period (``period``) and the replication count; ``signal`` tiles
        it. The time-domain RMS equals ``spec.rms``.
    """
    check_positive(spec.samples_per_period, "samples_per_period", integer=True)
    check_positive(spec.fs, "fs")
    check_positive(spec.periods, "periods", integer=True)
    check_positive(spec.rms, "rms", strict=False)
    if spec.f_max >= spec.fs / 2:
        raise ParameterError("f_max must lie below the Nyquist frequency")
    lines = spec.excited_lines()
    if lines.size == 0:
        raise ParameterError("no DFT line falls inside the excitation band")
    n = spec.samples_per_period
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=lines.size)
    spectrum = np.zeros(n // 2 + 1, dtype=complex)
    spectrum[lines] = np.exp(1j * phases)
    x = np.fft.irfft(spectrum, n)
    # By Parseval this gives every line the amplitude rms*sqrt(2/n_lines).
    x *= spec.rms / np.sqrt(np.mean(x ** 2)) if spec.rms > 0 else 0.0
    return MultisineSignal(period=x, periods=spec.periods, fs=float(spec.fs),
                           lines=lines, phases=phases)


@dataclass(frozen=True)
class SteppedSineSchedule:
    f_start: float
    f_end: float
    df: float
    amplitude: float
    settle_periods: int = 60
    measure_periods: int = 10

    @property
    def frequencies(self):
        if self.f_start == self.f_end:
            return np.array([float(self.f_start)])
        if self.df <= 0:
            raise ParameterError("frequency step must be positive")
        n = int(math.floor((self.f_end - self.f_start) / self.df + 1e-9)) + 1
        if n < 1:
            raise ParameterError("f_end must not lie below f_start")
        return self.f_start + self.df * np.arange(n)


@dataclass(frozen=True)
class SteppedSineSignal:
    """Concatenated stepped-sine force.

    Attributes
    ----------
    force : ndarray
    phase : ndarray
        Accumulated phase (rad) at every sample; ``force = A sin(phase)``.
    boundaries : ndarray
        Start index of every step plus the total length.
    measure_start : ndarray
        First sample of the measurement window of every step.
    frequencies : ndarray
    fs : float
    """

    force: np.ndarray
    phase: np.ndarray
    boundaries: np.ndarray
    measure_start: np.ndarray
    frequencies: np.ndarray
    fs: float
    amplitude: float

    def step_slice(self, i, measure_only=True):
        start = self.measure_start[i] if measure_only else self.boundaries[i]
        return slice(int(start), int(self.boundaries[i + 1]))


def stepped_sine_signal(schedule, fs):
    """Phase-continuous stepped sine with an integer number of cycles per step.

    Each step lasts ``settle_periods + measure_periods`` cycles, rounded to
    the nearest sample; the phase accumulator runs continuously so the force
    has no jump between steps.
    """
    check_positive(fs, "fs")
    freqs = schedule.frequencies
    if np.any(freqs <= 0) or np.any(freqs >= fs / 2):
        raise ParameterError("stepped-sine frequencies must lie in (0, fs/2)")
    if schedule.amplitude < 0:
        raise ParameterError("amplitude must be non-negative")
    cycles = schedule.settle_periods + schedule.measure_periods
    check_positive(cycles, "periods per step", integer=True)
    lengths = np.rint(cycles * fs / freqs).astype(np.int64)
    settle = np.rint(schedule.settle_periods * fs / freqs).astype(np.int64)
    boundaries = np.concatenate([[0], np.cumsum(lengths)])
    increments = np.repeat(2 * np.pi * freqs / fs, lengths)
    phase = np.concatenate([[0.0], np.cumsum(increments)[:-1]])
    force = schedule.amplitude * np.sin(phase)
    return SteppedSineSignal(force=force, phase=phase, boundaries=boundaries,
                             measure_start=boundaries[:-1] + settle,
                             frequencies=freqs, fs=float(fs),
                             amplitude=float(schedule.amplitude))


def write_signal_csv(path, signal, fs, meta=None):
    """Two-column CSV (time in s, force in N) with parameters in the header."""
    signal = np.asarray(signal, dtype=float)
    t = np.arange(signal.size) / fs
    return write_table_csv(path, {"time_s": t, "force_N": signal}, meta=meta)
