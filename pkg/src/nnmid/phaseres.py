"""Virtual nonlinear phase-resonance testing: stepped-sine appropriation,
free decay, wavelet ridge extraction and comparison with backbones."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ComparisonError, DataError, ParameterError
from .excitation import stepped_sine_signal
from .io import write_table_csv
from .simulate import TimeSeriesRecord, newmark_integrate
from .validation import check_array, check_positive

DEFAULT_THRESHOLD = 0.9
DEFAULT_STEADY_TOL = 0.01


def harmonic_phasors(x, phase, harmonics=3):
    """Least-squares harmonic phasors relative to ``sin(phase)``.

    Parameters
    ----------
    x : (..., n) array_like
        Signals sampled at the instants where the force phase is ``phase``.
    phase : (n,) array_like
    harmonics : int

    Returns
    -------
    (..., harmonics) complex ndarray
        ``X_h`` such that ``x ~ x0 + sum_h Re(X_h exp(j(h phase - pi/2)))``;
        a response in phase with the force ``sin(phase)`` has a real phasor
        and a response lagging by ninety degrees has a negative imaginary one.
    """
    x = np.asarray(x, dtype=float)
    phase = np.asarray(phase, dtype=float)
    cols = [np.ones_like(phase)]
    for h in range(1, harmonics + 1):
        cols += [np.sin(h * phase), np.cos(h * phase)]
    R = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(R, x.reshape(-1, phase.size).T, rcond=None)
    s = coef[1::2].T
    c = coef[2::2].T
    # b sin + a cos = Re((b + j a) exp(j(phase - pi/2)))
    return (s + 1j * c).reshape(x.shape[:-1] + (harmonics,))


def appropriation_indicator(phasors):
    """Quadrature power fraction of fundamental phasors.

    ``sum Im(X)^2 / sum |X|^2`` over DOFs; 1 when every response fundamental
    is in quadrature with the force.
    """
    X = np.asarray(phasors)
    total = np.sum(np.abs(X) ** 2)
    if total == 0:
        return np.nan
    return float(np.sum(X.imag ** 2) / total)


@dataclass(frozen=True, eq=False)
class AppropriationResult:
    """Outcome of a stepped-sine appropriation sweep.

    Attributes
    ----------
    frequencies : ndarray
        Step frequencies (Hz).
    indicator : ndarray
        Quadrature indicator per step, ``nan`` for steps that did not reach
        steady state.
    amplitude : ndarray
        Fundamental amplitude at the designated DOF per step (m).
    peak : ndarray
        Peak displacement at the designated DOF over the measured window.
    phasors : (n_steps, n_dofs) complex ndarray
    steady : ndarray of bool
    index : int
        Appropriated step (``-1`` if no step reaches the threshold).
    states : (n_steps, 2*n_p) ndarray
        Model state at the end of every step.
    """

    frequencies: np.ndarray
    indicator: np.ndarray
    amplitude: np.ndarray
    peak: np.ndarray
    phasors: np.ndarray = field(repr=False)
    steady: np.ndarray = field(repr=False)
    index: int
    states: np.ndarray = field(repr=False)
    dofs: tuple = ()
    dof: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def frequency(self):
        """Appropriated frequency (Hz), ``nan`` when appropriation failed."""
        return float(self.frequencies[self.index]) if self.index >= 0 else float("nan")

    @property
    def state(self):
        if self.index < 0:
            raise DataError("no step was appropriated")
        return self.states[self.index]

    def to_csv(self, path, **meta):
        cols = {"frequency_hz": self.frequencies, "indicator": self.indicator,
                "amplitude_m": self.amplitude, "peak_m": self.peak,
                "steady": self.steady.astype(float)}
        return write_table_csv(path, cols, meta=dict(meta, appropriated_index=self.index,
                                                     dof=self.dof))


def appropriation_sweep(model, basis, schedule, *, fs=10000.0, measured_dofs=None,
                        dof=None, force_dof=None, threshold=DEFAULT_THRESHOLD,
                        steady_tol=DEFAULT_STEADY_TOL, harmonics=3, initial_state=None):
    """Stepped-sine sweep with the quadrature appropriation indicator.

    Steps are integrated one after the other with the state carried over,
    so the sweep follows the branch reached by increasing frequency.

    Parameters
    ----------
    model : FEModel
    basis : NonlinearBasis or None
    schedule : SteppedSineSchedule
    fs : float
        Integration sampling rate.
    measured_dofs : sequence of int, optional
        DOFs entering the indicator (default: all free translations).
    dof : int, optional
        Designated DOF for amplitudes (default: last measured DOF).
    threshold : float
        Minimum indicator for a step to be appropriated.
    steady_tol : float
        Steps whose last two cycles differ by more than this fraction at the
        designated DOF are flagged and their indicator withheld.

    Returns
    -------
    AppropriationResult
    """
    sig = stepped_sine_signal(schedule, fs)
    dofs = list(model.translational_dofs if measured_dofs is None else measured_dofs)
    dof = dofs[-1] if dof is None else dof
    if dof not in dofs:
        dofs.append(dof)
    j = dofs.index(dof)
    n_steps = sig.frequencies.size
    state = np.zeros(2 * model.n_p) if initial_state is None else np.asarray(initial_state)
    indicator = np.full(n_steps, np.nan)
    amplitude = np.zeros(n_steps)
    peak = np.zeros(n_steps)
    steady = np.zeros(n_steps, dtype=bool)
    phasors = np.zeros((n_steps, len(dofs)), dtype=complex)
    states = np.zeros((n_steps, 2 * model.n_p))
    for i in range(n_steps):
        sl = sig.step_slice(i, measure_only=False)
        rec = newmark_integrate(model, basis, sig.force[sl], fs, state,
                                output_dofs=dofs, force_dof=force_dof)
        state = rec.final_state
        states[i] = state
        m0 = sig.measure_start[i] - sig.boundaries[i]
        x = rec.channels[:, m0:]
        ph = sig.phase[sl][m0:]
        X = harmonic_phasors(x, ph, harmonics)[:, 0]
        phasors[i] = X
        amplitude[i] = abs(X[j])
        peak[i] = np.abs(x[j]).max()
        cyc = int(round(fs / sig.frequencies[i]))
        if x.shape[1] >= 2 * cyc:
            last = harmonic_phasors(x[j, -cyc:], ph[-cyc:], 1)[0]
            prev = harmonic_phasors(x[j, -2 * cyc:-cyc], ph[-2 * cyc:-cyc], 1)[0]
            ref = max(abs(last), np.finfo(float).tiny)
            steady[i] = abs(last - prev) / ref <= steady_tol
        if steady[i]:
            indicator[i] = appropriation_indicator(X)
    ok = np.where(steady & (np.nan_to_num(indicator) >= threshold))[0]
    index = int(ok[np.argmax(indicator[ok])]) if ok.size else -1
    meta = {"fs": fs, "threshold": threshold, "steady_tol": steady_tol,
            "amplitude_N": schedule.amplitude}
    return AppropriationResult(sig.frequencies, indicator, amplitude, peak, phasors,
                               steady, index, states, tuple(dofs), int(dof), meta)


def free_decay(model, basis, initial_state, fs, *, dof, floor=0.01, chunk=0.5,
               max_duration=60.0, output_dofs=None):
    """Unforced damped response from ``initial_state``.

    Integration proceeds in chunks of ``chunk`` seconds until the peak
    displacement at ``dof`` over the last chunk falls below ``floor`` times
    the peak of the first chunk.

    Returns
    -------
    TimeSeriesRecord
        Empty (zero samples) for a zero initial state.
    """
    check_positive(fs, "fs")
    check_positive(chunk, "chunk")
    state = check_array(initial_state, ndim=1, name="initial_state")
    dofs = list(model.translational_dofs if output_dofs is None else output_dofs)
    if dof not in dofs:
        dofs.append(dof)
    j = dofs.index(dof)
    if not np.any(state):
        return TimeSeriesRecord(fs, np.zeros((len(dofs), 0)), [f"dof{d}" for d in dofs],
                                dofs, np.zeros(0), model.forcing_dof, periods=0,
                                samples_per_period=0, final_state=state.copy(),
                                meta={"floor": floor})
    n_chunk = max(int(round(chunk * fs)), 1)
    parts, labels = [], None
    ref = None
    n_total = 0
    while n_total < max_duration * fs:
        rec = newmark_integrate(model, basis, np.zeros(n_chunk), fs, state,
                                output_dofs=dofs)
        labels = rec.labels
        state = rec.final_state
        parts.append(rec.channels)
        n_total += n_chunk
        level = np.abs(rec.channels[j]).max()
        if ref is None:
            ref = max(level, abs(initial_state[dof]))
        if level < floor * ref:
            break
    x = np.concatenate(parts, axis=1)
    return TimeSeriesRecord(fs, x, labels, dofs, np.zeros(x.shape[1]), model.forcing_dof,
                            periods=1, samples_per_period=x.shape[1], final_state=state,
                            meta={"floor": floor, "decay_dof": int(dof)})


@dataclass(frozen=True, eq=False)
class WaveletRidge:
    """Ridge of a continuous wavelet transform.

    Attributes
    ----------
    time : ndarray
    frequency : ndarray
        Instantaneous frequency (Hz).
    amplitude : ndarray
        Instantaneous amplitude (signal units).
    valid : ndarray of bool
        Outside the cone of influence.
    omega_c : float
        Center-frequency parameter of the Morlet wavelet.
    grid : ndarray
        Analysis frequencies (Hz).
    """

    time: np.ndarray
    frequency: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray
    omega_c: float
    grid: np.ndarray = field(repr=False)

    def smoothed_amplitude(self, window):
        """Centered moving average of the amplitude over ``window`` samples."""
        window = max(int(window), 1)
        k = np.ones(window) / window
        pad = np.pad(self.amplitude, (window // 2, window - 1 - window // 2), mode="edge")
        return np.convolve(pad, k, mode="valid")

    def to_csv(self, path, **meta):
        cols = {"time_s": self.time, "frequency_hz": self.frequency,
                "amplitude": self.amplitude, "valid": self.valid.astype(float)}
        return write_table_csv(path, cols, meta=dict(meta, omega_c=self.omega_c))


def morlet_cwt(x, fs, frequencies, omega_c=8.0):
    """Analytic Morlet transform normalized so a sine of amplitude ``A`` at an
    analysis frequency has modulus ``A``.

    Returns
    -------
    (n_freqs, n) complex ndarray
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    X = np.fft.fft(x, nfft)
    w = 2 * np.pi * np.fft.fftfreq(nfft, 1.0 / fs)
    out = np.empty((len(frequencies), n), dtype=complex)
    pos = w > 0
    for i, f in enumerate(frequencies):
        s = omega_c / (2 * np.pi * f)
        psi = np.zeros(nfft)
        psi[pos] = np.exp(-0.5 * (s * w[pos] - omega_c) ** 2)
        out[i] = 2 * np.fft.ifft(X * psi)[:n]
    return out


def wavelet_ridge(signal, fs, band, omega_c=8.0, voices=64):
    """Ridge of the Morlet scalogram on a log-spaced frequency grid.

    The ridge is the per-sample maximizer of the scalogram modulus, refined
    by a parabola in log-frequency. Samples closer to the record ends than
    ``sqrt(2)`` times the wavelet time scale are marked invalid.

    Raises
    ------
    ParameterError
        Band outside ``(0, fs/2)`` or narrower than three grid lines.
    """
    check_positive(fs, "fs")
    x = check_array(signal, ndim=1, name="signal")
    lo, hi = float(band[0]), float(band[1])
    if not 0 < lo < hi < fs / 2:
        raise ParameterError("wavelet band must lie inside (0, fs/2)")
    if voices < 25:
        raise ParameterError("at least 25 voices per octave are required")
    n_lines = int(math.floor(voices * math.log2(hi / lo))) + 1
    if n_lines < 3:
        raise ParameterError("band too narrow for the frequency grid")
    grid = lo * 2.0 ** (np.arange(n_lines) / voices)
    W = np.abs(morlet_cwt(x, fs, grid, omega_c))
    k = np.argmax(W, axis=0)
    kk = np.clip(k, 1, n_lines - 2)
    cols = np.arange(x.size)
    y0, y1, y2 = W[kk - 1, cols], W[kk, cols], W[kk + 1, cols]
    den = y0 - 2 * y1 + y2
    interior = (k == kk) & (den < 0)
    delta = np.where(interior, 0.5 * (y0 - y2) / np.where(den == 0, 1, den), 0.0)
    freq = np.where(interior, grid[kk] * 2.0 ** (delta / voices), grid[k])
    amp = np.where(interior, y1 - 0.25 * (y0 - y2) * delta, W[k, cols])
    t = cols / fs
    coi = np.sqrt(2) * omega_c / (2 * np.pi * freq)
    valid = (t >= coi) & (t <= t[-1] - coi) & (k > 0) & (k < n_lines - 1)
    return WaveletRidge(t, freq, amp, valid, float(omega_c), grid)


@dataclass(frozen=True)
class ComparisonReport:
    amplitudes: np.ndarray
    branch_frequency: np.ndarray
    ridge_frequency: np.ndarray
    relative_error: np.ndarray

    @property
    def max_error(self):
        return float(np.abs(self.relative_error).max())

    @property
    def mean_error(self):
        return float(np.abs(self.relative_error).mean())

    def to_dict(self):
        return {"max_relative_error": self.max_error,
                "mean_relative_error": self.mean_error,
                "n_points": int(self.amplitudes.size),
                "amplitude_range_m": [float(self.amplitudes.min()),
                                      float(self.amplitudes.max())]}


def _leading_monotone(a):
    """Length of the leading strictly increasing run of ``a``."""
    d = np.diff(a)
    bad = np.where(d <= 0)[0]
    return a.size if bad.size == 0 else int(bad[0]) + 1


def compare_backbones(branch, ridge, metric="fundamental", window=None):
    """Relative frequency error of a branch against a decay ridge.

    Parameters
    ----------
    branch : NNMBranch
    ridge : WaveletRidge
    metric : {"fundamental", "peak"}
        Branch amplitude used for matching: the first-harmonic amplitude
        (comparable to the ridge amplitude) or the peak displacement.
    window : int, optional
        Moving-average length (samples) applied to the ridge amplitude;
        the running minimum of the smoothed amplitude then gives a monotone
        amplitude axis. Defaults to one period at the lowest ridge frequency.

    Returns
    -------
    ComparisonReport

    Raises
    ------
    ComparisonError
        When the amplitude ranges do not overlap.
    """
    if metric not in ("fundamental", "peak"):
        raise ParameterError("metric must be 'fundamental' or 'peak'")
    amps = branch.fundamental_amplitudes if metric == "fundamental" else branch.amplitudes
    m = _leading_monotone(amps)
    amps, freqs = amps[:m], branch.frequencies[:m]
    v = ridge.valid
    if not v.any():
        raise ComparisonError("ridge has no valid sample")
    fs = 1.0 / (ridge.time[1] - ridge.time[0]) if ridge.time.size > 1 else 1.0
    if window is None:
        window = int(round(fs / ridge.frequency[v].min()))
    env = np.minimum.accumulate(np.where(v, ridge.smoothed_amplitude(window), np.inf))
    ra, rf = env[v][::-1], ridge.frequency[v][::-1]
    keep = np.concatenate([[True], np.diff(ra) > 0])
    ra, rf = ra[keep], rf[keep]
    sel = (amps >= ra.min()) & (amps <= ra.max())
    if sel.sum() < 1:
        raise ComparisonError("branch and ridge amplitude ranges do not overlap")
    f_ridge = np.interp(amps[sel], ra, rf)
    err = f_ridge / freqs[sel] - 1
    return ComparisonReport(amps[sel], freqs[sel], f_ridge, err)


def ridge_from_branch(branch, fs, metric="fundamental"):
    """Synthetic ridge tracing a branch, mainly for self-comparison."""
    amps = branch.fundamental_amplitudes if metric == "fundamental" else branch.amplitudes
    m = _leading_monotone(amps)
    a, f = amps[:m][::-1], branch.frequencies[:m][::-1]
    t = np.arange(a.size) / fs
    return WaveletRidge(t, f, a, np.ones(a.size, dtype=bool), float("nan"), np.unique(f))
