import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnmid.errors import ParameterError
from nnmid.excitation import (MultisineSpec, SteppedSineSchedule, generate_multisine,
                              stepped_sine_signal, write_signal_csv)
from nnmid.io import read_table_csv


def _spec(**kw):
    base = dict(f_min=5.0, f_max=500.0, samples_per_period=8192, fs=3000.0, rms=15.0,
                periods=3, seed=1)
    base.update(kw)
    return MultisineSpec(**base)


def test_rms_matches_request():
    ms = generate_multisine(_spec())
    assert np.sqrt(np.mean(ms.period ** 2)) == pytest.approx(15.0, rel=1e-12)


def test_only_band_lines_are_excited():
    ms = generate_multisine(_spec())
    X = np.fft.rfft(ms.period)
    f = np.arange(X.size) * 3000.0 / 8192
    inside = (f >= 5.0) & (f <= 500.0)
    inside[0] = False
    assert np.abs(X[~inside]).max() <= 1e-9 * np.abs(X[inside]).max()
    np.testing.assert_allclose(np.abs(X[inside]), np.abs(X[inside]).mean(), rtol=1e-9)


def test_flat_amplitude_matches_parseval():
    ms = generate_multisine(_spec())
    amp = 2 * np.abs(np.fft.rfft(ms.period))[ms.lines] / ms.samples_per_period
    np.testing.assert_allclose(amp, 15.0 * np.sqrt(2 / ms.lines.size), rtol=1e-9)


def test_signal_is_periodic():
    ms = generate_multisine(_spec())
    x = ms.signal.reshape(3, -1)
    np.testing.assert_array_equal(x[0], x[2])
    assert ms.time.size == x.size


def test_same_seed_same_signal_different_seed_differs():
    a = generate_multisine(_spec(seed=4)).period
    b = generate_multisine(_spec(seed=4)).period
    c = generate_multisine(_spec(seed=5)).period
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_band_edge_on_bin_is_included():
    spec = _spec(f_min=3000.0 / 8192 * 10, f_max=3000.0 / 8192 * 20)
    np.testing.assert_array_equal(spec.excited_lines(), np.arange(10, 21))


def test_invalid_band_raises():
    with pytest.raises(ParameterError):
        generate_multisine(_spec(f_max=1600.0))
    with pytest.raises(ParameterError):
        generate_multisine(_spec(f_min=0.01, f_max=0.02))


def test_stepped_sine_is_phase_continuous():
    sched = SteppedSineSchedule(30.0, 31.0, 0.5, 3.0, settle_periods=4, measure_periods=2)
    sig = stepped_sine_signal(sched, 10000.0)
    np.testing.assert_allclose(sig.frequencies, [30.0, 30.5, 31.0])
    dphi = np.diff(sig.phase)
    # Increments are constant inside steps and only change value at a boundary.
    changes = np.flatnonzero(np.abs(np.diff(dphi)) > 1e-12) + 1
    np.testing.assert_array_equal(changes, sig.boundaries[1:-1])
    assert np.abs(np.diff(sig.force)).max() <= 3.0 * 2 * np.pi * 31.0 / 10000.0 * 1.0001
    np.testing.assert_allclose(sig.force, 3.0 * np.sin(sig.phase))


def test_stepped_sine_measure_window_has_whole_cycles():
    sched = SteppedSineSchedule(40.0, 40.0, 0.1, 1.0, settle_periods=5, measure_periods=4)
    sig = stepped_sine_signal(sched, 8000.0)
    sl = sig.step_slice(0)
    assert sl.stop - sl.start == 4 * 200
    assert sig.step_slice(0, measure_only=False).start == 0


def test_stepped_sine_rejects_bad_input():
    with pytest.raises(ParameterError):
        stepped_sine_signal(SteppedSineSchedule(30.0, 20.0, 0.1, 1.0), 1000.0)
    with pytest.raises(ParameterError):
        stepped_sine_signal(SteppedSineSchedule(30.0, 600.0, 10.0, 1.0), 1000.0)


def test_signal_csv_roundtrip(tmp_path):
    ms = generate_multisine(_spec(periods=1))
    write_signal_csv(tmp_path / "f.csv", ms.period, 3000.0, meta={"seed": 1})
    cols, meta = read_table_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(cols["force_N"], ms.period)
    assert meta["seed"] == "1"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 100.0),
       st.integers(256, 4096).map(lambda n: 2 * n))
def test_multisine_rms_property(seed, rms, n):
    ms = generate_multisine(MultisineSpec(5.0, 400.0, n, 1000.0, rms, 1, seed))
    assert np.sqrt(np.mean(ms.period ** 2)) == pytest.approx(rms, rel=1e-12)
    assert abs(ms.period.mean()) <= 1e-12 * rms
