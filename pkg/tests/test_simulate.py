import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnmid.basis import benchmark_basis, polynomial_basis
from nnmid.excitation import MultisineSpec, generate_multisine
from nnmid.errors import DataError, ParameterError
from nnmid.model import FEModel
from nnmid.simulate import (TimeSeriesRecord, add_noise, decimate, newmark_integrate,
                            rms, total_energy)


def _sdof(k=1.0e4, m=1.0, c=0.0):
    return FEModel.from_matrices([[m]], [[k]], [[c]])


def test_free_vibration_matches_newmark_period_elongation():
    # Average acceleration keeps the amplitude and maps w to
    # 2/h * atan(w h / 2) exactly for an undamped oscillator.
    k, fs = 1.0e4, 200.0
    w = np.sqrt(k)
    h = 1 / fs
    w_num = 2 / h * np.arctan(w * h / 2)
    rec = newmark_integrate(_sdof(k), None, np.zeros(400), fs, initial_state=[1e-3, 0.0])
    t = rec.time
    np.testing.assert_allclose(rec.channels[0], 1e-3 * np.cos(w_num * t), atol=1e-15)


def test_zero_force_zero_state_stays_at_rest(fe):
    rec = newmark_integrate(fe, benchmark_basis(fe), np.zeros(500), 60000.0)
    assert not np.any(rec.channels)


def test_linear_energy_is_conserved(fe):
    rec = newmark_integrate(FEModel(fe.M, fe.K, dof_map=fe.dof_map), None, np.zeros(3000),
                            60000.0, initial_state=np.r_[fe.mode_shapes(1)[:, 0] * 1e-3,
                                                         np.zeros(fe.n_p)],
                            output_dofs=range(fe.n_p), return_rates=True)
    e = total_energy(fe, None, rec.channels.T, rec.velocities.T)
    assert np.abs(e - e[0]).max() <= 1e-10 * e[0]


def test_nonlinear_energy_drift_per_period(fe, tip_dof):
    # One mode-1 period at the benchmark rate, undamped.
    free = FEModel(fe.M, fe.K, dof_map=fe.dof_map)
    basis = benchmark_basis(fe)
    q0 = fe.mode_shapes(1)[:, 0]
    q0 = q0 * 5e-4 / abs(q0[tip_dof])
    n = int(60000 / 31.3)
    rec = newmark_integrate(free, basis, np.zeros(n), 60000.0,
                            initial_state=np.r_[q0, np.zeros(fe.n_p)],
                            output_dofs=range(fe.n_p), return_rates=True)
    e = total_energy(fe, basis, rec.channels.T, rec.velocities.T)
    assert abs(e[-1] - e[0]) <= 1e-6 * e[0]


def test_driven_linear_steady_state_matches_frf():
    k, m, c, fs, f = 4.0e4, 1.0, 4.0, 4000.0, 25.0
    t = np.arange(int(fs * 20)) / fs
    rec = newmark_integrate(_sdof(k, m, c), None, np.sin(2 * np.pi * f * t), fs)
    last = rec.channels[0, -int(fs / f) * 4:]
    amp = np.sqrt(2) * rms(last)
    w = 2 * np.pi * f
    assert amp == pytest.approx(1 / abs(k - m * w * w + 1j * c * w), rel=2e-3)


def _sine_record(f, fs, n, periods=1):
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * f * t)
    return TimeSeriesRecord(fs=fs, channels=x[None], labels=["x"], dofs=[0], force=x,
                            forcing_dof=0, periods=periods)


def test_decimation_preserves_in_band_sine():
    rec = _sine_record(100.0, 60000.0, 3 * 6000, periods=3)
    dec = decimate(rec, 20)
    assert dec.fs == 3000.0 and dec.n_samples == 900 and dec.samples_per_period == 300
    last = dec.channels[0, -300:]
    amp = 2 * np.abs(np.fft.rfft(last))[10] / 300
    assert amp == pytest.approx(1.0, rel=1e-3)
    np.testing.assert_allclose(last, np.sin(2 * np.pi * 100 * dec.time[-300:]), atol=1e-3)
    np.testing.assert_allclose(dec.force[-300:], last)


def test_decimation_removes_out_of_band_sine():
    rec = _sine_record(5000.0, 60000.0, 3 * 6000, periods=3)
    assert rms(decimate(rec, 20).channels[0, -300:]) <= 1e-6


def test_decimation_factor_must_divide_period():
    with pytest.raises(ParameterError):
        decimate(_sine_record(100.0, 60000.0, 60000), 7)


def test_noise_level_sets_reference_snr():
    rec = _sine_record(10.0, 1000.0, 100000)
    noisy, snr = add_noise(rec, 0.01, "x", seed=3)
    assert snr["x"] == pytest.approx(40.0, abs=1e-9)
    assert rms(noisy.channels[0] - rec.channels[0]) == pytest.approx(0.01 * rms(rec.channels[0]), rel=0.01)
    again, _ = add_noise(rec, 0.01, "x", seed=3)
    np.testing.assert_array_equal(again.channels, noisy.channels)


def test_zero_noise_returns_record():
    rec = _sine_record(10.0, 1000.0, 1000)
    noisy, snr = add_noise(rec, 0.0, 0)
    assert noisy is rec and snr["x"] == np.inf


def test_benchmark_snr_range(benchmark_noisy):
    _, snr = benchmark_noisy
    assert snr["node14"] == pytest.approx(40.0, abs=1e-9)
    assert min(snr.values()) < snr["node14"]


def test_record_validation():
    with pytest.raises(DataError):
        TimeSeriesRecord(fs=1.0, channels=np.zeros((2, 4)), labels=["a", "a"], dofs=[0, 1],
                         force=np.zeros(4), forcing_dof=0)
    with pytest.raises(DataError):
        TimeSeriesRecord(fs=1.0, channels=np.zeros((1, 4)), labels=["a"], dofs=[0],
                         force=np.zeros(3), forcing_dof=0)


def test_record_csv_roundtrip(tmp_path):
    rec = _sine_record(3.0, 100.0, 200, periods=2)
    rec.to_csv(tmp_path / "r.csv", seed=1)
    back = TimeSeriesRecord.from_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.channels, rec.channels)
    assert back.periods == 2 and back.samples_per_period == 100 and back.meta["seed"] == 1


def test_steady_state_is_periodic(fe):
    # Short-period setting: transients die out within the simulated periods.
    periods = 18
    sig = generate_multisine(MultisineSpec(5.0, 500.0, 32760, 60000.0, 15.0, periods, seed=1))
    rec = newmark_integrate(fe, benchmark_basis(fe), sig.signal, 60000.0,
                            output_dofs=[fe.translation_dof(14)], periods=periods)
    x = rec.channels[0].reshape(periods, -1)
    assert rms(x[-1] - x[-2]) <= 1e-8 * rms(x[-1])


def test_linear_modal_superposition_agrees(fe):
    # Steady state of a zero-coefficient model against the exact FRF per line.
    sig = generate_multisine(MultisineSpec(5.0, 500.0, 6000, 6000.0, 15.0, 6, seed=2))
    rec = newmark_integrate(fe, polynomial_basis([3, 2], fe.translation_dof(14), [0.0, 0.0]),
                            sig.signal, 6000.0, output_dofs=[fe.translation_dof(14)],
                            periods=6)
    last = rec.channels[0, -6000:]
    X = np.fft.rfft(last)[sig.lines]
    F = np.fft.rfft(sig.period)[sig.lines]
    w = 2 * np.pi * sig.frequencies
    # Newmark average acceleration is the bilinear map of the continuous system.
    h = 1 / 6000.0
    w_b = 2 / h * np.tan(w * h / 2)
    G = fe.frf(w_b, dofs_out=[fe.translation_dof(14)])[:, 0]
    np.testing.assert_allclose(X, G * F, rtol=1e-3, atol=1e-3 * np.abs(G * F).max())


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-1e-3, 1e-3))
def test_response_scales_with_force_when_linear(scale, q0):
    model = _sdof(1.0e4, 1.0, 2.0)
    f = np.sin(np.arange(300) / 20.0)
    r1 = newmark_integrate(model, None, f, 200.0, initial_state=[q0, 0.0]).channels
    r2 = newmark_integrate(model, None, scale * f, 200.0,
                           initial_state=[scale * q0, 0.0]).channels
    np.testing.assert_allclose(r2, scale * r1, rtol=1e-9, atol=1e-18)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-5, 1e-3))
def test_cubic_sdof_conserves_energy(a):
    model = _sdof(1.0e4, 1.0)
    basis = polynomial_basis([3], 0, [1e10])
    # One linear period at the benchmark sampling rate.
    rec = newmark_integrate(model, basis, np.zeros(3770), 60000.0, initial_state=[a, 0.0],
                            output_dofs=[0], return_rates=True)
    e = total_energy(model, basis, rec.channels.T, rec.velocities.T)
    assert np.abs(e - e[0]).max() <= 1e-6 * e[0]
