import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from sklearn.exceptions import NotFittedError

from nnmid.basis import NonlinearBasis, polynomial_basis
from nnmid.continuation import (NNMBranch, NNMContinuation, backbone_frequency,
                                branch_outputs, continue_branch, correct,
                                orbit_straightness, shoot)
from nnmid.errors import ParameterError
from nnmid.model import FEModel
from nnmid.modal import ModalModel, modal_model_from_fe


def _duffing(c=0.5, w=1.0):
    basis = polynomial_basis([3], 0, [c]) if c else NonlinearBasis()
    return ModalModel([w], [0.0], [[1.0]], (0,), ("q",), basis)


def _two_dof():
    fe2 = FEModel.from_matrices(np.eye(2), [[2.0, -1.0], [-1.0, 2.0]])
    return modal_model_from_fe(fe2, polynomial_basis([3], 0, [0.5]), 2, labels=["x1", "x2"])


@pytest.fixture(scope="module")
def two_dof_branches():
    mm = _two_dof()
    return mm, [continue_branch(mm, m, dof=0, max_energy=10.0, seed_amplitude=1e-3)
                for m in (0, 1)]


@pytest.fixture(scope="module")
def benchmark_branch(true_modal, tip_dof):
    return continue_branch(true_modal, 0, dof=tip_dof, max_amplitude=1e-3)


def test_linear_shooting_residual_is_zero():
    mm = _duffing(0.0, 3.0)
    H, mono = shoot(mm, [0.2, 0.0], 2 * np.pi / 3.0)
    assert np.abs(H).max() <= 1e-9 * 0.2
    np.testing.assert_allclose(mono, np.eye(2), atol=1e-8)


def test_shoot_rejects_bad_input():
    with pytest.raises(ParameterError):
        shoot(_duffing(), [0.1, 0.0], 0.0)
    with pytest.raises(ParameterError):
        shoot(_duffing(), [0.1, 0.0, 0.0], 1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.5, 10.0))
def test_monodromy_determinant_is_one(a, T):
    _, mono = shoot(_two_dof(), [a, -0.3 * a, 0.1 * a, 0.0], T)
    assert abs(np.linalg.det(mono) - 1) <= 1e-6


def test_duffing_period_tends_to_linear_limit():
    periods = [correct(_duffing(), [a], 2 * np.pi).T for a in (0.3, 0.1, 0.03, 0.01)]
    err = np.abs(np.array(periods) - 2 * np.pi)
    assert np.all(np.diff(err) < 0)
    # First-order perturbation: w = 1 + 3/8 c a^2.
    assert periods[-1] == pytest.approx(2 * np.pi / (1 + 3 / 16 * 1e-4), rel=1e-7)


def test_exact_solution_needs_no_iteration():
    sol = correct(_duffing(), [0.5], 2 * np.pi)
    again = correct(_duffing(), sol.z0[:1], sol.T)
    assert again.iterations == 0
    np.testing.assert_array_equal(again.z0, sol.z0)


def test_perturbed_linear_mode_converges_quickly(fe):
    mm = modal_model_from_fe(fe, None, 3)
    w = mm.omega0[0]
    sol = correct(mm, [1e-4 * 1.01, 1e-8, 0.0], 2 * np.pi / w * 1.01, tol=1e-9)
    assert sol.iterations <= 5 and sol.residual <= 1e-9
    assert sol.T == pytest.approx(2 * np.pi / w, rel=1e-9)


def test_two_dof_in_phase_solution_matches_brute_force_period():
    mm = _two_dof()
    a = 1.0 / mm.Phi[0, 0]
    sol = correct(mm, [a, 0.0], 2 * np.pi)
    assert sol.residual <= 1e-9 and sol.T < 2 * np.pi

    def rhs(t, z):
        q1, q2 = z[0], z[1]
        return [z[2], z[3], -(2 * q1 - q2) - 0.5 * q1 ** 3, -(2 * q2 - q1)]

    x0 = mm.Phi @ sol.z0[:2]
    # Poincare return: velocity of x1 crosses zero from above at its minimum,
    # then from below at the next maximum.
    ev = lambda t, z: z[2]
    ev.direction = -1
    out = solve_ivp(rhs, (0, 3 * sol.T), [x0[0], x0[1], 0.0, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, events=ev)
    t_max = out.t_events[0]
    assert np.diff(t_max)[0] == pytest.approx(sol.T, rel=1e-7)


def test_two_dof_low_energy_limits(two_dof_branches):
    _, (b1, b2) = two_dof_branches
    assert b1.omegas[0] == pytest.approx(1.0, rel=1e-3)
    assert b2.omegas[0] == pytest.approx(np.sqrt(3.0), rel=1e-3)


def test_two_dof_in_phase_branch_hardens(two_dof_branches):
    _, (b1, _) = two_dof_branches
    e = b1.energies
    assert np.all(np.diff(e) > 0) and np.all(np.diff(b1.frequencies) > 0)
    assert e[-1] / e[0] >= 1e3
    assert b1.meta["termination"] == "stop_rule"


def test_branch_solutions_satisfy_invariants(two_dof_branches):
    _, branches = two_dof_branches
    for br in branches:
        assert np.all(br.residuals <= 1e-9)
        for s in br.solutions:
            assert s.energy_drift <= 1e-8
            mu = np.sort_complex(s.floquet)
            assert abs(np.prod(mu) - 1) <= 1e-6
            # Reciprocal pairs: each multiplier has a partner mu' with mu mu' = 1.
            for m in mu:
                assert np.min(np.abs(m * mu - 1)) <= 1e-4


def test_branch_arclength_is_monotone(two_dof_branches):
    _, (b1, _) = two_dof_branches
    u = np.array([np.r_[s.z0[:2], s.T] for s in b1.solutions])
    d = np.linalg.norm(u - u[0], axis=1)
    assert np.all(np.diff(d) > 0)


def test_linear_branch_has_constant_frequency():
    mm = _duffing(0.0, 2.0)
    br = continue_branch(mm, 0, dof=0, max_amplitude=1e-2, seed_amplitude=1e-4)
    np.testing.assert_allclose(br.frequencies, 2.0 / (2 * np.pi), rtol=1e-9)
    assert len(br) > 3


def test_stop_rule_required():
    with pytest.raises(ParameterError):
        continue_branch(_duffing(), 0)
    with pytest.raises(ParameterError):
        continue_branch(_duffing(), 3, max_energy=1.0)


def test_branch_outputs_and_files(tmp_path, two_dof_branches):
    mm, (b1, _) = two_dof_branches
    out = branch_outputs(b1, amplitudes=[0.5], model=mm, pair=(0, 1))
    assert out["frequency_amplitude"].shape == (len(b1), 2)
    amp, orbit = out["orbits"][0]
    assert orbit.shape == (256, 2)
    b1.to_csv(tmp_path / "b.csv")
    b1.to_json(tmp_path / "b.json", orbits=True)
    from nnmid.io import read_json, read_table_csv
    cols, meta = read_table_csv(tmp_path / "b.csv")
    np.testing.assert_array_equal(cols["frequency_hz"], b1.frequencies)
    assert meta["mode"] == "0"
    assert len(read_json(tmp_path / "b.json")["solutions"]) == len(b1)


def test_orbit_straightness_of_line_and_ellipse():
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    assert orbit_straightness(np.column_stack([np.cos(t), 2 * np.cos(t)])) <= 1e-12
    assert orbit_straightness(np.column_stack([np.cos(t), np.sin(t)])) == pytest.approx(1.0)


def test_estimator_api():
    est = NNMContinuation(mode=0, dof=0, max_amplitude=0.5, seed_amplitude=1e-2)
    with pytest.raises(NotFittedError):
        est.predict([0.1])
    est.fit(_duffing())
    f = est.predict([0.1, 0.4])
    assert f[1] > f[0] > 1 / (2 * np.pi)
    np.testing.assert_allclose(f, backbone_frequency(est.branch_, [0.1, 0.4]))


def test_benchmark_backbone_shape(benchmark_branch):
    f = benchmark_branch.frequencies
    f0 = f[0]
    assert f0 == pytest.approx(31.28, rel=1e-3)
    assert -0.02 <= f.min() / f0 - 1 <= -0.005
    f_1mm = backbone_frequency(benchmark_branch, [1e-3])[0]
    assert 0.03 <= f_1mm / f0 - 1 <= 0.05
    assert np.all(benchmark_branch.residuals <= 1e-9)


def test_benchmark_orbits_straight_then_curved(benchmark_branch, true_modal, tip_dof):
    out = branch_outputs(benchmark_branch, amplitudes=[2e-4, 1e-3], model=true_modal,
                         pair=(true_modal.dofs[6], tip_dof))
    (a_lo, o_lo), (a_hi, o_hi) = out["orbits"]
    assert a_lo == pytest.approx(2e-4, rel=0.1) and a_hi == pytest.approx(1e-3, rel=0.1)
    assert orbit_straightness(o_lo) < 0.01
    assert orbit_straightness(o_hi) > 0.01
