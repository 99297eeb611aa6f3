"""Nonlinear normal modes of undamped modal models by shooting and
pseudo-arclength continuation.

Periodic solutions are sought with zero initial velocities, so the unknowns
are the initial modal displacements and the period. The shooting residual
``z(T; z0) - z0`` and its Jacobian (through the monodromy matrix) come from
integrating the equations of motion together with their variational system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import solve_ivp
from sklearn.base import BaseEstimator

from .errors import ConvergenceError, IntegrationError, ParameterError
from .io import write_json, write_table_csv
from .simulate import _piece_eval
from .validation import check_array, check_is_fitted

RTOL = 1e-10


@numba.njit(cache=True)
def _rhs(y, omega2, phi_nl, breaks, origins, coefs, n, variational):
    dy = np.empty_like(y)
    n_nl = phi_nl.shape[0]
    dk = np.zeros(n_nl)
    for i in range(n):
        dy[i] = y[n + i]
        dy[n + i] = -omega2[i] * y[i]
    for m in range(n_nl):
        q = 0.0
        for i in range(n):
            q += phi_nl[m, i] * y[i]
        f, df = _piece_eval(breaks, origins, coefs, m, q)
        dk[m] = df
        for i in range(n):
            dy[n + i] -= phi_nl[m, i] * f
    if variational:
        s = 2 * n
        # Y is stored row-major after the state: Y[r, c] = y[s + r*s + c]
        for r in range(n):
            for c in range(s):
                dy[s + r * s + c] = y[s + (n + r) * s + c]
        for r in range(n):
            for c in range(s):
                acc = -omega2[r] * y[s + r * s + c]
                for m in range(n_nl):
                    w = phi_nl[m, r] * dk[m]
                    if w != 0.0:
                        proj = 0.0
                        for i in range(n):
                            proj += phi_nl[m, i] * y[s + i * s + c]
                        acc -= w * proj
                dy[s + (n + r) * s + c] = acc
    return dy


class _Dynamics:
    """Compiled right-hand side of a modal model."""

    def __init__(self, model):
        self.model = model
        self.n = model.n_modes
        self.omega2 = np.ascontiguousarray(model.omega0 ** 2)
        phi_nl, breaks, origins, coefs = model.compiled()
        self.args = (self.omega2, np.ascontiguousarray(phi_nl, dtype=float),
                     np.ascontiguousarray(breaks), np.ascontiguousarray(origins),
                     np.ascontiguousarray(coefs))

    def f(self, z):
        return _rhs(np.asarray(z, dtype=float), *self.args, self.n, False)

    def fun(self, variational):
        args, n = self.args, self.n

        def rhs(t, y):
            return _rhs(y, *args, n, variational)
        return rhs


def _integrate(dyn, z0, T, *, variational, rtol, dense=False, t_eval=None):
    n = dyn.n
    s = 2 * n
    z0 = np.asarray(z0, dtype=float)
    scale_q = max(np.abs(z0[:n]).max(), np.finfo(float).tiny)
    scale_v = max(np.abs(z0[n:]).max(), scale_q * dyn.model.omega0.max())
    atol_state = rtol * np.concatenate([np.full(n, scale_q), np.full(n, scale_v)])
    if variational:
        y0 = np.concatenate([z0, np.eye(s).ravel()])
        w = dyn.model.omega0.max()
        atol_var = rtol * np.concatenate([np.ones(n * s), np.full(n * s, w)])
        atol = np.concatenate([atol_state, atol_var])
    else:
        y0 = z0
        atol = atol_state
    sol = solve_ivp(dyn.fun(variational), (0.0, T), y0, method="DOP853",
                    rtol=rtol, atol=atol, dense_output=dense, t_eval=t_eval)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}",
                               time=float(sol.t[-1]) if sol.t.size else 0.0)
    return sol


def shoot(model, z0, T, *, rtol=RTOL, _dyn=None):
    """Shooting residual and monodromy matrix.

    Parameters
    ----------
    model : ModalModel
    z0 : (2*n_modes,) array_like
        Initial modal displacements and velocities.
    T : float
        Period guess (s).

    Returns
    -------
    residual : (2*n_modes,) ndarray
        ``z(T) - z0``.
    monodromy : (2*n_modes, 2*n_modes) ndarray
    """
    if not T > 0:
        raise ParameterError("period must be positive")
    dyn = _Dynamics(model) if _dyn is None else _dyn
    z0 = check_array(z0, ndim=1, name="z0")
    s = 2 * dyn.n
    if z0.size != s:
        raise ParameterError(f"z0 must have {s} entries")
    sol = _integrate(dyn, z0, T, variational=True, rtol=rtol)
    yT = sol.y[:, -1]
    return yT[:s] - z0, yT[s:].reshape(s, s)


@dataclass(frozen=True, eq=False)
class PeriodicSolution:
    """Converged periodic orbit of the conservative modal model.

    Attributes
    ----------
    z0 : ndarray
    T : float
    energy : float
    amplitude : float
        ``max |q|`` at the designated DOF over the orbit.
    fundamental_amplitude : float
        Amplitude of the first harmonic at the designated DOF.
    residual : float
        ``||z(T) - z0|| / ||z0||``.
    floquet : ndarray
        Floquet multipliers.
    orbit : (n_samples, n_meas) ndarray
        Physical displacements over one period (``Phi q_bar``).
    energy_drift : float
        Relative spread of the energy along the sampled orbit.
    """

    z0: np.ndarray
    T: float
    energy: float
    amplitude: float
    fundamental_amplitude: float
    residual: float
    floquet: np.ndarray
    orbit: np.ndarray = field(repr=False)
    energy_drift: float = 0.0
    iterations: int = 0

    @property
    def frequency(self):
        return 1.0 / self.T

    @property
    def omega(self):
        return 2 * np.pi / self.T

    @property
    def max_floquet(self):
        return float(np.abs(self.floquet).max())


def _finalize(model, dyn, z0, T, dof, residual, monodromy, n_orbit, rtol, iterations):
    t = np.linspace(0.0, T, n_orbit, endpoint=False)
    sol = _integrate(dyn, z0, T, variational=False, rtol=rtol, t_eval=t)
    qbar = sol.y[:dyn.n].T
    orbit = qbar @ model.Phi.T
    energies = model.energy(sol.y.T)
    e0 = model.energy(z0)
    drift = float(np.abs(energies - e0).max() / abs(e0)) if e0 != 0 else 0.0
    x = orbit[:, model.row(dof)]
    amp = float(max(np.abs(x).max(), abs(z0[:dyn.n] @ model.Phi[model.row(dof)])))
    fund = float(2 * np.abs(np.fft.rfft(x)[1]) / n_orbit)
    mult = np.linalg.eigvals(monodromy)
    res = float(np.linalg.norm(residual) / np.linalg.norm(z0))
    return PeriodicSolution(np.array(z0, dtype=float), float(T), float(e0), amp, fund,
                            res, mult, orbit, drift, iterations)


def _residual_parts(dyn, q0, T, rtol):
    n = dyn.n
    z0 = np.concatenate([q0, np.zeros(n)])
    H, Mono = shoot(dyn.model, z0, T, rtol=rtol, _dyn=dyn)
    zT = z0 + H
    # dH/dq0 = (M - I)[:, :n], dH/dT = f(z(T))
    J = np.empty((2 * n, n + 1))
    J[:, :n] = Mono[:, :n] - np.eye(2 * n)[:, :n]
    J[:, n] = dyn.f(zT)
    return z0, H, J, Mono


def correct(model, q0, T, *, tangent=None, scales=None, tol=1e-9,
            max_iter=10, rtol=RTOL, dof=None, n_orbit=256, _dyn=None):
    """Newton (Gauss-Newton) correction of a periodic-solution prediction.

    Parameters
    ----------
    q0 : (n_modes,) array_like
        Initial modal displacements (initial velocities are zero).
    T : float
    tangent : (n_modes + 1,) array_like, optional
        Prediction direction in scaled unknowns; corrections are kept
        orthogonal to it. By default the largest modal coordinate is held
        fixed.
    scales : (q_scale, T_scale)
        Scaling of the unknowns: ``u = (q0/q_scale, T/T_scale)``.
    tol : float
        Relative shooting residual to reach.
    dof : int, optional
        Designated DOF for the amplitude metric (default: first row).

    Raises
    ------
    ConvergenceError
    """
    dyn = _Dynamics(model) if _dyn is None else _dyn
    n = dyn.n
    q0 = np.array(q0, dtype=float)
    T = float(T)
    qs, Ts = scales if scales is not None else (max(np.abs(q0).max(), 1e-300), T)
    dof = model.dofs[0] if dof is None else dof
    D = np.concatenate([np.full(n, qs), [Ts]])
    if tangent is None:
        # Pin the dominant modal coordinate.
        direction = np.zeros(n + 1)
        direction[int(np.argmax(np.abs(q0)))] = 1.0
    else:
        direction = np.asarray(tangent, dtype=float)
    for it in range(max_iter + 1):
        z0, H, J, Mono = _residual_parts(dyn, q0, T, rtol)
        res = np.linalg.norm(H) / np.linalg.norm(z0)
        if not np.isfinite(res):
            raise ConvergenceError("shooting residual is not finite")
        if res <= tol:
            return _finalize(model, dyn, z0, T, dof, H, Mono, n_orbit, rtol, it)
        if it == max_iter:
            break
        Js = J * D  # derivative w.r.t. scaled unknowns
        A = np.vstack([Js, direction[None, :]])
        b = np.concatenate([-H, [0.0]])
        du, *_ = np.linalg.lstsq(A, b, rcond=None)
        q0 = q0 + du[:n] * qs
        T = T + du[n] * Ts
        if T <= 0:
            raise ConvergenceError("period became non-positive")
    raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {res:.2e})")


@dataclass(frozen=True, eq=False)
class NNMBranch:
    mode: int
    solutions: tuple
    dof: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.solutions)

    @property
    def frequencies(self):
        """Fundamental frequencies (Hz)."""
        return np.array([s.frequency for s in self.solutions])

    @property
    def omegas(self):
        return np.array([s.omega for s in self.solutions])

    @property
    def amplitudes(self):
        return np.array([s.amplitude for s in self.solutions])

    @property
    def fundamental_amplitudes(self):
        return np.array([s.fundamental_amplitude for s in self.solutions])

    @property
    def energies(self):
        return np.array([s.energy for s in self.solutions])

    @property
    def residuals(self):
        return np.array([s.residual for s in self.solutions])

    @property
    def max_floquet(self):
        return np.array([s.max_floquet for s in self.solutions])

    def to_csv(self, path, **meta):
        cols = {"amplitude_m": self.amplitudes,
                "fundamental_amplitude_m": self.fundamental_amplitudes,
                "energy_J": self.energies, "frequency_hz": self.frequencies,
                "residual": self.residuals, "max_floquet": self.max_floquet}
        meta = dict(meta, mode=self.mode, dof=self.dof)
        return write_table_csv(path, cols, meta=meta)

    def to_json(self, path, orbits=False, **meta):
        sols = []
        for s in self.solutions:
            item = {"z0": s.z0, "period_s": s.T, "frequency_hz": s.frequency,
                    "energy_J": s.energy, "amplitude_m": s.amplitude,
                    "fundamental_amplitude_m": s.fundamental_amplitude,
                    "residual": s.residual, "max_floquet": s.max_floquet}
            if orbits:
                item["orbit"] = s.orbit
            sols.append(item)
        return write_json(path, {"mode": self.mode, "dof": self.dof,
                                 "solutions": sols, "meta": self.meta}, **meta)


@dataclass(frozen=True)
class StepControl:
    """Adaptive step settings in scaled unknowns.

    ``max_relative_step`` caps the step at a fraction of the current norm of
    the scaled unknowns, which yields roughly geometric amplitude growth.
    """

    initial_step: float = 0.5
    min_step: float = 1e-4
    max_step: float = 1e6
    max_relative_step: float = 0.1
    grow: float = 1.3
    shrink: float = 0.5
    fast_iterations: int = 3
    max_points: int = 400


def continue_branch(model, mode, *, dof=None, max_amplitude=None, max_energy=None,
                    seed_amplitude=1e-5, step=StepControl(), tol=1e-9, rtol=RTOL,
                    max_iter=8, n_orbit=256):
    """Follow the NNM branch emanating from linear mode ``mode`` (0-based).

    Parameters
    ----------
    model : ModalModel
    mode : int
    dof : int, optional
        Designated physical DOF (default: first DOF of the model).
    max_amplitude, max_energy : float, optional
        Stop once a solution exceeds either bound (at least one required).
    seed_amplitude : float
        Physical amplitude at ``dof`` of the seed solution.
    step : StepControl
    tol : float
        Shooting residual tolerance (relative).

    Returns
    -------
    NNMBranch
        ``meta["termination"]`` records why continuation stopped.
    """
    if max_amplitude is None and max_energy is None:
        raise ParameterError("a stop rule (max_amplitude or max_energy) is required")
    if not 0 <= mode < model.n_modes:
        raise ParameterError(f"mode {mode} does not exist")
    dof = model.dofs[0] if dof is None else dof
    n = model.n_modes
    phi_d = model.Phi[model.row(dof), mode]
    if abs(phi_d) < 1e-12 * np.abs(model.Phi[:, mode]).max():
        raise ParameterError("designated DOF is a node of the requested mode")
    qs = seed_amplitude / abs(phi_d)
    T0 = 2 * np.pi / model.omega0[mode]
    D = np.concatenate([np.full(n, qs), [T0]])
    dyn = _Dynamics(model)
    q_seed = np.zeros(n)
    q_seed[mode] = qs
    kw = dict(tol=tol, rtol=rtol, dof=dof, n_orbit=n_orbit, _dyn=dyn, max_iter=max_iter)
    first = correct(model, q_seed, T0, scales=(qs, T0), **kw)
    solutions = [first]
    history = []
    u = np.concatenate([first.z0[:n], [first.T]]) / D
    tangent = _tangent(dyn, first, D, None, mode)
    ds = step.initial_step
    termination = "max_points"

    def _done(sol):
        if max_amplitude is not None and sol.amplitude >= max_amplitude:
            return True
        return max_energy is not None and sol.energy >= max_energy

    while len(solutions) < step.max_points:
        if _done(solutions[-1]):
            termination = "stop_rule"
            break
        ds = min(ds, step.max_step, step.max_relative_step * np.linalg.norm(u))
        u_pred = u + ds * tangent
        try:
            sol = correct(model, u_pred[:n] * qs, u_pred[n] * T0, tangent=tangent,
                          scales=(qs, T0), **kw)
        except (ConvergenceError, IntegrationError) as exc:
            history.append({"step": ds, "accepted": False, "reason": str(exc)})
            ds *= step.shrink
            if ds < step.min_step:
                termination = "min_step"
                warnings.warn("continuation stopped: corrector failed at minimum step",
                              stacklevel=2)
                break
            continue
        u_new = np.concatenate([sol.z0[:n], [sol.T]]) / D
        history.append({"step": ds, "accepted": True, "iterations": sol.iterations})
        new_tangent = _tangent(dyn, sol, D, tangent, mode)
        solutions.append(sol)
        u, tangent = u_new, new_tangent
        if sol.iterations <= step.fast_iterations:
            ds *= step.grow
    meta = {"termination": termination, "seed_amplitude": seed_amplitude,
            "tolerance": tol, "rtol": rtol, "history": history,
            "scales": {"q": qs, "T": T0}}
    return NNMBranch(mode, tuple(solutions), int(dof), meta)


def _tangent(dyn, sol, D, previous, mode):
    """Unit null vector of the scaled shooting Jacobian."""
    n = dyn.n
    _, _, J, _ = _residual_parts(dyn, sol.z0[:n], sol.T, RTOL)
    _, _, vt = np.linalg.svd(J * D)
    t = vt[-1]
    if previous is not None:
        if t @ previous < 0:
            t = -t
    elif t[mode] * sol.z0[mode] < 0:
        t = -t
    return t / np.linalg.norm(t)


def branch_outputs(branch, dof=None, amplitudes=None, model=None, pair=None):
    """Tables and orbits of a branch.

    Parameters
    ----------
    branch : NNMBranch
    amplitudes : sequence of float, optional
        Orbits are returned for the solutions closest to these amplitudes.
    model : ModalModel, optional
        Needed to project orbits on ``pair`` (two DOFs).

    Returns
    -------
    dict
        ``frequency_amplitude`` and ``frequency_energy`` as (n, 2) arrays and
        ``orbits`` as a list of (amplitude, orbit array) tuples.
    """
    if not len(branch):
        raise ParameterError("empty branch")
    out = {
        "frequency_amplitude": np.column_stack([branch.frequencies, branch.amplitudes]),
        "frequency_energy": np.column_stack([branch.frequencies, branch.energies]),
        "orbits": [],
    }
    for a in amplitudes or []:
        i = int(np.argmin(np.abs(np.log(branch.amplitudes) - np.log(a))))
        orbit = branch.solutions[i].orbit
        if pair is not None and model is not None:
            orbit = orbit[:, [model.row(pair[0]), model.row(pair[1])]]
        out["orbits"].append((branch.solutions[i].amplitude, orbit))
    return out


def orbit_straightness(orbit):
    """Largest distance of a 2-D orbit from its principal line, relative to
    the orbit half-extent along that line."""
    xy = np.asarray(orbit, dtype=float)
    c = xy - xy.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    along = c @ vt[0]
    across = c @ vt[1]
    return float(np.abs(across).max() / np.abs(along).max())


class NNMContinuation(BaseEstimator):
    """Estimator-style wrapper around :func:`continue_branch`.

    ``fit(modal_model)`` computes the branch of ``mode`` and stores it in
    ``branch_``; ``predict(amplitudes)`` interpolates the backbone
    frequency (Hz) at physical amplitudes.
    """

    def __init__(self, mode=0, dof=None, max_amplitude=1e-3, max_energy=None,
                 seed_amplitude=1e-5, tol=1e-9, rtol=RTOL, n_orbit=256,
                 max_relative_step=0.1):
        self.mode = mode
        self.dof = dof
        self.max_amplitude = max_amplitude
        self.max_energy = max_energy
        self.seed_amplitude = seed_amplitude
        self.tol = tol
        self.rtol = rtol
        self.n_orbit = n_orbit
        self.max_relative_step = max_relative_step

    def fit(self, model, y=None):
        self.branch_ = continue_branch(
            model, self.mode, dof=self.dof, max_amplitude=self.max_amplitude,
            max_energy=self.max_energy, seed_amplitude=self.seed_amplitude,
            tol=self.tol, rtol=self.rtol, n_orbit=self.n_orbit,
            step=StepControl(max_relative_step=self.max_relative_step))
        return self

    def predict(self, amplitudes):
        check_is_fitted(self, "branch_")
        return backbone_frequency(self.branch_, amplitudes)


def backbone_frequency(branch, amplitudes, metric="amplitude"):
    """Interpolate branch frequency (Hz) at amplitudes (log-linear)."""
    amps = branch.amplitudes if metric == "amplitude" else branch.fundamental_amplitudes
    order = np.argsort(amps)
    return np.interp(np.log(np.asarray(amplitudes, dtype=float)), np.log(amps[order]),
                     branch.frequencies[order])
