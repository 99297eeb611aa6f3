"""Synthetic measurements: nonlinear Newmark integration, zero-phase
decimation and additive measurement noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np
import scipy.linalg as sla
from scipy import signal as sps

from .basis import NonlinearBasis
from .errors import DataError, IntegrationError, ParameterError
from .io import read_table_csv, write_json, write_table_csv
from .validation import check_array, check_positive

NEWMARK_GAMMA = 0.5
NEWMARK_BETA = 0.25


@dataclass(frozen=True, eq=False)
class TimeSeriesRecord:
    """Sampled displacement channels together with the applied force.

    Attributes
    ----------
    fs : float
    channels : (n_channels, n_samples) ndarray
        Displacements (m).
    labels : tuple of str
    dofs : tuple of int
        Model DOF of each channel (``-1`` if unknown).
    force : (n_samples,) ndarray
    forcing_dof : int
    periods, samples_per_period : int
    velocities, accelerations : ndarray or None
        Same layout as ``channels`` when requested from the integrator.
    final_state : ndarray or None
        Full ``(q, q')`` state at the last sample.
    meta : dict
    """

    fs: float
    channels: np.ndarray
    labels: tuple
    dofs: tuple
    force: np.ndarray
    forcing_dof: int
    periods: int = 1
    samples_per_period: int = 0
    velocities: np.ndarray | None = None
    accelerations: np.ndarray | None = None
    final_state: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ch = np.atleast_2d(np.asarray(self.channels, dtype=float))
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "dofs", tuple(int(d) for d in self.dofs))
        if self.samples_per_period == 0:
            object.__setattr__(self, "samples_per_period", ch.shape[1] // max(self.periods, 1))
        if len(set(self.labels)) != len(self.labels):
            raise DataError("channel labels must be unique")
        if len(self.labels) != ch.shape[0] or len(self.dofs) != ch.shape[0]:
            raise DataError("one label and one DOF per channel are required")
        if self.force.shape != (ch.shape[1],):
            raise DataError("force and channels must have the same length")
        if ch.shape[1] != self.periods * self.samples_per_period:
            raise DataError("record length must equal periods * samples_per_period")

    @property
    def n_samples(self):
        return self.channels.shape[1]

    @property
    def time(self):
        return np.arange(self.n_samples) / self.fs

    def channel(self, label):
        try:
            return self.channels[self.labels.index(label)]
        except ValueError:
            raise DataError(f"no channel labelled {label!r}") from None

    def channel_index(self, dof):
        try:
            return self.dofs.index(int(dof))
        except ValueError:
            raise DataError(f"DOF {dof} is not measured") from None

    def metadata(self):
        return {"fs": self.fs, "periods": self.periods,
                "samples_per_period": self.samples_per_period,
                "labels": list(self.labels), "dofs": list(self.dofs),
                "forcing_dof": self.forcing_dof, **self.meta}

    def to_csv(self, path, **meta):
        """Write ``<path>`` (time + force + channels) and a JSON sidecar."""
        path = Path(path)
        cols = {"time_s": self.time, "force_N": self.force}
        for label, x in zip(self.labels, self.channels):
            cols[label] = x
        header_meta = {"fs": repr(float(self.fs)), "periods": self.periods,
                       "samples_per_period": self.samples_per_period}
        header_meta.update(meta)
        write_table_csv(path, cols, meta=header_meta)
        write_json(path.with_suffix(".json"), self.metadata(), **meta)
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        cols, _ = read_table_csv(path)
        side = json.loads(path.with_suffix(".json").read_text())
        labels = side["labels"]
        extra = {k: v for k, v in side.items() if k not in (
            "fs", "periods", "samples_per_period", "labels", "dofs", "forcing_dof")}
        return cls(fs=float(side["fs"]),
                   channels=np.array([cols[l] for l in labels]),
                   labels=labels, dofs=side["dofs"], force=cols["force_N"],
                   forcing_dof=side["forcing_dof"], periods=side["periods"],
                   samples_per_period=side["samples_per_period"], meta=extra)


@numba.njit(cache=True)
def _piece_eval(breaks, origins, coefs, i, x):
    """Force and stiffness of the piecewise polynomial of nonlinear DOF i."""
    lo, hi = 0, breaks.shape[1]
    while lo < hi:
        mid = (lo + hi) // 2
        if x < breaks[i, mid]:
            hi = mid
        else:
            lo = mid + 1
    y = x - origins[i, lo]
    deg = coefs.shape[2] - 1
    f = coefs[i, lo, deg]
    df = 0.0
    for k in range(deg - 1, -1, -1):
        df = df * y + f
        f = f * y + coefs[i, lo, k]
    return f, df


@numba.njit(cache=True)
def _newmark_kernel(A1, A2, A3, kf, KinvS, Kss, nl_dofs, breaks, origins, coefs,
                    p, u, v, a, c0, c2, c3, h, gamma, out_idx, store_rates,
                    disp, vel, acc, tol, max_iter):
    n = u.shape[0]
    n_nl = nl_dofs.shape[0]
    n_out = out_idx.shape[0]
    u_lin = np.empty(n)
    u_new = np.empty(n)
    fS = np.empty(n_nl)
    dfS = np.empty(n_nl)
    uS = np.empty(n_nl)
    r = np.empty(n_nl)
    J = np.empty((n_nl, n_nl))
    for j in range(n_out):
        disp[j, 0] = u[out_idx[j]]
        if store_rates:
            vel[j, 0] = v[out_idx[j]]
            acc[j, 0] = a[out_idx[j]]
    n_steps = p.shape[0]
    for step in range(1, n_steps):
        pk = p[step]
        for i in range(n):
            s = kf[i] * pk
            for j in range(n):
                s += A1[i, j] * u[j] + A2[i, j] * v[j] + A3[i, j] * a[j]
            u_lin[i] = s
        if n_nl > 0:
            # Condensed Newton on the nonlinear DOFs:
            # u_S - u_lin_S + Kinv_SS f(u_S) = 0
            for m in range(n_nl):
                f, df = _piece_eval(breaks, origins, coefs, m, u[nl_dofs[m]])
                fS[m] = f
            for m in range(n_nl):
                s = u_lin[nl_dofs[m]]
                for q in range(n_nl):
                    s -= Kss[m, q] * fS[q]
                uS[m] = s
            converged = False
            for it in range(max_iter + 1):
                scale = 0.0
                for m in range(n_nl):
                    f, df = _piece_eval(breaks, origins, coefs, m, uS[m])
                    fS[m] = f
                    dfS[m] = df
                    if abs(uS[m]) > scale:
                        scale = abs(uS[m])
                    if abs(u_lin[nl_dofs[m]]) > scale:
                        scale = abs(u_lin[nl_dofs[m]])
                rmax = 0.0
                for m in range(n_nl):
                    s = uS[m] - u_lin[nl_dofs[m]]
                    for q in range(n_nl):
                        s += Kss[m, q] * fS[q]
                    r[m] = s
                    if abs(s) > rmax:
                        rmax = abs(s)
                if not math.isfinite(rmax):
                    break
                if rmax <= tol * scale or rmax == 0.0:
                    converged = True
                    break
                if it == max_iter:
                    break
                for m in range(n_nl):
                    for q in range(n_nl):
                        J[m, q] = Kss[m, q] * dfS[q]
                    J[m, m] += 1.0
                if n_nl == 1:
                    uS[0] -= r[0] / J[0, 0]
                else:
                    du = np.linalg.solve(J, r)
                    for m in range(n_nl):
                        uS[m] -= du[m]
            if not converged:
                return step
            for i in range(n):
                s = u_lin[i]
                for q in range(n_nl):
                    s -= KinvS[i, q] * fS[q]
                u_new[i] = s
        else:
            for i in range(n):
                u_new[i] = u_lin[i]
        for i in range(n):
            a_new = c0 * (u_new[i] - u[i]) - c2 * v[i] - c3 * a[i]
            v[i] = v[i] + h * ((1.0 - gamma) * a[i] + gamma * a_new)
            a[i] = a_new
            u[i] = u_new[i]
        for j in range(n_out):
            disp[j, step] = u[out_idx[j]]
            if store_rates:
                vel[j, step] = v[out_idx[j]]
                acc[j, step] = a[out_idx[j]]
    return -1


def _nonlinear_force(basis, u):
    out = np.zeros_like(u)
    for term in basis.terms:
        out[term.dof] += term.coefficient * float(term.values(u[term.dof]))
    return out


def newmark_integrate(model, basis, force, fs, initial_state=None, *,
                      output_dofs=None, labels=None, periods=1,
                      force_dof=None, return_rates=False, tol=1e-10,
                      max_iter=25):
    """Integrate ``M q'' + C q' + K q + f_nl(q) = p(t)`` with average
    acceleration Newmark and Newton iterations.

    Parameters
    ----------
    model : FEModel
    basis : NonlinearBasis or None
    force : (n_samples,) array_like
        Force samples at ``t_n = n/fs`` applied to ``force_dof``
        (default ``model.forcing_dof``).
    fs : float
    initial_state : (2*n_p,) array_like, optional
        Displacements then velocities at ``t_0``; zero by default.
    output_dofs : sequence of int, optional
        DOFs to store (default: all free translations).
    periods : int
        Number of periods contained in ``force`` (record metadata).
    return_rates : bool
        Also store velocities and accelerations.
    tol, max_iter :
        Newton tolerance on the condensed residual (relative to the
        nonlinear-DOF displacement scale) and iteration cap.

    Returns
    -------
    TimeSeriesRecord
        ``final_state`` holds the full state at the last sample.

    Raises
    ------
    IntegrationError
        When Newton fails to converge; ``step`` gives the sample index.
    """
    check_positive(fs, "fs")
    force = check_array(force, ndim=1, name="force")
    n = model.n_p
    basis = NonlinearBasis() if basis is None else basis
    if initial_state is None:
        initial_state = np.zeros(2 * n)
    state = check_array(initial_state, ndim=1, name="initial_state")
    if state.size != 2 * n:
        raise ParameterError(f"initial state must have {2 * n} entries")
    if output_dofs is None:
        output_dofs = model.translational_dofs
    output_dofs = np.asarray(output_dofs, dtype=np.int64)
    if labels is None:
        inv = {v[0]: k for k, v in model.dof_map.items() if v[0] is not None}
        labels = [f"node{inv[d]}" if d in inv else f"dof{d}" for d in output_dofs]
    force_dof = model.forcing_dof if force_dof is None else force_dof

    h = 1.0 / fs
    gamma, beta = NEWMARK_GAMMA, NEWMARK_BETA
    c0 = 1.0 / (beta * h * h)
    c1 = gamma / (beta * h)
    c2 = 1.0 / (beta * h)
    c3 = 1.0 / (2 * beta) - 1.0
    c4 = gamma / beta - 1.0
    c5 = h / 2.0 * (gamma / beta - 2.0)
    M, C, K = model.M, model.C_v, model.K
    Keff = K + c0 * M + c1 * C
    Kinv = sla.inv(Keff)
    A1 = Kinv @ (c0 * M + c1 * C)
    A2 = Kinv @ (c2 * M + c4 * C)
    A3 = Kinv @ (c3 * M + c5 * C)
    kf = Kinv[:, force_dof].copy()
    nl_dofs, breaks, origins, coefs = basis.piecewise(n)
    if breaks.shape[1] == 0:
        breaks = np.full((len(nl_dofs), 1), np.inf)
        origins = np.concatenate([origins, origins], axis=1)
        coefs = np.concatenate([coefs, coefs], axis=1)
    KinvS = np.ascontiguousarray(Kinv[:, nl_dofs])
    Kss = np.ascontiguousarray(Kinv[np.ix_(nl_dofs, nl_dofs)])

    u = state[:n].copy()
    v = state[n:].copy()
    p0 = np.zeros(n)
    if force.size:
        p0[force_dof] = force[0]
    a = sla.solve(M, p0 - C @ v - K @ u - _nonlinear_force(basis, u), assume_a="pos")
    n_samples = force.size
    n_out = output_dofs.size
    disp = np.empty((n_out, n_samples))
    if return_rates:
        vel = np.empty((n_out, n_samples))
        acc = np.empty((n_out, n_samples))
    else:
        vel = acc = np.empty((0, 0))
    if n_samples:
        status = _newmark_kernel(A1, A2, A3, kf, KinvS, Kss, nl_dofs, breaks,
                                 origins, coefs, force, u, v, a, c0, c2, c3, h,
                                 gamma, output_dofs, return_rates, disp, vel,
                                 acc, tol, max_iter)
        if status >= 0:
            raise IntegrationError(
                f"Newton iterations did not converge at step {status}",
                step=int(status), time=status / fs)
    spp = n_samples // periods if periods else n_samples
    return TimeSeriesRecord(
        fs=float(fs), channels=disp, labels=labels, dofs=output_dofs.tolist(),
        force=force.copy(), forcing_dof=int(force_dof), periods=int(periods),
        samples_per_period=spp,
        velocities=vel if return_rates else None,
        accelerations=acc if return_rates else None,
        final_state=np.concatenate([u, v]))


def total_energy(model, basis, q, qdot):
    """Kinetic + linear strain + nonlinear potential energy.

    ``q`` and ``qdot`` hold full state vectors in their last axis.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    kin = 0.5 * np.einsum("...i,ij,...j->...", qdot, model.M, qdot)
    pot = 0.5 * np.einsum("...i,ij,...j->...", q, model.K, q)
    if basis is not None and len(basis):
        pot = pot + basis.potential(q)
    return kin + pot


def anti_alias_filter(fs, factor, order=8, fraction=0.8):
    """Butterworth low-pass (SOS) at ``fraction`` of the decimated Nyquist."""
    cutoff = fraction * fs / factor / 2.0
    return sps.butter(order, cutoff, fs=fs, output="sos")


def decimate(record, factor):
    """Zero-phase low-pass filtering followed by keeping every ``factor``-th sample.

    The end of the record is extended with a copy of its last period before
    filtering so that the steady-state periods are not distorted by the
    filter start-up at that edge.
    """
    check_positive(factor, "factor", integer=True)
    if factor == 1:
        return record
    spp = record.samples_per_period
    if spp % factor:
        raise ParameterError(
            f"decimation factor {factor} does not divide the period length {spp}")
    sos = anti_alias_filter(record.fs, factor)

    def _filt(x):
        ext = np.concatenate([x, x[-spp:]])
        return sps.sosfiltfilt(sos, ext)[:x.size][::factor]

    channels = np.empty((record.channels.shape[0], record.n_samples // factor))
    for i, x in enumerate(record.channels):
        channels[i] = _filt(x)
    return replace(record, fs=record.fs / factor, channels=channels,
                   force=_filt(record.force), samples_per_period=spp // factor,
                   velocities=None, accelerations=None)


def rms(x, axis=-1):
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.mean(x ** 2, axis=axis))


def add_noise(record, level, reference_channel, seed=None):
    """Add white Gaussian noise of equal standard deviation to every channel.

    Parameters
    ----------
    level : float
        Noise standard deviation as a fraction of the RMS of the reference
        channel.
    reference_channel : str or int
        Label or channel index.
    seed : int, optional

    Returns
    -------
    noisy : TimeSeriesRecord
    snr : dict of label -> dB
        ``20 log10(RMS(channel)/sigma)``; ``inf`` when ``level == 0``.
    """
    if level < 0 or not np.isfinite(level):
        raise ParameterError("noise level must be a finite non-negative number")
    if isinstance(reference_channel, str):
        ref = record.channel(reference_channel)
    else:
        ref = record.channels[int(reference_channel)]
    sigma = level * rms(ref)
    clean_rms = rms(record.channels)
    if sigma == 0.0:
        return record, {l: math.inf for l in record.labels}
    rng = np.random.default_rng(seed)
    noisy = record.channels + sigma * rng.standard_normal(record.channels.shape)
    snr = {l: float(20 * np.log10(r / sigma)) for l, r in zip(record.labels, clean_rms)}
    meta = dict(record.meta, noise_sigma=float(sigma), noise_level=float(level),
                noise_seed=seed)
    return replace(record, channels=noisy, meta=meta), snr
