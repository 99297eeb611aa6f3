"""Frequency-domain nonlinear subspace identification.

Nonlinear restoring forces are treated as additional inputs to the
underlying linear structure. With the extended input
``e = [p, h_1(q), ..., h_s(q)]`` the measured displacements obey
``Q(w) = G_s(w) E(w)`` with ``G_s = G [1, -c_1, ..., -c_s]`` column-wise,
so a linear state-space model driven by ``e`` yields both the linear FRFs
and the nonlinear coefficients.

The subspace step works on a discrete frequency variable ``z`` built from the
processed DFT lines. By default ``z`` is the bilinear image of ``jw``, which
makes the step exact for data generated by a continuous-time system of the
model order; ``time_map="logm"`` uses ``z = exp(jw/fs)`` instead, exact for
discrete-time systems, and converts ``A`` with a matrix logarithm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from .errors import (DataError, NumericalWarning, OrderTooHighError,
                     ParameterError)
from .io import read_json, write_json, write_table_csv
from .validation import check_array, check_is_fitted, check_positive


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Period-averaged spectra at the processed DFT lines.

    Attributes
    ----------
    frequencies : (F,) ndarray
        Hz.
    lines : (F,) int ndarray
        DFT bin indices at one-period resolution.
    Q : (F, p) complex ndarray
        Output spectra.
    P : (F,) complex ndarray
        Force spectrum.
    H : (F, s) complex ndarray
        Basis-function spectra.
    noise_cov : (F, p, p) complex ndarray or None
        Covariance of the averaged output spectra.
    fs : float
    n_averaged : int
    labels, dofs : tuple
        Output channels.
    forcing_dof : int
    basis : NonlinearBasis
    """

    frequencies: np.ndarray
    lines: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    H: np.ndarray
    noise_cov: np.ndarray | None
    fs: float
    n_averaged: int
    labels: tuple
    dofs: tuple
    forcing_dof: int
    basis: object = None
    samples_per_period: int = 0

    @property
    def E(self):
        """Extended input spectrum ``[P, H_1, ..., H_s]``, shape ``(F, 1+s)``."""
        return np.column_stack([self.P, self.H])

    @property
    def n_meas(self):
        return self.Q.shape[1]

    def subset(self, mask):
        mask = np.asarray(mask)
        return SpectralData(
            self.frequencies[mask], self.lines[mask], self.Q[mask], self.P[mask],
            self.H[mask], None if self.noise_cov is None else self.noise_cov[mask],
            self.fs, self.n_averaged, self.labels, self.dofs, self.forcing_dof,
            self.basis, self.samples_per_period)


def build_spectra(record, basis=None, discard_periods=5, band=None,
                  covariance=True):
    """Average retained periods and transform them at one-period resolution.

    Parameters
    ----------
    record : TimeSeriesRecord
    basis : NonlinearBasis, optional
        Evaluated sample by sample on the measured displacements; every term
        DOF must be a measured channel.
    discard_periods : int
        Leading periods dropped as transient.
    band : (f_min, f_max), optional
        Lines kept. Defaults to the lines where the force spectrum is not
        negligible.
    covariance : bool
        Estimate the per-line covariance of the averaged output spectra
        from the scatter across periods.

    Notes
    -----
    Spectra use the ``X_k = (1/N) sum_n x_n exp(-2j pi k n / N)`` convention,
    so a sine of amplitude ``A`` on a bin gives ``|X_k| = A/2``.
    """
    from .basis import NonlinearBasis

    basis = NonlinearBasis() if basis is None else basis
    periods = record.periods
    if not 0 <= discard_periods < periods:
        raise DataError("need at least one period left after discarding transients")
    n_keep = periods - discard_periods
    if covariance and n_keep < 2:
        raise DataError("noise covariance needs at least 2 retained periods")
    N = record.samples_per_period
    start = discard_periods * N
    y = record.channels[:, start:].reshape(record.channels.shape[0], n_keep, N)
    p = record.force[start:].reshape(n_keep, N)
    dof_to_channel = {d: i for i, d in enumerate(record.dofs)}
    missing = [t.dof for t in basis.terms if t.dof not in dof_to_channel]
    if missing:
        raise DataError(f"basis DOFs {sorted(set(missing))} are not measured")
    q_full = np.zeros((n_keep, N, max(record.dofs) + 1))
    for d, i in dof_to_channel.items():
        if d >= 0:
            q_full[..., d] = y[i]
    h = basis.evaluate_terms(q_full) if len(basis) else np.zeros((n_keep, N, 0))

    Yp = np.fft.rfft(y, axis=-1) / N  # (p, P, K)
    Pp = np.fft.rfft(p, axis=-1) / N  # (P, K)
    Hp = np.fft.rfft(h, axis=1) / N  # (P, K, s)
    freqs = np.arange(N // 2 + 1) * record.fs / N
    Pm = Pp.mean(axis=0)
    if band is None:
        mag = np.abs(Pm)
        keep = mag > 1e-6 * mag.max()
    else:
        f_lo, f_hi = band
        if not 0 <= f_lo < f_hi <= record.fs / 2:
            raise ParameterError("band must satisfy 0 <= f_min < f_max <= fs/2")
        tol = 1e-9 * record.fs / N
        keep = (freqs >= f_lo - tol) & (freqs <= f_hi + tol)
    keep[0] = False
    if N % 2 == 0:
        keep[-1] = False
    lines = np.flatnonzero(keep)
    if lines.size == 0:
        raise DataError("no processed frequency line in the band")
    Q = Yp[:, :, lines].mean(axis=1).T
    H = Hp[:, lines, :].mean(axis=0)
    cov = None
    if covariance:
        dev = Yp[:, :, lines] - Q.T[:, None, :]  # (p, P, F)
        cov = np.einsum("ipf,jpf->fij", dev, dev.conj()) / (n_keep - 1) / n_keep
    return SpectralData(
        frequencies=freqs[lines], lines=lines, Q=Q, P=Pm[lines], H=H,
        noise_cov=cov, fs=record.fs, n_averaged=n_keep, labels=record.labels,
        dofs=record.dofs, forcing_dof=record.forcing_dof, basis=basis,
        samples_per_period=N)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Continuous-time realization ``x' = A x + B e``, ``q = C x + D e``.

    Attributes
    ----------
    inputs : tuple of dict
        Layout of the extended input: the first entry describes the force,
        the others the basis terms (``{"kind": ..., "dof": ...}``).
    output_labels, output_dofs : tuple
    forcing_dof : int
    fs : float
    band : (float, float)
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    inputs: tuple = ()
    output_labels: tuple = ()
    output_dofs: tuple = ()
    forcing_dof: int = 0
    fs: float = 0.0
    band: tuple = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in "ABCD":
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ParameterError("inconsistent state-space dimensions")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ParameterError("D must be n_out x n_in")

    @property
    def order(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    def transfer_matrix(self, frequencies):
        """``G_s(w) = C (jw I - A)^-1 B + D`` at frequencies in Hz.

        Returns an array of shape ``(F, n_out, n_in)``.
        """
        w = 2 * np.pi * np.atleast_1d(np.asarray(frequencies, dtype=float))
        # Batched solves; an eigen-decomposition loses accuracy for
        # realizations with ill-conditioned eigenvectors.
        eye = np.eye(self.order)
        pencil = 1j * w[:, None, None] * eye - self.A
        rhs = np.broadcast_to(self.B.astype(complex), (w.size,) + self.B.shape)
        resp = self.C @ np.linalg.solve(pencil, rhs)
        return resp + self.D

    def similarity(self, T):
        """Realization ``(T A T^-1, T B, C T^-1, D)``."""
        T = np.asarray(T, dtype=float)
        Ti = np.linalg.inv(T)
        return StateSpaceModel(T @ self.A @ Ti, T @ self.B, self.C @ Ti, self.D,
                               self.inputs, self.output_labels, self.output_dofs,
                               self.forcing_dof, self.fs, self.band, dict(self.meta))

    def to_dict(self):
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D,
                "order": self.order, "inputs": list(self.inputs),
                "output_labels": list(self.output_labels),
                "output_dofs": list(self.output_dofs),
                "forcing_dof": self.forcing_dof, "fs": self.fs,
                "band": list(self.band), "meta": self.meta}

    def to_json(self, path, **meta):
        return write_json(path, {"state_space": self.to_dict()}, **meta)

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"], dtype=float), np.array(d["B"], dtype=float),
                   np.array(d["C"], dtype=float), np.array(d["D"], dtype=float),
                   tuple(d.get("inputs", ())), tuple(d.get("output_labels", ())),
                   tuple(d.get("output_dofs", ())), int(d.get("forcing_dof", 0)),
                   float(d.get("fs", 0.0)), tuple(d.get("band", (0.0, 0.0))),
                   dict(d.get("meta", {})))

    @classmethod
    def from_json(cls, path):
        doc = read_json(path)
        return cls.from_dict(doc["state_space"] if "state_space" in doc else doc)


def frequency_variable(frequencies, fs, time_map="bilinear"):
    """Unit-circle variable ``z`` attached to each line."""
    w = 2 * np.pi * np.asarray(frequencies, dtype=float)
    if time_map == "bilinear":
        x = 1j * w / (2 * fs)
        return (1 + x) / (1 - x)
    if time_map == "logm":
        return np.exp(1j * w / fs)
    raise ParameterError(f"unknown time map {time_map!r}")


def _default_block_rows(max_order, n_meas):
    return math.ceil(2 * max_order / n_meas) + 2


WEIGHTING_MODES = ("full", "diagonal")
DEFAULT_WEIGHTING = "diagonal"


def _weight_cov(spectra, weighting):
    """Per-line output covariance used for weighting, or None."""
    if weighting is None or weighting is False or weighting == "none":
        return None
    if spectra.noise_cov is None:
        return None
    mode = DEFAULT_WEIGHTING if weighting is True else weighting
    if mode not in WEIGHTING_MODES:
        raise ParameterError(f"unknown weighting {weighting!r}")
    if mode == "full":
        return spectra.noise_cov
    diag = np.einsum("fii->fi", spectra.noise_cov).real
    return diag[:, :, None] * np.eye(diag.shape[1])[None]


class _Subspace:
    """Shared QR/SVD stage; A and C for any order below the rank."""

    def __init__(self, spectra, block_rows, weighting, time_map):
        Y = spectra.Q
        U = spectra.E
        F, p = Y.shape
        m = U.shape[1]
        r = block_rows
        z = frequency_variable(spectra.frequencies, spectra.fs, time_map)
        Wr = z[None, :] ** np.arange(r)[:, None]  # (r, F)
        Ymat = (Wr[:, None, :] * Y.T[None, :, :]).reshape(r * p, F)
        Umat = (Wr[:, None, :] * U.T[None, :, :]).reshape(r * m, F)
        Z = np.empty((r * (m + p), 2 * F))
        Z[:r * m, :F] = Umat.real
        Z[:r * m, F:] = Umat.imag
        Z[r * m:, :F] = Ymat.real
        Z[r * m:, F:] = Ymat.imag
        if 2 * F < r * (m + p):
            raise DataError(
                f"{F} lines are too few for {r} block rows with {m + p} signals")
        R = np.linalg.qr(Z.T, mode="r")
        RT22 = R.T[-r * p:, -r * p:]
        cov = _weight_cov(spectra, weighting)
        if cov is not None:
            CY = np.zeros((r * p, r * p))
            for f in range(F):
                CY += np.real(np.kron(np.outer(Wr[:, f], Wr[:, f].conj()), cov[f]))
            uc, sc, _ = np.linalg.svd(CY)
            if sc[-1] <= sc[0] * 1e-14:
                warnings.warn("noise covariance is singular; weighting disabled",
                              NumericalWarning, stacklevel=3)
                self.sqrtCY = np.eye(r * p)
                invsqrt = np.eye(r * p)
            else:
                self.sqrtCY = (uc * np.sqrt(sc)) @ uc.T
                invsqrt = (uc / np.sqrt(sc)) @ uc.T
        else:
            self.sqrtCY = np.eye(r * p)
            invsqrt = np.eye(r * p)
        self.U, self.s, _ = np.linalg.svd(invsqrt @ RT22)
        self.p, self.r = p, r
        self.time_map = time_map
        self.fs = spectra.fs

    def rank(self, rtol=None):
        rtol = 1e-10 if rtol is None else rtol
        return int(np.sum(self.s > rtol * self.s[0])) if self.s[0] > 0 else 0

    def discrete_AC(self, n):
        Ob = self.sqrtCY @ self.U[:, :n]
        p = self.p
        A, *_ = sla.lstsq(Ob[:-p], Ob[p:])
        return A, Ob[:p].copy()

    def continuous_AC(self, n):
        Ad, Cd = self.discrete_AC(n)
        return _to_continuous(Ad, Cd, self.fs, self.time_map)


def _to_continuous(Ad, Cd, fs, time_map):
    n = Ad.shape[0]
    if time_map == "bilinear":
        eye = np.eye(n)
        Ainv = np.linalg.inv(Ad + eye)
        return 2 * fs * (Ad - eye) @ Ainv, Cd @ Ainv
    Ac = sla.logm(Ad) * fs
    if np.iscomplexobj(Ac):
        if np.abs(Ac.imag).max() > 1e-8 * max(np.abs(Ac.real).max(), 1.0):
            warnings.warn("matrix logarithm has an imaginary part (negative real "
                          "discrete eigenvalue); it is discarded",
                          NumericalWarning, stacklevel=3)
        Ac = Ac.real
    return Ac, Cd


def _fit_BD(A, C, spectra, weighting, feedthrough):
    """Weighted linear least squares for B and D in continuous time."""
    Y = spectra.Q
    E = spectra.E
    F, p = Y.shape
    m = E.shape[1]
    n = A.shape[0]
    w = 2 * np.pi * spectra.frequencies
    lam, V = np.linalg.eig(A)
    CV = C @ V
    Vi = np.linalg.inv(V)
    n_unk = n * m + (p * m if feedthrough else 0)
    W = None
    cov = _weight_cov(spectra, weighting)
    if cov is not None:
        W = np.empty((F, p, p), dtype=complex)
        for f in range(F):
            ev, vec = np.linalg.eigh(cov[f])
            if ev.min() <= ev.max() * 1e-14 or ev.max() == 0:
                W = None
                break
            W[f] = (vec / np.sqrt(ev)) @ vec.conj().T
    # Accumulate the normal problem through an incremental QR to keep the
    # memory footprint at one chunk of lines.
    R_acc = np.zeros((0, n_unk))
    rhs_acc = np.zeros(0)
    chunk = max(1, 4096 // (2 * p))
    eye_p = np.eye(p)
    for f0 in range(0, F, chunk):
        sl = slice(f0, min(F, f0 + chunk))
        rows = []
        rhs = []
        for f in range(sl.start, sl.stop):
            # C (jw - A)^-1 = CV diag(1/(jw - lam)) Vi
            CR = (CV / (1j * w[f] - lam)) @ Vi  # (p, n)
            # vec(C R B E) = kron(E^T, C R) vec(B) with column-major vec
            blocks = [np.kron(E[f][None, :], CR)]
            if feedthrough:
                blocks.append(np.kron(E[f][None, :], eye_p))
            J = np.hstack(blocks)
            y = Y[f]
            if W is not None:
                J = W[f] @ J
                y = W[f] @ y
            rows.append(np.vstack([J.real, J.imag]))
            rhs.append(np.concatenate([y.real, y.imag]))
        stack = np.vstack([R_acc] + rows)
        vec = np.concatenate([rhs_acc] + rhs)
        Qc, Rc = np.linalg.qr(stack)
        R_acc, rhs_acc = Rc, Qc.T @ vec
    # Column scaling for conditioning.
    scale = np.linalg.norm(R_acc, axis=0)
    scale[scale == 0] = 1.0
    theta, *_ = sla.lstsq(R_acc / scale, rhs_acc)
    theta = theta / scale
    B = theta[:n * m].reshape(m, n).T
    D = theta[n * m:].reshape(m, p).T if feedthrough else np.zeros((p, m))
    return B, D


def _input_layout(spectra):
    inputs = [{"kind": "force", "dof": int(spectra.forcing_dof)}]
    if spectra.basis is not None:
        inputs.extend(spectra.basis.describe())
    return tuple(inputs)


def subspace_identify(spectra, order, block_rows=None, *, weighting=True,
                      time_map="bilinear", feedthrough=True, rank_rtol=None,
                      max_order=None):
    """Identify a continuous-time state-space model of the given order.

    Parameters
    ----------
    spectra : SpectralData
    order : int
        Even model order ``n_s``.
    block_rows : int, optional
        Number of frequency shifts; default ``ceil(2*max_order/n_meas) + 2``.
    weighting : bool or {"full", "diagonal", "none"}
        Weight with the inverse noise covariance when available; ``True``
        selects the diagonal (per-channel variance) form.
    time_map : {"bilinear", "logm"}
    feedthrough : bool
        Estimate ``D`` (otherwise ``D = 0``).
    max_order : int, optional
        Largest order considered in the surrounding stabilization study;
        only used for the default ``block_rows`` (defaults to ``order``).

    Raises
    ------
    OrderTooHighError
        If the requested order exceeds the numerical rank of the projected
        data or ``block_rows * n_meas``.
    """
    check_positive(order, "order", integer=True)
    if order % 2:
        raise ParameterError("model order must be even")
    p = spectra.n_meas
    if block_rows is None:
        r = _default_block_rows(max(order, max_order or 0), p)
    else:
        r = int(block_rows)
    if r < 2 or order > (r - 1) * p:
        raise OrderTooHighError(
            f"order {order} needs more block rows than {r} for {p} outputs")
    sub = _Subspace(spectra, r, weighting, time_map)
    rank = sub.rank(rank_rtol)
    if order > rank:
        raise OrderTooHighError(f"data rank {rank} is below the requested order {order}")
    A, C = sub.continuous_AC(order)
    cond = np.linalg.cond(sub.U[:-p, :order])
    if cond > 1e8:
        warnings.warn(f"ill-conditioned observability projection (cond={cond:.2e})",
                      NumericalWarning, stacklevel=2)
    B, D = _fit_BD(A, C, spectra, weighting, feedthrough)
    band = (float(spectra.frequencies[0]), float(spectra.frequencies[-1]))
    return StateSpaceModel(A, B, C, D, _input_layout(spectra), tuple(spectra.labels),
                           tuple(spectra.dofs), int(spectra.forcing_dof),
                           float(spectra.fs), band,
                           {"block_rows": r, "time_map": time_map,
                            "weighting": str(weighting) if _weight_cov(spectra, weighting) is not None else "none",
                            "singular_values": sub.s[:min(len(sub.s), 4 * order)].tolist()})


@dataclass(frozen=True)
class Mode:
    omega0: float
    zeta: float
    shape: np.ndarray
    eigenvalue: complex

    @property
    def frequency(self):
        return self.omega0 / (2 * np.pi)


def modes_from_AC(A, C):
    """Modes from the complex-conjugate eigenpairs of ``A``.

    Returns
    -------
    modes : list of Mode
        Sorted by ``omega0``; shape ``C psi`` normalized so that its
        largest-magnitude entry is real positive.
    real_eigenvalues : ndarray
    """
    lam, psi = np.linalg.eig(A)
    modes = []
    real_lam = []
    scale = max(np.abs(lam).max(), 1.0) if lam.size else 1.0
    for i, l in enumerate(lam):
        if abs(l.imag) <= 1e-10 * scale:
            real_lam.append(l.real)
            continue
        if l.imag < 0:
            continue
        shape = C @ psi[:, i]
        k = np.argmax(np.abs(shape))
        if abs(shape[k]) > 0:
            shape = shape * (abs(shape[k]) / shape[k])
        w0 = abs(l)
        modes.append(Mode(float(w0), float(-l.real / w0), shape, complex(l)))
    modes.sort(key=lambda md: md.omega0)
    return modes, np.array(real_lam)


def extract_modal_parameters(model):
    """Undamped pulsation, damping ratio and complex shape of each mode."""
    modes, real_lam = modes_from_AC(model.A, model.C)
    if real_lam.size:
        warnings.warn(f"{real_lam.size} real eigenvalue(s) excluded from the modal list",
                      NumericalWarning, stacklevel=2)
    return modes


def mac(shape1, shape2):
    """Modal assurance criterion ``|a^H b|^2 / (|a|^2 |b|^2)``."""
    a = np.asarray(shape1).ravel()
    b = np.asarray(shape2).ravel()
    if a.shape != b.shape:
        raise ParameterError("shapes must have equal lengths")
    na = np.vdot(a, a).real
    nb = np.vdot(b, b).real
    if na == 0 or nb == 0:
        raise ParameterError("MAC is undefined for a zero vector")
    return float(abs(np.vdot(a, b)) ** 2 / (na * nb))


@dataclass(frozen=True)
class StabilizationEntry:
    order: int
    omega0: float
    zeta: float
    shape: np.ndarray
    stable_freq: bool
    stable_damp: bool
    stable_mac: bool

    @property
    def frequency(self):
        return self.omega0 / (2 * np.pi)

    @property
    def fully_stable(self):
        return self.stable_freq and self.stable_damp and self.stable_mac


@dataclass(frozen=True)
class StabilizationDiagram:
    entries: tuple
    thresholds: dict
    band: tuple

    def at_order(self, order):
        return [e for e in self.entries if e.order == order]

    @property
    def orders(self):
        return sorted({e.order for e in self.entries})

    def n_stable(self, order):
        return sum(e.fully_stable for e in self.at_order(order))

    def select_order(self):
        """Order selection rule.

        ``k`` is the most frequent nonzero number of fully stable modes over
        the diagram (ties go to the larger count). Stability at order ``n``
        is judged against order ``n - 2``, so the selected order is the one
        preceding the first order with ``k`` fully stable modes, provided it
        already holds ``k`` candidates; otherwise that first order itself.
        Returns ``None`` when no mode is fully stable.
        """
        orders = self.orders
        counts = [self.n_stable(n) for n in orders]
        nonzero = [c for c in counts if c > 0]
        if not nonzero:
            return None
        k = max(set(nonzero), key=lambda c: (nonzero.count(c), c))
        first = next(i for i, c in enumerate(counts) if c >= k)
        if first > 0 and len(self.at_order(orders[first - 1])) >= k:
            return orders[first - 1]
        return orders[first]

    def to_csv(self, path, **meta):
        cols = {
            "order": [e.order for e in self.entries],
            "frequency_hz": [e.frequency for e in self.entries],
            "damping_ratio": [e.zeta for e in self.entries],
            "stable_freq": [float(e.stable_freq) for e in self.entries],
            "stable_damp": [float(e.stable_damp) for e in self.entries],
            "stable_mac": [float(e.stable_mac) for e in self.entries],
        }
        meta = dict(meta, **{f"threshold_{k}": v for k, v in self.thresholds.items()})
        return write_table_csv(path, cols, meta=meta)


DEFAULT_THRESHOLDS = {"freq": 0.01, "damp": 0.05, "mac": 0.98}


def stabilization(spectra, max_order, thresholds=None, block_rows=None, *,
                  weighting=True, time_map="bilinear", min_order=2):
    """Stabilization diagram for orders ``min_order..max_order`` (step 2).

    A candidate at order ``n`` is frequency-stable when a mode at order
    ``n-2`` lies within the relative frequency threshold; damping- and
    MAC-stability additionally require the damping ratio and MAC of that
    closest mode to satisfy their thresholds. Only physical candidates
    (positive damping, in band) are kept.
    """
    if max_order < 4:
        raise ParameterError("max_order must be at least 4")
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    p = spectra.n_meas
    r = _default_block_rows(max_order, p) if block_rows is None else int(block_rows)
    sub = _Subspace(spectra, r, weighting, time_map)
    limit = min(max_order, (r - 1) * p, sub.rank())
    f_lo, f_hi = spectra.frequencies[0], spectra.frequencies[-1]
    entries = []
    previous = []
    for n in range(min_order, max_order + 1, 2):
        if n > limit:
            break
        A, C = sub.continuous_AC(n)
        modes, _ = modes_from_AC(A, C)
        current = [md for md in modes
                   if md.zeta > 0 and f_lo <= md.frequency <= f_hi]
        for md in current:
            sf = sd = sm = False
            if previous:
                ref = min(previous, key=lambda o: abs(o.omega0 - md.omega0))
                sf = abs(ref.omega0 - md.omega0) <= th["freq"] * md.omega0
                sd = sf and abs(ref.zeta - md.zeta) <= th["damp"] * md.zeta
                sm = sd and mac(ref.shape, md.shape) >= th["mac"]
            entries.append(StabilizationEntry(n, md.omega0, md.zeta, md.shape, sf, sd, sm))
        previous = current
    return StabilizationDiagram(tuple(entries), th, (float(f_lo), float(f_hi)))


@dataclass(frozen=True, eq=False)
class CoefficientEstimate:
    """Frequency-dependent nonlinear coefficients.

    Attributes
    ----------
    frequencies : (F,) ndarray
    values : (F, s) complex ndarray
        ``c_a(w)``; NaN at skipped lines.
    G : (F, p) complex ndarray
        Linear FRFs from the force to every output.
    summary : (s,) ndarray
        Mean real part over the valid lines.
    log_ratio : (s,) ndarray
        ``log10(|mean Re| / |mean Im|)`` per term.
    """

    frequencies: np.ndarray
    values: np.ndarray
    G: np.ndarray
    summary: np.ndarray
    log_ratio: np.ndarray

    def to_csv(self, path, **meta):
        cols = {"frequency_hz": self.frequencies}
        for a in range(self.values.shape[1]):
            cols[f"re_c{a + 1}"] = self.values[:, a].real
            cols[f"im_c{a + 1}"] = self.values[:, a].imag
        return write_table_csv(path, cols, meta=meta)


def nonlinear_coefficients(model, frequencies, *, min_relative_frf=1e-6):
    """Extract ``c_a(w)`` and the linear FRFs from ``G_s``.

    Column ``a`` of ``G_s`` equals ``-c_a G[:, dof_a]``. The required FRF
    column is the force column when ``dof_a`` is the forcing DOF; otherwise
    only the forcing-DOF row is usable and reciprocity gives
    ``G[k, dof_a] = G[dof_a, k]``. Estimates from all usable rows are
    combined by a mean weighted with ``|G|``.
    """
    frequencies = check_array(frequencies, ndim=1, name="frequencies")
    Gs = model.transfer_matrix(frequencies)
    G = Gs[:, :, 0]
    dofs = list(model.output_dofs)
    k = model.forcing_dof
    if k not in dofs:
        raise DataError("the forcing DOF must be measured to extract coefficients")
    row_k = dofs.index(k)
    terms = model.inputs[1:]
    F, s = len(frequencies), len(terms)
    values = np.full((F, s), np.nan + 0j)
    gmax = np.abs(G).max(axis=0)
    skipped = 0
    for a, term in enumerate(terms):
        d = term["dof"]
        if d == k:
            rows = list(range(len(dofs)))
            Gref = G  # G[r, k] for every row r
        else:
            if d not in dofs:
                raise DataError(f"basis DOF {d} is not measured")
            rows = [row_k]
            Gref = G[:, [dofs.index(d)]]  # G[d, k] = G[k, d]
        num = -Gs[:, rows, a + 1]
        wts = np.abs(Gref)
        ok = wts > min_relative_frf * (gmax[rows] if d == k else gmax[[dofs.index(d)]])
        ratio = np.where(ok, num / np.where(ok, Gref, 1.0), 0.0)
        wsum = (wts * ok).sum(axis=1)
        good = wsum > 0
        skipped += int((~good).sum())
        values[good, a] = (wts * ok * ratio).sum(axis=1)[good] / wsum[good]
    if skipped:
        warnings.warn(f"{skipped} line/term pair(s) skipped: near-zero FRF",
                      NumericalWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nanmean(values, axis=0) if F else np.zeros(s, dtype=complex)
        summary = mean.real
        log_ratio = np.log10(np.abs(mean.real) / np.abs(mean.imag))
    return CoefficientEstimate(frequencies, values, G, summary, log_ratio)


class FNSI(BaseEstimator):
    """Nonlinear subspace identification estimator.

    Parameters
    ----------
    order : int
        Model order used for the final model.
    max_order : int
        Largest order of the stabilization diagram; sets the default
        number of block rows.
    block_rows : int, optional
    band : (f_min, f_max), optional
    discard_periods : int
    weighting : bool or {"full", "diagonal", "none"}
    time_map : {"bilinear", "logm"}
    feedthrough : bool

    Attributes
    ----------
    spectra_ : SpectralData
    model_ : StateSpaceModel
    modes_ : list of Mode
    coefficients_ : CoefficientEstimate
    """

    def __init__(self, order=6, max_order=20, block_rows=None, band=None,
                 discard_periods=5, weighting=True, time_map="bilinear",
                 feedthrough=True):
        self.order = order
        self.max_order = max_order
        self.block_rows = block_rows
        self.band = band
        self.discard_periods = discard_periods
        self.weighting = weighting
        self.time_map = time_map
        self.feedthrough = feedthrough

    def fit(self, record, basis=None):
        self.spectra_ = build_spectra(record, basis, self.discard_periods, self.band,
                                      covariance=record.periods - self.discard_periods >= 2)
        return self.fit_spectra(self.spectra_)

    def fit_spectra(self, spectra):
        self.spectra_ = spectra
        self.model_ = subspace_identify(spectra, self.order, self.block_rows,
                                        weighting=self.weighting,
                                        time_map=self.time_map,
                                        feedthrough=self.feedthrough,
                                        max_order=self.max_order)
        self.modes_ = extract_modal_parameters(self.model_)
        if self.model_.n_inputs > 1:
            self.coefficients_ = nonlinear_coefficients(self.model_, spectra.frequencies)
        else:
            self.coefficients_ = None
        return self

    def predict(self, E, frequencies=None):
        """Output spectra ``G_s(w) E(w)`` at the given (or fitted) lines."""
        check_is_fitted(self, "model_")
        freqs = self.spectra_.frequencies if frequencies is None else frequencies
        E = check_array(E, ndim=2, name="E", allow_complex=True)
        return np.einsum("fij,fj->fi", self.model_.transfer_matrix(freqs), E)

    def stabilization(self, max_order=None, thresholds=None):
        check_is_fitted(self, "spectra_")
        max_order = self.max_order if max_order is None else max_order
        return stabilization(self.spectra_, max_order, thresholds, self.block_rows,
                             weighting=self.weighting, time_map=self.time_map)
