"""Undamped modal models built from identified state-space models.

The modal model reads

    q_bar'' + diag(w0**2) q_bar + Phi^T sum_a c_a h_a(Phi q_bar) = 0,

with unit-modal-mass real shapes ``Phi`` restricted to the measured DOFs.
Shapes are scaled through the residues of the driving-point FRF.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import NonlinearBasis, basis_from_description
from .errors import (ConfigurationError, NodeOfModeError, NumericalWarning,
                     ParameterError)
from .io import read_json, write_json
from .validation import check_array


@dataclass(frozen=True)
class ResidueFit:
    """Driving-point residues ``R_kk`` of each mode.

    Attributes
    ----------
    residues : (n_modes,) complex ndarray
    constant : float
        Real feedthrough term fitted alongside the poles (0 if disabled).
    residual_norm : float
        ``||G_fit - G|| / ||G||`` over the fitted lines.
    """

    residues: np.ndarray
    constant: float
    residual_norm: float

    def reconstruct(self, frequencies, poles):
        jw = 2j * np.pi * np.asarray(frequencies, dtype=float)[:, None]
        lam = np.asarray(poles)[None, :]
        R = self.residues[None, :]
        return (R / (jw - lam) + R.conj() / (jw - lam.conj())).sum(axis=1) + self.constant


def fit_driving_point_residues(G_kk, frequencies, poles, *, constant=True):
    """Least-squares residues of ``G_kk(w) = sum R/(jw-l) + R*/(jw-l*)``.

    Parameters
    ----------
    G_kk : (F,) complex array_like
    frequencies : (F,) array_like
        Hz.
    poles : (n_modes,) complex array_like
        One pole per conjugate pair (positive imaginary part).
    constant : bool
        Also fit a real constant that absorbs the flexibility of modes
        outside the model.
    """
    G = check_array(G_kk, ndim=1, name="G_kk", allow_complex=True).astype(complex)
    f = check_array(frequencies, ndim=1, name="frequencies")
    lam = np.asarray(poles, dtype=complex).ravel()
    if G.size != f.size:
        raise ParameterError("G_kk and frequencies must have equal lengths")
    if f.size < lam.size:
        raise ParameterError("need at least as many lines as modes")
    jw = 2j * np.pi * f[:, None]
    a_col = 1.0 / (jw - lam) + 1.0 / (jw - lam.conj())
    b_col = 1j / (jw - lam) - 1j / (jw - lam.conj())
    cols = [a_col, b_col]
    if constant:
        cols.append(np.ones((f.size, 1)))
    J = np.hstack(cols)
    Jr = np.vstack([J.real, J.imag])
    y = np.concatenate([G.real, G.imag])
    scale = np.linalg.norm(Jr, axis=0)
    scale[scale == 0] = 1.0
    cond = np.linalg.cond(Jr / scale)
    if cond > 1e10:
        warnings.warn(f"residue fit is ill-conditioned (cond={cond:.1e}); poles "
                      "may be nearly coincident", NumericalWarning, stacklevel=2)
    theta, *_ = np.linalg.lstsq(Jr / scale, y, rcond=None)
    theta = theta / scale
    n = lam.size
    R = theta[:n] + 1j * theta[n:2 * n]
    const = float(theta[2 * n]) if constant else 0.0
    fit = ResidueFit(R, const, 0.0)
    norm = np.linalg.norm(G)
    res = np.linalg.norm(fit.reconstruct(f, lam) - G) / norm if norm > 0 else 0.0
    return ResidueFit(R, const, float(res))


def realify(shape):
    """Rotate a complex shape to minimize its imaginary energy.

    The angle ``0.5 * arg(sum phi_i**2)`` is the magnitude-weighted mean of
    the component phases (defined modulo pi); after rotation the imaginary
    parts are dropped.

    Returns
    -------
    real_shape : ndarray
    imag_ratio : float
        ``max |Im| / max |Re|`` after rotation, before dropping.
    """
    shape = np.asarray(shape, dtype=complex)
    theta = 0.5 * np.angle(np.sum(shape ** 2))
    rot = shape * np.exp(-1j * theta)
    re_max = np.abs(rot.real).max()
    ratio = float(np.abs(rot.imag).max() / re_max) if re_max > 0 else np.inf
    return rot.real.copy(), ratio


def _sign_normalize(v):
    k = np.argmax(np.abs(v))
    return v if v[k] >= 0 else -v


def scale_modes(shapes, residues, omega0, k, *, node_tol=1e-6, return_complex=False):
    """Unit-modal-mass real shapes from identified complex shapes.

    Parameters
    ----------
    shapes : (n_meas, n_modes) complex array_like
        ``C psi`` for each mode.
    residues : (n_modes,) complex array_like
        Driving-point residues.
    omega0 : (n_modes,) array_like
    k : int
        Row of the driving point in ``shapes``.
    node_tol : float
        Relative magnitude under which the driving point is considered a
        node of the mode.

    Returns
    -------
    Phi : (n_meas, n_modes) ndarray
    info : dict
        ``scaled`` complex shapes before realification and ``imag_ratio``
        per mode.
    """
    shapes = np.atleast_2d(np.asarray(shapes, dtype=complex))
    if shapes.shape[0] == 1 and np.ndim(residues) == 1 and shapes.shape[1] != len(residues):
        shapes = shapes.T
    residues = np.atleast_1d(np.asarray(residues, dtype=complex))
    omega0 = np.atleast_1d(np.asarray(omega0, dtype=float))
    n_modes = shapes.shape[1]
    Phi = np.empty(shapes.shape)
    scaled = np.empty(shapes.shape, dtype=complex)
    ratios = np.empty(n_modes)
    for i in range(n_modes):
        phi_t = shapes[:, i]
        if abs(phi_t[k]) <= node_tol * np.abs(phi_t).max():
            raise NodeOfModeError(f"driving point is a node of mode {i + 1}")
        phi_k = np.sqrt(2j * omega0[i] * residues[i])
        scaled[:, i] = phi_t * (phi_k / phi_t[k])
        real, ratios[i] = realify(scaled[:, i])
        Phi[:, i] = _sign_normalize(real)
    info = {"scaled": scaled, "imag_ratio": ratios}
    return (Phi, info) if return_complex else Phi


@dataclass(frozen=True, eq=False)
class ModalModel:
    """Undamped modal model with projected nonlinear forces.

    Attributes
    ----------
    omega0 : (n_modes,) ndarray
    zeta : (n_modes,) ndarray
        Identified damping ratios (informative; the model is conservative).
    Phi : (n_meas, n_modes) ndarray
    dofs : tuple of int
        Model DOF attached to each row of ``Phi``.
    labels : tuple of str
    basis : NonlinearBasis
        Terms with their scalar coefficients; term DOFs refer to ``dofs``.
    forcing_dof : int
    """

    omega0: np.ndarray
    zeta: np.ndarray
    Phi: np.ndarray
    dofs: tuple
    labels: tuple
    basis: NonlinearBasis
    forcing_dof: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.omega0, dtype=float))
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        if Phi.shape[1] != w.size:
            raise ParameterError("Phi must have one column per mode")
        object.__setattr__(self, "omega0", w)
        object.__setattr__(self, "zeta", np.atleast_1d(np.asarray(self.zeta, dtype=float)))
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "dofs", tuple(int(d) for d in self.dofs))
        object.__setattr__(self, "labels", tuple(self.labels))
        missing = [t.dof for t in self.basis.terms if t.dof not in self.dofs]
        if missing:
            raise ConfigurationError(
                f"basis DOFs {sorted(set(missing))} are not measured channels")

    @property
    def n_modes(self):
        return self.omega0.size

    def row(self, dof):
        try:
            return self.dofs.index(int(dof))
        except ValueError:
            raise ConfigurationError(f"DOF {dof} is not part of the modal model") from None

    def compiled(self):
        """Arrays for fast evaluation of the projected nonlinear force.

        Returns
        -------
        phi_nl : (n_nl, n_modes) ndarray
            Rows of ``Phi`` at the nonlinear DOFs.
        breaks, origins, coefs : ndarray
            Piecewise polynomial force laws (see
            :meth:`NonlinearBasis.piecewise`), one per row of ``phi_nl``.
        """
        dofs, breaks, origins, coefs = self.basis.piecewise(None)
        phi_nl = np.array([self.Phi[self.row(d)] for d in dofs]).reshape(len(dofs), self.n_modes)
        if breaks.shape[1] == 0:
            breaks = np.full((len(dofs), 1), np.inf)
            origins = np.concatenate([origins, origins], axis=1)
            coefs = np.concatenate([coefs, coefs], axis=1)
        return phi_nl, breaks, origins, coefs

    def physical(self, qbar, dof):
        """Physical displacement at ``dof`` for modal coordinates ``qbar``."""
        return np.asarray(qbar) @ self.Phi[self.row(dof)]

    def _q_full(self, qbar):
        qbar = np.asarray(qbar, dtype=float)
        q = qbar @ self.Phi.T  # (..., n_meas)
        full = np.zeros(q.shape[:-1] + (max(self.dofs) + 1,))
        full[..., list(self.dofs)] = q
        return full

    def nonlinear_force(self, qbar):
        """Projected force ``Phi^T sum_a c_a h_a(Phi qbar)``."""
        from .basis import eval_restoring_force

        full = self._q_full(qbar)
        f = eval_restoring_force(self.basis, full.reshape(-1, full.shape[-1]))
        f = f.reshape(full.shape)[..., list(self.dofs)]
        return f @ self.Phi

    def energy(self, z):
        """Conserved energy of states ``z = (qbar, qbar')`` in the last axis."""
        z = np.asarray(z, dtype=float)
        n = self.n_modes
        qb, vb = z[..., :n], z[..., n:]
        e = 0.5 * np.sum(vb ** 2, axis=-1) + 0.5 * np.sum(self.omega0 ** 2 * qb ** 2, axis=-1)
        if len(self.basis):
            e = e + self.basis.potential(self._q_full(qb))
        return e

    def linear_frequencies(self):
        """Eigenfrequencies (rad/s) of the linearized model about zero."""
        K = np.diag(self.omega0 ** 2)
        phi_nl, breaks, origins, coefs = self.compiled()
        if phi_nl.size:
            from .basis import eval_restoring_stiffness

            kd = eval_restoring_stiffness(self.basis, np.zeros(max(self.dofs) + 1))
            Kp = np.zeros((len(self.dofs), len(self.dofs)))
            for i, d in enumerate(self.dofs):
                Kp[i, i] = kd[d]
            K = K + self.Phi.T @ Kp @ self.Phi
        return np.sqrt(np.clip(np.linalg.eigvalsh(K), 0, None))

    def to_dict(self):
        return {"omega0": self.omega0, "frequencies_hz": self.omega0 / (2 * np.pi),
                "zeta": self.zeta, "Phi": self.Phi, "dofs": list(self.dofs),
                "labels": list(self.labels), "forcing_dof": self.forcing_dof,
                "nonlinear_terms": self.basis.describe(), "meta": self.meta}

    def to_json(self, path, **meta):
        return write_json(path, {"modal_model": self.to_dict()}, **meta)

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["omega0"], dtype=float), np.array(d["zeta"], dtype=float),
                   np.array(d["Phi"], dtype=float), tuple(d["dofs"]), tuple(d["labels"]),
                   basis_from_description(d["nonlinear_terms"]),
                   int(d.get("forcing_dof", -1)), dict(d.get("meta", {})))

    @classmethod
    def from_json(cls, path):
        doc = read_json(path)
        return cls.from_dict(doc["modal_model"] if "modal_model" in doc else doc)


def build_modal_model(state_model, coefficients, basis, driving_dof=None, *,
                      frequencies=None, n_modes=None, in_band=True,
                      constant=True):
    """Assemble the undamped modal model from an identified model.

    Parameters
    ----------
    state_model : StateSpaceModel
    coefficients : (s,) array_like
        Scalar coefficients (mean real parts of ``c_a(w)``).
    basis : NonlinearBasis
        Basis used for identification; its coefficients are replaced.
    driving_dof : int, optional
        Defaults to the forcing DOF of the state-space model.
    frequencies : array_like, optional
        Lines (Hz) for the residue fit; defaults to 400 points in the band.
    n_modes : int, optional
        Keep the lowest ``n_modes`` modes.
    in_band : bool
        Keep only modes inside the identification band.
    """
    from .fnsi import extract_modal_parameters

    k_dof = state_model.forcing_dof if driving_dof is None else driving_dof
    dofs = list(state_model.output_dofs)
    if k_dof not in dofs:
        raise ConfigurationError("driving DOF is not among the measured channels")
    k = dofs.index(k_dof)
    basis = basis.with_coefficients(coefficients) if len(basis) else basis
    missing = [t.dof for t in basis.terms if t.dof not in dofs]
    if missing:
        raise ConfigurationError(f"basis DOFs {sorted(set(missing))} are not measured")
    modes = extract_modal_parameters(state_model)
    lo, hi = state_model.band
    if in_band:
        modes = [m for m in modes if lo <= m.frequency <= hi]
    if n_modes is not None:
        modes = modes[:n_modes]
    if not modes:
        raise ConfigurationError("no mode available for the modal model")
    if frequencies is None:
        frequencies = np.linspace(lo, hi, 400)
    G_kk = state_model.transfer_matrix(frequencies)[:, k, 0]
    poles = np.array([m.eigenvalue for m in modes])
    fit = fit_driving_point_residues(G_kk, frequencies, poles, constant=constant)
    shapes = np.column_stack([m.shape for m in modes])
    omega0 = np.array([m.omega0 for m in modes])
    Phi, info = scale_modes(shapes, fit.residues, omega0, k, return_complex=True)
    meta = {"residue_fit_residual": fit.residual_norm,
            "imag_ratio": info["imag_ratio"].tolist()}
    return ModalModel(omega0, np.array([m.zeta for m in modes]), Phi, tuple(dofs),
                      tuple(state_model.output_labels), basis, int(k_dof), meta)


def modal_model_from_fe(model, basis, n_modes, dofs=None, labels=None):
    """Reference modal model from an assembled FE model.

    Uses the mass-normalized FE modes restricted to ``dofs`` (default: all
    DOFs, then the reduced model is exact).
    """
    from .model import modal_damping_ratios

    dofs = list(range(model.n_p)) if dofs is None else list(dofs)
    omega0 = model.natural_frequencies(n_modes)
    Phi = model.mode_shapes(n_modes)[dofs]
    Phi = np.column_stack([_sign_normalize(c) for c in Phi.T])
    try:
        zeta = np.array([z for _, z in modal_damping_ratios(model, n_modes)])
    except Exception:
        zeta = np.zeros(n_modes)
    if labels is None:
        labels = [f"dof{d}" for d in dofs]
    basis = NonlinearBasis() if basis is None else basis
    return ModalModel(omega0, zeta, Phi, tuple(dofs), tuple(labels), basis,
                      int(model.forcing_dof))
