"""Grounded nonlinear restoring forces expressed as a linear combination of
basis functions ``f(q) = sum_a c_a h_a(q_dof_a)``.

Two kinds of terms are available: monomials ``q**d`` and cardinal cubic
splines. The spline space is the set of C2 piecewise cubics on equispaced
knots that vanish, together with their slope, at an anchor displacement
(zero by default). The slope constraint removes the part of the force that is
indistinguishable from a linear stiffness already present in the linear
model, and the space still reproduces ``q**2`` and ``q**3`` exactly. Outside
the knot range splines are continued linearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

from .errors import ParameterError
from .validation import check_array, check_positive


class SplineBasis:
    """Cardinal basis of constrained C2 cubic splines on equispaced knots.

    Parameters
    ----------
    q_min, q_max : float
        Knot range.
    segments : int
        Number of equal segments; the space has ``segments + 1`` functions.
    anchor : float
        Displacement where every function and its derivative vanish; must
        lie inside the range. Ignored for ``boundary="natural"``.
    boundary : {"anchored", "natural"}
        ``"natural"`` imposes zero curvature at both range ends instead of
        the anchor conditions (classic natural spline through knot values).

    Notes
    -----
    Function ``a`` equals 1 at ``nodes[a]`` and 0 at the other nodes, so the
    spline coefficients are force values at the nodes. Nodes coincide with
    the knots, except that a knot closer than a quarter segment to the anchor
    is replaced by the neighbouring segment midpoint.
    """

    def __init__(self, q_min, q_max, segments, anchor=0.0, boundary="anchored"):
        q_min, q_max = float(q_min), float(q_max)
        if not (np.isfinite(q_min) and np.isfinite(q_max)) or not q_min < q_max:
            raise ParameterError(f"empty spline range ({q_min}, {q_max})")
        check_positive(segments, "segments", integer=True)
        if boundary not in ("anchored", "natural"):
            raise ParameterError(f"unknown spline boundary {boundary!r}")
        if boundary == "anchored" and not q_min <= anchor <= q_max:
            raise ParameterError("spline anchor must lie inside the range")
        self.boundary = boundary
        self.q_min, self.q_max = q_min, q_max
        self.segments = int(segments)
        self.anchor = float(anchor)
        self.knots = np.linspace(q_min, q_max, self.segments + 1)
        self.knots.setflags(write=False)
        # Work in scaled coordinates u = (q - q_min)/h for conditioning.
        self._h = (q_max - q_min) / self.segments
        u_knots = np.arange(self.segments + 1, dtype=float)
        t = np.concatenate([[0.0] * 3, u_knots, [float(self.segments)] * 3])
        n_full = self.segments + 3
        eye = np.eye(n_full)
        full = BSpline(t, eye, 3, extrapolate=True)
        ua = (self.anchor - q_min) / self._h
        if boundary == "anchored":
            cons = np.vstack([self._extrap(full, ua, 0), self._extrap(full, ua, 1)])
        else:
            cons = np.vstack([self._extrap(full, 0.0, 2),
                              self._extrap(full, float(self.segments), 2)])
        _, _, vt = np.linalg.svd(cons)
        null = vt[2:].T
        nodes = u_knots.copy()
        near = np.abs(nodes - ua) < 0.25 if boundary == "anchored" else []
        for i in np.flatnonzero(near):
            step = 0.5 if (self.segments - ua) >= ua else -0.5
            nodes[i] = nodes[i] + step
        if len(np.unique(nodes)) != nodes.size:
            raise ParameterError("spline nodes collide; change range or anchor")
        coll = self._extrap(full, nodes, 0) @ null
        if np.linalg.cond(coll) > 1e12:
            raise ParameterError("spline collocation is singular for this anchor")
        coef = null @ np.linalg.inv(coll)
        self._spline = BSpline(t, coef, 3, extrapolate=True)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        self._anti = self._spline.antiderivative(1)
        self._anti_at_anchor = self._primitive_u(np.array([ua]))[0]
        self.nodes = q_min + nodes * self._h
        self.nodes.setflags(write=False)

    @property
    def n_functions(self):
        return self.segments + 1

    @staticmethod
    def _extrap(spl, u, nu):
        """Evaluate ``spl`` (or its derivative) with linear continuation."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        n = spl.t[-1]
        uc = np.clip(u, 0.0, n)
        d1 = spl.derivative(1)
        if nu == 0:
            out = spl(uc) + (u - uc)[:, None] * d1(uc)
        elif nu == 1:
            out = d1(uc)
        else:
            inside = ((u >= 0) & (u <= n))[:, None]
            out = np.where(inside, spl.derivative(nu)(uc), 0.0)
        return out

    def _u(self, q):
        return (np.asarray(q, dtype=float) - self.q_min) / self._h

    def values(self, q):
        """Function values, shape ``q.shape + (n_functions,)``."""
        q = np.asarray(q, dtype=float)
        u = self._u(q).ravel()
        return self._extrap(self._spline, u, 0).reshape(q.shape + (-1,))

    def derivatives(self, q, order=1):
        q = np.asarray(q, dtype=float)
        u = self._u(q).ravel()
        out = self._extrap(self._spline, u, order) / self._h ** order
        return out.reshape(q.shape + (-1,))

    def _primitive_u(self, u):
        n = float(self.segments)
        uc = np.clip(u, 0.0, n)
        base = self._anti(uc)
        du = (u - uc)[:, None]
        # Linear continuation f = f(e) + f'(e)(u-e) integrates to a quadratic.
        return base + self._spline(uc) * du + 0.5 * self._d1(uc) * du ** 2

    def primitives(self, q):
        """Antiderivatives vanishing at the anchor (potential energies)."""
        q = np.asarray(q, dtype=float)
        u = self._u(q).ravel()
        out = (self._primitive_u(u) - self._anti_at_anchor) * self._h
        return out.reshape(q.shape + (-1,))

    def local_polynomials(self, a, lo, hi):
        """Power-series coefficients of function ``a`` on ``[lo, hi]``.

        The interval must not straddle a knot or the range ends. Returns
        ``p`` with ``h_a(q) = sum_k p[k] (q - lo)**k`` for ``k = 0..3``.
        """
        mid = np.array([0.5 * (lo + hi)])
        taylor = [self.values(mid)[0, a], self.derivatives(mid, 1)[0, a],
                  self.derivatives(mid, 2)[0, a] / 2.0,
                  self.derivatives(mid, 3)[0, a] / 6.0]
        return _shift_poly(np.array(taylor), mid[0] - lo)


def _shift_poly(coef, shift):
    """Re-expand ``sum c_k x**k`` with ``x = y - shift`` in powers of ``y``."""
    n = coef.size
    out = np.zeros(n)
    for k, ck in enumerate(coef):
        for j in range(k + 1):
            out[j] += ck * math.comb(k, j) * (-shift) ** (k - j)
    return out


@dataclass(frozen=True)
class PolynomialTerm:
    """Monomial ``h(q) = q**degree`` acting on ``dof``."""

    degree: int
    dof: int
    coefficient: float = 0.0

    kind = "polynomial"

    def values(self, q):
        return np.asarray(q, dtype=float) ** self.degree

    def derivative(self, q):
        q = np.asarray(q, dtype=float)
        if self.degree == 0:
            return np.zeros_like(q)
        return self.degree * q ** (self.degree - 1)

    def primitive(self, q):
        q = np.asarray(q, dtype=float)
        return q ** (self.degree + 1) / (self.degree + 1)

    def describe(self):
        return {"kind": "polynomial", "degree": self.degree, "dof": self.dof,
                "coefficient": self.coefficient}


@dataclass(frozen=True)
class SplineTerm:
    """Function ``index`` of a :class:`SplineBasis` acting on ``dof``."""

    spline: SplineBasis = field(compare=False)
    index: int
    dof: int
    coefficient: float = 0.0

    kind = "spline"

    def values(self, q):
        return self.spline.values(q)[..., self.index]

    def derivative(self, q):
        return self.spline.derivatives(q, 1)[..., self.index]

    def primitive(self, q):
        return self.spline.primitives(q)[..., self.index]

    def describe(self):
        return {"kind": "spline", "index": self.index, "dof": self.dof,
                "coefficient": self.coefficient,
                "node": float(self.spline.nodes[self.index]),
                "range": [self.spline.q_min, self.spline.q_max],
                "segments": self.spline.segments, "anchor": self.spline.anchor,
                "boundary": self.spline.boundary}


class NonlinearBasis:
    """Ordered collection of basis terms with their coefficients.

    Parameters
    ----------
    terms : sequence of PolynomialTerm or SplineTerm
    """

    def __init__(self, terms=()):
        self.terms = tuple(terms)
        for term in self.terms:
            if term.dof < 0:
                raise ParameterError("basis DOF must be non-negative")

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def s(self):
        return len(self.terms)

    @property
    def coefficients(self):
        return np.array([t.coefficient for t in self.terms], dtype=float)

    @property
    def dofs(self):
        return sorted({t.dof for t in self.terms})

    def with_coefficients(self, coefficients):
        c = check_array(coefficients, ndim=1, name="coefficients")
        if c.size != self.s:
            raise ParameterError(f"expected {self.s} coefficients, got {c.size}")
        return NonlinearBasis(replace(t, coefficient=float(v)) for t, v in zip(self.terms, c))

    def on_dof(self, dof):
        """Copy of the basis with every term moved to ``dof``."""
        return NonlinearBasis(replace(t, dof=dof) for t in self.terms)

    def evaluate_terms(self, q):
        """Basis values ``h_a(q[..., dof_a])``, shape ``q.shape[:-1] + (s,)``.

        ``q`` holds full displacement vectors in its last axis.
        """
        q = np.asarray(q, dtype=float)
        out = np.empty(q.shape[:-1] + (self.s,))
        cache = {}
        for a, term in enumerate(self.terms):
            if isinstance(term, SplineTerm):
                key = (id(term.spline), term.dof)
                if key not in cache:
                    cache[key] = term.spline.values(q[..., term.dof])
                out[..., a] = cache[key][..., term.index]
            else:
                out[..., a] = term.values(q[..., term.dof])
        return out

    def potential(self, q):
        """Potential energy ``sum_a c_a int_0^q h_a`` (anchored at zero)."""
        q = np.asarray(q, dtype=float)
        total = np.zeros(q.shape[:-1])
        for term in self.terms:
            if term.coefficient != 0.0:
                total = total + term.coefficient * term.primitive(q[..., term.dof])
        return total

    def describe(self):
        return [t.describe() for t in self.terms]

    def piecewise(self, n_p):
        """Compile the force law into per-DOF piecewise polynomials.

        Returns
        -------
        dofs : (n_nl,) int array
        breaks : (n_nl, n_break) float array, padded with +inf
        origins : (n_nl, n_break + 1) float array
        coefs : (n_nl, n_break + 1, degree + 1) float array
            On piece ``j`` (``breaks[j-1] <= q < breaks[j]``) the force is
            ``sum_k coefs[j, k] (q - origins[j])**k``.
        """
        dofs = [d for d in self.dofs
                if any(t.coefficient != 0.0 for t in self.terms if t.dof == d)]
        degree = 3
        for t in self.terms:
            if isinstance(t, PolynomialTerm):
                degree = max(degree, t.degree)
        per_dof = []
        for d in dofs:
            terms = [t for t in self.terms if t.dof == d and t.coefficient != 0.0]
            brk = sorted({float(k) for t in terms if isinstance(t, SplineTerm)
                          for k in t.spline.knots})
            per_dof.append((d, terms, brk))
        n_break = max([len(b) for _, _, b in per_dof], default=0)
        n_dof = len(dofs)
        breaks = np.full((n_dof, n_break), np.inf)
        origins = np.zeros((n_dof, n_break + 1))
        coefs = np.zeros((n_dof, n_break + 1, degree + 1))
        for i, (d, terms, brk) in enumerate(per_dof):
            breaks[i, :len(brk)] = brk
            edges = [-np.inf] + brk + [np.inf]
            for j in range(len(edges) - 1):
                lo, hi = edges[j], edges[j + 1]
                if np.isinf(lo) and np.isinf(hi):
                    origin, probe = 0.0, (0.0, 1.0)
                elif np.isinf(lo):
                    origin, probe = hi, (hi - 1.0, hi)
                else:
                    origin = lo
                    probe = (lo, hi if np.isfinite(hi) else lo + 1.0)
                origins[i, j] = origin
                for t in terms:
                    if isinstance(t, PolynomialTerm):
                        p = np.zeros(t.degree + 1)
                        p[-1] = 1.0
                        p = _shift_poly(p, -origin)
                    else:
                        p = t.spline.local_polynomials(t.index, *probe)
                        p = _shift_poly(p, probe[0] - origin)
                    coefs[i, j, :p.size] += t.coefficient * p
            # Unused padded pieces repeat the last one.
            for j in range(len(brk) + 1, n_break + 1):
                origins[i, j] = origins[i, len(brk)]
                coefs[i, j] = coefs[i, len(brk)]
        return np.array(dofs, dtype=np.int64), breaks, origins, coefs


def build_spline_basis(q_range, segments, dof=0, anchor=0.0, boundary="anchored"):
    """Uncoefficiented spline basis with ``segments + 1`` functions."""
    q_min, q_max = q_range
    spline = SplineBasis(q_min, q_max, segments, anchor=anchor, boundary=boundary)
    return NonlinearBasis(SplineTerm(spline, a, dof) for a in range(spline.n_functions))


def polynomial_basis(degrees, dof, coefficients=None):
    degrees = list(degrees)
    if coefficients is None:
        coefficients = [0.0] * len(degrees)
    return NonlinearBasis(PolynomialTerm(int(d), dof, float(c))
                          for d, c in zip(degrees, coefficients))


def benchmark_basis(model, material=None, node=14):
    """Grounded cubic + quadratic springs at the beam junction."""
    from .model import TABLE2_MATERIAL

    material = TABLE2_MATERIAL if material is None else material
    dof = model.translation_dof(node)
    return polynomial_basis([3, 2], dof, [material.cubic_coefficient,
                                          material.quadratic_coefficient])


def eval_restoring_force(basis, q):
    """Nonlinear force vector ``sum_a c_a h_a(q)`` placed on the basis DOFs.

    Parameters
    ----------
    basis : NonlinearBasis
    q : (n_p,) or (n_samples, n_p) array_like
    """
    q = check_array(q, ndim=(1, 2), name="q")
    h = basis.evaluate_terms(q)
    out = np.zeros_like(q)
    for a, term in enumerate(basis.terms):
        out[..., term.dof] += term.coefficient * h[..., a]
    return out


def eval_restoring_stiffness(basis, q):
    """Derivative ``d f_dof / d q_dof`` for each basis DOF (diagonal)."""
    q = check_array(q, ndim=1, name="q")
    out = np.zeros_like(q)
    for term in basis.terms:
        out[term.dof] += term.coefficient * term.derivative(q[term.dof])
    return out


def basis_from_description(items):
    """Rebuild a :class:`NonlinearBasis` from :meth:`NonlinearBasis.describe`."""
    splines = {}
    terms = []
    for item in items:
        kind = item.get("kind")
        if kind == "polynomial":
            terms.append(PolynomialTerm(int(item["degree"]), int(item["dof"]),
                                        float(item.get("coefficient", 0.0))))
        elif kind == "spline":
            key = (tuple(item["range"]), int(item["segments"]),
                   float(item.get("anchor", 0.0)), item.get("boundary", "anchored"))
            if key not in splines:
                splines[key] = SplineBasis(key[0][0], key[0][1], key[1],
                                           anchor=key[2], boundary=key[3])
            terms.append(SplineTerm(splines[key], int(item["index"]), int(item["dof"]),
                                    float(item.get("coefficient", 0.0))))
        elif kind == "force":
            continue
        else:
            raise ParameterError(f"unknown basis term kind {kind!r}")
    return NonlinearBasis(terms)
