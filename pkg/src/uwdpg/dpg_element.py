"""Element computations of the ultraweak DPG method for time-harmonic acoustics.

First-order system ``A(p, u) = (i w p + div u, i w u + grad p) = f`` tested
with broken ``(q, v)``:

    b((p, u, ph, un), (q, v)) = ((p, u), A*(q, v))_K + <ph, v.n>_dK + <un, q>_dK

with ``A* = -A``.  The test space is ``Q^(r,r) x V^r`` with ``r = p + dp``
and the adjoint graph norm ``||A* v||^2 + alpha^2 ||v||^2``.  Trial fields
are ``Q^(p,p)`` (Legendre), ``ph`` is continuous of order ``p`` and ``un``
is a per-edge polynomial of degree ``p - 1`` (outward normal flux).  On
boundary sides the impedance condition ``p - u.n = g`` is used to replace
``un`` by ``ph - g`` so boundary sides carry no flux unknowns.

Inner products are linear in the first and antilinear in the second slot,
so ``B[i, j] = b(trial_j, test_i)`` and ``G[i, k] = (test_k, test_i)_V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg as sla

from . import basis


class ElementError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Layout:
    """Local trial unknowns of one cell: fields, pressure trace, fluxes."""

    p: int
    boundary: tuple  # per side: True if on the domain boundary
    flux_degree: int | None = None  # degree of u-hat_n per edge; default p - 1

    @property
    def n_flux_modes(self):
        return self.p if self.flux_degree is None else self.flux_degree + 1

    @property
    def n_field(self):
        return 3 * (self.p + 1) ** 2

    @property
    def n_phat(self):
        return 4 * self.p

    @property
    def flux_sides(self):
        return tuple(s for s in range(4) if not self.boundary[s])

    @property
    def n_flux(self):
        return self.n_flux_modes * len(self.flux_sides)

    @property
    def n_trace(self):
        return self.n_phat + self.n_flux

    @property
    def n_trial(self):
        return self.n_field + self.n_trace

    def phat_side_dofs(self, side):
        """Local p-hat indices (start, end, bubbles 2..p) along ``side``."""
        a, b = basis.SIDE_CORNERS[side]
        bub = [4 + side * (self.p - 1) + k for k in range(self.p - 1)]
        return [a, b] + bub

    def flux_side_dofs(self, side):
        """Local flux indices of ``side`` within the trace block."""
        k = self.flux_sides.index(side)
        m = self.n_flux_modes
        start = self.n_phat + k * m
        return list(range(start, start + m))


@dataclass(frozen=True)
class TestSpace:
    """Test functions sampled on the reference square and its sides."""

    r: int
    nq: int

    @cached_property
    def rule(self):
        x, w = basis.gauss_1d(self.nq)
        return basis.QuadratureRule(x, w)

    @cached_property
    def volume(self):
        pts = self.rule.points
        hv, hg = basis.eval_h1_basis(self.r, pts)
        dv, dd = basis.eval_hdiv_basis(self.r, pts)
        return hv, hg, dv, dd

    @property
    def n_h1(self):
        return (self.r + 1) ** 2

    @property
    def n(self):
        return (self.r + 1) ** 2 + 2 * self.r * (self.r + 1)

    @lru_cache(maxsize=None)
    def side(self, side):
        """(q values, v.n values) at the side quadrature points."""
        t = self.rule.points_1d
        pts = basis.side_points(side, t)
        hv, _ = basis.eval_h1_basis(self.r, pts)
        dv, _ = basis.eval_hdiv_basis(self.r, pts)
        vn = np.einsum("icq,c->iq", dv, basis.SIDE_NORMALS[side])
        nh = hv.shape[0]
        q = np.zeros((self.n, t.size))
        q[:nh] = hv
        v = np.zeros((self.n, t.size))
        v[nh:] = vn
        return q, v


@lru_cache(maxsize=None)
def _test_space(r, nq):
    return TestSpace(r, nq)


def _test_values(ts, h):
    """Rows: test functions; columns: quadrature points (per component)."""
    hv, hg, dv, dd = ts.volume
    nh = hv.shape[0]
    n = ts.n
    npts = hv.shape[1]
    q = np.zeros((n, npts))
    v = np.zeros((n, 2, npts))
    gradq = np.zeros((n, 2, npts))
    divv = np.zeros((n, npts))
    q[:nh] = hv
    gradq[:nh] = hg / h
    v[nh:] = dv
    divv[nh:] = dd / h
    return q, v, gradq, divv


@dataclass
class ElementOperator:
    """Load-independent matrices of one cell shape (size and boundary mask)."""

    layout: Layout
    h: float
    omega: float
    alpha: float
    dp: int
    G: np.ndarray
    B: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of G
    A: np.ndarray  # B^H G^{-1} B
    S: np.ndarray  # condensed trace matrix
    load_map: np.ndarray  # g_t = load_map @ l
    ff_factor: tuple  # Cholesky of the field block of A

    @property
    def r(self):
        return self.layout.p + self.dp

    def field_block(self):
        nf = self.layout.n_field
        return slice(0, nf), slice(nf, self.layout.n_trial)


def _build_operator(p, dp, omega, alpha, h, boundary, flux_degree=None):
    if p < 1 or dp < 1:
        raise ValueError("need p >= 1 and dp >= 1")
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not h > 0:
        raise ElementError("degenerate cell")
    layout = Layout(p, tuple(bool(b) for b in boundary), flux_degree)
    r = p + dp
    ts = _test_space(r, r + 2)
    wts = ts.rule.weights
    q, v, gradq, divv = _test_values(ts, h)
    # A* (q, v) = (-i w q - div v, -i w v - grad q)
    s = -1j * omega * q - divv
    w = -1j * omega * v - gradq
    jac = h * h
    comp = np.concatenate([s[:, None, :], w, alpha * q[:, None, :], alpha * v], axis=1)
    flat = comp.reshape(ts.n, -1)
    G = jac * (flat.conj() * np.tile(wts, 6)) @ flat.T
    G = 0.5 * (G + G.conj().T)

    B = np.zeros((ts.n, layout.n_trial), dtype=complex)
    phi = basis.eval_l2_basis(p, ts.rule.points)
    nf1 = (p + 1) ** 2
    for c, target in enumerate((s, w[:, 0], w[:, 1])):
        B[:, c * nf1:(c + 1) * nf1] = jac * (target.conj() * wts) @ phi.T

    t1, w1 = ts.rule.points_1d, ts.rule.weights_1d
    nf = layout.n_field
    edge_h1 = basis.edge_h1_1d(p, t1)
    edge_l2 = basis.l2_1d(layout.n_flux_modes - 1, t1)[0]
    for side in range(4):
        qs, vns = ts.side(side)
        cols = [nf + k for k in layout.phat_side_dofs(side)]
        # <ph, v.n>
        B[:, cols] += h * (vns * w1) @ edge_h1.T
        if layout.boundary[side]:
            # un = ph - g on the boundary: <ph, q> joins the ph columns
            B[:, cols] += h * (qs * w1) @ edge_h1.T
        else:
            fcols = [nf + k for k in layout.flux_side_dofs(side)]
            B[:, fcols] += h * (qs * w1) @ edge_l2.T

    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ElementError("enriched Gram matrix is not positive definite") from exc
    X = sla.solve_triangular(L, B, lower=True)
    A = X.conj().T @ X
    A = 0.5 * (A + A.conj().T)
    f_, t_ = slice(0, nf), slice(nf, layout.n_trial)
    try:
        ff = sla.cho_factor(A[f_, f_])
    except np.linalg.LinAlgError as exc:
        raise ElementError("field block of the normal equations is singular") from exc
    coupling = sla.cho_solve(ff, A[f_, t_])  # A_ff^{-1} A_ft
    S = A[t_, t_] - A[t_, f_] @ coupling
    S = 0.5 * (S + S.conj().T)
    # g_t = (B_t^H - A_tf A_ff^{-1} B_f^H) G^{-1} l
    Y = sla.solve_triangular(L, np.eye(ts.n), lower=True)  # L^{-1}
    Ginv_half = Y
    BtH = X[:, t_].conj().T - coupling.conj().T @ X[:, f_].conj().T
    load_map = BtH @ Ginv_half
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(load_map))):
        raise ElementError(f"non-finite condensed matrix (omega*h={omega * h:.3g})")
    return ElementOperator(layout, h, omega, alpha, dp, G, B, L, A, S, load_map, ff)


@lru_cache(maxsize=512)
def element_operator(p, dp, omega, alpha, h, boundary, flux_degree=None):
    """Cached :class:`ElementOperator` for a cell of size ``h``."""
    return _build_operator(p, dp, float(omega), float(alpha), float(h), tuple(boundary),
                           flux_degree)


@dataclass
class ElementSystem:
    """Matrices and load of one physical cell."""

    op: ElementOperator
    origin: tuple
    l: np.ndarray  # test-space load

    @property
    def layout(self):
        return self.op.layout

    @property
    def G(self):
        return self.op.G

    @property
    def B(self):
        return self.op.B

    @property
    def S(self):
        return self.op.S

    @cached_property
    def g(self):
        return self.op.load_map @ self.l

    @cached_property
    def normal_rhs(self):
        """``B^H G^{-1} l``."""
        y = sla.solve_triangular(self.op.chol, self.l, lower=True)
        X = sla.solve_triangular(self.op.chol, self.op.B, lower=True)
        return X.conj().T @ y

    def recover(self, trace):
        """Field coefficients from local trace coefficients."""
        f_, t_ = self.op.field_block()
        A = self.op.A
        rhs = self.normal_rhs[f_] - A[f_, t_] @ trace
        return sla.cho_solve(self.op.ff_factor, rhs)

    def condense(self):
        """``(S, g, recovery)`` after eliminating the field unknowns."""
        return self.op.S, self.g, self.recover

    def residual(self, u_local):
        """Test-norm of the error representation function for trial ``u_local``."""
        r = self.l - self.op.B @ u_local
        y = sla.solve_triangular(self.op.chol, r, lower=True)
        return float(np.linalg.norm(y))

    def error_representation(self, u_local):
        """Coefficients of psi with ``G psi = l - B u``."""
        r = self.l - self.op.B @ u_local
        return sla.cho_solve((self.op.chol, True), r)


def _load_rule(omega, h, nq):
    # extra points for oscillatory data on coarse cells
    return basis.gauss_1d(nq + int(math.ceil(omega * h)))


@lru_cache(maxsize=None)
def _load_test_values(r, n):
    x, w = basis.gauss_1d(n)
    rule = basis.QuadratureRule(x, w)
    hv, _ = basis.eval_h1_basis(r, rule.points)
    dv, _ = basis.eval_hdiv_basis(r, rule.points)
    sides = []
    for side in range(4):
        pts = basis.side_points(side, x)
        sides.append((pts, basis.eval_h1_basis(r, pts)[0]))
    return rule, hv, dv, sides


def element_load(op, origin, source=None, impedance=None):
    """Test-space load ``(f, v)_K + sum_boundary <g, q>``."""
    h = op.h
    r = op.r
    rule, hv, dv, sides = _load_test_values(r, len(_load_rule(op.omega, h, r + 2)[0]))
    nh = hv.shape[0]
    n = nh + dv.shape[0]
    l = np.zeros(n, dtype=complex)
    x0 = np.asarray(origin, dtype=float)
    if source is not None:
        pts = x0 + h * rule.points
        f1, f2 = source(pts)
        f1 = np.broadcast_to(f1, (pts.shape[0],))
        f2 = np.broadcast_to(f2, (2, pts.shape[0]))
        wts = h * h * rule.weights
        l[:nh] += hv @ (wts * f1)
        l[nh:] += np.einsum("icq,cq->i", dv, wts * f2)
    if impedance is not None:
        w1 = rule.weights_1d
        for side in range(4):
            if not op.layout.boundary[side]:
                continue
            pts, qv = sides[side]
            g = impedance(x0 + h * pts, basis.SIDE_NORMALS[side])
            l[:nh] += h * qv @ (w1 * np.broadcast_to(g, (pts.shape[0],)))
    return l


def assemble_element(origin, h, p, dp, omega, boundary, alpha=1.0, source=None,
                     impedance=None, flux_degree=None):
    """Element system of the cell ``[x0, x0 + h] x [y0, y0 + h]``."""
    op = element_operator(p, dp, omega, alpha, h, tuple(boundary), flux_degree)
    l = element_load(op, origin, source, impedance)
    return ElementSystem(op, tuple(origin), l)


def field_values(p, coeffs, points):
    """Evaluate recovered ``(p, u1, u2)`` at reference ``points``."""
    phi = basis.eval_l2_basis(p, points)
    n = (p + 1) ** 2
    return [coeffs[c * n:(c + 1) * n] @ phi for c in range(3)]
