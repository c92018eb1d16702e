"""Norm of the projection-based trace interpolant on the master element.

The trace space ``tr(W^{p+1} x V^{p+1})`` of the reference square carries
the minimum-energy-extension norm induced by the scaled graph norm

    ||(q, v)||^2 = ||A_{wh}(q, v)||^2 + h^2 ||(q, v)||^2,
    A_{wh}(q, v) = (i wh q + div v, i wh v + grad q).

The interpolant onto ``tr(W^p x V^p)`` keeps vertex values and projects
the top edge modes onto lower ones edge by edge.  Its operator norm is the
square root of the largest eigenvalue of the pencil ``(P^H G P, G)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from . import basis


# extension order used to reproduce the reference tables
TABLE_EXTENSION_ORDER = 9


class InterpNormError(RuntimeError):
    pass


@dataclass(frozen=True)
class TraceDof:
    """One basis function of the master-element trace space."""

    var: str  # "p" (pressure trace) or "u" (normal flux)
    kind: str  # "v" vertex, "e" edge mode
    where: int  # corner or side
    degree: int  # polynomial degree of the mode along its side


def trace_basis(order):
    """Trace basis of ``tr(W^order x V^order)`` in hierarchical order."""
    dofs = [TraceDof("p", "v", c, 1) for c in range(4)]
    for side in range(4):
        dofs += [TraceDof("p", "e", side, k) for k in range(2, order + 1)]
    for side in range(4):
        dofs += [TraceDof("u", "e", side, k) for k in range(order)]
    return dofs


def scaled_graph_matrix(r_ext, omega_h, h):
    """Hermitian matrix of the scaled graph inner product on W^r x V^r."""
    rule = basis.quadrature(r_ext)
    pts, wts = rule.points, rule.weights
    hv, hg = basis.eval_h1_basis(r_ext, pts)
    dv, dd = basis.eval_hdiv_basis(r_ext, pts)
    nh, nd = hv.shape[0], dv.shape[0]
    npts = pts.shape[0]
    ik = 1j * omega_h
    # rows: scalar part, two vector parts, then the three L2 components
    comp = np.zeros((nh + nd, 6, npts), dtype=complex)
    comp[:nh, 0] = ik * hv
    comp[:nh, 1:3] = hg
    comp[:nh, 3] = h * hv
    comp[nh:, 0] = dd
    comp[nh:, 1:3] = ik * dv
    comp[nh:, 4:6] = h * dv
    flat = comp.reshape(nh + nd, -1)
    w = np.tile(wts, 6)
    K = (flat.conj() * w) @ flat.T
    return 0.5 * (K + K.conj().T)


@dataclass
class InterpNormProblem:
    """Master-element pieces for one ``(p, wh, h)`` tuple."""

    p: int
    omega_h: float
    h: float
    r_ext: int | None = None
    source: list = field(init=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.r_ext is None:
            self.r_ext = self.p + 6
        if self.r_ext < self.p + 1:
            raise ValueError("extension order must exceed the source order")
        self.source = trace_basis(self.p + 1)

    # -- extension space bookkeeping ---------------------------------------

    @cached_property
    def _layout(self):
        r = self.r_ext
        _, hkinds = basis.h1_index(r)
        _, dkinds = basis.hdiv_index(r)
        nh = len(hkinds)
        lookup = {}
        boundary, interior = [], []
        for i, k in enumerate(hkinds):
            if k[0] == "v":
                lookup[("p", "v", k[1], 1)] = i
                boundary.append(i)
            elif k[0] == "e":
                lookup[("p", "e", k[1], k[2])] = i
                boundary.append(i)
            else:
                interior.append(i)
        for i, k in enumerate(dkinds):
            if k[0] == "n":
                lookup[("u", "e", k[1], k[2])] = nh + i
                boundary.append(nh + i)
            else:
                interior.append(nh + i)
        return lookup, np.array(boundary), np.array(interior)

    @cached_property
    def energy_matrix(self):
        return scaled_graph_matrix(self.r_ext, self.omega_h, self.h)

    @cached_property
    def lift(self):
        """Coefficients (in extension dofs) of the trivial lift of each trace."""
        lookup, _, _ = self._layout
        n_ext = self.energy_matrix.shape[0]
        T = np.zeros((n_ext, len(self.source)))
        for j, d in enumerate(self.source):
            i = lookup[(d.var, d.kind, d.where, d.degree)]
            T[i, j] = basis.hdiv_normal_sign(d.where) if d.var == "u" else 1.0
        return T

    @cached_property
    def _bubble_factor(self):
        _, _, interior = self._layout
        Kii = self.energy_matrix[np.ix_(interior, interior)]
        try:
            return sla.cho_factor(Kii)
        except np.linalg.LinAlgError as exc:
            raise InterpNormError(
                f"bubble system singular (r_ext={self.r_ext}, wh={self.omega_h})"
            ) from exc

    def extend(self, trace_coeffs):
        """Minimum-energy extension of trace data given in the source basis."""
        _, _, interior = self._layout
        c = self.lift @ np.asarray(trace_coeffs, dtype=complex)
        K = self.energy_matrix
        rhs = K[interior] @ c
        c[interior] = -sla.cho_solve(self._bubble_factor, rhs)
        return c

    @cached_property
    def gram(self):
        """Gram matrix of the source trace basis in the extension norm."""
        ext = np.column_stack([self.extend(e) for e in np.eye(len(self.source))])
        # entry [i, j] is (v_j, v_i)
        G = ext.conj().T @ self.energy_matrix @ ext
        return 0.5 * (G + G.conj().T)

    # -- interpolant ----------------------------------------------------------

    def target_mask(self):
        """Source functions that already lie in the target space."""
        return np.array(
            [d.kind == "v" or (d.var == "p" and d.degree <= self.p)
             or (d.var == "u" and d.degree <= self.p - 1)
             for d in self.source]
        )

    def edge_targets(self, side):
        """Target-space edge modes of both trace variables on ``side``."""
        keep = self.target_mask()
        return [i for i, e in enumerate(self.source)
                if keep[i] and e.kind == "e" and e.where == side]

    @cached_property
    def interpolant(self):
        """Matrix of the interpolant in the source basis (a projection).

        Vertex values are kept.  The top pressure and flux modes of each
        edge are projected, in the edge-restricted trace inner product,
        onto the span of all lower modes (pressure and flux together)
        living on the same edge.
        """
        n = len(self.source)
        G = self.gram
        keep = self.target_mask()
        P = np.zeros((n, n), dtype=complex)
        P[keep, keep] = 1.0
        for side in range(4):
            top = [j for j, d in enumerate(self.source)
                   if not keep[j] and d.where == side]
            targets = self.edge_targets(side)
            if not top or not targets:
                continue
            Gtt = G[np.ix_(targets, targets)]
            try:
                P[np.ix_(targets, top)] = np.linalg.solve(Gtt, G[np.ix_(targets, top)])
            except np.linalg.LinAlgError as exc:
                raise InterpNormError(f"singular edge projection on side {side}") from exc
        return P

    def eigenvalues(self):
        """Eigenvalues lambda^2 of ``P^H G P v = lambda^2 G v``, ascending."""
        G = self.gram
        P = self.interpolant
        lhs = P.conj().T @ G @ P
        lhs = 0.5 * (lhs + lhs.conj().T)
        try:
            return sla.eigh(lhs, G, eigvals_only=True)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(G)
            raise InterpNormError(f"pencil solve failed, cond(G)={cond:.3e}") from exc

    def norm(self):
        lam2 = self.eigenvalues()
        return math.sqrt(max(lam2[-1], 0.0))


def interp_norm(p, h, omega, r_ext=None):
    """Norm of the trace interpolant for order ``p``, cell size ``h``."""
    return InterpNormProblem(p, omega * h, h, r_ext).norm()


def norm_table(p, h_list, omega_list, r_ext=None):
    """Rows ``[h, value(omega_1), ...]`` over the ``h x omega`` grid."""
    return [[h] + [interp_norm(p, h, w, r_ext) for w in omega_list] for h in h_list]


def table_csv(p, h_list, omega_list, r_ext=None, omega_labels=None, h_labels=None):
    """CSV text with rows = h and columns = omega."""
    if omega_labels is None:
        omega_labels = [f"{w:g}" for w in omega_list]
    if h_labels is None:
        h_labels = [f"{h:g}" for h in h_list]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"p={p} h\\omega"] + list(omega_labels))
    for label, row in zip(h_labels, norm_table(p, h_list, omega_list, r_ext)):
        writer.writerow([label] + [f"{v:.3f}" for v in row[1:]])
    return buf.getvalue()
