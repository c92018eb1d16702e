"""Global condensed skeleton system.

Global unknowns, in this order:

* ``p-hat`` values at regular vertices,
* per master edge: ``p-hat`` bubbles of degree 2..p, then (interior edges
  only) ``u-hat_n`` Legendre modes of degree 0..p-1 measured along the
  edge's global normal (+x for vertical, +y for horizontal edges).

Local trace unknowns of every active cell are expressed through a real
constraint matrix ``C_K`` acting on a handful of global ids: hanging
vertices average the ends of their master edge (plus its bubbles), halves of
a split edge restrict the master polynomial.  Boundary fluxes are not
unknowns: the impedance condition gives ``u-hat_n = p-hat - g`` there.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import basis
from .dpg_element import Layout, assemble_element, field_values
from .mesh import LEFT, BOTTOM

log = logging.getLogger(__name__)


class SystemError_(RuntimeError):
    pass


# -- model problem ---------------------------------------------------------


@dataclass(frozen=True)
class PlaneWave:
    """Plane wave solving ``i w p + div u = 0, i w u + grad p = 0``.

    ``p = exp(-i w d.x)`` and ``u = d p`` for a unit direction ``d``.
    """

    omega: float
    direction: tuple = (1.0, 0.0)

    @property
    def d(self):
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        p = np.exp(-1j * self.omega * (pts @ self.d))
        return p, self.d[:, None] * p[None, :]

    def impedance(self, pts, normal):
        """Data ``g = p - u.n`` for the impedance condition."""
        p, u = self(pts)
        return p - np.asarray(normal) @ u


@dataclass(frozen=True)
class Problem:
    """Discretization parameters plus data."""

    omega: float
    p: int = 2
    dp: int = 2
    alpha: float = 1.0
    source: object = None  # pts -> (f1, f2) or None
    impedance: object = None  # (pts, normal) -> g or None
    exact: object = None  # pts -> (p, u) or None
    flux_degree: int | None = None  # None: p - 1

    @classmethod
    def plane_wave(cls, omega, p=2, dp=2, direction=(1.0, 0.0), **kw):
        wave = PlaneWave(omega, direction)
        return cls(omega, p, dp, impedance=wave.impedance, exact=wave, **kw)


# -- dof map -------------------------------------------------------------------


def _side_sign(side):
    # outward normal of the cell side relative to +x / +y
    return -1.0 if side in (BOTTOM, LEFT) else 1.0


@dataclass
class TraceDofMap:
    """Global trace numbering and per-cell constraint matrices."""

    mesh: object
    p: int
    vertex_dof: dict  # regular vertex id -> gid
    bubble_dofs: dict  # master key -> list of gids (degree 2..p)
    flux_dofs: dict  # master key -> list of gids (degree 0..p-1); interior only
    cell_map: dict = field(default_factory=dict)  # cid -> (gids array, C matrix)
    flux_degree: int | None = None

    @property
    def n_dofs(self):
        return (len(self.vertex_dof) + sum(map(len, self.bubble_dofs.values()))
                + sum(map(len, self.flux_dofs.values())))

    def layout(self, cid):
        sides = self.mesh.sides[cid]
        return Layout(self.p, tuple(s.kind == "boundary" for s in sides), self.flux_degree)

    @cached_property
    def cells_of_dof(self):
        """For each gid, the active cells whose constraint rows reference it."""
        out = [[] for _ in range(self.n_dofs)]
        for cid in self.mesh.active_cells:
            gids, _ = self.cell_map[cid]
            for g in gids:
                out[g].append(cid)
        return out

    def dofs_inside(self, cells):
        """Global dofs referenced only by cells of ``cells``."""
        cells = set(cells)
        return np.array([g for g, owners in enumerate(self.cells_of_dof)
                         if owners and set(owners) <= cells], dtype=int)

    def patch_dofs(self, patches, patch_level):
        """Dof sets of vertex patches built on snapshot ``patch_level``.

        A dof joins the patch of coarse vertex ``V`` when the (constrained)
        bilinear hat of ``V`` is positive at the dof's location: a vertex for
        vertex dofs, the edge midpoint for edge dofs.  The hat of an interior
        vertex vanishes on the domain boundary, so boundary dofs go to the
        patches of boundary vertices only.
        """
        mesh = self.mesh
        coarse = mesh.snapshot(patch_level)
        owner = {v.vertex: k for k, v in enumerate(patches)}
        sets = [set() for _ in patches]
        weights = {}
        for cid in mesh.active_cells:
            cell = mesh.cells[cid]
            kc = mesh.ancestor_in(cid, coarse.active)
            if kc not in weights:
                weights[kc] = [coarse.vertex_weights(v) for v in coarse.cells[kc].vertices]
            cw = weights[kc]
            ccell = coarse.cells[kc]
            scale = 2.0 ** (cell.level - ccell.level)
            ox, oy = cell.i / scale - ccell.i, cell.j / scale - ccell.j
            sides = mesh.sides[cid]
            locs = []
            for c, vid in enumerate(cell.vertices):
                if vid in self.vertex_dof:
                    locs.append((basis.CORNERS[c], [self.vertex_dof[vid]]))
            for side, s in enumerate(sides):
                if s.kind == "coarser":
                    continue
                a, b = basis.SIDE_CORNERS[side]
                mid = 0.5 * (basis.CORNERS[a] + basis.CORNERS[b])
                locs.append((mid, self.bubble_dofs[s.master] + self.flux_dofs.get(s.master, [])))
            for ref, gids in locs:
                x, y = ox + ref[0] / scale, oy + ref[1] / scale
                hats = ((1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y)
                chi = {}
                for h, w in zip(hats, cw):
                    for v, wv in w.items():
                        chi[v] = chi.get(v, 0.0) + h * wv
                for v, val in chi.items():
                    if val > 1e-12 and v in owner:
                        sets[owner[v]].update(gids)
        return [np.array(sorted(s), dtype=int) for s in sets]

    def local_trace(self, cid, x):
        gids, C = self.cell_map[cid]
        return C @ x[gids]

    def expand(self, cid, x):
        """Dense local trace vector of ``cid``; alias of :meth:`local_trace`."""
        return self.local_trace(cid, x)

    def constraint_matrix(self):
        """Sparse map from global dofs to the stacked local trace vectors."""
        rows, cols, vals = [], [], []
        offset = 0
        for cid in self.mesh.active_cells:
            gids, C = self.cell_map[cid]
            r, c = np.nonzero(C)
            rows.append(r + offset)
            cols.append(gids[c])
            vals.append(C[r, c])
            offset += C.shape[0]
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                     np.concatenate(cols))),
                             shape=(offset, self.n_dofs))


def _vertex_expr(mesh, dm, vid, cache):
    if vid in cache:
        return cache[vid]
    if vid in dm.vertex_dof:
        out = {dm.vertex_dof[vid]: 1.0}
    else:
        key = mesh.hanging[vid]
        e = mesh.master_edges[key]
        out = {}
        for end in (e.v0, e.v1):
            for g, w in _vertex_expr(mesh, dm, end, cache).items():
                out[g] = out.get(g, 0.0) + 0.5 * w
        mid = basis.h1_1d(dm.p, np.array([0.5]))[0][2:, 0]
        for g, w in zip(dm.bubble_dofs[key], mid):
            if w != 0.0:
                out[g] = out.get(g, 0.0) + w
    cache[vid] = out
    return out


def build_dofmap(mesh, p, flux_degree=None):
    """Number trace unknowns of ``mesh`` and build per-cell constraints."""
    if p < 1:
        raise ValueError("p must be >= 1")
    vertex_dof = {v: k for k, v in enumerate(mesh.regular_vertices)}
    n = len(vertex_dof)
    nfl = p if flux_degree is None else flux_degree + 1
    bubble_dofs, flux_dofs = {}, {}
    for key, e in mesh.master_edges.items():
        bubble_dofs[key] = list(range(n, n + p - 1))
        n += p - 1
        if not e.boundary:
            flux_dofs[key] = list(range(n, n + nfl))
            n += nfl
    dm = TraceDofMap(mesh, p, vertex_dof, bubble_dofs, flux_dofs, flux_degree=flux_degree)
    cache = {}
    for cid in mesh.active_cells:
        cell = mesh.cells[cid]
        lay = dm.layout(cid)
        rows = [dict() for _ in range(lay.n_trace)]
        for c, vid in enumerate(cell.vertices):
            rows[c] = dict(_vertex_expr(mesh, dm, vid, cache))
        for side, s in enumerate(mesh.sides[cid]):
            local_bub = lay.phat_side_dofs(side)[2:]
            if s.kind == "coarser":
                a = 0.5 * s.half
                Rh = basis.restriction_matrix("h1", p, a, a + 0.5)
                Rl = basis.restriction_matrix("l2", nfl - 1, a, a + 0.5)
            else:
                Rh = Rl = None
            master_bub = bubble_dofs[s.master]
            for i, li in enumerate(local_bub):
                if Rh is None:
                    rows[li] = {master_bub[i]: 1.0}
                else:
                    rows[li] = {g: Rh[i + 2, k + 2] for k, g in enumerate(master_bub)
                                if Rh[i + 2, k + 2] != 0.0}
            if lay.boundary[side]:
                continue
            sign = _side_sign(side)
            master_flux = flux_dofs[s.master]
            for i, li in enumerate(lay.flux_side_dofs(side)):
                if Rl is None:
                    rows[li] = {master_flux[i]: sign}
                else:
                    rows[li] = {g: sign * Rl[i, k] for k, g in enumerate(master_flux)
                                if Rl[i, k] != 0.0}
        gids = sorted({g for r in rows for g in r})
        col = {g: k for k, g in enumerate(gids)}
        C = np.zeros((lay.n_trace, len(gids)))
        for i, r in enumerate(rows):
            if not r:
                raise SystemError_(f"local trace dof {i} of cell {cid} is unmapped")
            for g, w in r.items():
                C[i, col[g]] = w
        dm.cell_map[cid] = (np.array(gids, dtype=int), C)
    return dm


# -- global system ------------------------------------------------------------


@dataclass
class GlobalSystem:
    """Condensed sparse system ``S x = g`` plus element data for recovery."""

    dofmap: TraceDofMap
    problem: Problem
    S: sp.csr_matrix
    rhs: np.ndarray
    elements: dict  # cid -> ElementSystem

    @property
    def n_dofs(self):
        return self.S.shape[0]

    @property
    def mesh(self):
        return self.dofmap.mesh

    def dump(self, matrix_path, rhs_path=None):
        """Write ``S`` (and the rhs) in Matrix Market coordinate format."""
        scipy.io.mmwrite(matrix_path, self.S, field="complex", symmetry="hermitian")
        if rhs_path is not None:
            scipy.io.mmwrite(rhs_path, self.rhs.reshape(-1, 1).astype(complex))


def element_systems(mesh, problem, dofmap=None):
    out = {}
    for cid in mesh.active_cells:
        cell = mesh.cells[cid]
        bnd = tuple(s.kind == "boundary" for s in mesh.sides[cid])
        out[cid] = assemble_element(cell.origin, cell.size, problem.p, problem.dp,
                                    problem.omega, bnd, problem.alpha,
                                    problem.source, problem.impedance,
                                    problem.flux_degree)
    return out


def assemble_global(mesh, dofmap, elements, problem=None):
    """Scatter ``C_K^T S_K C_K`` and ``C_K^T g_K`` into the global system."""
    n = dofmap.n_dofs
    rows, cols, vals = [], [], []
    rhs = np.zeros(n, dtype=complex)
    for cid in mesh.active_cells:
        gids, C = dofmap.cell_map[cid]
        es = elements[cid]
        if es.S.shape[0] != C.shape[0]:
            raise SystemError_(f"stale element {cid}: {es.S.shape[0]} vs {C.shape[0]}")
        Sk = C.T @ es.S @ C
        rhs[gids] += C.T @ es.g
        rows.append(np.repeat(gids, len(gids)))
        cols.append(np.tile(gids, len(gids)))
        vals.append(Sk.ravel())
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    S = (S + S.conj().T) * 0.5
    S.sum_duplicates()
    S.sort_indices()
    return GlobalSystem(dofmap, problem, S, rhs, elements)


def build_system(mesh, problem):
    """Dof map, element systems and the assembled condensed system."""
    dm = build_dofmap(mesh, problem.p, problem.flux_degree)
    elements = element_systems(mesh, problem)
    return assemble_global(mesh, dm, elements, problem)


def local_solution(system, cid, x):
    """Full local trial vector (fields then traces) of cell ``cid``."""
    es = system.elements[cid]
    trace = system.dofmap.local_trace(cid, x)
    return np.concatenate([es.recover(trace), trace])


def recover_fields(system, x):
    """``{cid: field coefficients}`` from the global trace solution ``x``."""
    return {cid: system.elements[cid].recover(system.dofmap.local_trace(cid, x))
            for cid in system.mesh.active_cells}


def boundary_flux(system, cid, x, side):
    """Flux values ``p-hat - g`` at side quadrature points of a boundary side."""
    es = system.elements[cid]
    lay = es.layout
    if not lay.boundary[side]:
        raise ValueError("not a boundary side")
    trace = system.dofmap.local_trace(cid, x)
    t, _ = basis.gauss_1d(system.problem.p + 2)
    ph = trace[lay.phat_side_dofs(side)] @ basis.edge_h1_1d(system.problem.p, t)
    cell = system.mesh.cells[cid]
    pts = np.asarray(cell.origin) + cell.size * basis.side_points(side, t)
    return ph - system.problem.impedance(pts, basis.SIDE_NORMALS[side])


def error_indicators(system, x):
    """``{cid: eta_K}`` from the element error representation functions."""
    return {cid: system.elements[cid].residual(local_solution(system, cid, x))
            for cid in system.mesh.active_cells}


def field_error(system, x, exact=None, n_points=None):
    """Relative L2 error of the recovered ``(p, u)`` against ``exact``."""
    exact = exact or system.problem.exact
    if exact is None:
        raise ValueError("no exact solution")
    p = system.problem.p
    nq = n_points or p + 4
    xq, wq = basis.gauss_1d(nq)
    rule = basis.QuadratureRule(xq, wq)
    ref, w = rule.points, rule.weights
    err = ref_norm = 0.0
    for cid, coeffs in recover_fields(system, x).items():
        cell = system.mesh.cells[cid]
        pts = np.asarray(cell.origin) + cell.size * ref
        ph, u1, u2 = field_values(p, coeffs, ref)
        pe, ue = exact(pts)
        jac = cell.size ** 2
        err += jac * np.sum(w * (abs(ph - pe) ** 2 + abs(u1 - ue[0]) ** 2
                                 + abs(u2 - ue[1]) ** 2))
        ref_norm += jac * np.sum(w * (abs(pe) ** 2 + abs(ue[0]) ** 2 + abs(ue[1]) ** 2))
    return float(np.sqrt(err / ref_norm))


def interpolate_trace(dofmap, pressure, flux):
    """Global trace vector of smooth data.

    ``pressure(pts)`` gives ``p-hat`` (vertex values, then edge bubbles by
    least squares along each master edge); ``flux(pts, normal)`` gives the
    normal flux, projected onto Legendre modes along each interior master
    edge with its global normal.
    """
    from .mesh import MAX_LEVEL, edge_endpoints, normal_sign

    mesh = dofmap.mesh
    x = np.zeros(dofmap.n_dofs, dtype=complex)
    xy = mesh.vertices
    for v, g in dofmap.vertex_dof.items():
        x[g] = pressure(xy[v][None, :])[0]
    p = dofmap.p
    t, w = basis.gauss_1d(p + 4)
    for key, e in mesh.master_edges.items():
        a, b = (np.array(q, dtype=float) / float(1 << MAX_LEVEL) for q in edge_endpoints(key))
        pts = a[None, :] * (1 - t)[:, None] + b[None, :] * t[:, None]
        phi = basis.h1_1d(p, t)[0]
        ends = pressure(np.stack([a, b]))
        vals = pressure(pts) - ends[0] * phi[0] - ends[1] * phi[1]
        if p > 1:
            coef, *_ = np.linalg.lstsq(phi[2:].T, vals, rcond=None)
            x[dofmap.bubble_dofs[key]] = coef
        if key in dofmap.flux_dofs:
            normal = np.array([0.0, 1.0]) if key[1] == 0 else np.array([1.0, 0.0])
            normal = normal * normal_sign(key, e.boundary)
            m = len(dofmap.flux_dofs[key])
            leg = basis.l2_1d(m - 1, t)[0]
            f = flux(pts, normal)
            x[dofmap.flux_dofs[key]] = (leg * w) @ f * (2 * np.arange(m) + 1)
    return x
