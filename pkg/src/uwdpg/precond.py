"""Vertex-patch additive Schwarz smoothing and multigrid on trace spaces."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis, kernels
from .krylov import pcg
from .mesh import MAX_LEVEL, BOTTOM, LEFT, RIGHT, TOP
from .system import build_system

log = logging.getLogger(__name__)

# patches up to this size get an explicit dense inverse, larger ones a sparse LU
DENSE_LIMIT = 1500


class HierarchyError(RuntimeError):
    pass


# -- additive Schwarz -------------------------------------------------------------


@dataclass
class SchwarzSmoother:
    """``B r = sum_i R_i^T S_ii^{-1} R_i r`` over patch index sets."""

    S: sp.csr_matrix
    patches: list  # index arrays
    theta: float = 1.0
    nu: int = 1
    skip_tol: float = 1e-14
    _idx: np.ndarray = field(init=False, repr=False)
    _idx_ptr: np.ndarray = field(init=False, repr=False)
    _blocks: np.ndarray = field(init=False, repr=False)
    _blk_ptr: np.ndarray = field(init=False, repr=False)
    _large: list = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        S = self.S.tocsr()
        small, large = [], []
        kept = []
        for ids in self.patches:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.size == 0:
                warnings.warn("empty patch skipped", RuntimeWarning, stacklevel=3)
                continue
            kept.append(ids)
            sub = S[ids][:, ids]
            if ids.size <= DENSE_LIMIT:
                inv = sla.inv(sub.toarray(), check_finite=True)
                small.append((ids, 0.5 * (inv + inv.conj().T)))
            else:
                large.append((ids, spla.splu(sub.tocsc())))
        self.patches = kept
        sizes = [ids.size for ids, _ in small]
        self._idx_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._idx = (np.concatenate([ids for ids, _ in small]).astype(np.int64)
                     if small else np.zeros(0, np.int64))
        self._blk_ptr = np.concatenate([[0], np.cumsum([m * m for m in sizes])]).astype(np.int64)
        self._blocks = (np.concatenate([inv.ravel() for _, inv in small])
                        if small else np.zeros(0, complex))
        self._large = large

    @property
    def n(self):
        return self.S.shape[0]

    def coverage(self):
        """Number of patches containing each dof."""
        count = np.zeros(self.n, dtype=int)
        for ids in self.patches:
            count[ids] += 1
        return count

    def apply(self, r):
        """One additive sweep ``sum_i R_i^T S_ii^{-1} R_i r`` (no relaxation)."""
        r = np.ascontiguousarray(r, dtype=complex)
        tol = self.skip_tol * np.linalg.norm(r)
        out = np.zeros_like(r)
        kernels.patch_correction(r, self._idx, self._idx_ptr, self._blocks,
                                 self._blk_ptr, tol, out)
        for ids, lu in self._large:
            loc = r[ids]
            if np.linalg.norm(loc) > tol:
                out[ids] += lu.solve(loc)
        return out

    def as_preconditioner(self):
        return lambda r: self.theta * self.apply(r)

    def smooth(self, b, x0=None, steps=None):
        """``steps`` (default ``nu``) relaxed Richardson sweeps on ``S x = b``."""
        x = np.zeros_like(b, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
        for _ in range(self.nu if steps is None else steps):
            x += self.theta * self.apply(b - self.S @ x)
        return x


def patch_dofs(dofmap, patches, patch_level):
    """Dof index sets of vertex patches; uncovered dofs get singleton patches."""
    sets = dofmap.patch_dofs(patches, patch_level)
    covered = np.zeros(dofmap.n_dofs, dtype=bool)
    for s in sets:
        covered[s] = True
    missing = np.flatnonzero(~covered)
    if missing.size:
        warnings.warn(f"{missing.size} dofs outside every patch; added as singletons",
                      RuntimeWarning, stacklevel=2)
        sets += [np.array([g]) for g in missing]
    return sets


def build_smoother(S, patches, theta=1.0, nu=1):
    return SchwarzSmoother(S, [np.asarray(p) for p in patches], theta, nu)


def smooth(smoother, b, x0=None):
    return smoother.smooth(b, x0)


# -- grid transfer ----------------------------------------------------------------


def _cell_box(cell):
    s = MAX_LEVEL - cell.level
    return cell.i << s, cell.j << s, 1 << s


def _locate_on_boundary(cell, pts):
    """Side and parameters of integer points on the boundary of ``cell``."""
    x0, y0, n = _cell_box(cell)
    for side, (fixed, val, free, start) in {
        BOTTOM: (1, y0, 0, x0), TOP: (1, y0 + n, 0, x0),
        LEFT: (0, x0, 1, y0), RIGHT: (0, x0 + n, 1, y0),
    }.items():
        if all(p[fixed] == val and start <= p[free] <= start + n for p in pts):
            return side, [(p[free] - start) / n for p in pts]
    return None, None


@dataclass
class GridTransfer:
    """Prolongation from a coarse system to a fine one (inclusion + Schur extension)."""

    P_B: sp.csr_matrix  # coarse dofs -> fine dofs on the coarse skeleton (zero rows elsewhere)
    skeleton: np.ndarray  # fine dofs on the coarse skeleton
    interior: np.ndarray  # remaining fine dofs
    S_IB: sp.csr_matrix
    S_BI: sp.csr_matrix
    lu_II: object

    @property
    def shape(self):
        return self.P_B.shape

    def prolong(self, xc):
        x = self.P_B @ np.asarray(xc, dtype=complex)
        if self.interior.size:
            x[self.interior] = -self.lu_II.solve(self.S_IB @ x[self.skeleton])
        return x

    def restrict(self, y):
        y = np.asarray(y, dtype=complex)
        yb = y[self.skeleton].copy()
        if self.interior.size:
            # adjoint of the extension; S_II is Hermitian
            yb -= self.S_BI @ self.lu_II.solve(y[self.interior], trans="H")
        full = np.zeros_like(y)
        full[self.skeleton] = yb
        return self.P_B.conj().T @ full

    def dense(self):
        """Explicit prolongation matrix (small problems only)."""
        nc = self.P_B.shape[1]
        return np.column_stack([self.prolong(e) for e in np.eye(nc)])


def _inclusion(coarse_sys, fine_sys):
    """Sparse map of coarse traces onto fine dofs lying on the coarse skeleton."""
    cm, fm = coarse_sys.mesh, fine_sys.mesh
    cdm, fdm = coarse_sys.dofmap, fine_sys.dofmap
    p = fdm.p
    rows, cols, vals = [], [], []
    on_skel = set()

    def add(gid, ccid, side, coeffs_local):
        # coeffs_local: weights on the coarse local trace vector
        gids, C = cdm.cell_map[ccid]
        w = coeffs_local @ C
        nz = np.flatnonzero(np.abs(w) > 1e-15)
        rows.extend([gid] * nz.size)
        cols.extend(gids[nz])
        vals.extend(w[nz])
        on_skel.add(gid)

    coarse_active = cm.active
    fine_cells = fm.active_cells
    # vertices
    done = set()
    for fcid in fine_cells:
        fcell = fm.cells[fcid]
        ccid = fm.ancestor_in(fcid, coarse_active)
        ccell = cm.cells[ccid]
        lay = cdm.layout(ccid)
        for v in fcell.vertices:
            if v in done or v not in fdm.vertex_dof:
                continue
            side, t = _locate_on_boundary(ccell, [fm._vertices[v]])
            if side is None:
                continue
            done.add(v)
            w = np.zeros(lay.n_trace)
            w[lay.phat_side_dofs(side)] = basis.h1_1d(p, np.array(t))[0][:, 0]
            add(fdm.vertex_dof[v], ccid, side, w)
    # edges
    from .mesh import edge_endpoints
    for key, e in fm.master_edges.items():
        ends = edge_endpoints(key)
        ccid = fm.ancestor_in(e.cells[0], coarse_active)
        ccell = cm.cells[ccid]
        side, ts = _locate_on_boundary(ccell, ends)
        if side is None:
            continue
        a, b = ts
        lay = cdm.layout(ccid)
        if b < a:
            a, b = b, a
        Rh = basis.restriction_matrix("h1", p, a, b)
        loc = lay.phat_side_dofs(side)
        for i, gid in enumerate(fdm.bubble_dofs[key]):
            w = np.zeros(lay.n_trace)
            w[loc] = Rh[i + 2]
            add(gid, ccid, side, w)
        if key in fdm.flux_dofs:
            if lay.boundary[side]:
                raise HierarchyError("interior fine edge on a coarse boundary side")
            Rl = basis.restriction_matrix("l2", len(fdm.flux_dofs[key]) - 1, a, b)
            sign = -1.0 if side in (BOTTOM, LEFT) else 1.0
            locf = lay.flux_side_dofs(side)
            for i, gid in enumerate(fdm.flux_dofs[key]):
                w = np.zeros(lay.n_trace)
                w[locf] = sign * Rl[i]
                add(gid, ccid, side, w)
    P = sp.coo_matrix((vals, (rows, cols)), shape=(fdm.n_dofs, cdm.n_dofs)).tocsr()
    # rows were written once per dof; duplicates would double count
    counts = np.bincount(rows, minlength=fdm.n_dofs) if rows else np.zeros(fdm.n_dofs)
    return P, np.array(sorted(on_skel), dtype=int), counts


def build_transfer(coarse_sys, fine_sys):
    P_B, skeleton, _ = _inclusion(coarse_sys, fine_sys)
    n = fine_sys.n_dofs
    interior = np.setdiff1d(np.arange(n), skeleton)
    S = fine_sys.S.tocsr()
    S_IB = S[interior][:, skeleton]
    S_BI = S[skeleton][:, interior]
    lu = spla.splu(S[interior][:, interior].tocsc()) if interior.size else None
    return GridTransfer(P_B, skeleton, interior, S_IB, S_BI, lu)


# -- hierarchy and V-cycle -------------------------------------------------------


@dataclass
class Level:
    system: object
    smoother: SchwarzSmoother | None = None
    transfer: GridTransfer | None = None  # from the next coarser level
    lu: object = None  # coarsest level only


@dataclass
class GridHierarchy:
    levels: list  # coarsest first

    @property
    def n_levels(self):
        return len(self.levels)

    def vcycle(self, b, level=None):
        if level is None:
            level = len(self.levels) - 1
        lev = self.levels[level]
        if level == 0:
            return lev.lu.solve(np.asarray(b, dtype=complex))
        S = lev.system.S
        x = lev.smoother.smooth(b)
        rc = lev.transfer.restrict(b - S @ x)
        x += lev.transfer.prolong(self.vcycle(rc, level - 1))
        x = lev.smoother.smooth(b, x)
        return x

    def as_preconditioner(self):
        return self.vcycle


def build_hierarchy(mesh, problem, snapshots=None, theta=0.25, nu=10, systems=None):
    """Hierarchy over the chosen ``snapshots`` of ``mesh`` (coarsest first).

    Smoother patches on each level are the vertex supports of the next
    coarser chosen snapshot.  ``systems`` may supply pre-assembled systems
    (one per snapshot).
    """
    if snapshots is None:
        snapshots = list(range(mesh.n_levels))
    snapshots = sorted(set(snapshots))
    if systems is None:
        systems = [build_system(mesh.snapshot(k), problem) for k in snapshots]
    if len(systems) != len(snapshots):
        raise HierarchyError("one assembled system per level required")
    levels = [Level(systems[0], lu=spla.splu(systems[0].S.tocsc()))]
    for lvl in range(1, len(snapshots)):
        sysf = systems[lvl]
        if sysf is None:
            raise HierarchyError(f"level {lvl} not assembled")
        fine_mesh = sysf.mesh
        patches = fine_mesh.build_patches(snapshots[lvl - 1])
        sets = patch_dofs(sysf.dofmap, patches, snapshots[lvl - 1])
        sm = SchwarzSmoother(sysf.S, sets, theta, nu)
        levels.append(Level(sysf, sm, build_transfer(systems[lvl - 1], sysf)))
    return GridHierarchy(levels)


def vcycle(hierarchy, b, level=None):
    return hierarchy.vcycle(b, level)


def one_level_preconditioner(system, patch_level=0, theta=1.0):
    """Additive Schwarz preconditioner over the vertex patches of a snapshot."""
    patches = system.mesh.build_patches(patch_level)
    return SchwarzSmoother(system.S, patch_dofs(system.dofmap, patches, patch_level), theta, 1)


def estimate_condition(S, M_inv=None, n_iters=200, b=None, seed=0, report=None):
    """Extreme eigenvalues of ``M^{-1} S`` from the PCG Lanczos tridiagonal.

    Returns ``(lam_min, lam_max, kappa, converged)``; ``converged`` is false
    when PCG stopped on ``n_iters`` before the tolerance, in which case the
    estimate is partial.
    """
    if report is None:
        n = S.shape[0]
        if b is None:
            rng = np.random.default_rng(seed)
            b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        _, report = pcg(S, M_inv, b, tol=1e-10, max_iter=n_iters)
    lo, hi = report.extreme_eigenvalues()
    return lo, hi, hi / lo, report.converged
