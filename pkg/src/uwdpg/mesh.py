"""Hierarchical quadrilateral meshes of the unit square.

Cells are dyadic squares addressed by ``(level, i, j)``; a cell at level
``l`` covers ``[i, i + 1] x [j, j + 1] / 2**l``.  Vertex coordinates are
stored as integers on a ``2**MAX_LEVEL`` grid so that geometric lookups are
exact.  Meshes are immutable: :meth:`AdaptiveMesh.refine` returns a new
mesh that shares the cell tree with its parent and appends a snapshot of the
active cells, so every earlier refinement generation can be revisited with
:meth:`AdaptiveMesh.snapshot`.

Edges are keyed by ``(level, orient, i, j)`` with ``orient`` 0 for the
horizontal edge from ``(i, j)`` to ``(i + 1, j)`` and 1 for the vertical
edge from ``(i, j)`` to ``(i, j + 1)`` in level-``l`` grid units.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

MAX_LEVEL = 24
BOTTOM, RIGHT, TOP, LEFT = range(4)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    level: int
    i: int
    j: int
    vertices: tuple  # counter-clockwise from the lower-left corner
    parent: int | None = None
    children: tuple = ()

    @property
    def size(self):
        return 0.5 ** self.level

    @property
    def origin(self):
        return (self.i * self.size, self.j * self.size)


@dataclass(frozen=True)
class Side:
    """How one side of an active cell meets the rest of the mesh.

    ``kind`` is ``"boundary"``, ``"same"``, ``"finer"`` (the neighbour is
    refined once more) or ``"coarser"`` (this side is half of the
    neighbour's side, the ``half``-th one along the edge direction).
    """

    kind: str
    key: tuple  # own edge key
    master: tuple  # key of the skeleton edge carrying the unknowns
    half: int | None = None


@dataclass
class MasterEdge:
    """Skeleton edge carrying trace unknowns."""

    key: tuple
    v0: int
    v1: int
    boundary: bool
    cells: list = field(default_factory=list)  # adjacent active cells
    split: bool = False  # true if the other side is refined (hanging midpoint)

    @property
    def orient(self):
        return self.key[1]


@dataclass(frozen=True)
class Edge:
    """Entry of the flat edge list (masters and their hanging halves)."""

    v0: int
    v1: int
    orientation: int  # +1: global normal is +x / +y (or outward on the boundary)
    parent: int | None
    boundary: bool


@dataclass(frozen=True)
class VertexPatch:
    vertex: int  # owning vertex of the patch-defining snapshot
    cells: frozenset
    diameter: float

    @property
    def overlap(self):
        return 0.5 * self.diameter


def _side_key(level, i, j, side):
    if side == BOTTOM:
        return (level, 0, i, j)
    if side == TOP:
        return (level, 0, i, j + 1)
    if side == LEFT:
        return (level, 1, i, j)
    return (level, 1, i + 1, j)


_NEIGHBOR_STEP = {BOTTOM: (0, -1), RIGHT: (1, 0), TOP: (0, 1), LEFT: (-1, 0)}


def normal_sign(key, boundary):
    """Global normal of an edge relative to +x / +y (outward on the boundary)."""
    _, orient, i, j = key
    if boundary and (j if orient == 0 else i) == 0:
        return -1
    return 1


def edge_endpoints(key):
    """Integer endpoint coordinates of an edge key."""
    level, orient, i, j = key
    s = MAX_LEVEL - level
    start = (i << s, j << s)
    end = ((i + 1) << s, j << s) if orient == 0 else (i << s, (j + 1) << s)
    return start, end


class AdaptiveMesh:
    """Quadtree mesh of the unit square with 1-irregular hanging nodes."""

    def __init__(self, cells, vertices, active, snapshots):
        self.cells = cells
        self._vertices = vertices
        self.active = frozenset(active)
        self.snapshots = list(snapshots)
        self._cindex = {(c.level, c.i, c.j): k for k, c in enumerate(cells)}
        self._vindex = {xy: k for k, xy in enumerate(vertices)}

    # -- construction -------------------------------------------------------

    @classmethod
    def uniform(cls, n_per_side):
        """Uniform ``n x n`` mesh; ``n`` must be a power of two."""
        if n_per_side < 1:
            raise MeshError("n_per_side must be >= 1")
        level = int(round(np.log2(n_per_side)))
        if 2 ** level != n_per_side:
            raise MeshError("n_per_side must be a power of two")
        cells, vertices, vindex = [], [], {}
        s = MAX_LEVEL - level
        for j in range(n_per_side):
            for i in range(n_per_side):
                corners = [((i + a) << s, (j + b) << s)
                           for a, b in ((0, 0), (1, 0), (1, 1), (0, 1))]
                vids = []
                for xy in corners:
                    if xy not in vindex:
                        vindex[xy] = len(vertices)
                        vertices.append(xy)
                    vids.append(vindex[xy])
                cells.append(Cell(level, i, j, tuple(vids)))
        active = frozenset(range(len(cells)))
        return cls(cells, vertices, active, [active])

    def snapshot(self, k):
        """The mesh as it was after refinement generation ``k``."""
        if not -len(self.snapshots) <= k < len(self.snapshots):
            raise MeshError(f"no snapshot {k}")
        k %= len(self.snapshots)
        return AdaptiveMesh(self.cells, self._vertices, self.snapshots[k],
                            self.snapshots[: k + 1])

    # -- basic queries --------------------------------------------------------

    @property
    def n_levels(self):
        return len(self.snapshots)

    @cached_property
    def active_cells(self):
        """Active cell ids in a deterministic (level, j, i) order."""
        return sorted(self.active, key=lambda c: (self.cells[c].level,
                                                  self.cells[c].j, self.cells[c].i))

    @property
    def vertices(self):
        return np.array(self._vertices, dtype=float) / float(1 << MAX_LEVEL)

    def vertex_id(self, xy):
        return self._vindex[xy]

    def cell_id(self, level, i, j):
        return self._cindex.get((level, i, j))

    def active_ancestor(self, level, i, j):
        """Id and level of the active cell covering grid square (level, i, j)."""
        for lv in range(level, -1, -1):
            shift = level - lv
            cid = self._cindex.get((lv, i >> shift, j >> shift))
            if cid is not None and cid in self.active:
                return cid
        return None

    def ancestor_in(self, cid, cell_set):
        """Nearest ancestor-or-self of ``cid`` contained in ``cell_set``."""
        while cid is not None and cid not in cell_set:
            cid = self.cells[cid].parent
        return cid

    # -- topology -----------------------------------------------------------

    @cached_property
    def sides(self):
        """``{cell id: (Side, Side, Side, Side)}`` for all active cells."""
        out = {}
        for cid in self.active:
            c = self.cells[cid]
            n = 1 << c.level
            info = []
            for side in range(4):
                key = _side_key(c.level, c.i, c.j, side)
                di, dj = _NEIGHBOR_STEP[side]
                ni, nj = c.i + di, c.j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    info.append(Side("boundary", key, key))
                    continue
                nb = self.active_ancestor(c.level, ni, nj)
                if nb is None:
                    info.append(Side("finer", key, key))
                    continue
                dl = c.level - self.cells[nb].level
                if dl == 0:
                    info.append(Side("same", key, key))
                elif dl == 1:
                    lv, orient, ei, ej = key
                    master = (lv - 1, orient, ei >> 1, ej >> 1)
                    half = (ei & 1) if orient == 0 else (ej & 1)
                    info.append(Side("coarser", key, master, half))
                else:
                    raise MeshError(f"mesh is not 1-irregular at cell {cid}")
            out[cid] = tuple(info)
        return out

    @cached_property
    def master_edges(self):
        """Skeleton edges that carry unknowns, keyed by edge key."""
        edges = {}
        for cid in self.active_cells:
            for s in self.sides[cid]:
                if s.master not in edges:
                    a, b = edge_endpoints(s.master)
                    edges[s.master] = MasterEdge(s.master, self._vindex[a],
                                                 self._vindex[b], s.kind == "boundary")
                e = edges[s.master]
                e.cells.append(cid)
                if s.kind == "coarser":
                    e.split = True
        return dict(sorted(edges.items()))

    @cached_property
    def hanging(self):
        """``{vertex id: master key}`` for vertices at the middle of split edges."""
        out = {}
        for key, e in self.master_edges.items():
            if e.split:
                a, b = edge_endpoints(key)
                mid = ((a[0] + b[0]) // 2, (a[1] + b[1]) // 2)
                out[self._vindex[mid]] = key
        return out

    @cached_property
    def regular_vertices(self):
        used = {v for cid in self.active for v in self.cells[cid].vertices}
        return sorted(used - set(self.hanging))

    def vertex_weights(self, vid):
        """Bilinear (constrained) expression of a vertex over regular vertices."""
        if vid not in self.hanging:
            return {vid: 1.0}
        e = self.master_edges[self.hanging[vid]]
        out = {}
        for end in (e.v0, e.v1):
            for v, w in self.vertex_weights(end).items():
                out[v] = out.get(v, 0.0) + 0.5 * w
        return out

    @cached_property
    def edges(self):
        """Flat list of skeleton edges; hanging halves point to their parent."""
        out, index = [], {}
        for key, e in self.master_edges.items():
            index[key] = len(out)
            out.append(Edge(e.v0, e.v1, normal_sign(key, e.boundary), None, e.boundary))
        for cid in self.active_cells:
            for s in self.sides[cid]:
                if s.kind == "coarser" and s.key not in index:
                    a, b = edge_endpoints(s.key)
                    index[s.key] = len(out)
                    out.append(Edge(self._vindex[a], self._vindex[b], 1,
                                    index[s.master], False))
        return out

    def neighbor_level_jumps(self):
        """Largest level difference across any edge between active cells."""
        worst = 0
        for cid, sides in self.sides.items():
            for s in sides:
                if s.kind == "coarser":
                    worst = max(worst, 1)
        return worst

    # -- refinement ---------------------------------------------------------

    def refine(self, marked):
        """Refine ``marked`` cells (plus closure) and return the new mesh."""
        marked = set(marked)
        bad = marked - self.active
        if bad:
            raise MeshError(f"cannot refine inactive cells {sorted(bad)}")
        if not marked:
            return self
        todo = set(marked)
        queue = sorted(marked)
        while queue:
            c = self.cells[queue.pop()]
            n = 1 << c.level
            for di, dj in _NEIGHBOR_STEP.values():
                ni, nj = c.i + di, c.j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    continue
                nb = self.active_ancestor(c.level, ni, nj)
                if nb is not None and self.cells[nb].level < c.level and nb not in todo:
                    todo.add(nb)
                    queue.append(nb)
        cells = list(self.cells)
        vertices = list(self._vertices)
        vindex = dict(self._vindex)
        active = set(self.active)
        for cid in sorted(todo, key=lambda k: (cells[k].level, cells[k].j, cells[k].i)):
            c = cells[cid]
            lv = c.level + 1
            s = MAX_LEVEL - lv
            kids = []
            for b in (0, 1):
                for a in (0, 1):
                    i, j = 2 * c.i + a, 2 * c.j + b
                    vids = []
                    for xy in [((i + x) << s, (j + y) << s)
                               for x, y in ((0, 0), (1, 0), (1, 1), (0, 1))]:
                        if xy not in vindex:
                            vindex[xy] = len(vertices)
                            vertices.append(xy)
                        vids.append(vindex[xy])
                    kids.append(len(cells))
                    cells.append(Cell(lv, i, j, tuple(vids), parent=cid))
            cells[cid] = replace(c, children=tuple(kids))
            active.discard(cid)
            active.update(kids)
        active = frozenset(active)
        return AdaptiveMesh(cells, vertices, active, self.snapshots + [active])

    def refine_uniformly(self):
        return self.refine(self.active)

    # -- patches ------------------------------------------------------------

    def build_patches(self, patch_level):
        """Vertex patches of snapshot ``patch_level`` expressed in active cells.

        Each regular vertex of the snapshot mesh owns the active cells lying
        in the support of its (constrained) bilinear hat function.
        """
        coarse = self.snapshot(patch_level)
        support = {}
        for cid in coarse.active:
            owners = set()
            for v in coarse.cells[cid].vertices:
                owners.update(coarse.vertex_weights(v))
            for v in owners:
                support.setdefault(v, set()).add(cid)
        members = {v: [] for v in support}
        coarse_of = {}
        for cid in self.active_cells:
            anc = self.ancestor_in(cid, coarse.active)
            if anc is None:
                raise MeshError("snapshot is not an ancestor of the mesh")
            coarse_of[cid] = anc
        by_coarse = {}
        for cid, anc in coarse_of.items():
            by_coarse.setdefault(anc, []).append(cid)
        patches = []
        for v in sorted(support):
            cells = [f for c in support[v] for f in by_coarse.get(c, ())]
            lo = np.min([self.cells[c].origin for c in support[v]], axis=0)
            hi = np.max([np.add(self.cells[c].origin, self.cells[c].size)
                         for c in support[v]], axis=0)
            patches.append(VertexPatch(v, frozenset(cells), float(np.max(hi - lo))))
        return patches

    # -- output -------------------------------------------------------------

    def dump_text(self):
        """Vertex list followed by active-cell connectivity."""
        buf = io.StringIO()
        xy = self.vertices
        buf.write(f"vertices {len(xy)}\n")
        for k, (x, y) in enumerate(xy):
            buf.write(f"{k} {x:.17g} {y:.17g}\n")
        buf.write(f"cells {len(self.active)}\n")
        for cid in self.active_cells:
            c = self.cells[cid]
            buf.write(f"{cid} {c.level} " + " ".join(map(str, c.vertices)) + "\n")
        return buf.getvalue()

    def to_svg(self, values=None, size=512):
        """SVG of the active cells, coloured by level or by ``values[cid]``."""
        if values is None:
            values = {cid: self.cells[cid].level for cid in self.active}
        vals = np.array([values.get(cid, 0.0) for cid in self.active_cells], dtype=float)
        lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
        span = hi - lo or 1.0
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
               f'height="{size}" viewBox="0 0 {size} {size}">']
        for cid, v in zip(self.active_cells, vals):
            c = self.cells[cid]
            x0, y0 = c.origin
            t = (v - lo) / span
            color = f"rgb({int(255 * t)},{int(96 + 64 * (1 - t))},{int(255 * (1 - t))})"
            out.append(
                f'<rect x="{x0 * size:.3f}" y="{(1 - y0 - c.size) * size:.3f}" '
                f'width="{c.size * size:.3f}" height="{c.size * size:.3f}" '
                f'fill="{color}" stroke="black" stroke-width="0.5"/>'
            )
        out.append("</svg>")
        return "\n".join(out) + "\n"


def uniform_mesh(n_per_side):
    return AdaptiveMesh.uniform(n_per_side)


def refine(mesh, marked):
    return mesh.refine(marked)


def build_patches(mesh, patch_level):
    return mesh.build_patches(patch_level)


def uniform_hierarchy(n_coarse, n_fine):
    """Mesh refined uniformly from ``n_coarse`` to ``n_fine`` cells per side."""
    mesh = AdaptiveMesh.uniform(n_coarse)
    while (1 << mesh.cells[next(iter(mesh.active))].level) < n_fine:
        mesh = mesh.refine_uniformly()
    return mesh
