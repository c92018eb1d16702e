import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwdpg import mesh as M


def _area(m):
    return sum(m.cells[c].size ** 2 for c in m.active)


def _tiles_once(m, n=64):
    # rasterise active cells on a fine grid: every pixel hit exactly once
    hits = np.zeros((n, n), dtype=int)
    for cid in m.active:
        c = m.cells[cid]
        s = n * c.size
        x0, y0 = int(round(n * c.origin[0])), int(round(n * c.origin[1]))
        hits[x0:x0 + int(s), y0:y0 + int(s)] += 1
    return np.all(hits == 1)


@pytest.mark.parametrize("n,cells,verts,edges", [(1, 1, 4, 4), (2, 4, 9, 12), (4, 16, 25, 40)])
def test_uniform_counts(n, cells, verts, edges):
    m = M.uniform_mesh(n)
    assert len(m.active) == cells
    assert len(m.vertices) == verts
    assert len(m.edges) == edges
    assert m.n_levels == 1


def test_uniform_32_matches_finest_row():
    m = M.uniform_mesh(32)
    assert len(m.active) == 1024
    assert {m.cells[c].size for c in m.active} == {1 / 32}


@pytest.mark.parametrize("n", [0, 3])
def test_uniform_rejects_bad_sizes(n):
    with pytest.raises(M.MeshError):
        M.uniform_mesh(n)


def test_refine_all_gives_uniform_4x4():
    m = M.uniform_mesh(2)
    r = M.refine(m, m.active)
    assert len(r.active) == 16 and r.n_levels == 2
    assert not r.hanging


def test_refine_one_cell():
    m = M.uniform_mesh(2)
    r = m.refine({m.active_cells[0]})
    assert len(r.active) == 7
    # one hanging vertex on each interior edge of the refined cell
    assert len(r.hanging) == 2
    xy = r.vertices
    assert sorted(map(tuple, xy[list(r.hanging)])) == [(0.25, 0.5), (0.5, 0.25)]


def test_refine_empty_is_identity():
    m = M.uniform_mesh(2)
    assert m.refine(set()) is m
    assert m.n_levels == 1


def test_refine_rejects_inactive():
    m = M.uniform_mesh(2)
    r = m.refine({m.active_cells[0]})
    with pytest.raises(M.MeshError):
        r.refine({m.active_cells[0]})


def test_closure_keeps_one_irregularity():
    m = M.uniform_mesh(2)
    for _ in range(4):
        corner = min(m.active, key=lambda c: (m.cells[c].origin, -m.cells[c].level))
        m = m.refine({corner})
    assert m.neighbor_level_jumps() <= 1
    assert _area(m) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10 ** 6), min_size=1, max_size=6))
def test_random_refinement_invariants(picks):
    m = M.uniform_mesh(2)
    for k in picks:
        act = m.active_cells
        m = m.refine({act[k % len(act)]})
        assert m.neighbor_level_jumps() <= 1
    assert _area(m) == pytest.approx(1.0, abs=1e-12)
    assert _tiles_once(m)
    # snapshots nest: each cell of snapshot k is in k+1 or is the parent of cells there
    for k in range(m.n_levels - 1):
        a, b = m.snapshots[k], m.snapshots[k + 1]
        for cid in a:
            assert cid in b or all(ch in b for ch in m.cells[cid].children)
    # hanging vertices lie on their master edge
    xy = m.vertices
    for vid, key in m.hanging.items():
        e = m.master_edges[key]
        np.testing.assert_allclose(xy[vid], 0.5 * (xy[e.v0] + xy[e.v1]))
    for e in m.edges:
        if e.parent is not None:
            p = m.edges[e.parent]
            for v in (e.v0, e.v1):
                a, b = xy[p.v1] - xy[p.v0], xy[v] - xy[p.v0]
                d = a[0] * b[1] - a[1] * b[0]
                assert abs(d) < 1e-14


def test_children_vertices_on_parent_closure():
    m = M.uniform_mesh(1).refine_uniformly().refine_uniformly()
    xy = m.vertices
    for c in m.cells:
        if c.parent is None:
            continue
        p = m.cells[c.parent]
        lo = np.array(p.origin)
        assert np.all(xy[list(c.vertices)] >= lo - 1e-15)
        assert np.all(xy[list(c.vertices)] <= lo + p.size + 1e-15)


def test_patches_on_2x2():
    m = M.uniform_mesh(2)
    patches = m.build_patches(0)
    assert len(patches) == 9
    sizes = sorted(len(p.cells) for p in patches)
    assert sizes == [1, 1, 1, 1, 2, 2, 2, 2, 4]
    center = max(patches, key=lambda p: len(p.cells))
    assert center.cells == m.active


@pytest.mark.parametrize("n", [2, 8, 16])
def test_half_patches_on_finer_meshes(n):
    m = M.uniform_hierarchy(2, n)
    patches = m.build_patches(0)
    assert len(patches) == 9
    center = max(patches, key=lambda p: len(p.cells))
    assert center.diameter == 1.0 and center.overlap == 0.5
    assert len(center.cells) == n * n
    count = {}
    for p in patches:
        for c in p.cells:
            count[c] = count.get(c, 0) + 1
    assert set(count) == set(m.active)
    assert max(count.values()) <= 4


def test_finest_snapshot_interior_patches_have_four_cells():
    m = M.uniform_hierarchy(2, 8)
    patches = m.build_patches(m.n_levels - 1)
    xy = m.vertices
    for p in patches:
        x, y = xy[p.vertex]
        if 0 < x < 1 and 0 < y < 1:
            assert len(p.cells) == 4


def test_boundary_edge_orientation_is_outward():
    m = M.uniform_mesh(2)
    xy = m.vertices
    for e in m.edges:
        a, b = xy[e.v0], xy[e.v1]
        if e.boundary and (a[0] + b[0] == 0 or a[1] + b[1] == 0):
            assert e.orientation == -1
        else:
            assert e.orientation == 1


def test_text_and_svg_dumps():
    m = M.uniform_mesh(2).refine({0})
    txt = m.dump_text()
    assert txt.startswith("vertices 14") and f"cells {len(m.active)}" in txt
    svg = m.to_svg({c: float(c) for c in m.active})
    assert svg.count("<rect") == len(m.active)
