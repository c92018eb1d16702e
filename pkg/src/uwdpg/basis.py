"""Master-element shape functions on the reference square [0, 1]^2.

The 1D building blocks are

* ``h1_1d`` -- hierarchical H1 functions: the two linear hats followed by
  integrated-Legendre bubbles of degree 2..r (vanishing at both ends),
* ``l2_1d`` -- shifted Legendre polynomials of degree 0..n.

Two-dimensional spaces are tensor products of these.  Sides of the square
are numbered bottom (0), right (1), top (2), left (3); each side is
parametrized in the direction of increasing x or y, which is also the global
orientation of every mesh edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

# (x, y) of the four corners, counter-clockwise from the origin
CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
# start/end corner of each side in its own (increasing-coordinate) direction
SIDE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
# outward normal of each side
SIDE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def side_points(side, t):
    """Map side parameter ``t`` in [0, 1] to reference coordinates."""
    t = np.asarray(t, dtype=float)
    a, b = SIDE_CORNERS[side]
    return CORNERS[a][None, :] * (1.0 - t)[:, None] + CORNERS[b][None, :] * t[:, None]


def _legendre(k, xi):
    c = np.zeros(k + 1)
    c[k] = 1.0
    return npleg.legval(xi, c)


def h1_1d(r, x):
    """Values and derivatives of the order-``r`` hierarchical basis.

    Returns two arrays of shape ``(r + 1, len(x))``.
    """
    if r < 1:
        raise ValueError("H1 order must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = 2.0 * x - 1.0
    val = np.empty((r + 1, x.size))
    der = np.empty((r + 1, x.size))
    val[0], der[0] = 1.0 - x, -1.0
    val[1], der[1] = x, 1.0
    for k in range(2, r + 1):
        scale = 1.0 / np.sqrt(2.0 * (2 * k - 1))
        val[k] = scale * (_legendre(k, xi) - _legendre(k - 2, xi))
        # d/dx (L_k - L_{k-2}) = 2 (2k - 1) L_{k-1}
        der[k] = scale * 2.0 * (2 * k - 1) * _legendre(k - 1, xi)
    return val, der


def l2_1d(n, x):
    """Values and derivatives of shifted Legendre polynomials of degree 0..n."""
    if n < 0:
        raise ValueError("L2 degree must be >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = 2.0 * x - 1.0
    val = np.empty((n + 1, x.size))
    der = np.empty((n + 1, x.size))
    for k in range(n + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        val[k] = npleg.legval(xi, c)
        der[k] = 2.0 * npleg.legval(xi, npleg.legder(c)) if k else 0.0
    return val, der


def edge_h1_1d(r, t):
    """Trace basis of order ``r`` on an edge: 2 end values then r - 1 bubbles."""
    return h1_1d(r, t)[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on [0, 1]^2 (and its 1D factor)."""

    points_1d: np.ndarray
    weights_1d: np.ndarray

    @property
    def n(self):
        return self.points_1d.size

    @property
    def points(self):
        x, y = np.meshgrid(self.points_1d, self.points_1d, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel()])

    @property
    def weights(self):
        return np.outer(self.weights_1d, self.weights_1d).ravel()


@lru_cache(maxsize=None)
def gauss_1d(n):
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature(r_max):
    """Gauss-Legendre rule with ``r_max + 2`` points per direction.

    Exact for polynomials of degree ``2 * r_max + 3`` in each variable.
    """
    x, w = gauss_1d(r_max + 2)
    return QuadratureRule(x, w)


# --- H1 tensor space Q^(r,r) -------------------------------------------------


@lru_cache(maxsize=None)
def h1_index(r):
    """Hierarchical ordering of the (a, b) tensor indices of Q^(r,r).

    Vertices first (counter-clockwise), then edge functions side by side
    (degree 2..r along the side), then interior bubbles.  Returns
    ``(pairs, kinds)`` where ``kinds`` holds ``("v", corner)``,
    ``("e", side, degree)`` or ``("i",)``.
    """
    pairs, kinds = [], []
    for c, ab in enumerate([(0, 0), (1, 0), (1, 1), (0, 1)]):
        pairs.append(ab)
        kinds.append(("v", c))
    for side in range(4):
        for k in range(2, r + 1):
            ab = [(k, 0), (1, k), (k, 1), (0, k)][side]
            pairs.append(ab)
            kinds.append(("e", side, k))
    for a in range(2, r + 1):
        for b in range(2, r + 1):
            pairs.append((a, b))
            kinds.append(("i",))
    return tuple(pairs), tuple(kinds)


def eval_h1_basis(r, points):
    """Evaluate Q^(r,r) at reference ``points``.

    Returns ``(values, gradients)`` of shapes ``(n, npts)`` and
    ``(n, 2, npts)`` with ``n = (r + 1)**2`` in :func:`h1_index` order.
    """
    if r < 1:
        raise ValueError("H1 order must be >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vx, dx = h1_1d(r, pts[:, 0])
    vy, dy = h1_1d(r, pts[:, 1])
    pairs, _ = h1_index(r)
    a = np.array([ab[0] for ab in pairs])
    b = np.array([ab[1] for ab in pairs])
    val = vx[a] * vy[b]
    grad = np.stack([dx[a] * vy[b], vx[a] * dy[b]], axis=1)
    return val, grad


# --- H(div) space V^r = Q^(r,r-1) x Q^(r-1,r) -------------------------------


@lru_cache(maxsize=None)
def hdiv_index(r):
    """Ordering of V^r: normal-trace functions per side, then bubbles.

    Entries are ``(component, a, b)`` where the H1 factor index ``a`` runs
    along the component direction and ``b`` is the Legendre degree across.
    Kinds are ``("n", side, degree)`` for functions whose normal trace is
    the Legendre polynomial of that degree on ``side``, or ``("i",)``.
    """
    entries, kinds = [], []
    # side -> (component, H1 end index)
    side_comp = {0: (1, 0), 1: (0, 1), 2: (1, 1), 3: (0, 0)}
    for side in range(4):
        comp, end = side_comp[side]
        for k in range(r):
            entries.append((comp, end, k))
            kinds.append(("n", side, k))
    for comp in (0, 1):
        for a in range(2, r + 1):
            for k in range(r):
                entries.append((comp, a, k))
                kinds.append(("i",))
    return tuple(entries), tuple(kinds)


def eval_hdiv_basis(r, points):
    """Evaluate V^r at reference ``points``.

    Returns ``(values, divergences)`` of shapes ``(n, 2, npts)`` and
    ``(n, npts)`` with ``n = 2 r (r + 1)``.
    """
    if r < 1:
        raise ValueError("H(div) order must be >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hx, hdx = h1_1d(r, pts[:, 0])
    hy, hdy = h1_1d(r, pts[:, 1])
    lx, _ = l2_1d(r - 1, pts[:, 0])
    ly, _ = l2_1d(r - 1, pts[:, 1])
    entries, _ = hdiv_index(r)
    n = len(entries)
    val = np.zeros((n, 2, pts.shape[0]))
    div = np.empty((n, pts.shape[0]))
    for i, (comp, a, k) in enumerate(entries):
        if comp == 0:
            val[i, 0] = hx[a] * ly[k]
            div[i] = hdx[a] * ly[k]
        else:
            val[i, 1] = lx[k] * hy[a]
            div[i] = lx[k] * hdy[a]
    return val, div


def hdiv_normal_sign(side):
    """Sign relating the stored component to the outward normal on ``side``."""
    return -1.0 if side in (0, 3) else 1.0


# --- L2 tensor space Q^(p,p) -----------------------------------------------


def eval_l2_basis(p, points):
    """Tensor Legendre basis of Q^(p,p); shape ``((p + 1)**2, npts)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lx, _ = l2_1d(p, pts[:, 0])
    ly, _ = l2_1d(p, pts[:, 1])
    return (lx[:, None, :] * ly[None, :, :]).reshape((p + 1) ** 2, -1)


# --- restriction of edge polynomials to sub-intervals -----------------------


@lru_cache(maxsize=None)
def restriction_matrix(kind, order, a, b):
    """Coefficients of a parent edge basis restricted to ``[a, b]``.

    ``kind`` is ``"h1"`` (order ``order`` hierarchical) or ``"l2"``
    (Legendre of degree ``order``).  Returns ``R`` with
    ``parent_j(a + (b - a) t) = sum_i R[i, j] child_i(t)``.
    """
    t, _ = gauss_1d(order + 2)
    s = a + (b - a) * t
    if kind == "h1":
        child = h1_1d(order, t)[0]
        parent = h1_1d(order, s)[0]
    elif kind == "l2":
        child = l2_1d(order, t)[0]
        parent = l2_1d(order, s)[0]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    R, *_ = np.linalg.lstsq(child.T, parent.T, rcond=None)
    R[np.abs(R) < 1e-14] = 0.0
    R.setflags(write=False)
    return R
