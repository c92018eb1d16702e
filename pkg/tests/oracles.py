"""Independent reference computations used by the tests.

Nothing here calls the package's numerical kernels: 1D integrals are exact
(sympy), linear algebra is dense brute force.
"""
import itertools
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import sympy as sy

X = sy.Symbol("x")


@lru_cache(maxsize=None)
def h1_1d_symbolic(r):
    """Hierarchical 1D basis on [0, 1]: hats then scaled integrated Legendre."""
    xi = 2 * X - 1
    funcs = [1 - X, X]
    for k in range(2, r + 1):
        funcs.append(sy.expand((sy.legendre(k, xi) - sy.legendre(k - 2, xi))
                               / sy.sqrt(2 * (2 * k - 1))))
    return tuple(funcs)


def mass_1d(r):
    f = h1_1d_symbolic(r)
    return np.array([[float(sy.integrate(a * b, (X, 0, 1))) for b in f] for a in f])


def h1_mass_2d(r, pairs):
    """Exact mass matrix of the tensor H1 basis with index ``pairs``."""
    M = mass_1d(r)
    n = len(pairs)
    out = np.empty((n, n))
    for i, (a, b) in enumerate(pairs):
        for j, (c, d) in enumerate(pairs):
            out[i, j] = M[a, c] * M[b, d]
    return out


def dense_schur(A, n_field):
    """``A_tt - A_tf inv(A_ff) A_ft`` with an explicit inverse."""
    f, t = slice(0, n_field), slice(n_field, None)
    return A[t, t] - A[t, f] @ np.linalg.inv(A[f, f]) @ A[f, t]


def uncondensed_solve(G, B, l):
    """Solve the full normal equations ``B^H G^-1 B u = B^H G^-1 l``."""
    Gi = np.linalg.inv(G)
    A = B.conj().T @ Gi @ B
    return np.linalg.solve(A, B.conj().T @ Gi @ l)


def preconditioned_spectrum(S, apply_B):
    """Eigenvalues of ``B S`` for a Hermitian PD preconditioner ``B``."""
    n = S.shape[0]
    Bm = np.column_stack([apply_B(e) for e in np.eye(n, dtype=complex)])
    Bm = 0.5 * (Bm + Bm.conj().T)
    L = np.linalg.cholesky(Bm)
    return sla.eigvalsh(L.conj().T @ S @ L), Bm


def minimal_bulk_sets(eta, theta):
    """All smallest index sets with ``sum eta^2 >= theta^2 sum eta^2``."""
    eta = np.asarray(eta, dtype=float)
    target = theta ** 2 * np.sum(eta ** 2)
    for size in range(len(eta) + 1):
        hits = [set(c) for c in itertools.combinations(range(len(eta)), size)
                if np.sum(eta[list(c)] ** 2) >= target]
        if hits:
            return hits
    return []


def plane_wave(omega, d, pts):
    """``p = exp(-i w d.x)``, ``u = d p``."""
    d = np.asarray(d, float) / np.linalg.norm(d)
    p = np.exp(-1j * omega * (pts @ d))
    return p, d[:, None] * p[None, :]


def first_order_residual(omega, d, pt, eps=1e-6):
    """Finite-difference residual of ``(i w p + div u, i w u + grad p)``."""
    pt = np.asarray(pt, float)
    ex, ey = np.array([eps, 0.0]), np.array([0.0, eps])

    def f(q):
        return plane_wave(omega, d, q[None, :])

    p0, u0 = f(pt)
    dpx = (f(pt + ex)[0] - f(pt - ex)[0]) / (2 * eps)
    dpy = (f(pt + ey)[0] - f(pt - ey)[0]) / (2 * eps)
    div = (f(pt + ex)[1][0] - f(pt - ex)[1][0]) / (2 * eps) \
        + (f(pt + ey)[1][1] - f(pt - ey)[1][1]) / (2 * eps)
    r1 = 1j * omega * p0 + div
    r2 = 1j * omega * u0[:, 0] + np.array([dpx[0], dpy[0]])
    return abs(r1[0]), np.abs(r2).max()


def scaled_graph_pair(r, ci, cj, omega_h, h, n=None):
    """``(A v_i, A v_j) + h^2 (v_i, v_j)`` for two W^r x V^r coefficient vectors.

    Pointwise evaluation on a tensor Gauss rule from numpy, independent of
    the package's quadrature module.
    """
    from uwdpg import basis

    n = n or r + 4
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    pts = np.array([(a, b) for a in x for b in x])
    wts = np.array([wa * wb for wa in w for wb in w])
    hv, hg = basis.eval_h1_basis(r, pts)
    dv, dd = basis.eval_hdiv_basis(r, pts)
    nh = hv.shape[0]

    def fields(c):
        q, v = c[:nh], c[nh:]
        qv = q @ hv
        gq = np.einsum("i,icq->cq", q, hg)
        vv = np.einsum("i,icq->cq", v, dv)
        div = v @ dd
        return [1j * omega_h * qv + div, 1j * omega_h * vv[0] + gq[0],
                1j * omega_h * vv[1] + gq[1], h * qv, h * vv[0], h * vv[1]]

    fi, fj = fields(ci), fields(cj)
    return sum(np.sum(wts * a * np.conj(b)) for a, b in zip(fi, fj))
