"""Preconditioned conjugate gradients for complex Hermitian positive definite systems."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class PcgBreakdown(ArithmeticError):
    pass


@dataclass
class PcgReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)  # relative l2 residuals, starting at x0
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    converged: bool = False

    def lanczos_matrix(self):
        """Tridiagonal Lanczos matrix of the preconditioned operator."""
        a, b = self.alphas, self.betas
        k = len(a)
        if k == 0:
            return np.zeros((0, 0))
        diag = np.empty(k)
        off = np.empty(max(k - 1, 0))
        for j in range(k):
            diag[j] = 1.0 / a[j] + (b[j - 1] / a[j - 1] if j > 0 else 0.0)
            if j < k - 1:
                off[j] = np.sqrt(b[j]) / a[j]
        return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)

    def extreme_eigenvalues(self):
        T = self.lanczos_matrix()
        if T.size == 0:
            raise ValueError("no iterations recorded")
        ev = sla.eigvalsh(T)
        return float(ev[0]), float(ev[-1])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "relative_residual"])
            for k, r in enumerate(self.residuals):
                w.writerow([k, f"{r:.6e}"])


def _as_operator(op):
    if callable(op):
        return op
    return lambda v: op @ v


def pcg(apply_S, apply_M_inv, b, x0=None, tol=1e-6, max_iter=500, absolute=False):
    """Solve ``S x = b``; stops when ``||b - S x|| <= tol ||b||``.

    With ``absolute=True`` the test is ``||b - S x|| <= tol`` instead.
    ``apply_S`` and ``apply_M_inv`` are callables or matrices
    (``apply_M_inv=None`` means no preconditioning).  Returns
    ``(x, PcgReport)``; residuals in the report are always relative to
    ``||b||`` and its Lanczos coefficients feed
    :func:`uwdpg.precond.estimate_condition`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = _as_operator(apply_S)
    M = _as_operator(apply_M_inv) if apply_M_inv is not None else (lambda v: v.copy())
    b = np.asarray(b, dtype=complex)
    report = PcgReport()
    bnorm = np.linalg.norm(b)
    if absolute and bnorm > 0:
        tol = tol / bnorm
    if bnorm == 0.0:
        report.converged = True
        report.residuals.append(0.0)
        return np.zeros_like(b), report
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    r = b - S(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    report.residuals.append(rel)
    if rel <= tol:
        report.converged = True
        return x, report
    z = M(r)
    rz = np.vdot(r, z).real
    if not rz > 0:
        raise PcgBreakdown(f"preconditioner not positive definite (r^H M r = {rz:.3e})")
    d = z.copy()
    for k in range(1, max_iter + 1):
        Sd = S(d)
        dSd = np.vdot(d, Sd).real
        if not np.isfinite(dSd):
            raise PcgBreakdown(f"non-finite value at iteration {k}")
        if dSd <= 0:
            raise PcgBreakdown(f"operator not positive definite at iteration {k} "
                               f"(d^H S d = {dSd:.3e})")
        alpha = rz / dSd
        x += alpha * d
        r -= alpha * Sd
        report.alphas.append(alpha)
        report.iterations = k
        rel = np.linalg.norm(r) / bnorm
        report.residuals.append(rel)
        if not np.isfinite(rel):
            raise PcgBreakdown(f"non-finite residual at iteration {k}")
        if rel <= tol:
            report.converged = True
            break
        z = M(r)
        rz_new = np.vdot(r, z).real
        if not rz_new > 0:
            raise PcgBreakdown(f"preconditioner not positive definite at iteration {k}")
        beta = rz_new / rz
        report.betas.append(beta)
        rz = rz_new
        d = z + beta * d
    return x, report
