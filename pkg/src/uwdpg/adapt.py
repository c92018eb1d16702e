"""Residual-driven adaptive h-refinement with a multigrid-preconditioned solve."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .krylov import pcg
from .precond import build_hierarchy, build_transfer
from .system import build_system, error_indicators

log = logging.getLogger(__name__)


class AdaptError(RuntimeError):
    def __init__(self, generation, cause):
        super().__init__(f"generation {generation}: {cause}")
        self.generation = generation


def mark(indicators, theta_mark=0.5):
    """Dörfler marking: fewest cells with ``sum eta_K^2 >= theta^2 sum eta^2``.

    ``indicators`` maps cell id to ``eta_K``.  Ties are broken by cell id.
    """
    if not 0 < theta_mark <= 1:
        raise ValueError("theta_mark must lie in (0, 1]")
    items = sorted(indicators.items(), key=lambda kv: (-kv[1], kv[0]))
    if theta_mark == 1:
        return {c for c, e in items if e > 0}
    total = sum(e * e for _, e in items)
    target = theta_mark ** 2 * total
    marked, acc = set(), 0.0
    for cid, eta in items:
        if acc >= target or eta <= 0:
            break
        marked.add(cid)
        acc += eta * eta
    return marked


@dataclass
class Generation:
    index: int
    mesh: object
    system: object
    solution: np.ndarray
    indicators: dict
    eta: float
    report: object
    levels: int

    @property
    def n_dofs(self):
        return self.system.n_dofs


def select_snapshots(mesh, sizes, max_coarse_dofs=5000):
    """Every other snapshot down from the finest; the coarsest stays small.

    ``sizes[k]`` is the dof count of snapshot ``k``.
    """
    last = mesh.n_levels - 1
    chosen = list(range(last, -1, -2))
    if chosen[-1] != 0:
        chosen.append(0)
    chosen = sorted(chosen)
    if sizes[0] > max_coarse_dofs:
        log.warning("coarsest level has %d dofs (> %d)", sizes[0], max_coarse_dofs)
    return chosen


def adaptive_solve(problem, mesh, theta_mark=0.5, max_generations=10, reduction=0.1,
                   eta_tol=0.0, tol=1e-6, max_iter=500, theta=0.25, nu=10,
                   max_coarse_dofs=5000, callback=None):
    """Estimate-mark-refine loop; returns the list of :class:`Generation`."""
    cache = {}

    def system_of(m):
        key = m.active
        if key not in cache:
            cache[key] = build_system(m, problem)
        return cache[key]

    gens = []
    eta0 = None
    prev = None
    for g in range(max_generations):
        try:
            sysm = system_of(mesh)
            snaps = list(range(mesh.n_levels))
            systems = {k: system_of(mesh.snapshot(k)) for k in snaps}
            sizes = {k: s.n_dofs for k, s in systems.items()}
            chosen = select_snapshots(mesh, sizes, max_coarse_dofs)
            hier = build_hierarchy(mesh, problem, chosen, theta, nu,
                                   systems=[systems[k] for k in chosen])
            x0 = None
            if prev is not None:
                x0 = build_transfer(prev.system, sysm).prolong(prev.solution)
            x, rep = pcg(sysm.S, hier.vcycle, sysm.rhs, x0, tol, max_iter)
            ind = error_indicators(sysm, x)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise AdaptError(g, exc) from exc
        eta = math.sqrt(sum(e * e for e in ind.values()))
        gen = Generation(g, mesh, sysm, x, ind, eta, rep, len(chosen))
        gens.append(gen)
        log.info("generation %d: dofs=%d eta=%.4e iterations=%d", g, sysm.n_dofs, eta,
                 rep.iterations)
        if callback is not None:
            callback(gen)
        if eta0 is None:
            eta0 = eta
        if eta <= eta_tol or (g > 0 and eta <= reduction * eta0):
            break
        marked = mark(ind, theta_mark)
        if not marked:
            break
        prev = gen
        mesh = mesh.refine(marked)
    return gens


def write_history(gens, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "dofs", "eta", "pcg_iterations"])
        for gen in gens:
            w.writerow([gen.index, gen.n_dofs, f"{gen.eta:.6e}", gen.report.iterations])
