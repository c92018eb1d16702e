import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from oracles import preconditioned_spectrum
from uwdpg.krylov import pcg
from uwdpg.mesh import uniform_hierarchy, uniform_mesh
from uwdpg.precond import (SchwarzSmoother, build_hierarchy, build_transfer,
                           estimate_condition, one_level_preconditioner, patch_dofs)
from uwdpg.system import Problem, build_system


@pytest.fixture(scope="module")
def two_level(wave_2pi, two_level_4x4):
    mesh = two_level_4x4
    coarse = build_system(mesh.snapshot(0), wave_2pi)
    fine = build_system(mesh, wave_2pi)
    return coarse, fine, build_transfer(coarse, fine)


def test_patches_cover_every_dof(system_4x4, two_level_4x4, wave_2pi):
    fine = build_system(two_level_4x4, wave_2pi)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sets = patch_dofs(fine.dofmap, two_level_4x4.build_patches(0), 0)
    cover = np.zeros(fine.n_dofs, int)
    for s in sets:
        cover[s] += 1
    assert cover.min() >= 1 and cover.max() <= 4


def test_smoother_hermitian_pd(two_level):
    _, fine, _ = two_level
    sm = one_level_preconditioner(fine)
    ev, B = preconditioned_spectrum(fine.S.toarray(), sm.apply)
    assert np.abs(B - B.conj().T).max() < 1e-10 * np.abs(B).max()
    assert ev[0] > 0
    # each dof lies in some patch, so the pencil's top eigenvalue is >= 1
    assert ev[-1] >= 1 - 1e-10


def test_iteration_matrix_contracts(two_level):
    _, fine, _ = two_level
    S = fine.S.toarray()
    sm = SchwarzSmoother(fine.S, one_level_preconditioner(fine).patches, theta=0.25)
    B = np.column_stack([sm.apply(e) for e in np.eye(fine.n_dofs)])
    E = np.eye(fine.n_dofs) - 0.25 * B @ S
    assert max(abs(np.linalg.eigvals(E))) < 1


def test_transfer_adjoint(two_level, rng):
    coarse, fine, T = two_level
    x = rng.standard_normal(coarse.n_dofs) + 1j * rng.standard_normal(coarse.n_dofs)
    y = rng.standard_normal(fine.n_dofs) + 1j * rng.standard_normal(fine.n_dofs)
    lhs = np.vdot(y, T.prolong(x))
    rhs = np.vdot(T.restrict(y), x)
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(y) * 10


def test_prolongation_is_energy_minimal_extension(two_level):
    # fine S restricted to the interior rows annihilates prolonged vectors
    coarse, fine, T = two_level
    x = T.prolong(np.ones(coarse.n_dofs, complex))
    r = fine.S @ x
    assert np.abs(r[T.interior]).max() < 1e-10 * np.abs(fine.S @ x).max()


def test_coarse_galerkin_projection_idempotent(two_level):
    coarse, fine, T = two_level
    S = fine.S.toarray()
    P = T.dense()
    Pi = P @ np.linalg.solve(P.conj().T @ S @ P, P.conj().T @ S)
    assert np.abs(Pi @ Pi - Pi).max() < 1e-8


def test_inclusion_of_coarse_solution(two_level):
    # a coarse trace interpolant of smooth data matches the fine one on the skeleton
    from uwdpg.system import interpolate_trace
    coarse, fine, T = two_level
    pres = lambda q: 1 + q[:, 0] * q[:, 1]
    flux = lambda q, n: np.asarray(n) @ np.stack([q[:, 1], 0 * q[:, 0] + 1])
    xc = interpolate_trace(coarse.dofmap, pres, flux)
    xf = interpolate_trace(fine.dofmap, pres, flux)
    np.testing.assert_allclose((T.P_B @ xc)[T.skeleton], xf[T.skeleton], atol=1e-12)


def test_vcycle_hermitian_pd(wave_2pi):
    mesh = uniform_hierarchy(1, 4)
    hier = build_hierarchy(mesh, wave_2pi, theta=0.25, nu=2)
    S = hier.levels[-1].system.S.toarray()
    ev, B = preconditioned_spectrum(S, hier.vcycle)
    assert np.abs(B - B.conj().T).max() < 1e-9 * np.abs(B).max()
    # the coarse operator is rediscretized, so no bound by 1 above
    assert ev[0] > 0


@pytest.mark.parametrize("n_fine", [4, 8])
def test_vcycle_pcg_few_iterations(n_fine, wave_2pi):
    mesh = uniform_hierarchy(2, n_fine)
    hier = build_hierarchy(mesh, wave_2pi)
    s = hier.levels[-1].system
    _, rep = pcg(s.S, hier.vcycle, s.rhs)
    assert rep.converged and rep.iterations <= 5


def test_condition_estimate_matches_dense(two_level):
    _, fine, _ = two_level
    sm = one_level_preconditioner(fine)
    lo, hi, kappa, ok = estimate_condition(fine.S, sm.apply, n_iters=500)
    ev, _ = preconditioned_spectrum(fine.S.toarray(), sm.apply)
    assert ok
    assert kappa == pytest.approx(ev[-1] / ev[0], rel=0.02)


def test_condition_grows_as_overlap_shrinks():
    prob = Problem.plane_wave(2 * np.pi, p=2)
    mesh = uniform_hierarchy(1, 8)
    s = build_system(mesh, prob)
    kappas = []
    for lvl in range(mesh.n_levels - 1):  # patch mesh size 1, 1/2, 1/4
        sm = one_level_preconditioner(s, patch_level=lvl)
        kappas.append(estimate_condition(s.S, sm.apply, n_iters=400)[2])
    assert kappas[0] < kappas[1] < kappas[2]


@pytest.mark.parametrize("theta", [1.0, 0.5, 0.25])
def test_relaxation_does_not_change_pcg(theta, two_level):
    _, fine, _ = two_level
    sm = one_level_preconditioner(fine, theta=theta)
    _, rep = pcg(fine.S, sm.as_preconditioner(), fine.rhs)
    ref = pcg(fine.S, one_level_preconditioner(fine).as_preconditioner(), fine.rhs)[1]
    assert rep.iterations == ref.iterations


def test_smoother_rejects_bad_parameters(system_4x4):
    with pytest.raises(ValueError):
        SchwarzSmoother(system_4x4.S, [np.arange(3)], theta=0.0)
    with pytest.raises(ValueError):
        SchwarzSmoother(system_4x4.S, [np.arange(3)], nu=0)
    with pytest.warns(RuntimeWarning):
        SchwarzSmoother(system_4x4.S, [np.arange(3), np.array([], int)])


def test_exact_preconditioner_has_unit_condition(system_4x4):
    import scipy.sparse.linalg as spla
    lu = spla.splu(system_4x4.S.tocsc())
    lo, hi, kappa, _ = estimate_condition(system_4x4.S, lu.solve, n_iters=50)
    assert kappa == pytest.approx(1.0, abs=1e-8)


def test_single_level_hierarchy_is_direct_solve(wave_2pi, rng):
    mesh = uniform_mesh(4)
    hier = build_hierarchy(mesh, wave_2pi)
    s = hier.levels[0].system
    b = rng.standard_normal(s.n_dofs) + 0j
    np.testing.assert_allclose(s.S @ hier.vcycle(b), b, atol=1e-10 * np.linalg.norm(b))


@pytest.mark.slow
def test_mg_iterations_stable_under_refinement():
    from uwdpg.cli import mg_cell
    its = [mg_cell(2, 2, 2 * np.pi, h, 1 / 8, 0.25, 10, 1e-6, 200) for h in (1 / 32, 1 / 64)]
    assert max(its) <= 25 and abs(its[0] - its[1]) <= 2
