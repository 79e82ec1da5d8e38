import numpy as np
import pytest

from lodll.coefficients import CoefficientField
from lodll.fem import assemble_mass, assemble_stiffness
from lodll.lod import (GLOBAL_LAYERS, build_lod_basis,
                       corrector_bilinear_operator, make_projector,
                       project_coarse, reduce_operator, ritz_project)
from lodll.mesh import make_mesh_pair

RNG = np.random.default_rng(7)
ROUGH = CoefficientField("rough_int")


@pytest.fixture(scope="module")
def pair():
    return make_mesh_pair(4, 32)


@pytest.fixture(scope="module")
def global_basis(pair):
    return build_lod_basis(pair, ROUGH, GLOBAL_LAYERS)


def test_projector_idempotent(pair):
    projector = make_projector(pair)
    v = RNG.normal(size=pair.fine.n_nodes)
    once = project_coarse(projector, v)
    lifted = pair.prolongation @ once
    twice = project_coarse(projector, lifted)
    assert np.max(np.abs(twice - once)) < 1e-11


def test_projector_exact_on_coarse_functions(pair):
    projector = make_projector(pair)
    c = RNG.normal(size=pair.coarse.n_nodes)
    got = project_coarse(projector, pair.prolongation @ c)
    assert np.max(np.abs(got - c)) < 1e-12


def test_projector_dimension_check(pair):
    projector = make_projector(pair)
    with pytest.raises(ValueError):
        project_coarse(projector, np.zeros(5))


def test_basis_corrector_in_projector_kernel(pair, global_basis):
    # the fine-scale part of every column must vanish under the coarse
    # projection
    projector = make_projector(pair)
    coarse_part = pair.prolongation.toarray()
    fine_part = global_basis.columns - coarse_part
    for j in range(0, global_basis.n_coarse, 5):
        p = project_coarse(projector, fine_part[:, j])
        assert np.max(np.abs(p)) < 1e-10


def test_basis_energy_orthogonal_to_kernel(pair, global_basis):
    A = corrector_bilinear_operator(pair.fine, ROUGH)
    projector = make_projector(pair)
    # random kernel members: w = v - (prolongated coarse projection of v)
    for seed in range(4):
        v = np.random.default_rng(seed).normal(size=pair.fine.n_nodes)
        w = v - pair.prolongation @ project_coarse(projector, v)
        inner = global_basis.columns.T @ (A @ w)
        assert np.max(np.abs(inner)) < 1e-9


def test_constants_exactly_representable(pair, global_basis):
    ones_c = np.ones(global_basis.n_coarse)
    lifted = global_basis.lift(ones_c)
    assert np.max(np.abs(lifted - 1.0)) < 1e-11


def test_large_patch_equals_global(pair, global_basis):
    local = build_lod_basis(pair, ROUGH, 10)
    assert np.max(np.abs(local.columns - global_basis.columns)) < 1e-10


def test_localization_error_decays(pair, global_basis):
    A = corrector_bilinear_operator(pair.fine, ROUGH)
    dists = []
    for ell in (1, 2, 3):
        local = build_lod_basis(pair, ROUGH, ell)
        diff = local.columns - global_basis.columns
        energies = np.einsum("nc,nc->c", diff, A @ diff)
        dists.append(np.sqrt(np.max(np.abs(energies))))
    assert dists[0] >= dists[1] >= dists[2]


def test_ritz_projection_recovers_member(pair, global_basis):
    A = corrector_bilinear_operator(pair.fine, ROUGH)
    c = RNG.normal(size=global_basis.n_coarse)
    member = global_basis.lift(c)
    got = ritz_project(global_basis, A, A @ member)
    assert np.max(np.abs(got - c)) < 1e-9


def test_reduce_operator_spd(pair, global_basis):
    A = corrector_bilinear_operator(pair.fine, ROUGH)
    red = reduce_operator(global_basis, A)
    assert np.max(np.abs(red - red.T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(0.5 * (red + red.T))) > 0


def test_reduce_operator_dimension_check(global_basis):
    import scipy.sparse as sp
    with pytest.raises(ValueError):
        reduce_operator(global_basis, sp.eye(7).tocsr())


def test_galerkin_optimality(pair, global_basis):
    # the reduced solve agrees with a dense normal-equations oracle
    A = (assemble_stiffness(pair.fine, ROUGH)
         + assemble_mass(pair.fine)).tocsr()
    rhs = RNG.normal(size=pair.fine.n_nodes)
    B = global_basis.columns
    oracle = np.linalg.solve(B.T @ (A @ B), B.T @ rhs)
    got = ritz_project(global_basis, A, rhs)
    assert np.max(np.abs(got - oracle)) < 1e-10
