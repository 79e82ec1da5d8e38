"""Localized orthogonal decomposition basis construction.

The multiscale space is spanned by corrected coarse hat functions: each
coarse hat gets a fine-scale corrector that removes its energy coupling
to the kernel of the coarse L2 projection.  Correctors are solved as
patch-local saddle-point systems with the kernel constraint enforced by
Lagrange multipliers, one row per coarse hat meeting the patch.

The bilinear form used for the construction is the symmetric coercive
part of the time-stepping form, (kappa grad u, grad v) + (u, v), so the
basis is built once per experiment and reused across all time steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .fem import assemble_mass, assemble_stiffness, assembly_kit
from .mesh import (MeshPair, Patch, TriMesh, element_adjacency, element_patch,
                   fine_to_coarse_elements)

GLOBAL_LAYERS = None  # sentinel: no localization


@dataclass(eq=False)
class CoarseProjector:
    """L2-orthogonal projection from the fine space onto the coarse space."""

    pair: MeshPair
    coarse_mass: sp.csr_matrix
    mixed_mass: sp.csr_matrix  # (coarse nodes) x (fine nodes)

    def __post_init__(self):
        self._solve = spla.factorized(self.coarse_mass.tocsc())

    def apply(self, v_fine: np.ndarray) -> np.ndarray:
        return project_coarse(self, v_fine)


def make_projector(pair: MeshPair) -> CoarseProjector:
    M_f = assemble_mass(pair.fine)
    mixed = (pair.prolongation.T @ M_f).tocsr()
    coarse_mass = (mixed @ pair.prolongation).tocsr()
    return CoarseProjector(pair, coarse_mass, mixed)


def project_coarse(projector: CoarseProjector,
                   v_fine: np.ndarray) -> np.ndarray:
    v_fine = np.asarray(v_fine, dtype=np.float64)
    if v_fine.shape[0] != projector.pair.fine.n_nodes:
        raise ValueError(
            f"fine vector length {v_fine.shape[0]} does not match "
            f"{projector.pair.fine.n_nodes} fine nodes")
    return projector._solve(projector.mixed_mass @ v_fine)


def corrector_bilinear_operator(mesh: TriMesh, kappa: CoefficientField
                                ) -> sp.csr_matrix:
    """The coercive form behind the corrector solves: kappa-stiffness + mass."""
    return (assemble_stiffness(mesh, kappa) + assemble_mass(mesh)).tocsr()


def _assemble_on_elements(mesh: TriMesh, elems: np.ndarray,
                          kappa_e: np.ndarray) -> sp.csr_matrix:
    """Stiffness + mass assembled over a subset of elements only."""
    kit = assembly_kit(mesh)
    local = (kappa_e[elems, None, None] * kit.stiff_local[elems]
             + kit.area[elems, None, None]
             * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0],
                         [1.0, 1.0, 2.0]]) / 12.0)
    tri = mesh.elements[elems]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    A.sum_duplicates()
    return A


def _free_fine_nodes(pair: MeshPair, in_patch_elems: np.ndarray) -> np.ndarray:
    """Fine nodes whose every incident fine element lies in the patch.

    Functions supported on these nodes vanish outside the patch; nodes on
    the domain boundary stay free (Neumann problem), nodes on an interior
    patch boundary do not.
    """
    fine = pair.fine
    total = np.bincount(fine.elements.ravel(), minlength=fine.n_nodes)
    inside = np.bincount(fine.elements[in_patch_elems].ravel(),
                         minlength=fine.n_nodes)
    return np.nonzero((inside > 0) & (inside == total))[0]


def _saddle_solve(A_FF, C, rhs_F):
    """Solve [A C'; C 0] [q; mu] = [rhs; 0]; returns q (supports 2D rhs)."""
    n, m = A_FF.shape[0], C.shape[0]
    S = sp.bmat([[A_FF, C.T], [C, None]], format="csc")
    lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A")
    rhs = np.zeros((n + m,) + rhs_F.shape[1:])
    rhs[:n] = rhs_F
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise RuntimeError(
            "singular corrector saddle-point system: constraint rows are "
            "redundant or the patch has no interior degrees of freedom")
    return sol[:n]


def solve_corrector(pair: MeshPair, kappa: CoefficientField, patch: Patch,
                    coarse_fn: np.ndarray,
                    operator: sp.csr_matrix | None = None,
                    projector: CoarseProjector | None = None) -> np.ndarray:
    """Patch-local corrector of a coarse function seeded on one element.

    Solves A(q, w) = -A_seed(v_H, w) over fine-scale functions w supported
    on the patch, subject to the zero-coarse-projection constraint; the
    returned fine vector vanishes outside the patch.
    """
    fine = pair.fine
    if operator is None:
        operator = corrector_bilinear_operator(fine, kappa)
    if projector is None:
        projector = make_projector(pair)
    kit = assembly_kit(fine)
    kappa_e = kappa.eval(kit.bary[:, 0], kit.bary[:, 1])

    f2c = fine_to_coarse_elements(pair)
    in_patch = np.nonzero(np.isin(f2c, patch.coarse_elements))[0]
    free = _free_fine_nodes(pair, in_patch)
    if free.size == 0:
        raise RuntimeError("patch has no free fine nodes")

    seed_elems = np.nonzero(f2c == patch.seed_element)[0]
    A_seed = _assemble_on_elements(fine, seed_elems, kappa_e)
    r = A_seed @ (pair.prolongation @ np.asarray(coarse_fn, dtype=np.float64))

    C_all = projector.mixed_mass[:, free].tocsr()
    active = np.diff(C_all.indptr) > 0
    C = C_all[active]

    q_free = _saddle_solve(operator[np.ix_(free, free)].tocsc(), C, -r[free])
    q = np.zeros(fine.n_nodes)
    q[free] = q_free
    return q


@dataclass(eq=False)
class LodBasis:
    """Fine-space columns of the corrected coarse basis."""

    pair: MeshPair
    layers: int | None           # None: global correctors
    columns: np.ndarray          # (fine nodes) x (coarse nodes), dense
    kappa: CoefficientField
    bilinear_form_tag: str = "kappa_stiffness+mass"

    @property
    def n_coarse(self) -> int:
        return self.columns.shape[1]

    def lift(self, coeffs: np.ndarray) -> np.ndarray:
        """Fine nodal values of sum_i c_i * column_i (last axis = coarse)."""
        return np.asarray(coeffs) @ self.columns.T


def build_lod_basis(pair: MeshPair, kappa: CoefficientField,
                    layers: int | None) -> LodBasis:
    """Corrected basis with layered or global correctors.

    For global correctors the per-seed solves share one saddle-point
    factorization, and summing per-seed right-hand sides per coarse node
    is exact by linearity; the localized path loops over seed elements.
    """
    if layers is not None and layers < 1:
        raise ValueError("layers must be >= 1 (or None for global)")
    fine = pair.fine
    A = corrector_bilinear_operator(fine, kappa)
    projector = make_projector(pair)
    P = pair.prolongation

    if layers is GLOBAL_LAYERS:
        free = np.arange(fine.n_nodes)
        C = projector.mixed_mass.tocsr()
        rhs = -(A @ P.toarray())
        Q = _saddle_solve(A.tocsc(), C, rhs)
        return LodBasis(pair, layers, P.toarray() + Q, kappa)

    coarse = pair.coarse
    kit = assembly_kit(fine)
    kappa_e = kappa.eval(kit.bary[:, 0], kit.bary[:, 1])
    f2c = fine_to_coarse_elements(pair)
    adj = element_adjacency(coarse)
    total_inc = np.bincount(fine.elements.ravel(), minlength=fine.n_nodes)

    columns = P.toarray()
    for seed in range(coarse.n_elements):
        patch = element_patch(coarse, seed, layers, adjacency=adj)
        in_patch = np.nonzero(np.isin(f2c, patch.coarse_elements))[0]
        inside = np.bincount(fine.elements[in_patch].ravel(),
                             minlength=fine.n_nodes)
        free = np.nonzero((inside > 0) & (inside == total_inc))[0]

        seed_elems = np.nonzero(f2c == seed)[0]
        A_seed = _assemble_on_elements(fine, seed_elems, kappa_e)
        hats = P[:, coarse.elements[seed]].toarray()
        rhs = -(A_seed @ hats)[free]

        C_all = projector.mixed_mass[:, free].tocsr()
        active = np.diff(C_all.indptr) > 0
        q = _saddle_solve(A[np.ix_(free, free)].tocsc(), C_all[active], rhs)
        for k, node in enumerate(coarse.elements[seed]):
            columns[free, node] += q[:, k]
    return LodBasis(pair, layers, columns, kappa)


def reduce_operator(basis: LodBasis, fine_op) -> np.ndarray:
    """Galerkin reduction B' K B; block operators reduce block-wise."""
    B = basis.columns
    if sp.issparse(fine_op):
        if fine_op.shape[0] != B.shape[0]:
            raise ValueError(
                f"operator dimension {fine_op.shape[0]} does not match "
                f"fine space of size {B.shape[0]}")
        return B.T @ (fine_op @ B)
    # BlockOperator
    if fine_op.n != B.shape[0]:
        raise ValueError(
            f"block operator dimension {fine_op.n} does not match "
            f"fine space of size {B.shape[0]}")
    n_c = B.shape[1]
    out = np.zeros((3 * n_c, 3 * n_c))
    for a in range(3):
        for c in range(3):
            blk = fine_op.blocks[a][c]
            if blk is not None:
                out[a * n_c:(a + 1) * n_c, c * n_c:(c + 1) * n_c] = \
                    B.T @ (blk @ B)
    return out


def ritz_project(basis: LodBasis, bilinear: sp.spmatrix,
                 rhs: np.ndarray) -> np.ndarray:
    """Coefficients of the Galerkin solution of bilinear against rhs."""
    B = basis.columns
    reduced = B.T @ (bilinear @ B)
    return np.linalg.solve(reduced, B.T @ np.asarray(rhs, dtype=np.float64))
