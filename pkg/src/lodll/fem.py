"""P1 finite element assembly on the structured triangle meshes.

Operators are plain scipy sparse matrices; the vector-valued couplings
(cross-product convection, the exchange coupling of the projection
scheme) are 3x3 grids of scalar blocks wrapped in BlockOperator.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, cached_property

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientField
from .mesh import TriMesh

_MASS_LOCAL = np.array([[2.0, 1.0, 1.0],
                        [1.0, 2.0, 1.0],
                        [1.0, 1.0, 2.0]]) / 12.0

# quadrature points at edge midpoints, as averages of node pairs
_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))
# local basis values at those midpoints
_PHI_AT_MID = np.array([[0.5, 0.0, 0.5],
                        [0.5, 0.5, 0.0],
                        [0.0, 0.5, 0.5]])  # [mid, local node]


class AssemblyKit:
    """Per-mesh geometry arrays shared by all assembly routines."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        tri = mesh.elements
        pts = mesh.nodes[tri]                       # (n_e, 3, 2)
        e1 = pts[:, 1] - pts[:, 0]
        e2 = pts[:, 2] - pts[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.area = 0.5 * det                       # positive by construction
        # gradients of the three local hats: rows of the inverse Jacobian
        inv = np.empty((len(tri), 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e2[:, 0] / det
        inv[:, 1, 0] = -e1[:, 1] / det
        inv[:, 1, 1] = e1[:, 0] / det
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        self.grads = np.einsum("ij,ejk->eik", ref, inv)   # (n_e, 3, 2)
        self.stiff_local = (np.einsum("eik,ejk->eij", self.grads, self.grads)
                            * self.area[:, None, None])
        self.bary = pts.mean(axis=1)
        self.rows = np.repeat(tri, 3, axis=1).ravel()
        self.cols = np.tile(tri, (1, 3)).ravel()
        self.midpoints = 0.5 * (pts[:, [0, 1, 2]] + pts[:, [1, 2, 0]])

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    def csr(self, local_data: np.ndarray) -> sp.csr_matrix:
        """Scatter (n_e, 3, 3) element matrices into a csr operator."""
        return canonical_csr(self.rows, self.cols, local_data.ravel(),
                             self.n_nodes)

    @cached_property
    def quad_eval(self) -> sp.csr_matrix:
        """(3*n_e) x n_nodes evaluation at the edge-midpoint quadrature."""
        tri = self.mesh.elements
        n_e = len(tri)
        rows = np.repeat(np.arange(3 * n_e), 2)
        cols = np.stack([tri[:, [a, b]] for a, b in _EDGE_PAIRS],
                        axis=1).reshape(-1)
        data = np.full(rows.shape, 0.5)
        return sp.coo_matrix((data, (rows, cols)),
                             shape=(3 * n_e, self.n_nodes)).tocsr()

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return np.repeat(self.area / 3.0, 3)

    @cached_property
    def quad_points(self) -> np.ndarray:
        return self.midpoints.reshape(-1, 2)

    @cached_property
    def grad_ops(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """n_e x n_nodes operators mapping nodal values to element d/dx, d/dy."""
        tri = self.mesh.elements
        n_e = len(tri)
        rows = np.repeat(np.arange(n_e), 3)
        cols = tri.ravel()
        ops = []
        for k in range(2):
            ops.append(sp.coo_matrix(
                (self.grads[:, :, k].ravel(), (rows, cols)),
                shape=(n_e, self.n_nodes)).tocsr())
        return tuple(ops)


def canonical_csr(rows: np.ndarray, cols: np.ndarray, data: np.ndarray,
                  n: int) -> sp.csr_matrix:
    """COO-to-CSR with duplicates summed in value-sorted order.

    Sorting duplicates by value before summation makes the result
    bitwise independent of the order the contributions arrive in.
    """
    order = np.lexsort((data, cols, rows))
    r = rows[order]
    c = cols[order]
    d = data[order]
    first = np.empty(len(r), dtype=bool)
    first[0] = True
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.nonzero(first)[0]
    summed = np.add.reduceat(d, starts)
    indptr = np.searchsorted(r[starts], np.arange(n + 1))
    return sp.csr_matrix((summed, c[starts], indptr), shape=(n, n))


@lru_cache(maxsize=32)
def assembly_kit(mesh: TriMesh) -> AssemblyKit:
    return AssemblyKit(mesh)


@dataclass(eq=False)
class MagnetizationField:
    """Three-component nodal P1 field."""

    mesh: TriMesh
    values: np.ndarray  # (3, n_nodes)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape != (3, self.mesh.n_nodes):
            raise ValueError(
                f"values shape {self.values.shape} does not match mesh with "
                f"{self.mesh.n_nodes} nodes")

    def nodal_modulus(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=0)

    def copy(self) -> "MagnetizationField":
        return MagnetizationField(self.mesh, self.values.copy())

    def evaluate(self, x, y) -> np.ndarray:
        """P1 interpolation at arbitrary points; returns (3, n_points)."""
        from .mesh import _p1_cell_weights
        cols, weights = _p1_cell_weights(np.asarray(x, dtype=np.float64),
                                         np.asarray(y, dtype=np.float64),
                                         self.mesh.n_sub)
        return np.einsum("cpk,pk->cp", self.values[:, cols], weights)


class BlockOperator:
    """3x3 grid of scalar sparse blocks acting on (3, n) nodal arrays."""

    def __init__(self, blocks, n: int):
        self.blocks = blocks
        self.n = n

    @property
    def dimension(self) -> int:
        return 3 * self.n

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros_like(values)
        for a in range(3):
            for c in range(3):
                blk = self.blocks[a][c]
                if blk is not None:
                    out[a] += blk @ values[c]
        return out

    def quadratic_form(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.apply(values)))

    def tosparse(self, fmt: str = "csc") -> sp.spmatrix:
        z = sp.csr_matrix((self.n, self.n))
        grid = [[blk if blk is not None else z for blk in row]
                for row in self.blocks]
        return sp.bmat(grid, format=fmt)


def _levi(a: int, b: int, c: int) -> int:
    if (a, b, c) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1
    if (a, b, c) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1
    return 0


def kappa_on_elements(mesh: TriMesh, kappa: CoefficientField) -> np.ndarray:
    """One-point (barycenter) evaluation of kappa per element."""
    kit = assembly_kit(mesh)
    return kappa.eval(kit.bary[:, 0], kit.bary[:, 1])


def assemble_mass(mesh: TriMesh, weight: np.ndarray | None = None
                  ) -> sp.csr_matrix:
    """Consistent P1 mass matrix, optionally with a per-element weight."""
    kit = assembly_kit(mesh)
    local = kit.area[:, None, None] * _MASS_LOCAL
    if weight is not None:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (mesh.n_elements,):
            raise ValueError(
                f"weight must have one value per element "
                f"({mesh.n_elements}), got shape {weight.shape}")
        local = local * weight[:, None, None]
    return kit.csr(local)


def assemble_stiffness(mesh: TriMesh, kappa: CoefficientField
                       ) -> sp.csr_matrix:
    """Kappa-weighted stiffness, kappa sampled at element barycenters."""
    return assemble_weighted_stiffness(mesh, kappa_on_elements(mesh, kappa))


def assemble_weighted_stiffness(mesh: TriMesh, weight: np.ndarray
                                ) -> sp.csr_matrix:
    kit = assembly_kit(mesh)
    return kit.csr(np.asarray(weight)[:, None, None] * kit.stiff_local)


def element_gradients(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    """Constant per-element gradient of a scalar nodal vector, (n_e, 2)."""
    kit = assembly_kit(mesh)
    return np.einsum("eik,ei->ek", kit.grads, nodal[mesh.elements])


def grad_squared(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """|grad M|^2 per element for a (3, n) nodal field (exact for P1)."""
    kit = assembly_kit(mesh)
    g = np.einsum("eik,cei->cek", kit.grads, values[:, mesh.elements])
    return np.sum(g * g, axis=(0, 2))


def assemble_cross_convection(mesh: TriMesh, kappa: CoefficientField,
                              M: MagnetizationField) -> BlockOperator:
    """Operator of the form (M x kappa grad(u), grad(v)).

    Block (a, c) carries sum_b eps_{abc} M_b; M is sampled by the
    edge-midpoint rule, which for the constant-gradient pairing reduces
    to its barycenter value.
    """
    if M.mesh is not mesh:
        raise ValueError("magnetization field lives on a different mesh")
    kit = assembly_kit(mesh)
    k_e = kappa_on_elements(mesh, kappa)
    m_bary = M.values[:, mesh.elements].mean(axis=2)  # (3, n_e)
    blocks = [[None] * 3 for _ in range(3)]
    for a in range(3):
        for c in range(3):
            if a == c:
                continue
            b = 3 - a - c
            w = _levi(a, b, c) * k_e * m_bary[b]
            blocks[a][c] = kit.csr(w[:, None, None] * kit.stiff_local)
    return BlockOperator(blocks, mesh.n_nodes)


def assemble_exchange_coupling(mesh: TriMesh, kappa: CoefficientField,
                               M: MagnetizationField) -> BlockOperator:
    """Operator of the form ((kappa grad(u) : grad(M)) M, v).

    Used by the projection scheme, where the quadratic gradient term is
    made linear by pairing the unknown's gradient with the previous
    step's gradient.
    """
    if M.mesh is not mesh:
        raise ValueError("magnetization field lives on a different mesh")
    kit = assembly_kit(mesh)
    k_e = kappa_on_elements(mesh, kappa)
    tri = mesh.elements
    grad_m = np.einsum("eik,cei->cek", kit.grads, M.values[:, tri])  # (3,n_e,2)
    # test-side moments int_e M_a phi_i: consistent-mass rows applied to M_a
    moments = np.einsum("ij,aej->aei",
                        _MASS_LOCAL, M.values[:, tri]) * kit.area[None, :,
                                                                  None]
    blocks = [[None] * 3 for _ in range(3)]
    for a in range(3):
        for c in range(3):
            trial = k_e[:, None] * np.einsum("ejk,ek->ej", kit.grads,
                                             grad_m[c])      # (n_e, 3)
            local = moments[a][:, :, None] * trial[:, None, :]
            blocks[a][c] = kit.csr(local)
    return BlockOperator(blocks, mesh.n_nodes)


def assemble_load(mesh: TriMesh, f) -> np.ndarray:
    """Load vectors (3, n_nodes) by the edge-midpoint rule.

    f maps coordinate arrays (x, y) to a (3, npoints) array.
    """
    kit = assembly_kit(mesh)
    q = kit.quad_points
    vals = np.asarray(f(q[:, 0], q[:, 1]), dtype=np.float64)
    if vals.shape != (3, q.shape[0]):
        raise ValueError(f"forcing returned shape {vals.shape}, "
                         f"expected (3, {q.shape[0]})")
    weighted = vals * kit.quad_weights
    return np.stack([kit.quad_eval.T @ weighted[c] for c in range(3)])


def ll_energy(mesh: TriMesh, kappa: CoefficientField,
              M: MagnetizationField) -> float:
    """Exchange energy 0.5 * int kappa |grad M|^2."""
    K = assemble_stiffness(mesh, kappa)
    return 0.5 * float(sum(M.values[c] @ (K @ M.values[c]) for c in range(3)))
