"""Nested uniform right-triangle meshes of the unit square.

All meshes split every unit cell along the lower-left to upper-right
diagonal, so a fine mesh whose subdivision count is a multiple of the
coarse one is exactly nested.  Node ordering is row-major by (y, x),
element ordering is cell-major with the lower triangle first; both are
fixed so downstream CSV output is byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Uniform triangulation of [0,1]^2 with n_sub subdivisions per side."""

    n_sub: int
    nodes: np.ndarray          # (n_nodes, 2) coordinates
    elements: np.ndarray       # (n_elements, 3) node indices, counter-clockwise
    boundary_nodes: np.ndarray  # node indices on the boundary

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n_sub


@dataclass(frozen=True, eq=False)
class MeshPair:
    """A coarse mesh embedded in a nested fine mesh."""

    coarse: TriMesh
    fine: TriMesh
    prolongation: sp.csr_matrix  # (fine nodes) x (coarse nodes)


@dataclass(frozen=True, eq=False)
class Patch:
    """Layered neighborhood of a coarse element.

    fine_nodes is filled on demand (it needs a MeshPair); geometric
    queries on the coarse mesh alone leave it as None.
    """

    seed_element: int
    layers: int
    coarse_elements: np.ndarray
    fine_nodes: np.ndarray | None = None


def build_uniform_trimesh(n_sub: int) -> TriMesh:
    """Uniform mesh with (n_sub+1)^2 nodes and 2*n_sub^2 elements."""
    if n_sub < 1:
        raise ValueError(f"n_sub must be >= 1, got {n_sub}")
    n = n_sub
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)            # row-major by (y, x)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i = i.ravel()
    j = j.ravel()
    n00 = j * (n + 1) + i
    n10 = n00 + 1
    n01 = n00 + (n + 1)
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    on_bdry = (
        (nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0)
        | (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0)
    )
    return TriMesh(n, nodes, elements, np.nonzero(on_bdry)[0])


def _p1_cell_weights(x: np.ndarray, y: np.ndarray, n: int):
    """Barycentric interpolation data for points (x, y) on an n-mesh.

    Returns (node index triple, weight triple) arrays; the weights of a
    coarse P1 function at these points are weight . values[nodes].
    """
    I = np.minimum((x * n).astype(np.int64), n - 1)
    J = np.minimum((y * n).astype(np.int64), n - 1)
    s = x * n - I
    t = y * n - J
    n00 = J * (n + 1) + I
    n10 = n00 + 1
    n01 = n00 + (n + 1)
    n11 = n01 + 1

    low = t <= s
    cols = np.where(low[:, None], np.column_stack([n00, n10, n11]),
                    np.column_stack([n00, n11, n01]))
    w_low = np.column_stack([1.0 - s, s - t, t])
    w_up = np.column_stack([1.0 - t, s, t - s])
    weights = np.where(low[:, None], w_low, w_up)
    return cols, weights


def make_mesh_pair(coarse_n: int, fine_n: int) -> MeshPair:
    """Nest a coarse mesh inside a fine one and build the P1 prolongation."""
    if fine_n % coarse_n != 0:
        raise ValueError(
            f"fine_n={fine_n} is not a multiple of coarse_n={coarse_n}")
    coarse = build_uniform_trimesh(coarse_n)
    fine = build_uniform_trimesh(fine_n)

    cols, weights = _p1_cell_weights(fine.nodes[:, 0], fine.nodes[:, 1],
                                     coarse_n)
    rows = np.repeat(np.arange(fine.n_nodes), 3)
    P = sp.coo_matrix(
        (weights.ravel(), (rows, cols.ravel())),
        shape=(fine.n_nodes, coarse.n_nodes)).tocsr()
    P.sum_duplicates()
    P.data[np.abs(P.data) < 1e-15] = 0.0
    P.eliminate_zeros()
    return MeshPair(coarse, fine, P)


def element_adjacency(mesh: TriMesh) -> sp.csr_matrix:
    """Boolean element-to-element adjacency through shared vertices."""
    rows = np.repeat(np.arange(mesh.n_elements), 3)
    inc = sp.coo_matrix(
        (np.ones(3 * mesh.n_elements), (rows, mesh.elements.ravel())),
        shape=(mesh.n_elements, mesh.n_nodes)).tocsr()
    adj = (inc @ inc.T) > 0
    return adj.tocsr()


def element_patch(mesh: TriMesh, seed: int, layers: int,
                  adjacency: sp.csr_matrix | None = None) -> Patch:
    """Grow the layered patch around a seed element.

    Layer 0 is the seed itself; each further layer adds every element
    whose closure touches the current patch (vertex contact counts).
    """
    if not (0 <= seed < mesh.n_elements):
        raise ValueError(
            f"seed element {seed} out of range [0, {mesh.n_elements})")
    if layers < 0:
        raise ValueError(f"layers must be >= 0, got {layers}")
    adj = adjacency if adjacency is not None else element_adjacency(mesh)
    mask = np.zeros(mesh.n_elements, dtype=bool)
    mask[seed] = True
    for _ in range(layers):
        grown = (adj @ mask.astype(np.float64)) > 0
        if np.array_equal(grown, mask):
            break
        mask = grown
    return Patch(seed, layers, np.nonzero(mask)[0])


def fine_to_coarse_elements(pair: MeshPair) -> np.ndarray:
    """Index of the coarse element containing each fine element."""
    fine, cn = pair.fine, pair.coarse.n_sub
    bary = fine.nodes[fine.elements].mean(axis=1)
    I = np.minimum((bary[:, 0] * cn).astype(np.int64), cn - 1)
    J = np.minimum((bary[:, 1] * cn).astype(np.int64), cn - 1)
    s = bary[:, 0] * cn - I
    t = bary[:, 1] * cn - J
    cell = J * cn + I
    return 2 * cell + (t > s)


def patch_fine_nodes(pair: MeshPair, patch: Patch) -> Patch:
    """Fill in the fine nodes lying in the closed patch region."""
    f2c = fine_to_coarse_elements(pair)
    in_patch = np.isin(f2c, patch.coarse_elements)
    nodes = np.unique(pair.fine.elements[in_patch])
    return Patch(patch.seed_element, patch.layers, patch.coarse_elements,
                 nodes)
