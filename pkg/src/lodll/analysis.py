"""Error measurement, convergence rates, references, and diagnostics.

All norms use the 3-point edge-midpoint quadrature rule, which is exact
for quadratics, so P1 errors are integrated exactly up to the truth
evaluation.  H1 errors are full norms, (||e||^2 + ||grad e||^2)^(1/2).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field as dfield

import numpy as np

from .coefficients import (CoefficientField, ExactSolution,
                           exact_solution_example1, forcing_example1,
                           initial_bump)
from .fem import MagnetizationField, assembly_kit
from .lod import LodBasis, reduce_operator
from .mesh import TriMesh, build_uniform_trimesh
from .stepper import SchemeConfig, run_evolution

DEFAULT_CACHE_DIR = ".llod_cache"


@dataclass
class ErrorReport:
    rows: list            # (H, l2_error, h1_error, modulus_dev)
    pair_rates_l2: list
    pair_rates_h1: list
    slope_l2: float
    slope_h1: float


@dataclass
class CrossSection:
    axis: str             # "x_fixed" or "y_fixed"
    value: float
    samples: np.ndarray   # (n_samples, 4): coordinate, m1, m2, m3


def _quadrature_values(field: MagnetizationField):
    """Field values and gradients at edge midpoints: (3, 3n_e), (3, n_e, 2)."""
    kit = assembly_kit(field.mesh)
    vals = (kit.quad_eval @ field.values.T).T
    grads = np.einsum("eik,cei->cek", kit.grads,
                      field.values[:, field.mesh.elements])
    return vals, grads


def error_norms(numeric: MagnetizationField, truth, t: float | None = None):
    """L2 and full-H1 error of a fine-mesh field.

    `truth` is either another MagnetizationField on the same mesh or an
    ExactSolution evaluated at time `t`.
    """
    mesh = numeric.mesh
    kit = assembly_kit(mesh)
    w = kit.quad_weights
    vals_n, grads_n = _quadrature_values(numeric)
    if isinstance(truth, MagnetizationField):
        if truth.mesh is not mesh and (
                truth.mesh.n_sub != mesh.n_sub):
            raise ValueError("error_norms: fields live on different meshes")
        vals_t, grads_t = _quadrature_values(truth)
    else:
        if t is None:
            raise ValueError("exact-solution truth needs a time t")
        qx, qy = kit.quad_points[:, 0], kit.quad_points[:, 1]
        vals_t = truth.value(qx, qy, t)
        grads_exact = truth.gradient(qx, qy, t)       # (3, 2, 3n_e)
        # exact gradients enter the seminorm at the quadrature points, so
        # compare per quadrature point rather than per element
        dvals = vals_n - vals_t
        dgrads = np.repeat(grads_n, 3, axis=1).transpose(0, 2, 1) \
            - grads_exact                              # (3, 2, 3n_e)
        l2_sq = float(np.einsum("cq,q->", dvals ** 2, w))
        semi_sq = float(np.einsum("cdq,q->", dgrads ** 2, w))
        return np.sqrt(l2_sq), np.sqrt(l2_sq + semi_sq)
    dvals = vals_n - vals_t
    dgrads = grads_n - grads_t                         # (3, n_e, 2)
    l2_sq = float(np.einsum("cq,q->", dvals ** 2, w))
    semi_sq = float(np.einsum("ced,e->", dgrads ** 2, kit.area))
    return np.sqrt(l2_sq), np.sqrt(l2_sq + semi_sq)


def modulus_deviation(field: MagnetizationField) -> float:
    """L2 norm of 1 - |m|^2 over the domain (edge-midpoint quadrature)."""
    kit = assembly_kit(field.mesh)
    vals, _ = _quadrature_values(field)
    dev = 1.0 - np.sum(vals ** 2, axis=0)
    return float(np.sqrt(kit.quad_weights @ dev ** 2))


def _fit_slope(hs, errors):
    logs_h = np.log(np.asarray(hs, dtype=np.float64))
    logs_e = np.log(np.asarray(errors, dtype=np.float64))
    return float(np.polyfit(logs_h, logs_e, 1)[0])


def convergence_table(runs) -> ErrorReport:
    """Pair rates and least-squares slope from (H, l2, h1[, dev]) rows."""
    if len(runs) < 2:
        raise ValueError("convergence_table needs at least two runs")
    rows = []
    for run in runs:
        H, l2, h1 = run[0], run[1], run[2]
        dev = run[3] if len(run) > 3 else float("nan")
        rows.append((float(H), float(l2), float(h1), float(dev)))
    hs = [r[0] for r in rows]
    if any(hs[i] <= hs[i + 1] for i in range(len(hs) - 1)):
        raise ValueError("H values must be strictly decreasing")
    l2s = [r[1] for r in rows]
    h1s = [r[2] for r in rows]
    ratio = [np.log(hs[i] / hs[i + 1]) for i in range(len(hs) - 1)]
    pr_l2 = [float(np.log(l2s[i] / l2s[i + 1]) / ratio[i])
             for i in range(len(hs) - 1)]
    pr_h1 = [float(np.log(h1s[i] / h1s[i + 1]) / ratio[i])
             for i in range(len(hs) - 1)]
    return ErrorReport(rows, pr_l2, pr_h1,
                       _fit_slope(hs, l2s), _fit_slope(hs, h1s))


@dataclass(frozen=True)
class ReferenceConfig:
    """Everything that determines a fine reference run."""
    family: str
    epsilon: float
    alpha: float
    tau: float
    T: float
    fine_n: int
    scheme: str = "cimrak"
    initial: str = "bump"          # "bump" or "exact"
    forcing: str = "none"          # "none" or "example1"

    def key(self) -> str:
        parts = (f"{self.family};{self.epsilon!r};{self.alpha!r};"
                 f"{self.tau!r};{self.T!r};{self.fine_n};{self.scheme};"
                 f"{self.initial};{self.forcing}")
        return hashlib.sha256(parts.encode()).hexdigest()[:24]


_reference_runs = 0  # instrumentation: counts actual (uncached) runs


def _cache_dir():
    return os.environ.get("LLOD_CACHE_DIR", DEFAULT_CACHE_DIR)


def initial_field(mesh: TriMesh, tag: str) -> MagnetizationField:
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    if tag == "bump":
        return MagnetizationField(mesh, initial_bump(x, y))
    if tag == "exact":
        return MagnetizationField(mesh,
                                  exact_solution_example1().value(x, y, 0.0))
    raise ValueError(f"unknown initial data tag {tag!r}")


def scheme_config(ref: ReferenceConfig) -> SchemeConfig:
    kappa = CoefficientField(ref.family, ref.epsilon)
    forcing = None
    if ref.forcing == "example1":
        forcing = lambda x, y, t: forcing_example1(x, y, t, ref.alpha)
    elif ref.forcing != "none":
        raise ValueError(f"unknown forcing tag {ref.forcing!r}")
    return SchemeConfig(alpha=ref.alpha, tau=ref.tau, kappa=kappa,
                        scheme=ref.scheme, forcing=forcing)


def compute_reference(ref: ReferenceConfig) -> MagnetizationField:
    """Fine-space evolution to t=T, cached on disk by config hash."""
    global _reference_runs
    n_steps = int(round(ref.T / ref.tau))
    if abs(n_steps * ref.tau - ref.T) > 1e-12 * max(1.0, ref.T):
        raise ValueError("T must be an integer multiple of tau")
    cache_dir = _cache_dir()
    path = os.path.join(cache_dir, f"ref-{ref.key()}.npz")
    if os.path.exists(path):
        with np.load(path) as data:
            values = data["values"]
            stored = str(data["checksum"])
        digest = hashlib.sha256(values.tobytes()).hexdigest()
        if digest != stored:
            raise RuntimeError(f"corrupted reference cache file {path}")
        return MagnetizationField(build_uniform_trimesh(ref.fine_n), values)

    mesh = build_uniform_trimesh(ref.fine_n)
    cfg = scheme_config(ref)
    state = run_evolution(initial_field(mesh, ref.initial), cfg, n_steps)
    _reference_runs += 1
    values = state.field.values
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, values=values,
             checksum=np.str_(hashlib.sha256(values.tobytes()).hexdigest()))
    os.replace(tmp, path)
    return MagnetizationField(mesh, values)


def cross_section(field: MagnetizationField, axis: str, value: float,
                  n_samples: int) -> CrossSection:
    """P1 evaluation of all components along a grid-aligned line."""
    if not 0.0 <= value <= 1.0:
        raise ValueError("cross-section line must lie inside the unit square")
    if axis not in ("x_fixed", "y_fixed"):
        raise ValueError(f"unknown axis {axis!r}")
    coords = np.linspace(0.0, 1.0, n_samples)
    if axis == "y_fixed":
        x, y = coords, np.full_like(coords, value)
    else:
        x, y = np.full_like(coords, value), coords
    vals = field.evaluate(x, y)                       # (3, n_samples)
    samples = np.column_stack([coords, vals[0], vals[1], vals[2]])
    return CrossSection(axis, value, samples)


def bn_projection(basis: LodBasis, Mn: MagnetizationField, alpha: float,
                  target: MagnetizationField) -> np.ndarray:
    """Ritz-type projection in the lagged-convection bilinear form.

    The form is alpha*(grad u, grad v) - (Mn x grad u, grad v)
    + alpha*(u, v); its symmetric part is coercive for alpha > 0, so the
    reduced system is solvable.  Returns (3, n_H) coefficients.
    """
    from .fem import (BlockOperator, assemble_cross_convection,
                      assemble_mass, assemble_stiffness)
    mesh = basis.pair.fine
    if Mn.mesh is not mesh or target.mesh is not mesh:
        raise ValueError("bn_projection: all fields must share the fine mesh")
    unit = CoefficientField("constant")
    sym = alpha * (assemble_stiffness(mesh, unit) + assemble_mass(mesh))
    cross = assemble_cross_convection(mesh, unit, Mn)
    blocks = [[None] * 3 for _ in range(3)]
    for a in range(3):
        blocks[a][a] = sym
        for c in range(3):
            if cross.blocks[a][c] is not None:
                blocks[a][c] = -cross.blocks[a][c]
    op = BlockOperator(blocks, mesh.n_nodes)
    L = reduce_operator(basis, op)
    rhs_fine = op.apply(target.values)
    rhs = (rhs_fine @ basis.columns).ravel()
    sol = np.linalg.solve(L, rhs)
    if not np.all(np.isfinite(sol)):
        raise RuntimeError("bn_projection reduced system is singular")
    return sol.reshape(3, -1)
