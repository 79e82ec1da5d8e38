"""Linearized backward-Euler time stepping for the Landau-Lifshitz equation.

One step solves a linear system for the new magnetization: the exchange
term and the cross-product convection are implicit with the convection
field lagged, and the gradient-squared term is handled per scheme:

  cimrak: kept on the left, acting on the new iterate;
  gao:    moved to the right side, fully explicit;
  an:     replaced by the mixed implicit-explicit gradient pairing and
          followed by nodewise renormalization.

Steps run either in the full fine P1 space (sparse direct solve) or in
the reduced multiscale space (dense solve; a matrix-free iterative
fallback covers configurations whose dense reduction would not fit the
runtime budget).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .fem import (MagnetizationField, assemble_cross_convection,
                  assemble_exchange_coupling, assemble_load, assemble_mass,
                  assemble_stiffness, assembly_kit, grad_squared,
                  kappa_on_elements)
from .lod import LodBasis
from .mesh import TriMesh

SCHEMES = ("cimrak", "gao", "an")


@dataclass(frozen=True)
class SchemeConfig:
    alpha: float
    tau: float
    kappa: CoefficientField
    scheme: str = "cimrak"
    forcing: Callable | None = None  # forcing(x, y, t) -> (3, npts)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class EvolutionState:
    step_index: int
    time: float
    field: MagnetizationField | np.ndarray  # fine field or (3, n_H) coeffs
    representation: str                     # "fine" or "lod"


def _refined_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense solve with one step of iterative refinement."""
    lu = sla.lu_factor(L)
    sol = sla.lu_solve(lu, rhs)
    return sol + sla.lu_solve(lu, rhs - L @ sol)


def _forcing_at(cfg: SchemeConfig, t: float):
    if cfg.forcing is None:
        return None
    return lambda x, y: cfg.forcing(x, y, t)


class FineStepper:
    """Backward-Euler stepper in the full fine P1 space.

    `solver="direct"` factorizes the coupled system every step.
    `solver="iterative"` (cimrak/gao only) applies the step operator
    matrix-free and preconditions GMRES with a lagged factorization that
    is only rebuilt when convergence degrades; the convection field
    drifts by O(tau) per step, so a stale factorization stays sharp.
    """

    PRECOND_MAX_ITERS = 12
    PRECOND_MAX_AGE = 50

    def __init__(self, mesh: TriMesh, cfg: SchemeConfig,
                 solver: str = "auto"):
        self.mesh = mesh
        self.cfg = cfg
        self.mass = assemble_mass(mesh)
        self.stiffness = assemble_stiffness(mesh, cfg.kappa)
        self.n_mass_assemblies = 1
        self.n_stiffness_assemblies = 1
        self.kappa_e = kappa_on_elements(mesh, cfg.kappa)
        self.sym = ((1.0 / cfg.tau) * self.mass
                    + cfg.alpha * self.stiffness).tocsr()
        if solver == "auto":
            solver = ("iterative" if mesh.n_nodes > 10000
                      and cfg.scheme != "an" else "direct")
        if solver == "iterative" and cfg.scheme == "an":
            raise ValueError("iterative fine solver does not support the "
                             "projection scheme")
        self.solver = solver
        if solver == "iterative":
            kit = assembly_kit(mesh)
            self.kit = kit
            self.Dx, self.Dy = kit.grad_ops
            self.E = kit.quad_eval
            self._pre_lu = None
            self._pre_age = 0

    def _operator_blocks(self, field: MagnetizationField):
        cfg = self.cfg
        mesh = self.mesh
        cross = assemble_cross_convection(mesh, cfg.kappa, field)
        w = self.kappa_e * grad_squared(mesh, field.values)
        mass_w = assemble_mass(mesh, w)
        blocks = [[None] * 3 for _ in range(3)]
        for a in range(3):
            blocks[a][a] = self.sym
            for c in range(3):
                if cross.blocks[a][c] is not None:
                    blocks[a][c] = -cross.blocks[a][c]
        if cfg.scheme == "cimrak":
            for a in range(3):
                blocks[a][a] = blocks[a][a] - cfg.alpha * mass_w
        elif cfg.scheme == "an":
            coupling = assemble_exchange_coupling(mesh, cfg.kappa, field)
            for a in range(3):
                for c in range(3):
                    blocks[a][c] = (blocks[a][c] if blocks[a][c] is not None
                                    else 0.0) - cfg.alpha * \
                        coupling.blocks[a][c]
        return blocks, mass_w

    def _direct_solve(self, state, rhs):
        blocks, mass_w = self._operator_blocks(state.field)
        if self.cfg.scheme == "gao":
            rhs = rhs + self.cfg.alpha * (mass_w @ state.field.values.T).T
        L = sp.bmat(blocks, format="csc")
        lu = spla.splu(L, permc_spec="MMD_AT_PLUS_A")
        return lu.solve(rhs.ravel()).reshape(3, -1)

    def _matrix_free_solve(self, state, rhs):
        cfg = self.cfg
        m = state.field.values
        tri = self.mesh.elements
        area = self.kit.area
        m_bary = m[:, tri].mean(axis=2)
        w_gsq = self.kappa_e * grad_squared(self.mesh, m)
        wk = self.kappa_e * area
        wb = [wk * m_bary[b] for b in range(3)]
        wq = np.repeat(w_gsq * area / 3.0, 3)
        n = self.mesh.n_nodes
        eps = ((0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0),
               (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0))

        if cfg.scheme == "gao":
            rhs = rhs + cfg.alpha * (self.E.T @ (wq * (self.E @ m.T).T).T).T

        def matvec(x):
            u = x.reshape(3, n)
            out = (self.sym @ u.T).T.copy()
            gx = (self.Dx @ u.T).T
            gy = (self.Dy @ u.T).T
            for a, b, c, sign in eps:
                out[a] -= sign * (self.Dx.T @ (wb[b] * gx[c])
                                  + self.Dy.T @ (wb[b] * gy[c]))
            if cfg.scheme == "cimrak":
                q = (self.E @ u.T).T
                for a in range(3):
                    out[a] -= cfg.alpha * (self.E.T @ (wq * q[a]))
            return out.ravel()

        if self._pre_lu is None or self._pre_age >= self.PRECOND_MAX_AGE:
            blocks, _ = self._operator_blocks(state.field)
            self._pre_lu = spla.splu(sp.bmat(blocks, format="csc"),
                                     permc_spec="MMD_AT_PLUS_A")
            self._pre_age = 0
        for attempt in range(2):
            iters = [0]

            def counted(x):
                iters[0] += 1
                return matvec(x)

            op = spla.LinearOperator((3 * n, 3 * n), matvec=counted)
            M = spla.LinearOperator((3 * n, 3 * n),
                                    matvec=self._pre_lu.solve)
            sol, info = spla.gmres(op, rhs.ravel(), rtol=1e-11, atol=0.0,
                                   restart=40, maxiter=200, M=M)
            self._pre_age += 1
            if info == 0 and iters[0] <= self.PRECOND_MAX_ITERS:
                return sol.reshape(3, n)
            if info == 0 and attempt == 1:
                return sol.reshape(3, n)
            # convergence degraded: refresh the lagged factorization
            blocks, _ = self._operator_blocks(state.field)
            self._pre_lu = spla.splu(sp.bmat(blocks, format="csc"),
                                     permc_spec="MMD_AT_PLUS_A")
            self._pre_age = 0
            if info == 0:
                return sol.reshape(3, n)
        raise RuntimeError(
            f"fine GMRES did not converge at step {state.step_index}")

    def step(self, state: EvolutionState) -> EvolutionState:
        if state.representation != "fine":
            raise ValueError("FineStepper expects a fine-space state")
        cfg = self.cfg
        m = state.field.values
        t_next = (state.step_index + 1) * cfg.tau

        rhs = (1.0 / cfg.tau) * (self.mass @ m.T).T
        f = _forcing_at(cfg, t_next)
        if f is not None:
            rhs = rhs + assemble_load(self.mesh, f)

        if self.solver == "iterative":
            sol = self._matrix_free_solve(state, rhs)
        else:
            sol = self._direct_solve(state, rhs)
        if not np.all(np.isfinite(sol)):
            raise RuntimeError(
                f"singular fine system at step {state.step_index}")
        if cfg.scheme == "an":
            norms = np.linalg.norm(sol, axis=0)
            if np.any(norms == 0.0):
                raise RuntimeError(
                    f"zero nodal modulus in projection step "
                    f"{state.step_index}")
            sol = sol / norms
        return EvolutionState(state.step_index + 1, t_next,
                              MagnetizationField(self.mesh, sol), "fine")


class LodStepper:
    """Backward-Euler stepper posed over the reduced multiscale space.

    The nonlinear blocks are re-assembled from the fine lift every step
    and Galerkin-reduced, so the reduced scheme discretizes the true
    trilinear forms rather than a reduced-space surrogate.
    """

    def __init__(self, basis: LodBasis, cfg: SchemeConfig,
                 solver: str = "auto"):
        self.basis = basis
        self.cfg = cfg
        mesh = basis.pair.fine
        self.mesh = mesh
        kit = assembly_kit(mesh)
        self.kit = kit
        B = basis.columns
        self.n_c = B.shape[1]
        self.mass = assemble_mass(mesh)
        self.stiffness = assemble_stiffness(mesh, cfg.kappa)
        self.n_mass_assemblies = 1
        self.n_stiffness_assemblies = 1
        self.mass_red = B.T @ (self.mass @ B)
        self.stiff_red = B.T @ (self.stiffness @ B)
        self.sym_red = (1.0 / cfg.tau) * self.mass_red \
            + cfg.alpha * self.stiff_red
        self.kappa_e = kappa_on_elements(mesh, cfg.kappa)

        if solver == "auto":
            solver = ("iterative"
                      if mesh.n_elements * self.n_c ** 2 > 2e9 else "dense")
        if solver == "iterative" and cfg.scheme == "an":
            solver = "dense"  # projection scheme only has the dense path
        self.solver = solver
        self.Dx, self.Dy = kit.grad_ops
        self.E = kit.quad_eval
        if solver == "dense":
            self.U = self.Dx @ B
            self.V = self.Dy @ B
            self.EB = self.E @ B
        else:
            self._pre_lu = None
            self._pre_age = 0
        self.solves = 0

    PRECOND_MAX_ITERS = 12
    PRECOND_MAX_AGE = 50

    # -- shared helpers ----------------------------------------------------

    def _fine_lift(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.basis.columns.T

    def _step_weights(self, m_fine: np.ndarray):
        """Per-element cross weights and gradient-squared mass weight."""
        tri = self.mesh.elements
        m_bary = m_fine[:, tri].mean(axis=2)                  # (3, n_e)
        gsq = grad_squared(self.mesh, m_fine)
        return m_bary, self.kappa_e * gsq

    def _reduced_rhs(self, coeffs: np.ndarray, t_next: float) -> np.ndarray:
        rhs = (1.0 / self.cfg.tau) * (self.mass_red @ coeffs.T).T
        f = _forcing_at(self.cfg, t_next)
        if f is not None:
            load = assemble_load(self.mesh, f)
            rhs = rhs + load @ self.basis.columns
        return rhs

    # -- dense path --------------------------------------------------------

    def _dense_matrix(self, m_fine: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        n_c = self.n_c
        area = self.kit.area
        m_bary, w_gsq = self._step_weights(m_fine)
        wk = self.kappa_e * area

        S = [None] * 3
        for b in range(3):
            wb = (wk * m_bary[b])[:, None]
            S[b] = self.U.T @ (wb * self.U) + self.V.T @ (wb * self.V)

        L = np.zeros((3 * n_c, 3 * n_c))
        for a in range(3):
            L[a * n_c:(a + 1) * n_c, a * n_c:(a + 1) * n_c] = self.sym_red
        eps = ((0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0),
               (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0))
        for a, b, c, sign in eps:
            L[a * n_c:(a + 1) * n_c, c * n_c:(c + 1) * n_c] -= sign * S[b]

        if cfg.scheme == "cimrak":
            wq = np.repeat(w_gsq * area / 3.0, 3)[:, None]
            Mw_red = self.EB.T @ (wq * self.EB)
            for a in range(3):
                L[a * n_c:(a + 1) * n_c, a * n_c:(a + 1) * n_c] -= \
                    cfg.alpha * Mw_red
        elif cfg.scheme == "an":
            tri = self.mesh.elements
            gm = np.einsum("eik,cei->cek", self.kit.grads,
                           m_fine[:, tri])                    # (3, n_e, 2)
            mq = self.E @ m_fine.T                            # (3n_e, 3)
            wq = np.repeat(self.kappa_e * area / 3.0, 3)
            for c in range(3):
                Gc = gm[c, :, 0][:, None] * self.U \
                    + gm[c, :, 1][:, None] * self.V
                Gc_q = np.repeat(Gc, 3, axis=0)
                for a in range(3):
                    Ga = self.EB.T @ ((wq * mq[:, a])[:, None] * Gc_q)
                    L[a * n_c:(a + 1) * n_c, c * n_c:(c + 1) * n_c] -= \
                        cfg.alpha * Ga
        return L

    def _dense_step_rhs(self, coeffs, m_fine, t_next):
        rhs = self._reduced_rhs(coeffs, t_next)
        if self.cfg.scheme == "gao":
            _, w_gsq = self._step_weights(m_fine)
            wq = np.repeat(w_gsq * self.kit.area / 3.0, 3)[:, None]
            Mw_red = self.EB.T @ (wq * self.EB)
            rhs = rhs + self.cfg.alpha * (Mw_red @ coeffs.T).T
        return rhs

    # -- matrix-free path --------------------------------------------------

    def _chunked_dense_matrix(self, m_fine: np.ndarray,
                              chunk: int = 16384) -> np.ndarray:
        """Reduced step operator assembled without storing lifted bases."""
        cfg = self.cfg
        n_c = self.n_c
        area = self.kit.area
        B = self.basis.columns
        m_bary, w_gsq = self._step_weights(m_fine)
        wk = self.kappa_e * area
        wq3 = w_gsq * area / 3.0
        S = [np.zeros((n_c, n_c)) for _ in range(3)]
        Mw = np.zeros((n_c, n_c)) if cfg.scheme == "cimrak" else None
        n_e = self.mesh.n_elements
        for lo in range(0, n_e, chunk):
            hi = min(lo + chunk, n_e)
            Uc = self.Dx[lo:hi] @ B
            Vc = self.Dy[lo:hi] @ B
            for b in range(3):
                w = (wk[lo:hi] * m_bary[b, lo:hi])[:, None]
                S[b] += Uc.T @ (w * Uc) + Vc.T @ (w * Vc)
            if Mw is not None:
                EBc = self.E[3 * lo:3 * hi] @ B
                wqc = np.repeat(wq3[lo:hi], 3)[:, None]
                Mw += EBc.T @ (wqc * EBc)
        L = np.zeros((3 * n_c, 3 * n_c))
        for a in range(3):
            L[a * n_c:(a + 1) * n_c, a * n_c:(a + 1) * n_c] = self.sym_red
            if Mw is not None:
                L[a * n_c:(a + 1) * n_c, a * n_c:(a + 1) * n_c] -= \
                    cfg.alpha * Mw
        eps = ((0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0),
               (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0))
        for a, b, c, sign in eps:
            L[a * n_c:(a + 1) * n_c, c * n_c:(c + 1) * n_c] -= sign * S[b]
        return L

    def _iterative_solve(self, m_fine: np.ndarray, rhs: np.ndarray
                         ) -> np.ndarray:
        cfg = self.cfg
        n_c = self.n_c
        area = self.kit.area
        m_bary, w_gsq = self._step_weights(m_fine)
        wk = self.kappa_e * area
        wb = [wk * m_bary[b] for b in range(3)]
        wq = np.repeat(w_gsq * area / 3.0, 3)
        B = self.basis.columns
        eps = ((0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0),
               (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0))

        def matvec(x):
            c = x.reshape(3, n_c)
            out = (self.sym_red @ c.T).T.copy()
            lift = c @ B.T                                    # (3, n_f)
            gx = (self.Dx @ lift.T).T                         # (3, n_e)
            gy = (self.Dy @ lift.T).T
            fine_acc = np.zeros_like(lift)
            for a, b, cc, sign in eps:
                fine_acc[a] -= sign * (self.Dx.T @ (wb[b] * gx[cc])
                                       + self.Dy.T @ (wb[b] * gy[cc]))
            if cfg.scheme == "cimrak":
                q = (self.E @ lift.T).T                       # (3, 3n_e)
                for a in range(3):
                    fine_acc[a] -= cfg.alpha * (self.E.T @ (wq * q[a]))
            out += fine_acc @ B
            return out.ravel()

        if self._pre_lu is None or self._pre_age >= self.PRECOND_MAX_AGE:
            self._pre_lu = sla.lu_factor(self._chunked_dense_matrix(m_fine))
            self._pre_age = 0
        for attempt in range(2):
            iters = [0]

            def counted(x):
                iters[0] += 1
                return matvec(x)

            op = spla.LinearOperator((3 * n_c, 3 * n_c), matvec=counted)
            M = spla.LinearOperator(
                (3 * n_c, 3 * n_c),
                matvec=lambda x: sla.lu_solve(self._pre_lu, x))
            sol, info = spla.gmres(op, rhs.ravel(), rtol=1e-11, atol=0.0,
                                   restart=40, maxiter=200, M=M)
            self._pre_age += 1
            if info == 0 and (iters[0] <= self.PRECOND_MAX_ITERS
                              or attempt == 1):
                return sol.reshape(3, n_c)
            # convergence degraded: refresh the lagged factorization
            self._pre_lu = sla.lu_factor(self._chunked_dense_matrix(m_fine))
            self._pre_age = 0
            if info == 0:
                return sol.reshape(3, n_c)
        raise RuntimeError("reduced GMRES did not converge")

    # -- public step -------------------------------------------------------

    def step(self, state: EvolutionState) -> EvolutionState:
        cfg = self.cfg
        t_next = (state.step_index + 1) * cfg.tau
        if cfg.scheme == "an":
            # state carries the normalized fine field; coefficients are
            # recovered for the reduced solve via the mass projection
            if state.representation == "fine":
                m_fine = state.field.values
            else:
                m_fine = self._fine_lift(state.field)
            coeffs = self._an_coeffs(state)
            L = self._dense_matrix(m_fine)
            rhs = (1.0 / cfg.tau) * (self.mass_red @ coeffs.T).T
            f = _forcing_at(cfg, t_next)
            if f is not None:
                rhs = rhs + assemble_load(self.mesh, f) @ self.basis.columns
            sol = _refined_solve(L, rhs.ravel()).reshape(3, self.n_c)
            lift = self._fine_lift(sol)
            norms = np.linalg.norm(lift, axis=0)
            if np.any(norms == 0.0):
                raise RuntimeError(
                    f"zero nodal modulus in projection step "
                    f"{state.step_index}")
            new_field = MagnetizationField(self.mesh, lift / norms)
            self.solves += 1
            return EvolutionState(state.step_index + 1, t_next, new_field,
                                  "fine")

        if state.representation != "lod":
            raise ValueError("LodStepper expects a reduced-space state")
        coeffs = state.field
        m_fine = self._fine_lift(coeffs)
        rhs = self._dense_step_rhs(coeffs, m_fine, t_next)
        if self.solver == "dense":
            sol = _refined_solve(self._dense_matrix(m_fine), rhs.ravel()
                                 ).reshape(3, self.n_c)
        else:
            sol = self._iterative_solve(m_fine, rhs)
        if not np.all(np.isfinite(sol)):
            raise RuntimeError(
                f"reduced system solve failed at step {state.step_index}")
        self.solves += 1
        return EvolutionState(state.step_index + 1, t_next, sol, "lod")

    def _an_coeffs(self, state: EvolutionState) -> np.ndarray:
        """L2-best reduced coefficients of the current (fine) iterate."""
        if state.representation == "lod":
            return state.field
        rhs = (self.mass @ state.field.values.T).T @ self.basis.columns
        return np.linalg.solve(self.mass_red, rhs.T).T


def step_fine(state: EvolutionState, cfg: SchemeConfig) -> EvolutionState:
    return FineStepper(state.field.mesh, cfg).step(state)


def step_lod(state: EvolutionState, basis: LodBasis,
             cfg: SchemeConfig) -> EvolutionState:
    return LodStepper(basis, cfg).step(state)


def lift_state(state: EvolutionState,
               basis: LodBasis | None = None) -> MagnetizationField:
    """Fine-space realization of a state of either representation."""
    if state.representation == "fine":
        return state.field
    if basis is None:
        raise ValueError("lifting a reduced state needs the basis")
    return MagnetizationField(basis.pair.fine, basis.lift(state.field))


@dataclass
class Observer:
    """Callback wrapper invoked every `stride` steps (and at step 0)."""

    callback: Callable  # callback(step, time, fine_field)
    stride: int = 1

    def notify(self, step: int, time: float, fine_field: MagnetizationField):
        if step % self.stride == 0:
            self.callback(step, time, fine_field)


def run_evolution(initial, cfg: SchemeConfig, n_steps: int,
                  observers: list[Observer] | None = None,
                  basis: LodBasis | None = None) -> EvolutionState:
    """Sequential backward-Euler loop with optional observers.

    `initial` is a MagnetizationField (fine run) or a (3, n_H)
    coefficient array (reduced run, requires `basis`).
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    observers = observers or []
    if basis is None:
        if not isinstance(initial, MagnetizationField):
            raise TypeError("fine-space run needs a MagnetizationField")
        stepper = FineStepper(initial.mesh, cfg)
        state = EvolutionState(0, 0.0, initial, "fine")
    else:
        stepper = LodStepper(basis, cfg)
        if isinstance(initial, MagnetizationField):
            state = EvolutionState(0, 0.0, initial, "fine")
            if cfg.scheme != "an":
                raise TypeError("reduced run needs coefficient initial data")
        else:
            initial = np.asarray(initial, dtype=np.float64)
            state = EvolutionState(0, 0.0, initial, "lod")

    for obs in observers:
        obs.notify(0, 0.0, lift_state(state, basis))
    for k in range(n_steps):
        try:
            state = stepper.step(state)
        except Exception as exc:
            raise RuntimeError(f"evolution failed at step {k}") from exc
        for obs in observers:
            obs.notify(state.step_index, state.time, lift_state(state, basis))
    return state
