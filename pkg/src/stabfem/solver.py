"""Linear and nonlinear solvers for the stabilized saddle-point system, plus Riesz maps."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import OperatorBlocks, SaddleState, assemble_stokes_blocks, convection
from .fe_space import build_spaces
from .stabilization import StabilizationConfig, assemble_pressure_stab, velocity_stab

log = logging.getLogger(__name__)

PROBLEMS = ("stokes", "gstokes", "oseen", "nse")


class SolverError(RuntimeError):
    """Linear solve failed; ``pressure_mode`` holds a near-null pressure mode when one was found."""

    def __init__(self, message, pressure_mode=None, iteration=None):
        super().__init__(message)
        self.pressure_mode = pressure_mode
        self.iteration = iteration


class RieszMap:
    """Riesz representatives and dual norms for V_h (H1 seminorm, interior DOFs) and Q_h (L2)."""

    def __init__(self, blocks: OperatorBlocks):
        self.blocks = blocks
        self.interior = blocks.interior
        self._mv = blocks.M_V_ii().tocsc()
        self._solve_v = spla.splu(self._mv).solve
        self._solve_q = spla.splu(blocks.M_Q.tocsc()).solve

    def represent_v(self, f) -> np.ndarray:
        """Interior coefficients of u_f with M_V u_f = f (f given full-size or interior-size)."""
        f = np.asarray(f, dtype=float)
        if f.shape[0] == self.blocks.velocity.dim:
            f = f[self.interior]
        return self._solve_v(f)

    def dual_norm_v(self, f) -> float:
        f = np.asarray(f, dtype=float)
        if f.shape[0] == self.blocks.velocity.dim:
            f = f[self.interior]
        return float(np.sqrt(max(f @ self._solve_v(f), 0.0)))

    def norm_v(self, u) -> float:
        """H1 seminorm; ``u`` full-size or interior-size."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] == self.blocks.velocity.dim:
            return float(np.sqrt(max(u @ (self.blocks.M_V @ u), 0.0)))
        return float(np.sqrt(max(u @ (self._mv @ u), 0.0)))

    def represent_q(self, r) -> np.ndarray:
        """Zero-mean Riesz representative of a pressure functional."""
        rep = self._solve_q(np.asarray(r, dtype=float))
        return self.blocks.pressure.remove_mean(rep)

    def norm_q(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return float(np.sqrt(max(p @ (self.blocks.M_Q @ p), 0.0)))


def riesz_dual_norm(blocks: OperatorBlocks, f, return_representative: bool = False):
    """||f||_{V'} = sqrt(f^T M_V^{-1} f) over interior DOFs."""
    rm = RieszMap(blocks)
    value = rm.dual_norm_v(f)
    if return_representative:
        return value, blocks.velocity.extend(rm.represent_v(f))
    return value


def _saddle_matrix(A_ii, B_i, T, m):
    mcol = sp.csr_matrix(m.reshape(-1, 1))
    return sp.bmat([[A_ii, -B_i.T, None],
                    [B_i, T, mcol],
                    [None, mcol.T, None]], format="csc")


def _near_null_pressure_mode(blocks: OperatorBlocks, T):
    """Smallest eigenpair of (B M_V^-1 B^T + T, M_Q) on zero-mean pressures (dense)."""
    rm = RieszMap(blocks)
    Bi = blocks.B_i().toarray()
    S = Bi @ np.column_stack([rm.represent_v(row) for row in Bi]) if len(Bi) else Bi
    S = 0.5 * (S + S.T) + T.toarray()
    Z = la.null_space(blocks.pressure.mean_vector[None, :])
    vals, vecs = la.eigh(Z.T @ S @ Z, Z.T @ blocks.M_Q.toarray() @ Z)
    return vals[0], Z @ vecs[:, 0]


def _factorize(K, blocks, T, iteration=None):
    try:
        return spla.splu(K)
    except RuntimeError as exc:
        message = f"singular saddle-point system ({exc})"
        mode = None
        if blocks.pressure.dim <= 3000:
            value, mode = _near_null_pressure_mode(blocks, T)
            peak = blocks.pressure.scalar.nodes[np.argmax(np.abs(mode))]
            message += (f"; near-null pressure mode with Schur eigenvalue {value:.3e}, "
                        f"peak at ({peak[0]:.3g}, {peak[1]:.3g})")
        raise SolverError(message, pressure_mode=mode, iteration=iteration) from None


def _solve(K, rhs, blocks, T, iteration=None, tol=1e-10):
    lu = _factorize(K, blocks, T, iteration)
    x = lu.solve(rhs)
    res = np.linalg.norm(K @ x - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(x)) or res > max(tol * scale, 1e-14):
        message = f"linear solve inaccurate: relative residual {res / scale:.3e}"
        mode = None
        if blocks.pressure.dim <= 3000:
            value, mode = _near_null_pressure_mode(blocks, T)
            message += f"; near-null pressure mode with Schur eigenvalue {value:.3e}"
        raise SolverError(message, pressure_mode=mode, iteration=iteration)
    return x, res / scale


def solve_linear_saddle(blocks: OperatorBlocks, T, f, g=None) -> SaddleState:
    """Solve ``[L, -B^T; B, T] (u, p) = (f, g)`` with homogeneous Dirichlet data and zero-mean p."""
    V, Q = blocks.velocity, blocks.pressure
    f = np.asarray(f, dtype=float)
    g = np.zeros(Q.dim) if g is None else np.asarray(g, dtype=float)
    i = blocks.interior
    K = _saddle_matrix(blocks.L_ii(), blocks.B_i(), sp.csr_matrix(T), Q.mean_vector)
    rhs = np.concatenate([f[i] if f.shape[0] == V.dim else f, g, [0.0]])
    if not np.any(rhs):
        return SaddleState(np.zeros(V.dim), np.zeros(Q.dim), 0.0)
    x, _ = _solve(K, rhs, blocks, sp.csr_matrix(T))
    ni = len(i)
    return SaddleState(V.extend(x[:ni]), x[ni:ni + Q.dim], float(x[-1]))


@dataclass
class ProblemSpec:
    """Continuous problem data.

    ``force(x, y) -> (fx, fy)``, ``div_data(x, y) -> g``, ``dirichlet(x, y) -> (ux, uy)``
    (boundary values, ``None`` for homogeneous) and ``advection`` (Oseen field, callable or
    full velocity vector; must be discretely divergence free).
    """

    problem: str = "stokes"
    mu: float = 1.0
    force: Optional[Callable] = None
    div_data: Optional[Callable] = None
    advection: Optional[object] = None
    stabilization: StabilizationConfig = field(default_factory=StabilizationConfig)
    dirichlet: Optional[Callable] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.problem == "oseen" and self.advection is None:
            raise ValueError("oseen problem needs an advection field")


@dataclass
class SolveLog:
    residuals: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    linear_residuals: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    wall_time: float = 0.0
    energy: Optional[dict] = None

    def to_dict(self, timestamps: bool = True) -> dict:
        out = {
            "converged": self.converged,
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "damping": [float(d) for d in self.damping],
            "linear_residuals": [float(r) for r in self.linear_residuals],
            "energy": self.energy,
        }
        if timestamps:
            out["wall_time"] = self.wall_time
        return out


def make_solenoidal(blocks: OperatorBlocks, b) -> np.ndarray:
    """V-orthogonal projection of a zero-trace field onto the discretely divergence-free subspace."""
    V = blocks.velocity
    rm = RieszMap(blocks)
    i = blocks.interior
    b = np.asarray(b, dtype=float)
    bi = b[i] if b.shape[0] == V.dim else b
    Bi = blocks.B_i().toarray()
    W = np.column_stack([rm.represent_v(row) for row in Bi])  # M_V^-1 B^T
    y, *_ = la.lstsq(Bi @ W, Bi @ bi)
    return V.extend(bi - W @ y)


class DiscreteProblem:
    """Assembled discrete problem with unknown vector ``z = (u_interior, p, lambda)``."""

    def __init__(self, spec: ProblemSpec, mesh, k: int):
        self.spec = spec
        self.mesh = mesh
        self.k = k
        cfg = spec.stabilization
        cfg.check(k, mesh)
        V, Q = build_spaces(mesh, k)
        self.velocity, self.pressure = V, Q
        self.blocks = assemble_stokes_blocks(V, Q, spec.mu)
        self.T = assemble_pressure_stab(V, Q, cfg)
        self.riesz = RieszMap(self.blocks)
        self.interior = self.blocks.interior
        self.n_u = len(self.interior)

        self.f = V.load(spec.force) if spec.force is not None else np.zeros(V.dim)
        self.g = Q.scalar.load(spec.div_data) if spec.div_data is not None else np.zeros(Q.dim)
        self.lift = np.zeros(V.dim)
        if spec.dirichlet is not None:
            full = V.interpolate(spec.dirichlet)
            self.lift[V.boundary_dofs] = full[V.boundary_dofs]

        self.advection = None
        if spec.problem == "oseen":
            adv = spec.advection
            adv = V.interpolate(adv) if callable(adv) else np.asarray(adv, dtype=float)
            defect = np.abs(self.blocks.B @ adv).max()
            if defect > 1e-10:
                raise ValueError(f"advection field is not discretely divergence free "
                                 f"(max |B b| = {defect:.2e}); see make_solenoidal")
            self.advection = adv

        self._A_lin = _saddle_matrix(self.blocks.L_ii(), self.blocks.B_i(), self.T, Q.mean_vector)
        self._lin_rows = self.blocks.L[self.interior]

    @property
    def homogeneous(self) -> bool:
        return not np.any(self.lift)

    @property
    def is_nonlinear(self) -> bool:
        return self.spec.problem in ("nse", "oseen") or self.spec.stabilization.velocity_kind != "none"

    def full_velocity(self, u_interior) -> np.ndarray:
        return self.velocity.extend(u_interior, self.lift)

    def unpack(self, z) -> SaddleState:
        return SaddleState(self.full_velocity(z[:self.n_u]), z[self.n_u:-1].copy(), float(z[-1]))

    def pack(self, state: SaddleState) -> np.ndarray:
        return np.concatenate([state.u[self.interior], state.p, [state.lam]])

    def nonlinear_terms(self, u, mode="residual"):
        """C(u) + S(u) (full-size) or its Jacobian; zero for Stokes without velocity stabilization."""
        V = self.velocity
        parts = []
        if self.spec.problem == "nse":
            parts.append(convection(V, u, mode))
        elif self.spec.problem == "oseen":
            parts.append(convection(V, u, mode, advection=self.advection))
        if self.spec.stabilization.velocity_kind != "none":
            parts.append(velocity_stab(V, u, self.spec.stabilization, mode))
        if not parts:
            return np.zeros(V.dim) if mode == "residual" else sp.csr_matrix((V.dim, V.dim))
        return sum(parts[1:], parts[0])

    def operator(self, u, p):
        """A(x) as (velocity functional, pressure functional), both full-size, without data."""
        b = self.blocks
        ru = b.L @ u + self.nonlinear_terms(u) - b.B.T @ p
        rp = b.B @ u + self.T @ p
        return ru, rp

    def residual(self, z) -> np.ndarray:
        st = self.unpack(z)
        ru, rp = self.operator(st.u, st.p)
        m = self.pressure.mean_vector
        return np.concatenate([(ru - self.f)[self.interior], rp + m * st.lam - self.g, [m @ st.p]])

    def jacobian(self, z):
        u = self.full_velocity(z[:self.n_u])
        J = self.nonlinear_terms(u, "jacobian")
        i = self.interior
        if J.nnz == 0:
            return self._A_lin
        return (self._A_lin + sp.block_diag([J[i][:, i], sp.csr_matrix((self.pressure.dim + 1,) * 2)])).tocsc()

    def rhs_norm(self) -> float:
        return float(np.linalg.norm(np.concatenate([self.f[self.interior], self.g])))

    def linear_guess(self) -> np.ndarray:
        """Solution of the Stokes part (no convection, no velocity stabilization)."""
        b = self.blocks
        rhs = np.concatenate([(self.f - b.L @ self.lift)[self.interior], self.g - b.B @ self.lift, [0.0]])
        z, _ = _solve(self._A_lin, rhs, b, self.T)
        return z

    def energy_check(self, state: SaddleState, tol: float = 1e-8) -> Optional[dict]:
        """||u||_V <= ||f||_{V'} / mu for homogeneous data with g = 0."""
        if not self.homogeneous or np.any(self.g):
            return None
        u_norm = self.riesz.norm_v(state.u)
        bound = self.riesz.dual_norm_v(self.f) / self.spec.mu
        return {"u_norm": u_norm, "bound": bound, "ok": bool(u_norm <= bound + tol)}


def discretize(spec: ProblemSpec, mesh, k: int) -> DiscreteProblem:
    return DiscreteProblem(spec, mesh, k)


def newton(problem: DiscreteProblem, z0=None, tol=None, max_iter: int = 50, max_halvings: int = 10):
    """Damped Newton with residual-norm backtracking; never raises on divergence."""
    start = time.perf_counter()
    logbook = SolveLog()
    if tol is None:
        tol = 1e-8 * max(1.0, problem.rhs_norm())
    z = problem.linear_guess() if z0 is None else np.array(z0, dtype=float)
    r = problem.residual(z)
    rnorm = float(np.linalg.norm(r))
    logbook.residuals.append(rnorm)
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            logbook.converged = True
            break
        J = problem.jacobian(z)
        try:
            dz, lin_res = _solve(J, -r, problem.blocks, problem.T, iteration=it, tol=1e-8)
        except SolverError as exc:
            exc.args = (f"Newton iteration {it}: {exc.args[0]}",)
            raise
        logbook.linear_residuals.append(float(lin_res))
        step = 1.0
        for _ in range(max_halvings + 1):
            z_try = z + step * dz
            r_try = problem.residual(z_try)
            n_try = float(np.linalg.norm(r_try))
            if np.isfinite(n_try) and n_try < rnorm:
                break
            step *= 0.5
        else:
            log.warning("Newton: no decrease after %d halvings at iteration %d", max_halvings, it)
            logbook.iterations = it
            break
        z, r, rnorm = z_try, r_try, n_try
        logbook.damping.append(step)
        logbook.residuals.append(rnorm)
        logbook.iterations = it
        log.debug("Newton %d: residual %.3e step %.3g", it, rnorm, step)
    else:
        logbook.converged = rnorm <= tol
    if rnorm <= tol:
        logbook.converged = True
    logbook.wall_time = time.perf_counter() - start
    return z, logbook


def solve_nonlinear(spec: ProblemSpec, mesh, k: int, max_iter: int = 50, problem=None):
    """Solve the (possibly nonlinear) stabilized problem; returns (SaddleState, SolveLog)."""
    problem = discretize(spec, mesh, k) if problem is None else problem
    z, logbook = newton(problem, max_iter=max_iter)
    state = problem.unpack(z)
    if logbook.converged:
        logbook.energy = problem.energy_check(state)
    return state, logbook
