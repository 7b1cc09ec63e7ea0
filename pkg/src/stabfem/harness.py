"""Manufactured solutions, error norms, convergence tables and demo problems."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fe_space import simplex_quadrature
from .mesh import build_unit_square_mesh
from .solver import ProblemSpec, SolverError, discretize, solve_nonlinear
from .stabilization import StabilizationConfig

PI = np.pi
ERROR_QUAD_DEGREE = 10
CSV_HEADER = ("n", "h", "eu_l2", "eu_h1", "ep_l2", "eoc_u_l2", "eoc_u_h1", "eoc_p_l2")


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form solution with derivatives; ``force(mu)`` returns the matching load."""

    id: str
    problem: str
    velocity: Callable
    velocity_grad: Callable  # -> ((du1/dx, du1/dy), (du2/dx, du2/dy))
    velocity_laplacian: Callable
    pressure: Callable
    pressure_grad: Callable
    div_data: Optional[Callable] = None

    def force(self, mu: float) -> Callable:
        nonlinear = self.problem == "nse"

        def f(x, y):
            lap1, lap2 = self.velocity_laplacian(x, y)
            px, py = self.pressure_grad(x, y)
            f1 = -mu * lap1 + px
            f2 = -mu * lap2 + py
            if nonlinear:
                u1, u2 = self.velocity(x, y)
                (a, b), (c, d) = self.velocity_grad(x, y)
                f1 = f1 + u1 * a + u2 * b
                f2 = f2 + u1 * c + u2 * d
            return f1, f2
        return f

    def problem_spec(self, mu: float, stabilization: StabilizationConfig) -> ProblemSpec:
        return ProblemSpec(self.problem, mu, force=self.force(mu), div_data=self.div_data,
                           stabilization=stabilization)


# stream function psi = sin^2(pi x) sin^2(pi y); u = (d psi/dy, -d psi/dx)
def _curl_velocity(x, y):
    return (PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
            -PI * np.sin(2 * PI * x) * np.sin(PI * y) ** 2)


def _curl_velocity_grad(x, y):
    s2 = np.sin(2 * PI * x) * np.sin(2 * PI * y)
    return ((PI ** 2 * s2, 2 * PI ** 2 * np.sin(PI * x) ** 2 * np.cos(2 * PI * y)),
            (-2 * PI ** 2 * np.cos(2 * PI * x) * np.sin(PI * y) ** 2, -PI ** 2 * s2))


def _curl_velocity_laplacian(x, y):
    sx2, sy2 = np.sin(PI * x) ** 2, np.sin(PI * y) ** 2
    return (PI * np.sin(2 * PI * y) * (2 * PI ** 2 * np.cos(2 * PI * x) - 4 * PI ** 2 * sx2),
            -PI * np.sin(2 * PI * x) * (2 * PI ** 2 * np.cos(2 * PI * y) - 4 * PI ** 2 * sy2))


def _trig_pressure(x, y):
    # mean over the unit square is zero already
    return np.sin(PI * x) * np.cos(PI * y)


def _trig_pressure_grad(x, y):
    return PI * np.cos(PI * x) * np.cos(PI * y), -PI * np.sin(PI * x) * np.sin(PI * y)


def _bubble_velocity(x, y):
    b = np.sin(PI * x) * np.sin(PI * y)
    return b, b


def _bubble_velocity_grad(x, y):
    bx = PI * np.cos(PI * x) * np.sin(PI * y)
    by = PI * np.sin(PI * x) * np.cos(PI * y)
    return (bx, by), (bx, by)


def _bubble_velocity_laplacian(x, y):
    lap = -2 * PI ** 2 * np.sin(PI * x) * np.sin(PI * y)
    return lap, lap


def _bubble_divergence(x, y):
    (bx, _), (_, by) = _bubble_velocity_grad(x, y)
    return bx + by


CASES = {
    "stokes_trig": ManufacturedCase("stokes_trig", "stokes", _curl_velocity, _curl_velocity_grad,
                                    _curl_velocity_laplacian, _trig_pressure, _trig_pressure_grad),
    "nse_trig": ManufacturedCase("nse_trig", "nse", _curl_velocity, _curl_velocity_grad,
                                 _curl_velocity_laplacian, _trig_pressure, _trig_pressure_grad),
    "gstokes_div": ManufacturedCase("gstokes_div", "gstokes", _bubble_velocity, _bubble_velocity_grad,
                                    _bubble_velocity_laplacian, _trig_pressure, _trig_pressure_grad,
                                    div_data=_bubble_divergence),
}


def manufactured_solution(case_id: str) -> ManufacturedCase:
    try:
        return CASES[case_id]
    except KeyError:
        raise ValueError(f"unknown manufactured case {case_id!r}; choose from {sorted(CASES)}") from None


def regularized_lid(x, y):
    """Lid velocity (16 x^2 (1-x)^2, 0) on y = 1, zero elsewhere on the boundary."""
    top = np.isclose(y, 1.0)
    return np.where(top, 16.0 * x ** 2 * (1.0 - x) ** 2, 0.0), np.zeros_like(x)


def lid_driven_cavity(mu: float = 0.05, stabilization: StabilizationConfig | None = None) -> ProblemSpec:
    stab = stabilization or StabilizationConfig("bp", "supg")
    return ProblemSpec("nse", mu, stabilization=stab, dirichlet=regularized_lid)


def error_norms(state, velocity, case: ManufacturedCase, degree: int = ERROR_QUAD_DEGREE):
    """(||u_h-u*||_L2, |u_h-u*|_H1, ||p_h-p*||_L2) by high-order quadrature."""
    s = velocity.scalar
    bary, w = simplex_quadrature(degree)
    phi, grads, dx, pts = s.tabulate(bary, w)
    x, y = pts[..., 0], pts[..., 1]
    U = velocity.values(state.u, phi)
    G = velocity.gradients(state.u, grads)
    P = s.values(state.p, phi)
    ue = np.stack(case.velocity(x, y), axis=-1)
    (a, b), (c, d) = case.velocity_grad(x, y)
    ge = np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], axis=-2)
    eu = np.sqrt(np.sum(dx * np.sum((U - ue) ** 2, axis=-1)))
    eh = np.sqrt(np.sum(dx * np.sum((G - ge) ** 2, axis=(-2, -1))))
    ep = np.sqrt(np.sum(dx * (P - case.pressure(x, y)) ** 2))
    return float(eu), float(eh), float(ep)


def gram_norms(blocks, du, dp):
    """L2/H1-seminorm of a discrete velocity difference and L2 of a pressure difference via Gram matrices."""
    M = blocks.velocity.scalar.mass
    n = blocks.velocity.scalar.n_nodes
    l2 = math.sqrt(du[:n] @ (M @ du[:n]) + du[n:] @ (M @ du[n:]))
    h1 = math.sqrt(du @ (blocks.M_V @ du))
    pl2 = math.sqrt(dp @ (blocks.M_Q @ dp))
    return l2, h1, pl2


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    failure: Optional[str] = None

    def eoc(self, key: str):
        vals = [r[key] for r in self.rows]
        ns = [r["n"] for r in self.rows]
        out = [None]
        for i in range(1, len(vals)):
            if vals[i] > 0 and vals[i - 1] > 0:
                out.append(math.log(vals[i - 1] / vals[i]) / math.log(ns[i] / ns[i - 1]))
            else:
                out.append(None)
        return out

    def _fill_eoc(self):
        for key, name in (("eu_l2", "eoc_u_l2"), ("eu_h1", "eoc_u_h1"), ("ep_l2", "eoc_p_l2")):
            for row, value in zip(self.rows, self.eoc(key)):
                row[name] = value

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(["" if row.get(k) is None else
                             (row[k] if k == "n" else repr(float(row[k]))) for k in CSV_HEADER])
        return buf.getvalue()


def run_convergence(case: ManufacturedCase | str, levels, k: int = 1, mu: float = 1.0,
                    stabilization: StabilizationConfig | None = None) -> ConvergenceTable:
    """Solve on uniform meshes n in ``levels`` and tabulate errors and EOCs.

    A solver failure stops the sweep; rows computed so far are kept and the
    message is stored in ``failure``.
    """
    if isinstance(case, str):
        case = manufactured_solution(case)
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    stab = stabilization or StabilizationConfig()
    macro = "lps" in (stab.pressure_kind, stab.velocity_kind)
    table = ConvergenceTable()
    spec = case.problem_spec(mu, stab)
    for n in levels:
        mesh = build_unit_square_mesh(n, with_macro=macro)
        try:
            problem = discretize(spec, mesh, k)
            state, logbook = solve_nonlinear(spec, mesh, k, problem=problem)
        except SolverError as exc:
            table.failure = f"n={n}: {exc}"
            break
        if not logbook.converged:
            table.failure = f"n={n}: Newton did not converge"
            break
        eu, eh, ep = error_norms(state, problem.velocity, case)
        table.rows.append({"n": n, "h": 1.0 / n, "eu_l2": eu, "eu_h1": eh, "ep_l2": ep})
    table._fill_eoc()
    return table
