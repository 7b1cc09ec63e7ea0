import numpy as np
import pytest
import scipy.sparse as sp

from stabfem.assembly import assemble_stokes_blocks
from stabfem.harness import lid_driven_cavity, manufactured_solution, error_norms
from stabfem.solver import (
    ProblemSpec,
    RieszMap,
    SolverError,
    discretize,
    make_solenoidal,
    newton,
    riesz_dual_norm,
    solve_linear_saddle,
    solve_nonlinear,
)
from stabfem.stabilization import StabilizationConfig, assemble_pressure_stab

from conftest import blocks, random_interior_velocity, spaces, unit_mesh

BP = StabilizationConfig("bp")


def _dense_oracle(b, T, f, g):
    i = b.interior
    A = b.L[i][:, i].toarray()
    B = b.B[:, i].toarray()
    m = b.pressure.mean_vector
    nq = len(m)
    K = np.block([[A, -B.T, np.zeros((len(i), 1))],
                  [B, T.toarray(), m[:, None]],
                  [np.zeros((1, len(i))), m[None, :], np.zeros((1, 1))]])
    rhs = np.concatenate([f[i], g, [0.0]])
    z = np.linalg.solve(K, rhs)
    return z[:len(i)], z[len(i):len(i) + nq]


def test_homogeneous_system_gives_zero():
    b = blocks(4)
    T = assemble_pressure_stab(b.velocity, b.pressure, BP)
    x = solve_linear_saddle(b, T, np.zeros(b.velocity.dim))
    assert not np.any(x.u) and not np.any(x.p) and x.lam == 0.0


@pytest.mark.parametrize("k", [1, 2])
def test_linear_solve_matches_dense_oracle(k, rng):
    b = blocks(4, k)
    T = assemble_pressure_stab(b.velocity, b.pressure, BP)
    f = rng.standard_normal(b.velocity.dim)
    # compatible divergence data: sum(g) = 0 (tested against q = 1)
    g = rng.standard_normal(b.pressure.dim)
    g -= g.mean()
    x = solve_linear_saddle(b, T, f, g)
    u_ref, p_ref = _dense_oracle(b, T, f, g)
    assert np.abs(x.u[b.interior] - u_ref).max() <= 1e-10 * max(1, np.abs(u_ref).max())
    assert np.abs(x.p - p_ref).max() <= 1e-10 * max(1, np.abs(p_ref).max())
    assert abs(b.pressure.mean_vector @ x.p) <= 1e-10
    ru = (b.L @ x.u - b.B.T @ x.p - f)[b.interior]
    assert np.linalg.norm(ru) <= 1e-10 * np.linalg.norm(f)


def test_unstabilized_equal_order_reports_null_mode():
    b = blocks(8)
    T = sp.csr_matrix((b.pressure.dim,) * 2)
    with pytest.raises(SolverError) as exc:
        solve_linear_saddle(b, T, b.velocity.load(lambda x, y: (1 + 0 * x, 0 * y)))
    assert "near-null pressure mode" in str(exc.value)
    mode = exc.value.pressure_mode
    assert mode is not None and mode.shape == (b.pressure.dim,)
    assert abs(b.pressure.mean_vector @ mode) <= 1e-8 * np.linalg.norm(mode)


def test_riesz_dual_norm_examples(rng):
    b = blocks(8)
    V = b.velocity
    assert riesz_dual_norm(b, np.zeros(V.dim)) == 0.0
    w = random_interior_velocity(rng, V)
    wn = np.sqrt(w @ b.M_V @ w)
    assert abs(riesz_dual_norm(b, b.M_V @ w) - wn) <= 1e-10 * wn
    f = V.load(lambda x, y: (1 + 0 * x, 0 * y))
    i = b.interior
    oracle = np.sqrt(f[i] @ np.linalg.solve(b.M_V_ii().toarray(), f[i]))
    val, rep = riesz_dual_norm(b, f, return_representative=True)
    assert abs(val - oracle) <= 1e-10 * oracle
    assert abs(np.sqrt(rep @ b.M_V @ rep) - val) <= 1e-12


def test_riesz_pressure_zero_mean(rng):
    b = blocks(4)
    rm = RieszMap(b)
    r = rng.standard_normal(b.pressure.dim)
    rep = rm.represent_q(r)
    assert abs(b.pressure.mean_vector @ rep) <= 1e-13
    q = b.pressure.remove_mean(rng.standard_normal(b.pressure.dim))
    assert abs(rep @ b.M_Q @ q - r @ q) <= 1e-12


# ---- problem spec and nonlinear solves

@pytest.mark.parametrize("kwargs", [
    {"problem": "euler"}, {"mu": 0.0}, {"mu": -1.0}, {"problem": "oseen"},
])
def test_problem_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ProblemSpec(**kwargs)


def test_zero_data_nse_converges_immediately():
    spec = ProblemSpec("nse", 1.0, stabilization=BP)
    state, log = solve_nonlinear(spec, unit_mesh(8), 1)
    assert log.converged and log.iterations <= 2
    assert not np.any(state.u) and np.abs(state.p).max() == 0


def _oseen_spec(mu, n=8, k=1):
    V, Q = spaces(n, k)
    b = assemble_stokes_blocks(V, Q, mu)
    case = manufactured_solution("nse_trig")
    adv = make_solenoidal(b, V.interpolate(case.velocity))
    return ProblemSpec("oseen", mu, force=case.force(mu), advection=adv, stabilization=BP)


def test_make_solenoidal():
    spec = _oseen_spec(1.0)
    b = blocks(8)
    assert np.abs(b.B @ spec.advection).max() <= 1e-10


def test_oseen_converges_in_one_newton_step():
    spec = _oseen_spec(0.5)
    state, log = solve_nonlinear(spec, unit_mesh(8), 1)
    assert log.converged and log.iterations <= 2
    assert log.residuals[-1] <= 1e-8 * max(1, discretize(spec, unit_mesh(8), 1).rhs_norm())


def test_oseen_rejects_non_solenoidal():
    V, _ = spaces(8)
    adv = V.interpolate(lambda x, y: (x * (1 - x) * y * (1 - y), 0 * x))
    with pytest.raises(ValueError, match="divergence free"):
        discretize(ProblemSpec("oseen", 1.0, advection=adv), unit_mesh(8), 1)


def test_manufactured_stokes_error_decreases():
    case = manufactured_solution("stokes_trig")
    errs = []
    for n in (8, 16):
        spec = case.problem_spec(1.0, BP)
        pr = discretize(spec, unit_mesh(n), 1)
        state, log = solve_nonlinear(spec, unit_mesh(n), 1, problem=pr)
        assert log.converged
        errs.append(error_norms(state, pr.velocity, case)[1])
    assert np.isfinite(errs[0]) and errs[1] < errs[0]


def test_generalized_stokes_recovers_field():
    case = manufactured_solution("gstokes_div")
    spec = case.problem_spec(1.0, BP)
    pr = discretize(spec, unit_mesh(16), 1)
    state, log = solve_nonlinear(spec, unit_mesh(16), 1, problem=pr)
    eu, eh, _ = error_norms(state, pr.velocity, case)
    assert log.converged and eu < 0.02 and eh < 0.5


def test_energy_bound_nse():
    case = manufactured_solution("nse_trig")
    for mu in (1.0, 0.1):
        state, log = solve_nonlinear(case.problem_spec(mu, BP), unit_mesh(8), 1)
        assert log.converged and log.energy["ok"]
        assert log.energy["u_norm"] <= log.energy["bound"] + 1e-8


def test_divergence_returns_flagged_iterate():
    spec = lid_driven_cavity(0.01, BP)
    pr = discretize(spec, unit_mesh(8), 1)
    z, log = newton(pr, max_iter=1)
    assert not log.converged and log.iterations == 1 and len(log.residuals) == 2
    assert z.shape == (pr.n_u + pr.pressure.dim + 1,)


def test_cavity_quadratic_phase_and_log():
    spec = lid_driven_cavity(0.05, BP)
    state, log = solve_nonlinear(spec, unit_mesh(8), 1)
    assert log.converged and log.iterations <= 25
    r = log.residuals
    ratios = [r[j + 1] / r[j] ** 2 for j in range(len(r) - 1) if r[j] < 1e-1 and r[j + 1] > 0]
    assert ratios and max(ratios) <= 10
    d = log.to_dict(timestamps=False)
    assert "wall_time" not in d and d["residuals"] == [float(x) for x in r]
    assert "wall_time" in log.to_dict()


def test_lifting_imposes_boundary_values():
    spec = lid_driven_cavity(0.05, BP)
    pr = discretize(spec, unit_mesh(8), 1)
    state, _ = solve_nonlinear(spec, unit_mesh(8), 1, problem=pr)
    V = pr.velocity
    expect = V.interpolate(spec.dirichlet)
    assert np.array_equal(state.u[V.boundary_dofs], expect[V.boundary_dofs])
