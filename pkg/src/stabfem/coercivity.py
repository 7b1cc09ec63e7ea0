"""Numerical verification of the mapped-coercivity constants and sign conditions.

Norms: ||u||_V is the H1 seminorm on interior DOFs, ||p||_Q the L2 norm on
zero-mean pressures, ||x||^2 = ||u||_V^2 + ||p||_Q^2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .assembly import OperatorBlocks, SaddleState, convection
from .solver import DiscreteProblem, RieszMap
from .stabilization import StabilizationConfig, velocity_stab

DEFAULT_RADII = (1.0, 2.0, 5.0, 10.0)


class EigenConvergenceError(RuntimeError):
    pass


def smallest_generalized_eig(A, M, max_iter: int = 500, dense_fallback: int = 3000) -> float:
    """Smallest eigenvalue of the symmetric-definite pencil (A, M).

    Shift-invert Lanczos at zero (Krylov-accelerated inverse iteration). When it
    stalls on a clustered spectrum, pencils up to ``dense_fallback`` unknowns are
    solved densely; larger ones raise :class:`EigenConvergenceError`.
    """
    n = A.shape[0]
    if n <= 8:
        return float(la.eigh(A.toarray(), M.toarray(), eigvals_only=True)[0])
    lu = spla.splu(A.tocsc())
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    try:
        vals = spla.eigsh(A, k=1, M=M, sigma=0.0, which="LM", OPinv=op, v0=np.ones(n),
                          maxiter=max_iter, tol=0, return_eigenvectors=False)
        return float(vals[0])
    except spla.ArpackNoConvergence:
        if n <= dense_fallback:
            return float(la.eigh(A.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
        raise EigenConvergenceError(f"inverse iteration did not converge in {max_iter} steps") from None


def estimate_alpha(blocks: OperatorBlocks, L=None, max_iter: int = 500, dense_fallback: int = 3000) -> float:
    """Coercivity constant of L w.r.t. the V norm: smallest eigenvalue of (L, M_V) on interior DOFs."""
    i = blocks.interior
    L_ii = (blocks.L if L is None else L)[i][:, i].tocsc()
    return smallest_generalized_eig(L_ii, blocks.M_V_ii().tocsc(), max_iter, dense_fallback)


def schur_complement(blocks: OperatorBlocks, riesz: Optional[RieszMap] = None) -> np.ndarray:
    """Dense B M_V^-1 B^T (pressure x pressure)."""
    riesz = riesz or RieszMap(blocks)
    Bi = blocks.B_i()
    W = riesz.represent_v(Bi.T.toarray())
    S = np.asarray(Bi @ W)
    return 0.5 * (S + S.T)


def _zero_mean_basis(pressure) -> np.ndarray:
    return la.null_space(pressure.mean_vector[None, :])


class ThetaMap:
    """Linear map Theta: Q_h -> V_h, p -> theta * M_V^-1 B^T p.

    The scale ``theta = 1 / gamma^2`` (gamma^2 the smallest eigenvalue of
    (B M_V^-1 B^T + T, M_Q) on zero-mean pressures) gives
    <B Theta p, p> + theta <T p, p> >= ||p||_Q^2 for every p.
    """

    def __init__(self, blocks: OperatorBlocks, T, riesz: Optional[RieszMap] = None):
        self.blocks = blocks
        self.riesz = riesz or RieszMap(blocks)
        self.T = T
        self.S = schur_complement(blocks, self.riesz)
        Td = T.toarray() if hasattr(T, "toarray") else np.asarray(T)
        self.T_dense = 0.5 * (Td + Td.T)
        Z = _zero_mean_basis(blocks.pressure)
        Mz = Z.T @ blocks.M_Q.toarray() @ Z
        try:
            vals, vecs = la.eigh(Z.T @ (self.S + self.T_dense) @ Z, Mz)
            schur_vals = la.eigh(Z.T @ self.S @ Z, Mz, eigvals_only=True)
        except la.LinAlgError as exc:
            raise EigenConvergenceError(f"pressure eigenproblem failed: {exc}") from None
        self.eigenvalues = vals
        self.eigenvectors = Z @ vecs
        self.gamma_sq = float(max(vals[0], 0.0))
        self.schur_max = float(schur_vals[-1])
        self.degenerate = self.gamma_sq <= 1e-12 * max(vals[-1], 1e-300)
        self.theta = 1.0 if self.degenerate else 1.0 / self.gamma_sq
        self.c_theta = self.theta * math.sqrt(max(self.schur_max, 0.0))
        self.observed_c_theta = 0.0

    def schur_value(self, p) -> float:
        """s(p) = p^T B M_V^-1 B^T p."""
        return float(p @ self.S @ p)

    def check_zero_mean(self, p):
        m = self.blocks.pressure.mean_vector
        if abs(m @ p) > 1e-8 * max(np.linalg.norm(p), 1e-300):
            raise ValueError("Theta is defined on zero-mean pressures only")

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        self.check_zero_mean(p)
        v = self.blocks.velocity.extend(self.theta * self.riesz.represent_v(self.blocks.B_i().T @ p))
        pn = self.riesz.norm_q(p)
        if pn > 0:
            self.observed_c_theta = max(self.observed_c_theta, self.riesz.norm_v(v) / pn)
        return v


def apply_theta(blocks: OperatorBlocks, T, p, theta_map: Optional[ThetaMap] = None) -> np.ndarray:
    return (theta_map or ThetaMap(blocks, T))(p)


def _random_zero_mean(rng, pressure, riesz, count):
    out = []
    for _ in range(count):
        p = pressure.remove_mean(rng.standard_normal(pressure.dim))
        out.append(p / riesz.norm_q(p))
    return out


def estimate_c_T(theta_map: ThetaMap, n_random: int = 100, seed: int = 0) -> float:
    """Sampled (A2b) constant: max (1/2||p||^2 - <B Theta p, p>)_+ / <T p, p>.

    Returns inf when the numerator is positive on a direction where T vanishes.
    """
    blocks = theta_map.blocks
    riesz = theta_map.riesz
    rng = np.random.default_rng(seed)
    candidates = [v / riesz.norm_q(v) for v in theta_map.eigenvectors.T]
    candidates += _random_zero_mean(rng, blocks.pressure, riesz, n_random)
    c_T = 0.0
    for p in candidates:
        num = 0.5 - theta_map.theta * theta_map.schur_value(p)
        den = float(p @ theta_map.T_dense @ p)
        if num <= 1e-12:
            continue
        if den > 1e-14:
            c_T = max(c_T, num / den)
        else:
            return math.inf
    return c_T


def estimate_infsup(blocks: OperatorBlocks, T, n_random: int = 100, seed: int = 0):
    """(gamma_stab, c_T): stabilized inf-sup constant and the sampled (A2b) constant."""
    tm = ThetaMap(blocks, T)
    return math.sqrt(tm.gamma_sq), estimate_c_T(tm, n_random, seed)


def _random_velocity(rng, blocks, riesz, norm=1.0):
    ui = rng.standard_normal(len(blocks.interior))
    ui *= norm / riesz.norm_v(ui)
    return blocks.velocity.extend(ui)


@dataclass
class CNEstimate:
    c_N: float
    amplitudes: tuple
    ratios: np.ndarray  # (n_amplitudes, n_samples)

    def max_by_amplitude(self):
        return self.ratios.max(axis=1)


def estimate_cN(blocks: OperatorBlocks, stabilization: Optional[StabilizationConfig] = None,
                sample_count: int = 100, seed: int = 0, amplitudes=(0.1, 1.0, 10.0),
                riesz: Optional[RieszMap] = None) -> CNEstimate:
    """Max of ||C(u) + S(u)||_{V'} / ||u||_V^2 over random zero-trace fields at several amplitudes.

    The same unit directions are reused at every amplitude.
    """
    riesz = riesz or RieszMap(blocks)
    V = blocks.velocity
    rng = np.random.default_rng(seed)
    dirs = [_random_velocity(rng, blocks, riesz) for _ in range(sample_count)]
    use_s = stabilization is not None and stabilization.velocity_kind != "none"
    ratios = np.empty((len(amplitudes), sample_count))
    for a, amp in enumerate(amplitudes):
        for j, d in enumerate(dirs):
            u = amp * d
            r = convection(V, u)
            if use_s:
                r = r + velocity_stab(V, u, stabilization)
            ratios[a, j] = riesz.dual_norm_v(r) / riesz.norm_v(u) ** 2
    return CNEstimate(float(ratios.max()), tuple(amplitudes), ratios)


@dataclass
class ConstantSet:
    alpha: float
    c_L: float
    c_Theta: float
    c_N: float
    c_T: float
    f_dual: float = 0.0
    tau_max1: float = field(init=False)
    tau_max2: float = field(init=False)
    tau_max3: float = field(init=False)
    r1: float = field(init=False)
    r2: float = field(init=False)
    r: float = field(init=False)

    def __post_init__(self):
        if self.c_Theta <= 0 or (self.c_N == 0 and self.c_L == 0) or self.alpha <= 0:
            raise ValueError("invalid constants: need alpha > 0, c_Theta > 0 and c_N + c_L > 0")
        if min(self.c_N, self.c_L, self.c_T, self.f_dual) < 0:
            raise ValueError("constants must be nonnegative")
        a, ct = self.alpha, self.c_Theta
        self.tau_max1 = math.inf if self.c_T == 0 else 1.0 / self.c_T
        self.tau_max2 = min(self.tau_max1, 1.0 / (a * ct ** 2))
        self.r1 = 4.0 * self.f_dual / a
        self.tau_max3 = min(a / ct ** 2 / (self.c_N * self.r1 + self.c_L) ** 2, self.tau_max2)
        self.r2 = self.r1 * math.sqrt(a) / math.sqrt(self.tau_max3) if self.tau_max3 > 0 else math.inf
        self.r = max(self.r1, self.r2)

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in asdict(self).items()}


def compute_tau(u_norm: float, consts: ConstantSet) -> float:
    """Scaling tau(||u||) of the nonlinear test map, capped by tau_max2 and 1/(2 c_Theta)."""
    a, ct = consts.alpha, consts.c_Theta
    growth = 0.5 * a / ct ** 2 / (consts.c_N * u_norm + consts.c_L) ** 2
    return min(growth, consts.tau_max2, 0.5 / ct)


@dataclass
class CoercivityReport:
    kind: str
    sample_count: int
    seed: int
    gamma_stab: float
    passed: bool
    beta_min: Optional[float] = None
    tau: Optional[float] = None
    p0_ratio_min: Optional[float] = None
    u0_ratio_min: Optional[float] = None
    lower_bound: Optional[float] = None
    radius: Optional[float] = None
    radius_grid: Optional[list] = None
    margins: list = field(default_factory=list)
    rayleigh: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    min_scaled_margin: Optional[float] = None
    constants: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float):
                return None if not math.isfinite(v) else v
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, np.generic):
                return clean(v.item())
            return v
        return {"schema": 1, **clean(asdict(self))}


def _mapped_pairing(blocks, T, u, p, w):
    """<A_h x, (w, p)> for the linear stabilized operator."""
    ru = blocks.L @ u - blocks.B.T @ p
    rp = blocks.B @ u + T @ p
    i = blocks.interior
    return float(ru[i] @ w[i] + rp @ p)


def check_mapped_coercivity(blocks: OperatorBlocks, T, consts: Optional[ConstantSet] = None,
                            sample_count: int = 200, seed: int = 0) -> CoercivityReport:
    """Sample <A_h x, Phi x> / ||x||^2 with Phi x = (u - tau Theta p, p) and fixed tau."""
    tm = ThetaMap(blocks, T)
    riesz = tm.riesz
    if consts is None:
        alpha = estimate_alpha(blocks)
        c_T = estimate_c_T(tm, seed=seed)
        c_L = blocks.mu
        c_theta = tm.c_theta
    else:
        alpha, c_T, c_L, c_theta = consts.alpha, consts.c_T, consts.c_L, consts.c_Theta
    tau_T = 0.0 if math.isinf(c_T) else (math.inf if c_T == 0 else 1.0 / c_T)
    tau = min(tau_T, alpha / (c_theta * c_L) ** 2)
    rng = np.random.default_rng(seed)
    P = blocks.pressure

    def ratio(u, p):
        w = u - tau * tm(p) if tau > 0 else u
        return _mapped_pairing(blocks, T, u, p, w) / (riesz.norm_v(u) ** 2 + riesz.norm_q(p) ** 2)

    ratios, p0, u0 = [], [], []
    for _ in range(sample_count):
        angle = rng.uniform(0.0, 0.5 * math.pi)
        u = _random_velocity(rng, blocks, riesz, math.cos(angle))
        p = _random_zero_mean(rng, P, riesz, 1)[0] * math.sin(angle)
        ratios.append(ratio(u, p))
    n_slice = max(1, sample_count // 10)
    for _ in range(n_slice):
        p0.append(ratio(_random_velocity(rng, blocks, riesz), np.zeros(P.dim)))
        u0.append(ratio(np.zeros(blocks.velocity.dim), _random_zero_mean(rng, P, riesz, 1)[0]))
    ratios += p0 + u0
    beta_min = float(min(ratios))
    report = CoercivityReport(
        kind="linear", sample_count=sample_count, seed=seed, gamma_stab=math.sqrt(tm.gamma_sq),
        passed=bool(beta_min > 0 and tau > 0 and min(p0) >= alpha - 1e-10),
        beta_min=beta_min, tau=tau, p0_ratio_min=float(min(p0)), u0_ratio_min=float(min(u0)),
        lower_bound=min(alpha / 4.0, tau / 2.0),
        constants={"alpha": alpha, "c_L": c_L, "c_Theta": c_theta, "c_T": c_T, "theta": tm.theta},
    )
    if tau == 0:
        report.notes.append("c_T is infinite: (A2b) fails for this stabilization")
    return report


def nonlinear_constants(problem: DiscreteProblem, sample_count: int = 100, seed: int = 0,
                        theta_map: Optional[ThetaMap] = None) -> tuple:
    """(ConstantSet, ThetaMap) for the problem's C + S, T and load f."""
    blocks = problem.blocks
    tm = theta_map or ThetaMap(blocks, problem.T, problem.riesz)
    alpha = estimate_alpha(blocks)
    c_T = estimate_c_T(tm, seed=seed)
    if problem.spec.problem == "nse":
        c_N = estimate_cN(blocks, problem.spec.stabilization, sample_count, seed, riesz=problem.riesz).c_N
    else:
        c_N = 0.0
    if math.isinf(c_T):
        raise ValueError("(A2b) fails for this stabilization (c_T infinite); no sign-condition radius exists")
    consts = ConstantSet(alpha, blocks.mu, tm.c_theta, c_N, c_T, problem.riesz.dual_norm_v(problem.f))
    return consts, tm


def _require_homogeneous(problem: DiscreteProblem):
    if not problem.homogeneous:
        raise ValueError("coercivity checks require homogeneous Dirichlet data")


def sign_pairing(problem: DiscreteProblem, u, p, tau: float, theta_map: ThetaMap) -> float:
    """<A(x) - b, S Psi(x)> with S Psi(x) = (u - tau Theta p, p)."""
    ru, rp = problem.operator(u, p)
    i = problem.interior
    w = u - tau * theta_map(p) if tau > 0 else u
    return float((ru - problem.f)[i] @ w[i] + (rp - problem.g) @ p)


def check_sign_condition(problem: DiscreteProblem, consts: Optional[ConstantSet] = None,
                         radius_grid=DEFAULT_RADII, sample_count: int = 100, seed: int = 0,
                         theta_map: Optional[ThetaMap] = None) -> CoercivityReport:
    """Sample the sign condition on spheres ||x|| = rho * r for rho in ``radius_grid``."""
    _require_homogeneous(problem)
    if problem.spec.problem not in ("nse", "oseen"):
        raise ValueError("sign-condition check needs an nse or oseen problem")
    if consts is None or theta_map is None:
        c, tm = nonlinear_constants(problem, seed=seed, theta_map=theta_map)
        consts = consts or c
        theta_map = tm
    riesz = problem.riesz
    r = consts.r if consts.r > 0 else 1.0
    fd = consts.f_dual
    rng = np.random.default_rng(seed)
    blocks = problem.blocks
    margins, rayleigh, norms, scaled = [], [], [], []
    for rho in radius_grid:
        radius = rho * r
        for _ in range(sample_count):
            angle = rng.uniform(0.0, 0.5 * math.pi)
            u = _random_velocity(rng, blocks, riesz, radius * math.cos(angle))
            p = _random_zero_mean(rng, blocks.pressure, riesz, 1)[0] * radius * math.sin(angle)
            tau = compute_tau(riesz.norm_v(u), consts)
            m = sign_pairing(problem, u, p, tau, theta_map)
            state = SaddleState(u, p)
            rq = psi_residual_pairing(problem, state, tau, theta_map)
            xn = math.hypot(riesz.norm_v(u), riesz.norm_q(p))
            margins.append(m)
            rayleigh.append(rq)
            norms.append(xn)
            scaled.append(m / ((1.0 + xn ** 2) * max(1.0, fd)))
    passed = bool(min(scaled) >= -1e-8)
    return CoercivityReport(
        kind="sign", sample_count=sample_count, seed=seed, gamma_stab=math.sqrt(theta_map.gamma_sq),
        passed=passed, radius=consts.r, radius_grid=list(radius_grid), margins=margins,
        rayleigh=rayleigh, norms=norms, min_scaled_margin=float(min(scaled)), constants=consts.to_dict(),
    )


def residual_map(problem: DiscreteProblem, state: SaddleState) -> SaddleState:
    """Riesz-preconditioned residual R(x) = (M_V^-1 r_u, M_Q^-1 r_p) on X_h."""
    ru, rp = problem.operator(state.u, state.p)
    R_u = problem.velocity.extend(problem.riesz.represent_v((ru - problem.f)[problem.interior]))
    R_p = problem.riesz.represent_q(rp - problem.g)
    return SaddleState(R_u, R_p, 0.0)


def state_norm(problem: DiscreteProblem, state: SaddleState) -> float:
    return math.hypot(problem.riesz.norm_v(state.u), problem.riesz.norm_q(state.p))


def psi_map(problem: DiscreteProblem, state: SaddleState, tau: float, theta_map: ThetaMap):
    """Psi(x) = (M_V (u - tau Theta p), M_Q p) as interior/pressure functionals."""
    w = state.u - tau * theta_map(state.p) if tau > 0 else state.u
    i = problem.interior
    return (problem.blocks.M_V @ w)[i], problem.blocks.M_Q @ state.p


def psi_residual_pairing(problem: DiscreteProblem, state: SaddleState, tau: float,
                         theta_map: ThetaMap) -> float:
    """<Psi(x), R(x)>, which equals the sign-condition pairing."""
    R = residual_map(problem, state)
    pu, pp = psi_map(problem, state, tau, theta_map)
    return float(pu @ R.u[problem.interior] + pp @ R.p)


def apply_phi(theta_map: ThetaMap, tau: float, u, p):
    """Phi(u, p) = (u - tau Theta p, p)."""
    return u - tau * theta_map(p), p


def phi_preimage(theta_map: ThetaMap, tau: float, u, p):
    """w with Phi(w, p) = (u, p): w = u + tau Theta p."""
    return u + tau * theta_map(p), p
