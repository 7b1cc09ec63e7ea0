"""Command-line driver: solve, lab checks, convergence tables and the full property check."""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import math
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import coercivity as lab
from .assembly import assemble_stokes_blocks, convection
from .fe_space import ConfigurationError, build_spaces
from .harness import CASES, lid_driven_cavity, manufactured_solution, run_convergence
from .mesh import MeshError, build_unit_square_mesh, parse_mesh, refine_uniform
from .solver import PROBLEMS, ProblemSpec, SolverError, discretize, make_solenoidal, solve_nonlinear
from .stabilization import PRESSURE_KINDS, VELOCITY_KINDS, StabilizationConfig, assemble_pressure_stab, velocity_stab

SCHEMA = 1
SUBCOMMANDS = ("solve", "infsup", "coercivity", "signcheck", "convergence", "check")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str = "check"
    problem: Optional[str] = None
    mu: float = 1.0
    n: int = 8
    mesh: Optional[str] = None
    k: int = 1
    stab: str = "bp"
    vstab: str = "none"
    delta0_p: float = 0.1
    delta0_v: float = 0.3
    case: Optional[str] = None
    levels: tuple = (8, 16, 32)
    samples: int = 100
    seed: int = 0
    radius_grid: tuple = lab.DEFAULT_RADII
    out: Optional[str] = None
    timestamp: bool = True

    def validate(self) -> "RunConfig":
        def bad(name, why):
            raise ConfigError(f"invalid {name}: {why}")

        if self.subcommand not in SUBCOMMANDS:
            bad("subcommand", f"{self.subcommand!r} not in {SUBCOMMANDS}")
        if self.problem is not None and self.problem not in PROBLEMS:
            bad("problem", f"{self.problem!r} not in {PROBLEMS}")
        if not (isinstance(self.mu, (int, float)) and math.isfinite(self.mu) and self.mu > 0):
            bad("mu", f"must be a positive number, got {self.mu!r}")
        if not (isinstance(self.n, int) and self.n >= 1):
            bad("n", f"must be a positive integer, got {self.n!r}")
        if self.k not in (1, 2):
            bad("k", f"must be 1 or 2, got {self.k!r}")
        if self.stab not in PRESSURE_KINDS:
            bad("stab", f"{self.stab!r} not in {PRESSURE_KINDS}")
        if self.vstab not in VELOCITY_KINDS:
            bad("vstab", f"{self.vstab!r} not in {VELOCITY_KINDS}")
        for name in ("delta0_p", "delta0_v"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                bad(name, f"must be a nonnegative number, got {v!r}")
        if self.case is not None and self.case not in CASES:
            bad("case", f"{self.case!r} not in {sorted(CASES)}")
        lv = list(self.levels)
        if not lv or any(not isinstance(x, int) or x < 1 for x in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            bad("levels", f"must be strictly increasing positive integers, got {self.levels!r}")
        self.levels = tuple(lv)
        if not (isinstance(self.samples, int) and self.samples >= 1):
            bad("samples", f"must be a positive integer, got {self.samples!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64):
            bad("seed", f"must be a nonnegative 64-bit integer, got {self.seed!r}")
        rg = list(self.radius_grid)
        if not rg or any(not isinstance(x, (int, float)) or not x > 0 for x in rg):
            bad("radius_grid", f"must be positive numbers, got {self.radius_grid!r}")
        self.radius_grid = tuple(float(x) for x in rg)
        if self.stab == "bh" and self.k != 1:
            bad("stab", "bh is only available for k=1")
        if self.uses_lps and self.mesh is None and self.n % 2:
            bad("n", "lps needs an even n (macro patches come from one refinement of n/2)")
        return self

    @property
    def uses_lps(self) -> bool:
        return "lps" in (self.stab, self.vstab)

    @property
    def stabilization(self) -> StabilizationConfig:
        return StabilizationConfig(self.stab, self.vstab, self.delta0_p, self.delta0_v)

    def describe(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("timestamp")
        d["levels"] = list(self.levels)
        d["radius_grid"] = list(self.radius_grid)
        return d


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"subcommand"}


def _csv_ints(text: str):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabfem", description="Stabilized equal-order Stokes/Navier-Stokes solver and lab")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON file with default values; flags override it")
    parser.add_argument("--problem", choices=PROBLEMS)
    parser.add_argument("--mu", type=float)
    grid = parser.add_mutually_exclusive_group()
    grid.add_argument("--n", type=int)
    grid.add_argument("--mesh")
    parser.add_argument("--k", type=int)
    parser.add_argument("--stab", choices=PRESSURE_KINDS)
    parser.add_argument("--vstab", choices=VELOCITY_KINDS)
    parser.add_argument("--delta0-p", dest="delta0_p", type=float)
    parser.add_argument("--delta0-v", dest="delta0_v", type=float)
    parser.add_argument("--case", choices=sorted(CASES))
    parser.add_argument("--levels", type=_csv_ints)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--radius-grid", dest="radius_grid", type=_csv_floats)
    parser.add_argument("--out")
    parser.add_argument("--no-timestamp", dest="timestamp", action="store_false", default=None)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(data) - CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(data)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.n is not None:
        values.pop("mesh", None)
    elif args.mesh is not None:
        values.pop("n", None)
    for key in ("levels", "radius_grid"):
        if key in values and not isinstance(values[key], (list, tuple)):
            raise ConfigError(f"invalid {key}: expected a list")
    return RunConfig(subcommand=args.subcommand, **values).validate()


def build_mesh(cfg: RunConfig, n: Optional[int] = None):
    if cfg.mesh is not None and n is None:
        try:
            with open(cfg.mesh) as fh:
                mesh = parse_mesh(fh)
        except OSError as exc:
            raise ConfigError(f"invalid mesh: {exc}") from None
        return refine_uniform(mesh) if cfg.uses_lps else mesh
    return build_unit_square_mesh(cfg.n if n is None else n, with_macro=cfg.uses_lps)


def _problem_spec(cfg: RunConfig, mesh) -> ProblemSpec:
    """ProblemSpec for solve/signcheck: manufactured data when a case applies, else the cavity."""
    stab = cfg.stabilization
    problem = cfg.problem
    if cfg.case is not None:
        case = manufactured_solution(cfg.case)
        if problem is not None and problem != case.problem and not (problem == "oseen" and case.problem == "nse"):
            raise ConfigError(f"invalid problem: case {case.id} is a {case.problem} case, got {problem!r}")
        if problem != "oseen":
            return case.problem_spec(cfg.mu, stab)
    problem = problem or "stokes"
    if problem == "gstokes":
        return CASES["gstokes_div"].problem_spec(cfg.mu, stab)
    if problem == "oseen":
        V, Q = build_spaces(mesh, cfg.k)
        blocks = assemble_stokes_blocks(V, Q, cfg.mu)
        adv = make_solenoidal(blocks, V.interpolate(CASES["nse_trig"].velocity))
        return ProblemSpec("oseen", cfg.mu, force=CASES["nse_trig"].force(cfg.mu), advection=adv,
                           stabilization=stab)
    spec = lid_driven_cavity(cfg.mu, stab)
    return dataclasses.replace(spec, problem=problem) if problem != "nse" else spec


def _lab_spec(cfg: RunConfig, mesh) -> ProblemSpec:
    """Homogeneous-data problem for the sign-condition check (nse_trig by default)."""
    if cfg.problem not in (None, "nse", "oseen"):
        raise ConfigError(f"invalid problem: signcheck needs nse or oseen, got {cfg.problem!r}")
    if cfg.case is not None and cfg.case != "nse_trig":
        raise ConfigError("invalid case: signcheck uses homogeneous nse data (nse_trig)")
    sub = dataclasses.replace(cfg, case="nse_trig", problem=cfg.problem or "nse")
    return _problem_spec(sub, mesh)


def _stamp(report: dict, cfg: RunConfig) -> dict:
    report = {"schema": SCHEMA, "command": cfg.subcommand, "config": cfg.describe(), **report}
    if cfg.timestamp:
        report["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return report


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_json_safe(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, cfg: RunConfig, stdout):
    if cfg.out:
        with open(cfg.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_solve(cfg: RunConfig):
    mesh = build_mesh(cfg)
    spec = _problem_spec(cfg, mesh)
    problem = discretize(spec, mesh, cfg.k)
    state, logbook = solve_nonlinear(spec, mesh, cfg.k, problem=problem)
    report = {
        "problem": spec.problem,
        "log": logbook.to_dict(timestamps=cfg.timestamp),
        "solution": {"n_nodes": problem.velocity.scalar.n_nodes, "nodes": problem.velocity.scalar.nodes,
                     "u": state.u, "p": state.p, "lam": state.lam},
    }
    return report, logbook.converged


def infsup_report(cfg: RunConfig, mesh=None) -> dict:
    mesh = mesh or build_mesh(cfg)
    V, Q = build_spaces(mesh, cfg.k)
    blocks = assemble_stokes_blocks(V, Q, cfg.mu)
    T = assemble_pressure_stab(V, Q, cfg.stabilization)
    gamma, c_T = lab.estimate_infsup(blocks, T, seed=cfg.seed)
    return {"gamma_stab": gamma, "c_T": c_T, "c_T_finite": math.isfinite(c_T),
            "passed": bool(gamma > 1e-8 and math.isfinite(c_T))}


def cmd_infsup(cfg: RunConfig):
    r = infsup_report(cfg)
    return r, r["passed"]


def coercivity_report(cfg: RunConfig, mesh=None):
    mesh = mesh or build_mesh(cfg)
    V, Q = build_spaces(mesh, cfg.k)
    blocks = assemble_stokes_blocks(V, Q, cfg.mu)
    T = assemble_pressure_stab(V, Q, cfg.stabilization)
    return lab.check_mapped_coercivity(blocks, T, sample_count=cfg.samples, seed=cfg.seed)


def cmd_coercivity(cfg: RunConfig):
    r = coercivity_report(cfg)
    return {"report": r.to_dict(), "passed": r.passed}, r.passed


def signcheck_report(cfg: RunConfig, mesh=None):
    mesh = mesh or build_mesh(cfg)
    problem = discretize(_lab_spec(cfg, mesh), mesh, cfg.k)
    return lab.check_sign_condition(problem, radius_grid=cfg.radius_grid, sample_count=cfg.samples, seed=cfg.seed)


def cmd_signcheck(cfg: RunConfig):
    r = signcheck_report(cfg)
    return {"report": r.to_dict(), "passed": r.passed}, r.passed


def cmd_convergence(cfg: RunConfig, stderr=None):
    if cfg.mesh is not None:
        raise ConfigError("invalid mesh: convergence runs on generated unit-square meshes (use --levels)")
    case = cfg.case or "stokes_trig"
    table = run_convergence(case, cfg.levels, k=cfg.k, mu=cfg.mu, stabilization=cfg.stabilization)
    if table.failure:
        print(f"convergence stopped: {table.failure}", file=stderr or sys.stderr)
    return table.to_csv(), table.failure is None


def _check(name, passed, **values):
    return {"name": name, "passed": bool(passed), **values}


def run_checks(cfg: RunConfig) -> list:
    """Property suite on one mesh; each entry has ``name``, ``passed`` and measured values."""
    rng = np.random.default_rng(cfg.seed)
    mesh = build_mesh(cfg)
    V, Q = build_spaces(mesh, cfg.k)
    blocks = assemble_stokes_blocks(V, Q, cfg.mu)
    T = assemble_pressure_stab(V, Q, cfg.stabilization)
    riesz = lab.RieszMap(blocks)
    out = []

    alpha = lab.estimate_alpha(blocks)
    out.append(_check("alpha_equals_mu", abs(alpha - cfg.mu) <= 1e-8 * cfg.mu, alpha=alpha))

    Td = T.toarray()
    eig_min = float(np.linalg.eigvalsh(0.5 * (Td + Td.T))[0])
    tnorm = float(np.abs(Td).sum(axis=1).max()) if Td.size else 0.0
    quad = [float(p @ Td @ p) / float(p @ p) for p in rng.standard_normal((cfg.samples, Q.dim))]
    out.append(_check("T_positive_semidefinite", eig_min >= -1e-10 * max(tnorm, 1.0) and min(quad) >= -1e-12,
                      eig_min=eig_min, min_quadratic=min(quad)))

    worst = 0.0
    stab_min = math.inf
    vs = cfg.stabilization
    for _ in range(cfg.samples):
        u = lab._random_velocity(rng, blocks, riesz, rng.uniform(0.1, 10.0))
        un = riesz.norm_v(u)
        worst = max(worst, abs(convection(V, u) @ u) / un ** 3)
        if vs.velocity_kind != "none":
            stab_min = min(stab_min, float(velocity_stab(V, u, vs) @ u))
    ok = worst <= 1e-10 and (vs.velocity_kind == "none" or stab_min >= -1e-12)
    out.append(_check("convection_skew", ok, max_scaled=worst, min_stab_pairing=stab_min))

    cn = lab.estimate_cN(blocks, None, cfg.samples, cfg.seed, riesz=riesz)
    by_amp = cn.max_by_amplitude()
    spread = float(by_amp.max() / by_amp.min() - 1.0)
    out.append(_check("cN_homogeneity", spread <= 0.05, c_N=cn.c_N, spread=spread))
    if vs.velocity_kind != "none":
        cs = lab.estimate_cN(blocks, vs, cfg.samples, cfg.seed, riesz=riesz)
        out.append(_check("cN_with_stabilization", math.isfinite(cs.c_N) and cs.c_N >= cn.c_N, c_N=cs.c_N))

    gamma, c_T = lab.estimate_infsup(blocks, T, seed=cfg.seed)
    gamma0, _ = lab.estimate_infsup(blocks, 0 * T, seed=cfg.seed)
    out.append(_check("infsup_stabilized", gamma > 1e-8 and math.isfinite(c_T) and gamma > gamma0,
                      gamma_stab=gamma, gamma_unstabilized=gamma0, c_T=c_T))

    cr = lab.check_mapped_coercivity(blocks, T, sample_count=cfg.samples, seed=cfg.seed)
    out.append(_check("mapped_coercivity", cr.passed, beta_min=cr.beta_min, tau=cr.tau,
                      p0_ratio_min=cr.p0_ratio_min))

    nse_cfg = dataclasses.replace(cfg, problem="nse", case="nse_trig")
    problem = discretize(_lab_spec(nse_cfg, mesh), mesh, cfg.k)
    sr = lab.check_sign_condition(problem, radius_grid=cfg.radius_grid, sample_count=cfg.samples, seed=cfg.seed)
    out.append(_check("sign_condition", sr.passed, min_scaled_margin=sr.min_scaled_margin, radius=sr.radius))

    try:
        state, logbook = solve_nonlinear(problem.spec, mesh, cfg.k, problem=problem)
    except SolverError as exc:
        out.append(_check("nse_solve", False, error=str(exc)))
        return out
    R = lab.residual_map(problem, state)
    rn = lab.state_norm(problem, R)
    energy = logbook.energy or {}
    out.append(_check("nse_solve", logbook.converged and rn <= 1e-8, iterations=logbook.iterations,
                      residual_map_norm=rn))
    out.append(_check("energy_bound", bool(energy.get("ok")), u_norm=energy.get("u_norm"),
                      bound=energy.get("bound")))
    return out


def cmd_check(cfg: RunConfig):
    checks = run_checks(cfg)
    passed = all(c["passed"] for c in checks)
    return {"checks": checks, "passed": passed}, passed


COMMANDS = {"solve": cmd_solve, "infsup": cmd_infsup, "coercivity": cmd_coercivity,
            "signcheck": cmd_signcheck, "convergence": cmd_convergence, "check": cmd_check}


def cli_main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        command = COMMANDS[cfg.subcommand]
        result, passed = command(cfg, stderr) if command is cmd_convergence else command(cfg)
    except (ConfigError, ConfigurationError, MeshError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=stderr)
        return 1
    text = result if isinstance(result, str) else dumps(_stamp(result, cfg))
    try:
        _emit(text, cfg, stdout)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=stderr)
        return 2
    return 0 if passed else 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
