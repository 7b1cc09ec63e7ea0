"""Pressure stabilization T and nonlinear velocity stabilization S."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fe_space import ConfigurationError, PressureSpace, VelocitySpace

PRESSURE_KINDS = ("none", "bp", "bh", "lps")
VELOCITY_KINDS = ("none", "lps", "supg")


@dataclass(frozen=True)
class StabilizationConfig:
    pressure_kind: str = "bp"
    velocity_kind: str = "none"
    delta0_p: float = 0.1
    delta0_v: float = 0.3
    clamp_eps: float = 1e-8

    def __post_init__(self):
        if self.pressure_kind not in PRESSURE_KINDS:
            raise ConfigurationError(f"unknown pressure stabilization {self.pressure_kind!r}")
        if self.velocity_kind not in VELOCITY_KINDS:
            raise ConfigurationError(f"unknown velocity stabilization {self.velocity_kind!r}")
        if self.delta0_p < 0 or self.delta0_v < 0:
            raise ConfigurationError("delta0_p and delta0_v must be nonnegative")
        if self.velocity_kind == "supg" and not self.clamp_eps > 0:
            raise ConfigurationError("clamp_eps must be positive for supg")

    def check(self, k: int, mesh) -> None:
        """Raise ConfigurationError if the config is not usable for degree ``k`` on ``mesh``."""
        if self.pressure_kind == "bh" and k != 1:
            raise ConfigurationError("Becker-Hansbo stabilization (bh) is defined for k=1 only")
        if "lps" in (self.pressure_kind, self.velocity_kind) and not mesh.has_patches:
            raise ConfigurationError("lps needs a macro-patch hierarchy (mesh built with with_macro)")


def assemble_pressure_stab(velocity: VelocitySpace, pressure: PressureSpace,
                           config: StabilizationConfig) -> sp.csr_matrix:
    """Symmetric positive semidefinite pressure stabilization matrix."""
    s = pressure.scalar
    mesh = s.mesh
    config.check(s.k, mesh)
    kind = config.pressure_kind
    if kind == "none":
        return sp.csr_matrix((pressure.dim, pressure.dim))
    if kind == "bp":
        weight = config.delta0_p * mesh.h ** 2
        local = np.einsum("k,kq,kqid,kqjd->kij", weight, s.dx, s.grads, s.grads)
        return s.matrix(local)
    if kind == "bh":
        # int_K I_h(p q) - p q; the interpolant part lumps to area/3 per vertex
        mass = np.einsum("kq,qi,qj->kij", s.dx, s.phi, s.phi)
        lumped = (s.area / 3.0)[:, None, None] * np.eye(3)[None]
        return s.matrix(lumped - mass)
    return s.patch_projection.fluctuation_matrix(config.delta0_p * np.asarray(mesh.patch_h) ** 2)


def lps_delta(velocity: VelocitySpace, u, config: StabilizationConfig) -> np.ndarray:
    """Per-patch weight delta0_v * min(h_P, ||grad u||_{L2(P)})."""
    s = velocity.scalar
    mesh = s.mesh
    G = velocity.gradients(u)
    cell_sq = np.einsum("kq,kqcd,kqcd->k", s.dx, G, G)
    patch_norm = np.sqrt(np.bincount(mesh.parent_patch, weights=cell_sq, minlength=mesh.n_patches))
    return config.delta0_v * np.minimum(np.asarray(mesh.patch_h), patch_norm)


def cell_sup_norm(velocity: VelocitySpace, u) -> np.ndarray:
    """max |u| over quadrature points and vertices of every cell."""
    s = velocity.scalar
    quad = np.linalg.norm(velocity.values(u), axis=-1).max(axis=1)
    ux, uy = velocity.split(np.asarray(u))
    vdofs = s.cell_dofs[:, :3]
    vert = np.hypot(ux[vdofs], uy[vdofs]).max(axis=1)
    return np.maximum(quad, vert)


def supg_delta(velocity: VelocitySpace, u, config: StabilizationConfig) -> np.ndarray:
    """Per-cell weight delta0_v * h_K / max(||u||_{Linf(K)}, clamp_eps)."""
    h = velocity.mesh.h
    return config.delta0_v * h / np.maximum(cell_sup_norm(velocity, u), config.clamp_eps)


def velocity_stab(velocity: VelocitySpace, u, config: StabilizationConfig, mode: str = "residual"):
    """Residual vector or frozen-weight Jacobian of the velocity stabilization S(u).

    The weights delta(u) are evaluated at ``u`` and held fixed in the Jacobian.
    """
    if mode not in ("residual", "jacobian"):
        raise ValueError(f"mode must be 'residual' or 'jacobian', got {mode!r}")
    u = np.asarray(u, dtype=float)
    if u.shape != (velocity.dim,):
        raise ValueError(f"velocity vector has shape {u.shape}, expected ({velocity.dim},)")
    kind = config.velocity_kind
    s = velocity.scalar
    config.check(s.k, s.mesh)
    if kind == "none":
        return np.zeros(velocity.dim) if mode == "residual" else sp.csr_matrix((velocity.dim,) * 2)

    if kind == "lps":
        A = s.patch_projection.fluctuation_matrix(lps_delta(velocity, u, config))
        A = sp.block_diag([A, A], format="csr")
        return A @ u if mode == "residual" else A

    nloc, nc = s.n_local, s.mesh.n_cells
    delta = supg_delta(velocity, u, config)
    wdx = delta[:, None] * s.dx
    U = velocity.values(u)
    G = velocity.gradients(u)
    conv = np.einsum("kqd,kqcd->kqc", U, G)
    stream = np.einsum("kqd,kqjd->kqj", U, s.grads)  # u . grad(phi_j)
    if mode == "residual":
        local = np.einsum("kq,kqc,kqi->kci", wdx, conv, stream).reshape(nc, 2 * nloc)
        return velocity.scatter(local)

    local = np.zeros((nc, 2, nloc, 2, nloc))
    ss = np.einsum("kq,kqi,kqj->kij", wdx, stream, stream)
    local[:, 0, :, 0, :] = ss
    local[:, 1, :, 1, :] = ss
    local += np.einsum("kq,kqi,qj,kqce->kciej", wdx, stream, s.phi, G)
    local += np.einsum("kq,kqc,qj,kqie->kciej", wdx, conv, s.phi, s.grads)
    return velocity.matrix(local.reshape(nc, 2 * nloc, 2 * nloc))
