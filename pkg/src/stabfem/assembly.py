"""Saddle-point blocks and the skew-symmetrized convection operator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fe_space import PressureSpace, VelocitySpace


@dataclass(frozen=True, eq=False)
class OperatorBlocks:
    """Assembled blocks of ``[L, -B^T; B, T]`` on full (unconstrained) DOF sets.

    ``M_V`` is the Gram matrix of the velocity norm (H1 seminorm), so ``L = mu * M_V``.
    """

    velocity: VelocitySpace
    pressure: PressureSpace
    L: sp.csr_matrix
    B: sp.csr_matrix
    M_V: sp.csr_matrix
    M_Q: sp.csr_matrix
    mu: float

    @property
    def interior(self) -> np.ndarray:
        return self.velocity.interior_dofs

    def L_ii(self):
        i = self.interior
        return self.L[i][:, i]

    def B_i(self):
        return self.B[:, self.interior]

    def M_V_ii(self):
        i = self.interior
        return self.M_V[i][:, i]


@dataclass
class SaddleState:
    """Discrete state x = (u, p) with the zero-mean multiplier ``lam``; ``u`` is the full vector."""

    u: np.ndarray
    p: np.ndarray
    lam: float = 0.0


def assemble_stokes_blocks(velocity: VelocitySpace, pressure: PressureSpace, mu: float) -> OperatorBlocks:
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    s = velocity.scalar
    K = s.stiffness
    M_V = sp.block_diag([K, K], format="csr")
    M_V.sort_indices()
    L = (mu * M_V).tocsr()

    # B[i, (c, j)] = int q_i d_c phi_j
    local = np.einsum("kq,qi,kqjc->kicj", s.dx, s.phi, s.grads).reshape(s.mesh.n_cells, s.n_local, -1)
    B = s.matrix(local, s.cell_dofs, velocity.cell_dofs, (pressure.dim, velocity.dim))
    return OperatorBlocks(velocity, pressure, L, B, M_V, s.mass, float(mu))


def _check_size(velocity, *vectors):
    for v in vectors:
        if v is not None and np.shape(v) != (velocity.dim,):
            raise ValueError(f"velocity vector has shape {np.shape(v)}, expected ({velocity.dim},)")


def convection(velocity: VelocitySpace, u, mode: str = "residual", advection=None):
    """Weak form of ``(b.grad)u + 1/2 (div b) u`` tested with every velocity basis function.

    With ``advection=None`` the advecting field is ``u`` itself (Navier-Stokes);
    otherwise it is the given frozen field (Oseen) and the operator is linear in ``u``.
    ``mode='jacobian'`` returns the exact derivative with respect to ``u``.
    """
    _check_size(velocity, u, advection)
    s = velocity.scalar
    nloc = s.n_local
    nc = s.mesh.n_cells
    U = velocity.values(u)
    G = velocity.gradients(u)
    if advection is None:
        Bf, divb = U, np.trace(G, axis1=-2, axis2=-1)
    else:
        Bf = velocity.values(advection)
        divb = np.trace(velocity.gradients(advection), axis1=-2, axis2=-1)
    dx, phi, grads = s.dx, s.phi, s.grads

    if mode == "residual":
        integrand = np.einsum("kqd,kqcd->kqc", Bf, G) + 0.5 * divb[..., None] * U
        local = np.einsum("kq,kqc,qi->kci", dx, integrand, phi).reshape(nc, 2 * nloc)
        return velocity.scatter(local)
    if mode != "jacobian":
        raise ValueError(f"mode must be 'residual' or 'jacobian', got {mode!r}")

    transport = np.einsum("kq,qi,kqd,kqjd->kij", dx, phi, Bf, grads)
    transport += 0.5 * np.einsum("kq,qi,qj,kq->kij", dx, phi, phi, divb)
    local = np.zeros((nc, 2, nloc, 2, nloc))
    local[:, 0, :, 0, :] = transport
    local[:, 1, :, 1, :] = transport
    if advection is None:
        local += np.einsum("kq,qi,qj,kqce->kciej", dx, phi, phi, G)
        local += 0.5 * np.einsum("kq,qi,kqc,kqje->kciej", dx, phi, U, grads)
    return velocity.matrix(local.reshape(nc, 2 * nloc, 2 * nloc))
