"""Equal-order Lagrange spaces on triangles, quadrature and the patchwise L2 projection."""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import Mesh, MeshError

SUPPORTED_DEGREES = (1, 2)


class ConfigurationError(ValueError):
    """Requested operation is not available for this mesh/space configuration."""


def simplex_quadrature(degree: int):
    """Collapsed Gauss rule on the reference triangle, exact for total degree ``degree``.

    Returns barycentric points (nq, 3) and weights summing to 1, so that
    ``area * sum(w * f)`` integrates over a physical cell.
    """
    m = max(1, (degree + 2) // 2)
    s, wj = roots_jacobi(m, 1.0, 0.0)
    t, wl = np.polynomial.legendre.leggauss(m)
    a = 0.5 * (1.0 + s)
    b = 0.5 * (1.0 + t)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = A.ravel()
    y = ((1.0 - A) * B).ravel()
    w = np.outer(wj, wl).ravel() / 8.0
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, w * 2.0


def default_quadrature_degree(k: int) -> int:
    # exactness 2k+2 for P1; the P2 nonlinear terms need degree 7, so P2 gets 8
    return 4 if k == 1 else 8


def _lagrange_basis(k, bary):
    """Reference basis values (nq, nloc) and d/d(lambda) tables (nq, nloc, 3)."""
    nq = len(bary)
    l0, l1, l2 = bary.T
    lam = (l0, l1, l2)
    if k == 1:
        phi = bary.copy()
        dphi = np.broadcast_to(np.eye(3), (nq, 3, 3)).copy()
        return phi, dphi
    phi = np.empty((nq, 6))
    dphi = np.zeros((nq, 6, 3))
    for i in range(3):
        phi[:, i] = lam[i] * (2.0 * lam[i] - 1.0)
        dphi[:, i, i] = 4.0 * lam[i] - 1.0
    for e, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        phi[:, 3 + e] = 4.0 * lam[a] * lam[b]
        dphi[:, 3 + e, a] = 4.0 * lam[b]
        dphi[:, 3 + e, b] = 4.0 * lam[a]
    return phi, dphi


class ScalarSpace:
    """Continuous P_k Lagrange space on a mesh (no boundary conditions applied)."""

    def __init__(self, mesh: Mesh, k: int, quad_degree: int | None = None):
        if k not in SUPPORTED_DEGREES:
            raise ConfigurationError(f"unsupported polynomial degree k={k}; use 1 or 2")
        self.mesh = mesh
        self.k = k
        self.quad_degree = default_quadrature_degree(k) if quad_degree is None else quad_degree

        nv = mesh.n_vertices
        if k == 1:
            self.cell_dofs = np.asarray(mesh.cells)
            self.nodes = np.asarray(mesh.vertices)
        else:
            edges, cell_edges = mesh.edges()
            self.cell_dofs = np.hstack([mesh.cells, nv + cell_edges])
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.nodes = np.vstack([mesh.vertices, mids])
            self._edges = edges
        self.n_nodes = len(self.nodes)
        self.n_local = self.cell_dofs.shape[1]

        verts = mesh.vertices[mesh.cells]
        jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
        self.area = 0.5 * np.linalg.det(jac)
        jinv = np.linalg.inv(jac)
        grad_l12 = jinv  # rows are grad(lambda_1), grad(lambda_2)
        self.grad_lambda = np.concatenate([-grad_l12.sum(axis=1, keepdims=True), grad_l12], axis=1)

        self.quad_bary, self.quad_weights = simplex_quadrature(self.quad_degree)
        self.phi, self.grads, self.dx, self.qpoints = self.tabulate(self.quad_bary, self.quad_weights)

    def tabulate(self, bary, weights=None):
        """Basis values (nq, nloc), gradients (nc, nq, nloc, 2), measures (nc, nq), points (nc, nq, 2)."""
        phi, dphi = _lagrange_basis(self.k, bary)
        grads = np.einsum("qjl,kld->kqjd", dphi, self.grad_lambda)
        verts = self.mesh.vertices[self.mesh.cells]
        points = np.einsum("ql,kld->kqd", bary, verts)
        dx = None if weights is None else self.area[:, None] * weights[None, :]
        return phi, grads, dx, points

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Nodes lying on a marker-0 (Dirichlet) boundary edge."""
        mesh = self.mesh
        be = mesh.boundary_edges[mesh.boundary_markers == 0]
        nodes = set(be.ravel().tolist())
        if self.k == 2 and len(be):
            lookup = {tuple(e): i for i, e in enumerate(self._edges)}
            nv = mesh.n_vertices
            for a, b in be:
                idx = lookup.get((min(a, b), max(a, b)))
                if idx is None:
                    raise MeshError(f"boundary edge ({a}, {b}) is not an edge of any cell")
                nodes.add(nv + idx)
        return np.array(sorted(nodes), dtype=int)

    @cached_property
    def patch_projection(self) -> "PatchProjection":
        return PatchProjection(self)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def values(self, coef, phi=None):
        """Field values at the quadrature points, shape (nc, nq)."""
        phi = self.phi if phi is None else phi
        return np.asarray(coef)[self.cell_dofs] @ phi.T

    def gradients(self, coef, grads=None):
        """Field gradients at the quadrature points, shape (nc, nq, 2)."""
        grads = self.grads if grads is None else grads
        return np.einsum("kj,kqjd->kqd", np.asarray(coef)[self.cell_dofs], grads)

    def interpolate(self, fun) -> np.ndarray:
        """Nodal interpolant coefficients of ``fun(x, y)``."""
        return np.asarray(fun(self.nodes[:, 0], self.nodes[:, 1]), dtype=float)

    def scatter(self, local) -> np.ndarray:
        """Sum cellwise contributions (nc, nloc) into a global vector."""
        return np.bincount(self.cell_dofs.ravel(), weights=np.ravel(local), minlength=self.n_nodes)

    def matrix(self, local, row_dofs=None, col_dofs=None, shape=None) -> sp.csr_matrix:
        """Assemble cellwise matrices (nc, nr, ncol) into CSR; duplicates are summed."""
        row_dofs = self.cell_dofs if row_dofs is None else row_dofs
        col_dofs = self.cell_dofs if col_dofs is None else col_dofs
        nr, nc_ = row_dofs.shape[1], col_dofs.shape[1]
        rows = np.repeat(row_dofs, nc_, axis=1).ravel()
        cols = np.tile(col_dofs, (1, nr)).ravel()
        if shape is None:
            shape = (self.n_nodes, self.n_nodes)
        mat = sp.coo_matrix((np.ravel(local), (rows, cols)), shape=shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    def load(self, fun) -> np.ndarray:
        """Vector of integrals of ``fun(x, y) * phi_i``."""
        vals = fun(self.qpoints[..., 0], self.qpoints[..., 1])
        local = np.einsum("kq,qj->kj", self.dx * vals, self.phi)
        return self.scatter(local)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        local = np.einsum("kq,kqid,kqjd->kij", self.dx, self.grads, self.grads)
        return self.matrix(local)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        local = np.einsum("kq,qi,qj->kij", self.dx, self.phi, self.phi)
        return self.matrix(local)


class VelocitySpace:
    """Vector P_k space with blocked layout ``[u_x; u_y]`` and zero trace on marker-0 edges."""

    def __init__(self, scalar: ScalarSpace):
        self.scalar = scalar
        self.k = scalar.k
        self.mesh = scalar.mesh
        n = scalar.n_nodes
        self.dim = 2 * n
        self.cell_dofs = np.hstack([scalar.cell_dofs, scalar.cell_dofs + n])
        self.boundary_dofs = np.concatenate([scalar.boundary_nodes, scalar.boundary_nodes + n])
        self.interior_dofs = np.concatenate([scalar.interior_nodes, scalar.interior_nodes + n])

    def split(self, u):
        n = self.scalar.n_nodes
        return u[:n], u[n:]

    def values(self, u, phi=None):
        """(nc, nq, 2) velocity at quadrature points."""
        ux, uy = self.split(np.asarray(u))
        return np.stack([self.scalar.values(ux, phi), self.scalar.values(uy, phi)], axis=-1)

    def gradients(self, u, grads=None):
        """(nc, nq, 2, 2) with ``G[..., c, d] = d u_c / d x_d``."""
        ux, uy = self.split(np.asarray(u))
        return np.stack([self.scalar.gradients(ux, grads), self.scalar.gradients(uy, grads)], axis=-2)

    def interpolate(self, fun) -> np.ndarray:
        ux, uy = fun(self.scalar.nodes[:, 0], self.scalar.nodes[:, 1])
        return np.concatenate([np.broadcast_to(ux, self.scalar.n_nodes),
                               np.broadcast_to(uy, self.scalar.n_nodes)]).astype(float)

    def load(self, fun) -> np.ndarray:
        """Load vector of a vector-valued ``fun(x, y) -> (fx, fy)``."""
        s = self.scalar
        fx, fy = fun(s.qpoints[..., 0], s.qpoints[..., 1])
        parts = [s.scatter(np.einsum("kq,qj->kj", s.dx * np.broadcast_to(f, s.dx.shape), s.phi))
                 for f in (fx, fy)]
        return np.concatenate(parts)

    def extend(self, u_interior, boundary_values=None) -> np.ndarray:
        """Full coefficient vector from interior values (boundary from ``boundary_values`` or 0)."""
        u = np.zeros(self.dim) if boundary_values is None else np.array(boundary_values, dtype=float)
        u[self.interior_dofs] = u_interior
        if boundary_values is None:
            u[self.boundary_dofs] = 0.0
        return u

    def matrix(self, local) -> sp.csr_matrix:
        return self.scalar.matrix(local, self.cell_dofs, self.cell_dofs, (self.dim, self.dim))

    def scatter(self, local) -> np.ndarray:
        return np.bincount(self.cell_dofs.ravel(), weights=np.ravel(local), minlength=self.dim)


class PressureSpace:
    """Scalar P_k pressure space; the zero-mean constraint is left to the solver."""

    def __init__(self, scalar: ScalarSpace):
        self.scalar = scalar
        self.k = scalar.k
        self.mesh = scalar.mesh
        self.dim = scalar.n_nodes
        self.cell_dofs = scalar.cell_dofs
        self.mean_vector = scalar.scatter(np.einsum("kq,qj->kj", scalar.dx, scalar.phi))

    @property
    def domain_area(self) -> float:
        return float(self.mean_vector.sum())

    def remove_mean(self, p) -> np.ndarray:
        return p - (self.mean_vector @ p) / self.domain_area

    def interpolate(self, fun) -> np.ndarray:
        return self.scalar.interpolate(fun)


def build_spaces(mesh: Mesh, k: int):
    """Equal-order pair (V_h, Q_h) of degree ``k`` sharing one scalar space."""
    scalar = ScalarSpace(mesh, k)
    return VelocitySpace(scalar), PressureSpace(scalar)


class PatchProjection:
    """L2 projection onto patchwise polynomials of degree k-1, discontinuous across macro patches.

    Works on fields sampled at the quadrature points of a ScalarSpace; trailing
    axes (vector/tensor components) are projected independently.
    """

    def __init__(self, scalar: ScalarSpace):
        mesh = scalar.mesh
        if not mesh.has_patches:
            raise ConfigurationError("patch projection needs a mesh with a macro-patch hierarchy "
                                     "(build with with_macro=True or refine_uniform)")
        self.scalar = scalar
        self.parent = np.asarray(mesh.parent_patch)
        self.n_patches = mesh.n_patches
        self.degree = scalar.k - 1

        area = scalar.area
        centroid = mesh.vertices[mesh.cells].mean(axis=1)
        patch_area = np.bincount(self.parent, weights=area, minlength=self.n_patches)
        center = np.stack([np.bincount(self.parent, weights=area * centroid[:, d],
                                       minlength=self.n_patches) for d in range(2)], axis=1)
        center /= patch_area[:, None]
        scale = np.asarray(mesh.patch_h)

        q = scalar.qpoints
        if self.degree == 0:
            basis = np.ones(q.shape[:2] + (1,))
        else:
            rel = (q - center[self.parent][:, None, :]) / scale[self.parent][:, None, None]
            basis = np.concatenate([np.ones(q.shape[:2] + (1,)), rel], axis=-1)
        self.basis = basis
        self.n_basis = basis.shape[-1]

        local_gram = np.einsum("kq,kqa,kqb->kab", scalar.dx, basis, basis)
        gram = np.zeros((self.n_patches, self.n_basis, self.n_basis))
        np.add.at(gram, self.parent, local_gram)
        self.gram = gram
        self.gram_inv = np.linalg.inv(gram)

    def moments(self, w):
        """Patch moments ``int_P w * d_a``, shape (n_patches, n_basis, *trailing)."""
        w = np.asarray(w)
        trailing = w.shape[2:]
        flat = w.reshape(w.shape[:2] + (-1,))
        local = np.einsum("kq,kqa,kqt->kat", self.scalar.dx, self.basis, flat)
        mom = np.zeros((self.n_patches, self.n_basis, flat.shape[-1]))
        np.add.at(mom, self.parent, local)
        return mom.reshape((self.n_patches, self.n_basis) + trailing)

    def coefficients(self, w):
        mom = self.moments(w)
        flat = mom.reshape(mom.shape[:2] + (-1,))
        coef = np.einsum("pab,pbt->pat", self.gram_inv, flat)
        return coef.reshape(mom.shape)

    def project(self, w) -> np.ndarray:
        """pi_h(w) evaluated at the quadrature points (same shape as ``w``)."""
        w = np.asarray(w)
        coef = self.coefficients(w)
        flat = coef.reshape(coef.shape[:2] + (-1,))
        out = np.einsum("kqa,kat->kqt", self.basis, flat[self.parent])
        return out.reshape(w.shape)

    def fluctuation_matrix(self, weights) -> sp.csr_matrix:
        """Scalar matrix of ``sum_P weights[P] int_P (grad p - pi grad p).(grad q - pi grad q)``."""
        s = self.scalar
        weights = np.asarray(weights, dtype=float)
        wcell = weights[self.parent]
        stiff = s.matrix(np.einsum("k,kq,kqid,kqjd->kij", wcell, s.dx, s.grads, s.grads))

        # moment matrix: rows (patch, basis, component), cols scalar dofs
        nb = self.n_basis
        local = np.einsum("kq,kqa,kqjd->kadj", s.dx, self.basis, s.grads)
        row_ids = ((self.parent[:, None, None] * nb + np.arange(nb)[None, :, None]) * 2
                   + np.arange(2)[None, None, :]).reshape(len(self.parent), -1)
        n_rows = self.n_patches * nb * 2
        rows = np.repeat(row_ids, s.n_local, axis=1).ravel()
        cols = np.tile(s.cell_dofs, (1, nb * 2)).ravel()
        mom = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_rows, s.n_nodes)).tocsr()

        blocks = weights[:, None, None] * self.gram_inv
        pa, ia, ib = np.meshgrid(np.arange(self.n_patches), np.arange(nb), np.arange(nb), indexing="ij")
        wrows, wcols, wdata = [], [], []
        for c in range(2):
            wrows.append(((pa * nb + ia) * 2 + c).ravel())
            wcols.append(((pa * nb + ib) * 2 + c).ravel())
            wdata.append(blocks.ravel())
        wmat = sp.coo_matrix((np.concatenate(wdata), (np.concatenate(wrows), np.concatenate(wcols))),
                             shape=(n_rows, n_rows)).tocsr()
        result = (stiff - mom.T @ wmat @ mom).tocsr()
        result.sort_indices()
        return result


def project_gradient_to_patches(space: PatchProjection, w) -> np.ndarray:
    """Patchwise L2 projection of a field given at quadrature points."""
    return space.project(w)


def nodal_interpolant_value(p, q, cell: int, space: ScalarSpace) -> float:
    """int_K I_h^1(p q) for P1 fields: (area/3) * sum of vertex products."""
    if space.k != 1:
        raise ConfigurationError("the nodal interpolant I_h^1 of p*q is only defined for k=1")
    dofs = space.cell_dofs[cell]
    return float(space.area[cell] / 3.0 * np.dot(np.asarray(p)[dofs], np.asarray(q)[dofs]))
