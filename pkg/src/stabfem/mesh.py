"""Conforming triangular meshes with an optional two-level macro-patch hierarchy."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input or construction request."""


class MeshFormatError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _signed_areas(vertices, cells):
    a, b, c = (vertices[cells[:, i]] for i in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _longest_edges(vertices, cells):
    a, b, c = (vertices[cells[:, i]] for i in range(3))
    lengths = np.stack([np.hypot(*(b - a).T), np.hypot(*(c - b).T), np.hypot(*(a - c).T)])
    return lengths.max(axis=0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation of a polygonal domain.

    ``parent_patch[K]`` is the index of the coarse cell (macro patch) that
    contains fine cell ``K``; ``patch_h`` holds the coarse-cell diameters.
    Both are ``None`` for meshes without a hierarchy.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    parent_patch: Optional[np.ndarray] = None
    patch_h: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("vertices", "cells", "boundary_edges", "boundary_markers",
                     "parent_patch", "patch_h"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.cells)

    @property
    def h(self) -> np.ndarray:
        """Cell diameters (longest edge)."""
        return _longest_edges(self.vertices, self.cells)

    @property
    def has_patches(self) -> bool:
        return self.parent_patch is not None

    @property
    def n_patches(self) -> int:
        return 0 if self.parent_patch is None else len(self.patch_h)

    def patch_children(self) -> np.ndarray:
        """(n_patches, 4) fine-cell indices of every macro patch."""
        if self.parent_patch is None:
            raise MeshError("mesh has no macro-patch hierarchy")
        order = np.argsort(self.parent_patch, kind="stable")
        return order.reshape(self.n_patches, -1)

    def edges(self):
        """Unique edges as sorted vertex pairs, plus the (n_cells, 3) cell->edge map.

        Local edge ``e`` of a cell joins local vertices ``e`` and ``(e + 1) % 3``.
        """
        c = self.cells
        pairs = np.stack([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]], axis=1).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    def validate(self):
        """Raise MeshError if any structural invariant is violated."""
        nv = self.n_vertices
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= nv):
            raise MeshError("cell vertex index out of range")
        if np.any(self.areas <= 0.0):
            raise MeshError("cells must have strictly positive signed area")
        edges, inverse = self.edges()
        counts = np.bincount(inverse.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: edge shared by more than two cells")
        if self.parent_patch is not None:
            per_patch = np.bincount(self.parent_patch, minlength=self.n_patches)
            if np.any(per_patch != 4):
                raise MeshError("every macro patch must have exactly 4 children")


def build_unit_square_mesh(n: int, with_macro: bool = False) -> Mesh:
    """Uniform right-triangle mesh of [0,1]^2, every square cut along the (1,1) diagonal.

    With ``with_macro`` the mesh is obtained by one uniform refinement of the
    ``n/2`` mesh, so every fine cell knows its macro patch.
    """
    if n < 1:
        raise MeshError("n must be a positive integer")
    if with_macro:
        if n % 2:
            raise MeshError("with_macro requires an even n")
        return refine_uniform(build_unit_square_mesh(n // 2))

    t = np.arange(n + 1) / n
    x, y = np.meshgrid(t, t)
    vertices = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)

    k = np.arange(n)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([k * (n + 1) + n, (k + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + k + 1, n * (n + 1) + k])
    left = np.column_stack([(k + 1) * (n + 1), k * (n + 1)])
    boundary = np.concatenate([bottom, right, top, left])
    return Mesh(vertices, cells, boundary, np.zeros(len(boundary), dtype=int))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: each cell splits into four similar children via edge midpoints."""
    edges, cell_edges = mesh.edges()
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    c = mesh.cells
    m01, m12, m20 = (nv + cell_edges[:, e] for e in range(3))
    children = np.stack([
        np.column_stack([c[:, 0], m01, m20]),
        np.column_stack([m01, c[:, 1], m12]),
        np.column_stack([m20, m12, c[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1)
    cells = children.reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_cells), 4)

    be = mesh.boundary_edges
    lookup = {tuple(e): i for i, e in enumerate(edges)}
    bmid = nv + np.array([lookup[tuple(sorted(e))] for e in be], dtype=int).reshape(-1)
    bedges = np.stack([np.column_stack([be[:, 0], bmid]), np.column_stack([bmid, be[:, 1]])],
                      axis=1).reshape(-1, 2)
    bmarkers = np.repeat(mesh.boundary_markers, 2)
    return Mesh(vertices, cells, bedges, bmarkers, parent_patch=parent, patch_h=mesh.h)


def parse_mesh(text) -> Mesh:
    """Read the line-oriented ASCII format (``NV NC NB`` header, vertices, cells, boundary edges).

    ``text`` may be a string or a text stream. Clockwise cells are reoriented;
    every other defect raises :class:`MeshFormatError` with the line number.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    if not lines:
        raise MeshFormatError(1, "empty mesh file")

    def ints(lineno, tokens, count):
        if len(tokens) != count:
            raise MeshFormatError(lineno, f"expected {count} integers, got {len(tokens)} fields")
        try:
            return [int(t) for t in tokens]
        except ValueError as exc:
            raise MeshFormatError(lineno, f"invalid integer: {exc}") from None

    lineno, header = lines[0]
    nv, nc, nb = ints(lineno, header, 3)
    if nv < 3 or nc < 1 or nb < 0:
        raise MeshFormatError(lineno, "counts must satisfy NV >= 3, NC >= 1, NB >= 0")
    body = lines[1:]
    if len(body) != nv + nc + nb:
        last = body[-1][0] if body else lineno
        raise MeshFormatError(last, f"expected {nv + nc + nb} data lines after header, found {len(body)}")

    vertices = np.empty((nv, 2))
    for i, (ln, tok) in enumerate(body[:nv]):
        if len(tok) != 2:
            raise MeshFormatError(ln, "vertex line needs 2 coordinates")
        try:
            vertices[i] = [float(t) for t in tok]
        except ValueError as exc:
            raise MeshFormatError(ln, f"invalid coordinate: {exc}") from None
        if not np.all(np.isfinite(vertices[i])):
            raise MeshFormatError(ln, "non-finite coordinate")

    cells = np.empty((nc, 3), dtype=int)
    for i, (ln, tok) in enumerate(body[nv:nv + nc]):
        tri = ints(ln, tok, 3)
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshFormatError(ln, f"vertex index out of range [0, {nv})")
        if len(set(tri)) < 3:
            raise MeshFormatError(ln, "degenerate cell (repeated vertex)")
        area = _signed_areas(vertices, np.array([tri]))[0]
        if area == 0.0:
            raise MeshFormatError(ln, "zero-area cell")
        if area < 0.0:
            tri = [tri[0], tri[2], tri[1]]
        cells[i] = tri

    bedges = np.empty((nb, 2), dtype=int)
    markers = np.empty(nb, dtype=int)
    for i, (ln, tok) in enumerate(body[nv + nc:]):
        a, b, marker = ints(ln, tok, 3)
        if min(a, b) < 0 or max(a, b) >= nv:
            raise MeshFormatError(ln, f"vertex index out of range [0, {nv})")
        bedges[i] = a, b
        markers[i] = marker

    mesh = Mesh(vertices, cells, bedges, markers)
    try:
        mesh.validate()
    except MeshError as exc:
        raise MeshFormatError(body[nv][0], str(exc)) from None
    return mesh


def format_mesh(mesh: Mesh) -> str:
    """Serialize to the ASCII format; coordinates use ``repr`` so parsing is bit-exact."""
    out = io.StringIO()
    out.write(f"{mesh.n_vertices} {mesh.n_cells} {len(mesh.boundary_edges)}\n")
    for x, y in mesh.vertices:
        out.write(f"{float(x)!r} {float(y)!r}\n")
    for a, b, c in mesh.cells:
        out.write(f"{a} {b} {c}\n")
    for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers):
        out.write(f"{a} {b} {m}\n")
    return out.getvalue()


def canonical_form(mesh: Mesh):
    """Vertex-order independent description: sorted coordinates and sorted cell coordinate triples."""
    key = np.round(mesh.vertices, 12)  # midpoints of refined meshes differ from direct ones by round-off
    order = np.lexsort((key[:, 1], key[:, 0]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = mesh.vertices[order]
    cells = np.sort(rank[mesh.cells], axis=1)
    cells = cells[np.lexsort(cells.T[::-1])]
    bedges = np.sort(rank[mesh.boundary_edges], axis=1)
    bedges = bedges[np.lexsort(bedges.T[::-1])]
    return verts, cells, bedges
