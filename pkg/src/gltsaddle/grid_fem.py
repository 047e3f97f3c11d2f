"""P1 finite elements on the uniform right-triangulated unit square.

Interior nodes are numbered lexicographically with the x index running
fastest, and every square cell is split along its (+1, +1) diagonal.  With
this convention the mass and stiffness matrices are exactly bi-level
Toeplitz, see :func:`gltsaddle.toeplitz.predefined_symbols`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Reference P1 mass matrix on a triangle, to be multiplied by area / 12.
_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


@dataclass(frozen=True)
class UniformMesh:
    """Uniform triangulation of ``[0, 1]^2`` with ``n`` interior nodes per side."""

    n: int

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def n_dofs(self) -> int:
        return self.n * self.n

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates ``(x1, x2)`` of the interior nodes, x fastest."""
        t = np.arange(1, self.n + 1) * self.h
        x2, x1 = np.meshgrid(t, t, indexing="ij")
        return x1.ravel(), x2.ravel()

    def triangles(self) -> np.ndarray:
        """Vertex grid indices ``(i, j)`` of every triangle, shape ``(2(n+1)^2, 3, 2)``.

        Indices run over ``0..n+1`` so boundary vertices are included; the
        vertex order is counter-clockwise.
        """
        c = np.arange(self.n + 1)
        ci, cj = np.meshgrid(c, c, indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        lower = np.stack(
            [np.stack([ci, cj], -1), np.stack([ci + 1, cj], -1), np.stack([ci + 1, cj + 1], -1)],
            axis=1,
        )
        upper = np.stack(
            [np.stack([ci, cj], -1), np.stack([ci + 1, cj + 1], -1), np.stack([ci, cj + 1], -1)],
            axis=1,
        )
        return np.concatenate([lower, upper], axis=0)

    def dof_index(self, ij: np.ndarray) -> np.ndarray:
        """Map grid indices to dof numbers, ``-1`` for boundary vertices."""
        i, j = ij[..., 0], ij[..., 1]
        inside = (i >= 1) & (i <= self.n) & (j >= 1) & (j <= self.n)
        return np.where(inside, (i - 1) + (j - 1) * self.n, -1)


def _element_gradients(mesh: UniformMesh, tri: np.ndarray, scale: float | None = None) -> np.ndarray:
    # grad phi_a on each triangle, shape (ntri, 3, 2); scale=1 gives h * grad
    xy = tri * (mesh.h if scale is None else scale)
    x, y = xy[..., 0], xy[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    return np.stack([gx, gy], axis=-1)


def _assemble(mesh: UniformMesh, local: np.ndarray, tri: np.ndarray) -> sp.csr_matrix:
    dofs = mesh.dof_index(tri)
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    N = mesh.n_dofs
    A = sp.coo_matrix((local[keep], (rows[keep], cols[keep])), shape=(N, N)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def assemble_mass(mesh: UniformMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix ``M_bar`` (entries of order ``h^2``)."""
    tri = mesh.triangles()
    area = 0.5 * mesh.h**2
    local = np.broadcast_to(_LOCAL_MASS * (area / 12.0), (len(tri), 3, 3))
    return _assemble(mesh, local, tri)


def assemble_stiffness(mesh: UniformMesh) -> sp.csr_matrix:
    """P1 stiffness matrix ``K_bar``: the 5-point stencil ``[-1, -1, 4, -1, -1]``."""
    tri = mesh.triangles()
    # the stiffness is scale invariant in 2D; working in units of h keeps it exact
    grads = _element_gradients(mesh, tri, scale=1.0)
    local = 0.5 * np.einsum("tad,tbd->tab", grads, grads)
    return _assemble(mesh, local, tri)


def assemble_convection(mesh: UniformMesh, c) -> sp.csr_matrix:
    """Convection matrix with entries ``int (c . grad phi_i) phi_j``.

    Note the row index carries the gradient.  Each element contributes
    ``(c . grad phi_i) * area / 3`` since ``grad phi_i`` is constant on a
    triangle and ``int phi_j = area / 3``.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (2,):
        raise ValueError(f"c must be a pair of reals, got shape {c.shape}")
    tri = mesh.triangles()
    grads = _element_gradients(mesh, tri)
    area = 0.5 * mesh.h**2
    cg = grads @ c  # (ntri, 3)
    local = np.repeat(cg[:, :, None], 3, axis=2) * (area / 3.0)
    return _assemble(mesh, local, tri)


def assemble_load(mesh: UniformMesh, g: ScalarField) -> np.ndarray:
    """Load vector ``int g phi_i`` with the 3-point edge-midpoint rule.

    The rule is exact for quadratics on each triangle.  ``g`` is called once
    with arrays of midpoint coordinates.
    """
    tri = mesh.triangles()
    xy = tri * mesh.h
    # midpoint of the edge opposite vertex a, for a = 0, 1, 2
    mids = np.stack(
        [(xy[:, 1] + xy[:, 2]) / 2, (xy[:, 2] + xy[:, 0]) / 2, (xy[:, 0] + xy[:, 1]) / 2], axis=1
    )
    gm = np.asarray(g(mids[..., 0], mids[..., 1]), dtype=float)
    gm = np.broadcast_to(gm, mids.shape[:2])
    area = 0.5 * mesh.h**2
    # phi_a is 1/2 at the two midpoints adjacent to vertex a, 0 at the opposite one
    local = (area / 3.0) * 0.5 * (gm.sum(axis=1, keepdims=True) - gm)
    dofs = mesh.dof_index(tri)
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=local[keep], minlength=mesh.n_dofs)


def interpolate(mesh: UniformMesh, g: ScalarField) -> np.ndarray:
    """Nodal values of ``g`` at the interior nodes."""
    x1, x2 = mesh.nodes()
    return np.broadcast_to(np.asarray(g(x1, x2), dtype=float), x1.shape).copy()
