"""Periodic trilinear hexahedral discretization on voxel grids.

Nodes live on the periodic lattice, so faces are identified by index
wrap-around and no constraint equations are needed. Quadrature is 2x2x2
Gauss per element; quadrature points are ordered element-major with the
x-fastest Gauss pattern inside each element.
"""

import numpy as np
from dataclasses import dataclass

__all__ = ["PeriodicHexMesh", "QuadField", "volume_average"]

# voxel corner offsets; reference coordinates are 2*offset - 1
_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.int64)
_SIGNS = 2 * _CORNERS - 1


def _shape_gradients(spacing):
    """Reference shape function gradients at the 8 Gauss points, shape (8, 8, 3).

    Entry [q, a, m] is dN_a/dX_m at Gauss point q, already mapped to physical
    coordinates for an element of the given edge lengths.
    """
    g = 1.0 / np.sqrt(3.0)
    grad = np.empty((8, 8, 3))
    q = 0
    for kq in (-g, g):
        for jq in (-g, g):
            for iq in (-g, g):
                xi = (iq, jq, kq)
                for a in range(8):
                    s = _SIGNS[a]
                    for m in range(3):
                        val = 0.125 * s[m]
                        for n in range(3):
                            if n != m:
                                val *= 1.0 + s[n] * xi[n]
                        grad[q, a, m] = val * 2.0 / spacing[m]
                q += 1
    return grad


class PeriodicHexMesh:
    """Structured periodic mesh of nx*ny*nz trilinear hexahedra.

    Element and node orders are both x-fastest, and element e coincides with
    voxel e of the generating grid, so per-voxel data maps to per-element data
    without reindexing.
    """

    def __init__(self, dims, spacing=(1.0, 1.0, 1.0)):
        nx, ny, nz = (int(d) for d in dims)
        if min(nx, ny, nz) < 1:
            raise ValueError("grid dimensions must be positive")
        self.dims = (nx, ny, nz)
        self.spacing = tuple(float(h) for h in spacing)
        if min(self.spacing) <= 0.0:
            raise ValueError("cell sizes must be positive")

        self.n_el = nx * ny * nz
        self.n_nodes = nx * ny * nz
        self.n_qp = 8 * self.n_el

        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                              indexing="ij")
        # flatten in x-fastest order: index = i + nx*(j + ny*k)
        i = i.transpose(2, 1, 0).ravel()
        j = j.transpose(2, 1, 0).ravel()
        k = k.transpose(2, 1, 0).ravel()

        hx, hy, hz = self.spacing
        self.coords = np.column_stack((i * hx, j * hy, k * hz))

        conn = np.empty((self.n_el, 8), dtype=np.int64)
        for a, (di, dj, dk) in enumerate(_CORNERS):
            conn[:, a] = ((i + di) % nx
                          + nx * ((j + dj) % ny + ny * ((k + dk) % nz)))
        self.conn = conn

        self.grad_shape = _shape_gradients(self.spacing)
        self.qp_weight = hx * hy * hz / 8.0
        self.weights = np.full(self.n_qp, self.qp_weight)
        self.volume = nx * hx * ny * hy * nz * hz
        self._rows = None
        self._cols = None
        self._asm = None

    def gradient(self, w):
        """Discrete gradient of a nodal vector field at all quadrature points.

        w has shape (n_nodes, 3); the result has shape (n_qp, 3, 3) with
        entry [p, d, m] = dw_d/dX_m.
        """
        we = w[self.conn]
        h = np.einsum("ead,qam->eqdm", we, self.grad_shape)
        return h.reshape(self.n_qp, 3, 3)

    def internal_force(self, p):
        """Assemble nodal forces of the virtual work integral of a stress field.

        Returns r with r[n, d] = sum over elements of int P_dm dN_n/dX_m dV,
        the gradient of the total energy with respect to nodal displacements.
        """
        pe = p.reshape(self.n_el, 8, 3, 3)
        contrib = np.einsum("eqdm,qam->ead", pe, self.grad_shape) * self.qp_weight
        r = np.zeros((self.n_nodes, 3))
        np.add.at(r, self.conn, contrib)
        return r

    def force_scale(self, p):
        """Norm of the absolutely-summed force contributions.

        Used as the floor of relative convergence checks: when cancellation
        makes the assembled residual vanish (homogeneous states), this stays
        at the magnitude of the individual element contributions.
        """
        pe = p.reshape(self.n_el, 8, 3, 3)
        contrib = np.abs(np.einsum("eqdm,qam->ead", pe, self.grad_shape))
        s = np.zeros((self.n_nodes, 3))
        np.add.at(s, self.conn, contrib)
        return float(np.linalg.norm(s)) * self.qp_weight

    def tangent_entries(self, c):
        """Element stiffness entries and their global (row, col) indices.

        c holds material tangents at all quadrature points, shape
        (n_qp, 3, 3, 3, 3). Returned arrays feed a COO sparse matrix.
        """
        ce = c.reshape(self.n_el, 8, 3, 3, 3, 3)
        tmp = np.einsum("qai,eqdimj->eqadmj", self.grad_shape, ce, optimize=True)
        ke = np.einsum("eqadmj,qbj->eadbm", tmp, self.grad_shape,
                       optimize=True) * self.qp_weight
        if self._rows is None:
            dof = 3 * self.conn[:, :, None] + np.arange(3)[None, None, :]
            # index layout matches ke's (e, a, d, b, m) ordering
            self._rows = np.broadcast_to(
                dof[:, :, :, None, None], ke.shape).ravel()
            self._cols = np.broadcast_to(
                dof[:, None, None, :, :], ke.shape).ravel()
        return ke.ravel(), self._rows, self._cols

    def tangent_matrix(self, c):
        """Assembled tangent as a CSR matrix with the structure cached.

        The (row, col) -> storage-slot mapping of the duplicate-summed
        pattern is computed once; later assemblies reduce to one weighted
        bincount, which is much cheaper than rebuilding a COO matrix.
        """
        from scipy.sparse import csr_matrix

        data, rows, cols = self.tangent_entries(c)
        n = 3 * self.n_nodes
        if self._asm is None:
            order = np.lexsort((cols, rows))
            rs, cs = rows[order], cols[order]
            head = np.ones(rs.size, dtype=bool)
            head[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
            gid = np.cumsum(head) - 1
            slot = np.empty(rs.size, dtype=np.int64)
            slot[order] = gid
            nnz = int(gid[-1]) + 1
            indptr = np.zeros(n + 1, dtype=np.int64)
            indptr[1:] = np.cumsum(np.bincount(rs[head], minlength=n))
            self._asm = (slot, cs[head].copy(), indptr, nnz)
        slot, indices, indptr, nnz = self._asm
        vals = np.bincount(slot, weights=data, minlength=nnz)
        return csr_matrix((vals, indices, indptr), shape=(n, n))


@dataclass(frozen=True)
class QuadField:
    """Per-quadrature-point second order tensor field with its weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if v.ndim != 3 or v.shape[1:] != (3, 3) or v.shape[0] != w.size:
            raise ValueError("values must have shape (n_qp, 3, 3) matching weights")
        if v.shape[0] == 0:
            raise ValueError("empty quadrature field")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def n_qp(self):
        return self.weights.size


def volume_average(field, weights=None):
    """Plain volume average sum(v_p w_p) / sum(w_p) of a quadrature field."""
    if isinstance(field, QuadField):
        values, w = field.values, field.weights
    else:
        values = np.asarray(field, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64).ravel()
    if values.shape[0] == 0:
        raise ValueError("empty quadrature field")
    extra = (1,) * (values.ndim - 1)
    return np.sum(values * w.reshape((-1,) + extra), axis=0) / w.sum()
