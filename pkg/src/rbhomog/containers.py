"""Binary containers for snapshots and reduced bases.

Both formats are little-endian with a 4-byte magic, uint64 size fields, and
float64 payloads. Snapshot files (magic MRB1) store the boundary condition,
the deformation-gradient fluctuation at quadrature points, the quadrature
weights, and the nodal displacement fluctuation. Basis files (magic MRB2)
store the full correlation spectrum, the retained modes in mode-major order,
the weights, and the matching displacement modes. Writes go through a
temporary file and an atomic rename so interrupted jobs never leave a
half-written container behind.
"""

import os
import numpy as np

from .mesh import QuadField
from .fom import Snapshot
from .pod import ReducedBasis

__all__ = ["ContainerError", "save_snapshot", "load_snapshot",
           "save_basis", "load_basis"]

_SNAP_MAGIC = b"MRB1"
_BASIS_MAGIC = b"MRB2"
_U8 = np.dtype("<u8")
_F8 = np.dtype("<f8")


class ContainerError(IOError):
    """Raised for wrong magic, truncated payloads, or trailing bytes."""


def _read_exact(f, nbytes, path):
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise ContainerError(f"{path}: truncated container "
                             f"(wanted {nbytes} bytes, got {len(buf)})")
    return buf


def _read_array(f, dtype, count, path):
    raw = _read_exact(f, dtype.itemsize * int(count), path)
    return np.frombuffer(raw, dtype=dtype).astype(np.float64 if dtype == _F8
                                                  else np.int64)


def _atomic_write(path, chunks):
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            for c in chunks:
                f.write(c)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _le(a):
    return np.ascontiguousarray(a, dtype=np.float64).astype(_F8, copy=False)


def save_snapshot(snapshot, path):
    """Write one snapshot to an MRB1 container."""
    n_qp = snapshot.fluct.weights.size
    n_nodes = snapshot.disp_fluct.shape[0]
    head = np.array([n_qp, n_nodes], dtype=_U8)
    _atomic_write(path, [
        _SNAP_MAGIC,
        head.tobytes(),
        _le(snapshot.bc).tobytes(),
        _le(snapshot.fluct.values).tobytes(),
        _le(snapshot.fluct.weights).tobytes(),
        _le(snapshot.disp_fluct).tobytes(),
    ])


def load_snapshot(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != _SNAP_MAGIC:
            raise ContainerError(f"{path}: not a snapshot container")
        n_qp, n_nodes = _read_array(f, _U8, 2, path)
        bc = _read_array(f, _F8, 9, path).reshape(3, 3)
        vals = _read_array(f, _F8, 9 * n_qp, path).reshape(n_qp, 3, 3)
        w = _read_array(f, _F8, n_qp, path)
        disp = _read_array(f, _F8, 3 * n_nodes, path).reshape(n_nodes, 3)
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    return Snapshot(bc=bc, fluct=QuadField(values=vals, weights=w),
                    disp_fluct=disp)


def save_basis(basis, path):
    """Write a reduced basis to an MRB2 container."""
    head = np.array([basis.N, basis.n_qp, basis.n_nodes,
                     basis.spectrum.size], dtype=_U8)
    _atomic_write(path, [
        _BASIS_MAGIC,
        head.tobytes(),
        _le(basis.spectrum).tobytes(),
        _le(basis.modes).tobytes(),
        _le(basis.weights).tobytes(),
        _le(basis.disp_modes).tobytes(),
    ])


def load_basis(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != _BASIS_MAGIC:
            raise ContainerError(f"{path}: not a basis container")
        n, n_qp, n_nodes, n_spec = _read_array(f, _U8, 4, path)
        if n > n_spec:
            raise ContainerError(f"{path}: mode count exceeds spectrum length")
        spec = _read_array(f, _F8, n_spec, path)
        modes = _read_array(f, _F8, n * 9 * n_qp, path).reshape(n, n_qp, 3, 3)
        w = _read_array(f, _F8, n_qp, path)
        disp = _read_array(f, _F8, n * 3 * n_nodes, path).reshape(n, n_nodes, 3)
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    return ReducedBasis(modes=modes, eigenvalues=spec[:n].copy(),
                        disp_modes=disp, weights=w, spectrum=spec)
