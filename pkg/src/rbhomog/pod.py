"""Snapshot POD over deformation-gradient fluctuation fields.

The correlation matrix collects the quadrature-weighted L2 scalar products of
the snapshot fluctuations. Its eigenvectors combine the snapshots into an
orthonormal basis; the same combination weights applied to the snapshot
displacement fluctuations yield compatible displacement modes, so the discrete
gradient of mode i equals basis field i by linearity.
"""

import warnings
import numpy as np
from dataclasses import dataclass

__all__ = ["ReducedBasis", "correlation_matrix", "build_basis", "truncate",
           "project"]

# relative eigenvalue floor; smaller modes carry mostly roundoff
_SPECTRUM_FLOOR = 1e-12


@dataclass(frozen=True)
class ReducedBasis:
    """L2-orthonormal, zero-mean basis of fluctuation fields.

    modes has shape (N, n_qp, 3, 3), disp_modes (N, n_nodes, 3); eigenvalues
    are the first N of the full correlation spectrum, which is kept for
    inspection.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    disp_modes: np.ndarray
    weights: np.ndarray
    spectrum: np.ndarray

    @property
    def N(self):
        return self.modes.shape[0]

    @property
    def n_qp(self):
        return self.weights.size

    @property
    def n_nodes(self):
        return self.disp_modes.shape[1]


def _check_layout(snapshots):
    if not snapshots:
        raise ValueError("no snapshots given")
    w0 = snapshots[0].fluct.weights
    for s in snapshots[1:]:
        w = s.fluct.weights
        if w.size != w0.size or not np.allclose(w, w0, rtol=1e-12, atol=0.0):
            raise ValueError("snapshots use different quadrature layouts")
    return w0


def correlation_matrix(snapshots):
    """Matrix of mutual weighted L2 scalar products of the snapshots."""
    w = _check_layout(snapshots)
    sw = np.sqrt(w / w.sum())[:, None, None]
    a = np.stack([(s.fluct.values * sw).ravel() for s in snapshots])
    c = a @ a.T
    return 0.5 * (c + c.T)


def build_basis(snapshots, N=None, energy_tol=1e-8):
    """Extract a reduced basis from snapshots via the correlation eigenproblem.

    Either a mode count N or an energy tolerance selects the truncation: with
    energy_tol, N becomes the smallest count whose retained eigenvalue sum
    reaches the fraction 1 - energy_tol. Modes below the relative spectrum
    floor are never returned; asking for them explicitly raises, reaching
    them through energy_tol truncates with a warning.
    """
    w = _check_layout(snapshots)
    corr = correlation_matrix(snapshots)
    lam, vec = np.linalg.eigh(corr)
    lam, vec = lam[::-1], vec[:, ::-1]

    if lam.size == 0 or lam[0] <= 0.0:
        raise ValueError("snapshot set has rank 0 (all fluctuations vanish)")
    rank = int(np.sum(lam > _SPECTRUM_FLOOR * lam[0]))

    if N is not None:
        N = int(N)
        if N < 1:
            raise ValueError("mode count must be positive")
        if N > rank:
            raise ValueError(
                f"requested {N} modes but the snapshot spectrum supports {rank}")
    else:
        if not 0.0 < energy_tol < 1.0:
            raise ValueError("energy_tol must lie in (0, 1)")
        total = np.sum(lam[lam > 0.0])
        N = int(np.searchsorted(np.cumsum(lam[:rank]) / total,
                                1.0 - energy_tol) + 1)
        if N > rank:
            warnings.warn("energy tolerance reaches into the degenerate part "
                          f"of the spectrum; truncating at {rank} modes")
            N = rank

    coef = vec[:, :N] / np.sqrt(lam[:N])
    fstack = np.stack([s.fluct.values for s in snapshots])
    ustack = np.stack([s.disp_fluct for s in snapshots])
    modes = np.tensordot(coef.T, fstack, axes=1)
    disp = np.tensordot(coef.T, ustack, axes=1)

    # Roundoff in eigenvectors of weakly separated eigenvalues leaves the Gram
    # matrix slightly off identity; a one-shot inverse square root restores
    # orthonormality without leaving the snapshot span. Displacement modes get
    # the same mixing so their gradients stay equal to the modes.
    gram = np.einsum("ipab,jpab,p->ij", modes, modes, w / w.sum())
    gram = 0.5 * (gram + gram.T)
    if np.abs(gram - np.eye(N)).max() > 1e-13:
        gw, gq = np.linalg.eigh(gram)
        isq = (gq / np.sqrt(gw)) @ gq.T
        modes = np.tensordot(isq, modes, axes=1)
        disp = np.tensordot(isq, disp, axes=1)

    return ReducedBasis(modes=modes, eigenvalues=lam[:N].copy(), disp_modes=disp,
                        weights=w.copy(), spectrum=lam.copy())


def truncate(basis, N):
    """Nested sub-basis of the first N modes (ordered by eigenvalue)."""
    N = int(N)
    if not 1 <= N <= basis.N:
        raise ValueError(f"need 1 <= N <= {basis.N}, got {N}")
    return ReducedBasis(modes=basis.modes[:N], eigenvalues=basis.eigenvalues[:N],
                        disp_modes=basis.disp_modes[:N], weights=basis.weights,
                        spectrum=basis.spectrum)


def project(basis, field):
    """L2 coefficients of a fluctuation field in the basis, shape (N,)."""
    wn = basis.weights / basis.weights.sum()
    return np.einsum("ipab,pab,p->i", basis.modes, field, wn)
