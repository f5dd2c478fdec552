"""Dense 3x3 tensor algebra and the kinematic decompositions used everywhere else.

Second order tensors are numpy arrays with trailing shape (3, 3), fourth order
tensors with trailing shape (3, 3, 3, 3) in row-major ijkl component order.
Leading dimensions broadcast, so the same routines serve single tensors and
whole quadrature-point fields.
"""

import numpy as np
from dataclasses import dataclass, field

__all__ = [
    "contract2", "contract24", "contract42", "contract44",
    "identity2", "identity4", "det3", "inv3", "det", "inverse",
    "polar", "expm_sym", "logm_spd", "ddms", "DefGrad", "Stretch",
    "as_matrix", "frob",
]

_EPS = np.finfo(np.float64).eps


def as_matrix(a):
    """Return the plain (..., 3, 3) array behind ``a`` (DefGrad, Stretch or array)."""
    if isinstance(a, (DefGrad, Stretch)):
        return a.value
    return np.asarray(a, dtype=np.float64)


def frob(a):
    """Frobenius norm over the trailing tensor axes."""
    a = np.asarray(a)
    n = a.ndim - (4 if a.ndim >= 4 and a.shape[-4:] == (3, 3, 3, 3) else 2)
    return np.sqrt(np.sum(a * a, axis=tuple(range(n, a.ndim))))


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------

def contract2(a, b):
    """Full contraction A_ij B_ij of two second order tensors."""
    return np.einsum("...ij,...ij->...", as_matrix(a), as_matrix(b))


def contract24(a, c):
    """Contraction A_ij C_ijkl, a second order tensor."""
    return np.einsum("...ij,...ijkl->...kl", as_matrix(a), np.asarray(c))


def contract42(c, b):
    """Contraction C_ijkl B_kl, a second order tensor."""
    return np.einsum("...ijkl,...kl->...ij", np.asarray(c), as_matrix(b))


def contract44(c, cp):
    """Composition C_ijmn C'_mnkl of two fourth order tensors."""
    return np.einsum("...ijmn,...mnkl->...ijkl", np.asarray(c), np.asarray(cp))


def identity2():
    return np.eye(3)


def identity4():
    """Fourth order identity, I_ijkl = delta_ik delta_jl."""
    return np.einsum("ik,jl->ijkl", np.eye(3), np.eye(3))


# ---------------------------------------------------------------------------
# determinant / inverse (closed cofactor forms, fast on batched fields)
# ---------------------------------------------------------------------------

def det3(a):
    """Determinant of (..., 3, 3) arrays via the cofactor expansion."""
    a = np.asarray(a)
    return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))


def inv3(a, d=None):
    """Inverse of (..., 3, 3) arrays via the adjugate.

    ``d`` may pass in precomputed determinants. No conditioning guard; use
    :func:`inverse` at API boundaries where a singular input must raise.
    """
    a = np.asarray(a)
    if d is None:
        d = det3(a)
    out = np.empty_like(a, dtype=np.float64)
    out[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    out[..., 0, 1] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    out[..., 0, 2] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    out[..., 1, 0] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    out[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    out[..., 1, 2] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    out[..., 2, 0] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    out[..., 2, 1] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    out[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return out / d[..., None, None]


def det(a):
    """Determinant of a second order tensor (DefGrad, Stretch or array)."""
    return det3(as_matrix(a))


def inverse(a):
    """Inverse of a second order tensor; raises on (near-)singular input.

    The singularity threshold scales with the cube of the Frobenius norm so
    that the check is invariant under uniform scaling of the input.
    """
    m = as_matrix(a)
    d = det3(m)
    scale = np.maximum(1.0, frob(m)) ** 3
    if np.any(np.abs(d) <= 1e3 * _EPS * scale):
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    return inv3(m, d)


# ---------------------------------------------------------------------------
# symmetric eigen-based maps
# ---------------------------------------------------------------------------

def _eigh_sym(x):
    w, q = np.linalg.eigh(x)
    return w, q


def _check_symmetric(x, tol=1e-12):
    asym = frob(x - np.swapaxes(x, -1, -2))
    if np.any(asym > tol * np.maximum(1.0, frob(x))):
        raise ValueError("input tensor is not symmetric")


def _spectral_map(w, q):
    """Reassemble Q diag(w) Q^T, symmetrized so the result is exact."""
    y = np.einsum("...ik,...k,...jk->...ij", q, w, q)
    return 0.5 * (y + np.swapaxes(y, -1, -2))


def expm_sym(x):
    """Matrix exponential of a symmetric tensor via eigendecomposition.

    Traceless input maps to a unimodular (det = 1) result.
    """
    x = as_matrix(x)
    _check_symmetric(x)
    w, q = _eigh_sym(0.5 * (x + np.swapaxes(x, -1, -2)))
    return _spectral_map(np.exp(w), q)


def logm_spd(u):
    """Matrix logarithm of a symmetric positive definite tensor."""
    u = as_matrix(u)
    _check_symmetric(u)
    w, q = _eigh_sym(0.5 * (u + np.swapaxes(u, -1, -2)))
    if np.any(w <= 0.0):
        raise ValueError("input tensor is not positive definite")
    return _spectral_map(np.log(w), q)


def polar(f):
    """Polar decomposition F = R U with R a rotation and U s.p.d.

    U is the square root of F^T F obtained from its eigendecomposition;
    R = F U^{-1}. Raises for det F <= 0 or a numerically singular F.
    """
    fm = as_matrix(f)
    if np.any(det3(fm) <= 0.0):
        raise ValueError("polar decomposition requires det F > 0")
    c = np.swapaxes(fm, -1, -2) @ fm
    w, q = _eigh_sym(c)
    if np.any(w <= _EPS ** 2 * np.maximum(1.0, frob(c))):
        raise np.linalg.LinAlgError("deformation gradient is numerically singular")
    s = np.sqrt(w)
    u = _spectral_map(s, q)
    uinv = _spectral_map(1.0 / s, q)
    r = fm @ uinv
    return r, u


def ddms(f):
    """Dilatational-deviatoric multiplicative split F = J^{1/3} Fhat.

    Returns (J, Fhat) with det(Fhat) = 1.
    """
    fm = as_matrix(f)
    j = det3(fm)
    if np.any(j <= 0.0):
        raise ValueError("split requires det F > 0")
    return j, fm * j[..., None, None] ** (-1.0 / 3.0)


# ---------------------------------------------------------------------------
# validated value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DefGrad:
    """A single deformation gradient with its determinant cached at construction."""

    value: np.ndarray
    J: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        if v.shape != (3, 3):
            raise ValueError(f"expected shape (3, 3), got {v.shape}")
        j = float(det3(v))
        if not j > 0.0:
            raise ValueError(f"det F = {j} must be positive")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "J", j)


@dataclass(frozen=True)
class Stretch:
    """A symmetric positive definite stretch tensor, validated at construction."""

    value: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        if v.shape != (3, 3):
            raise ValueError(f"expected shape (3, 3), got {v.shape}")
        _check_symmetric(v)
        if np.linalg.eigvalsh(v).min() <= 0.0:
            raise ValueError("stretch tensor must be positive definite")
        object.__setattr__(self, "value", v)

    @property
    def J(self):
        return float(det3(self.value))
