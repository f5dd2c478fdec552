"""Hyperelastic constitutive laws, phase maps and the low-J quadrature cutoff.

The compressible neo-Hookean energy splits the response into a volumetric
part driven by J = det F and an isochoric part driven by the unimodular
Fhat = J^{-1/3} F:

    W(F) = K/4 [(J - 1)^2 + (ln J)^2] + G/2 (Fhat : Fhat - 3)

First Piola-Kirchhoff stress and its tangent are implemented in closed form;
the tests check both against finite differences of W.
"""

import numpy as np
from dataclasses import dataclass
from scipy.special import erf

from .tensors import as_matrix, det3, inv3, identity4

__all__ = [
    "NeoHooke", "MaterialMap", "CutoffConfig", "cutoff",
    "weighted_average", "cutoff_diagnostics",
]


def _flatten(f):
    f = as_matrix(f)
    return f.reshape(-1, 3, 3), f.shape[:-2]


@dataclass(frozen=True)
class NeoHooke:
    """Compressible neo-Hookean law with bulk modulus K and shear modulus G."""

    K: float
    G: float

    def __post_init__(self):
        if self.K <= 0.0 or self.G <= 0.0:
            raise ValueError("moduli must be positive")

    def energy(self, f):
        """Strain energy density W(F); +inf wherever det F <= 0.

        The +inf states make energy line searches reject any step that
        inverts an integration point.
        """
        ff, lead = _flatten(f)
        j = det3(ff)
        w = np.full(j.shape, np.inf)
        ok = j > 0.0
        if np.any(ok):
            fo, jo = ff[ok], j[ok]
            i1 = np.einsum("pij,pij->p", fo, fo)
            lj = np.log(jo)
            w[ok] = (0.25 * self.K * ((jo - 1.0) ** 2 + lj ** 2)
                     + 0.5 * self.G * (jo ** (-2.0 / 3.0) * i1 - 3.0))
        if lead == ():
            return float(w[0])
        return w.reshape(lead)

    def stress(self, f):
        """First Piola-Kirchhoff stress P = dW/dF.

        P = K/2 [J(J-1) + ln J] F^{-T} + G J^{-2/3} (F - (F:F)/3 F^{-T}).
        """
        ff, lead = _flatten(f)
        j = det3(ff)
        if np.any(j <= 0.0):
            raise ValueError("stress requires det F > 0")
        fit = np.swapaxes(inv3(ff, j), -1, -2)
        i1 = np.einsum("pij,pij->p", ff, ff)
        a = 0.5 * self.K * (j * (j - 1.0) + np.log(j))
        b = self.G * j ** (-2.0 / 3.0)
        p = (a - b * i1 / 3.0)[:, None, None] * fit + b[:, None, None] * ff
        return p.reshape(lead + (3, 3))

    def stiffness(self, f):
        """Material tangent C = d^2 W / dF dF with major symmetry C_ijkl = C_klij."""
        ff, lead = _flatten(f)
        j = det3(ff)
        if np.any(j <= 0.0):
            raise ValueError("stiffness requires det F > 0")
        fi = inv3(ff, j)
        fit = np.swapaxes(fi, -1, -2)
        i1 = np.einsum("pij,pij->p", ff, ff)
        a = 0.5 * self.K * (j * (j - 1.0) + np.log(j))
        ap = 0.5 * self.K * (2.0 * j - 1.0 + 1.0 / j)
        b = self.G * j ** (-2.0 / 3.0)

        c = (ap * j + (2.0 / 9.0) * b * i1)[:, None, None, None, None] \
            * np.einsum("pij,pkl->pijkl", fit, fit)
        c += b[:, None, None, None, None] * identity4()
        c -= (2.0 / 3.0) * b[:, None, None, None, None] \
            * (np.einsum("pij,pkl->pijkl", ff, fit)
               + np.einsum("pij,pkl->pijkl", fit, ff))
        c += (b * i1 / 3.0 - a)[:, None, None, None, None] \
            * np.einsum("pjk,pli->pijkl", fi, fi)
        return c.reshape(lead + (3, 3, 3, 3))


class MaterialMap:
    """Phase-wise constitutive evaluation over a quadrature-point field.

    Parameters
    ----------
    laws : dict
        Maps integer phase id to a constitutive law object.
    qp_phase : array of int, shape (n_qp,)
        Phase id at each quadrature point.
    """

    def __init__(self, laws, qp_phase):
        self.laws = dict(laws)
        self.qp_phase = np.asarray(qp_phase, dtype=np.int64).ravel()
        present = set(int(p) for p in np.unique(self.qp_phase))
        missing = present - set(self.laws)
        if missing:
            raise KeyError(f"no law for phase id(s) {sorted(missing)}")
        self._idx = {p: np.flatnonzero(self.qp_phase == p)
                     for p in self.laws if p in present}

    @property
    def n_qp(self):
        return self.qp_phase.size

    def _dispatch(self, method, f, out_shape, fill, active=None):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.n_qp, 3, 3):
            raise ValueError(f"expected field of shape ({self.n_qp}, 3, 3)")
        out = np.full((self.n_qp,) + out_shape, fill)
        for p, idx in self._idx.items():
            if active is not None:
                idx = idx[active[idx]]
            if idx.size:
                out[idx] = getattr(self.laws[p], method)(f[idx])
        return out

    def energy(self, f, active=None):
        """Pointwise energies; inactive points report 0 energy."""
        return self._dispatch("energy", f, (), 0.0, active)

    def stress(self, f, active=None):
        return self._dispatch("stress", f, (3, 3), 0.0, active)

    def stiffness(self, f, active=None):
        return self._dispatch("stiffness", f, (3, 3, 3, 3), 0.0, active)


# ---------------------------------------------------------------------------
# low-J quadrature cutoff
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffConfig:
    """Weight function for excluding heavily compressed integration points.

    phi(J) is 1 above ``upper``, 0 at or below ``lower``, and follows
    0.5 erf(steepness (J - center)) + 0.5 in between.
    """

    lower: float = 0.4
    upper: float = 0.6
    steepness: float = 30.0
    center: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not self.lower < self.center < self.upper:
            raise ValueError("need lower < center < upper")


def cutoff(j, config=None):
    """Quadrature weight factor phi(J) in [0, 1] for the given cutoff config.

    With ``config=None`` or ``config.enabled=False`` this returns ones, so the
    weighted averaging path reduces bit-for-bit to plain volume averaging.
    """
    j = np.asarray(j, dtype=np.float64)
    if config is None or not config.enabled:
        return np.ones_like(j)
    phi = np.ones_like(j)
    phi[j <= config.lower] = 0.0
    mid = (j > config.lower) & (j <= config.upper)
    phi[mid] = 0.5 * erf(config.steepness * (j[mid] - config.center)) + 0.5
    return phi


def weighted_average(values, w, phi=None):
    """Volume average of a quadrature-point field, optionally phi-weighted.

    <v> = sum_p v_p phi_p w_p / sum_p phi_p w_p over points p with quadrature
    weights w. ``values`` may carry trailing tensor axes.
    """
    values = np.asarray(values, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).ravel()
    if phi is not None:
        w = w * np.asarray(phi, dtype=np.float64).ravel()
    wsum = w.sum()
    if wsum <= 0.0:
        raise ValueError("all quadrature weight excluded, average undefined")
    extra = (1,) * (values.ndim - 1)
    return np.sum(values * w.reshape((-1,) + extra), axis=0) / wsum


def cutoff_diagnostics(phi, w, volume):
    """Count of down-weighted points and excluded volume fraction.

    Returns (c_qp, V_excl): the number of quadrature points with phi < 1 and
    the fraction of cell volume removed from the averaging measure.
    """
    phi = np.asarray(phi, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    c_qp = int(np.count_nonzero(phi < 1.0))
    v_excl = float((volume - np.sum(phi * w)) / volume)
    return c_qp, v_excl
