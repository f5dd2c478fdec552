"""Training-set construction for macroscopic stretch tensors.

A stretch sample is assembled from three ingredients: a determinant level J,
a unit direction N in R^5 identifying a traceless symmetric tensor through a
fixed orthonormal tangent-space basis, and a deviatoric amplitude t:

    U = J^(1/3) exp(t sum_k N_k X^(k))

The exponential of a traceless symmetric tensor is unimodular and s.p.d., so
every sample factors cleanly into volumetric and isochoric parts.
"""

import numpy as np
from dataclasses import dataclass
from scipy.optimize import brentq

from .tensors import as_matrix, det3, expm_sym, logm_spd, contract2, frob

__all__ = [
    "tangent_basis", "uniform_directions", "amplitude_levels",
    "SamplingPlan", "build_plan", "build_validation_plan", "load_case",
    "save_plan", "read_plan",
]

_SQ16 = np.sqrt(1.0 / 6.0)
_SQ12 = np.sqrt(1.0 / 2.0)


def tangent_basis():
    """Orthonormal basis of the symmetric traceless 3x3 tensors, shape (5, 3, 3).

    Frobenius-orthonormal by construction; the first two span the diagonal
    (normal-strain) subspace, the last three the shear subspace.
    """
    x = np.zeros((5, 3, 3))
    x[0] = _SQ16 * np.diag([2.0, -1.0, -1.0])
    x[1] = _SQ12 * np.diag([0.0, 1.0, -1.0])
    x[2, 0, 1] = x[2, 1, 0] = _SQ12
    x[3, 0, 2] = x[3, 2, 0] = _SQ12
    x[4, 1, 2] = x[4, 2, 1] = _SQ12
    return x


def _pair_energy_grad(v):
    """Riesz (inverse square distance) energy and gradient of the point set
    {v_i} united with its antipodes {-v_i}; constant pair terms dropped."""
    diff = v[:, None, :] - v[None, :, :]
    summ = v[:, None, :] + v[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    s2 = np.einsum("ijk,ijk->ij", summ, summ)
    np.fill_diagonal(d2, np.inf)
    np.fill_diagonal(s2, np.inf)
    d2 = np.maximum(d2, 1e-12)
    s2 = np.maximum(s2, 1e-12)
    energy = 0.5 * (np.sum(1.0 / d2) + np.sum(1.0 / s2))
    grad = (-2.0 * np.einsum("ij,ijk->ik", d2 ** -2, diff)
            - 2.0 * np.einsum("ij,ijk->ik", s2 ** -2, summ))
    return energy, grad


def uniform_directions(n, seed=0, iterations=500, method="energy"):
    """n approximately uniformly spread unit vectors in R^5.

    The default spreads the symmetrized set {v_i} u {-v_i} by projected
    gradient descent on its pairwise inverse-square-distance energy, which
    keeps every point clear of every antipode as well. method="random" skips
    the optimization and returns the raw seeded draws.
    """
    if n < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 5))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if method == "random" or n == 1:
        return v
    if method != "energy":
        raise ValueError(f"unknown direction method {method!r}")

    step = 1.0 / n
    energy, grad = _pair_energy_grad(v)
    for _ in range(iterations):
        # project out the radial component, step, renormalize
        tang = grad - np.einsum("ik,ik->i", grad, v)[:, None] * v
        trial = v - step * tang
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        e_new, g_new = _pair_energy_grad(trial)
        if e_new < energy:
            v, energy, grad = trial, e_new, g_new
            step *= 1.1
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return v


def amplitude_levels(t_max, n_amp, spacing="uniform"):
    """Deviatoric amplitudes 0 < t_1 < ... < t_n = t_max.

    uniform: equispaced with t_1 = t_max/n. adaptive: geometrically growing
    intervals whose first one is a quarter of the uniform interval, which
    concentrates samples near the relaxed state.
    """
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")
    n_amp = int(n_amp)
    if n_amp < 1:
        raise ValueError("need at least one amplitude")
    if n_amp == 1:
        return np.array([t_max])
    if spacing == "uniform":
        return t_max * np.arange(1, n_amp + 1) / n_amp
    if spacing == "adaptive":
        # growth ratio rho solving (rho^n - 1)/(rho - 1) = 4 n
        rho = brentq(lambda q: (q ** n_amp - 1.0) / (q - 1.0) - 4.0 * n_amp,
                     1.0 + 1e-12, 16.0, xtol=1e-14)
        t = (t_max / (4.0 * n_amp)) * (rho ** np.arange(1, n_amp + 1) - 1.0) / (rho - 1.0)
        t[-1] = t_max
        return t
    raise ValueError(f"unknown amplitude spacing {spacing!r}")


@dataclass(frozen=True)
class SamplingPlan:
    """Product set of macroscopic stretch samples plus its generating data.

    Arrays J, t, directions and stretches are aligned per entry; directions
    of purely volumetric entries are zero vectors with t = 0.
    """

    J_levels: np.ndarray
    directions: np.ndarray
    amplitudes: np.ndarray
    J: np.ndarray
    t: np.ndarray
    N: np.ndarray
    U: np.ndarray

    @property
    def size(self):
        return self.J.size


def build_plan(J_min=1.0, J_max=1.0, t_max=0.5, N_det=1, N_dir=1, N_amp=1,
               spacing="uniform", seed=0, vol_cases=0, vol_J_min=1.0,
               vol_J_max=1.02, directions=None):
    """Assemble the training plan of Algorithm-style stretch samples.

    The core set is the product of N_det determinant levels, N_dir deviatoric
    directions and N_amp amplitudes. vol_cases appends purely volumetric
    entries J^(1/3) I with J equispaced in [vol_J_min, vol_J_max]. For
    N_det = 1 the single determinant level is fixed to 1 (isochoric training).
    """
    N_det, N_dir, N_amp = int(N_det), int(N_dir), int(N_amp)
    if N_det < 1 or N_dir < 1 or N_amp < 1:
        raise ValueError("sample counts must be positive")
    if N_det > 1 and not J_min < 1.0 < J_max:
        raise ValueError("need J_min < 1 < J_max when sampling determinants")
    j_levels = np.array([1.0]) if N_det == 1 else np.linspace(J_min, J_max, N_det)
    if directions is None:
        directions = uniform_directions(N_dir, seed=seed)
    else:
        directions = np.asarray(directions, dtype=np.float64)
        if directions.shape != (N_dir, 5):
            raise ValueError("directions must have shape (N_dir, 5)")
    amps = amplitude_levels(t_max, N_amp, spacing)

    basis = tangent_basis()
    n_core = N_det * N_dir * N_amp
    n_vol = int(vol_cases)
    n = n_core + n_vol
    jj = np.empty(n)
    tt = np.empty(n)
    nn = np.zeros((n, 5))
    uu = np.empty((n, 3, 3))

    e = 0
    for jm in j_levels:
        for nd in directions:
            x = np.einsum("k,kij->ij", nd, basis)
            for tp in amps:
                jj[e], tt[e], nn[e] = jm, tp, nd
                uu[e] = jm ** (1.0 / 3.0) * expm_sym(tp * x)
                e += 1
    if n_vol:
        for jm in np.linspace(vol_J_min, vol_J_max, n_vol):
            jj[e], tt[e] = jm, 0.0
            uu[e] = jm ** (1.0 / 3.0) * np.eye(3)
            e += 1

    return SamplingPlan(J_levels=j_levels, directions=directions,
                        amplitudes=amps, J=jj, t=tt, N=nn, U=uu)


def build_validation_plan(t_max, N_dir, N_amp, compression=0.0,
                          spacing="uniform", seed=1, directions=None):
    """Held-out stretch samples with an optional superposed volume loss.

    The determinant shrinks proportionally with the deviatoric amplitude,
    J(t) = 1 - compression t/t_max, so the largest distortions are also the
    most compressed, the way a compressive load path behaves. compression 0
    keeps every sample isochoric.
    """
    if not 0.0 <= compression < 1.0:
        raise ValueError("compression must lie in [0, 1)")
    N_dir, N_amp = int(N_dir), int(N_amp)
    if N_dir < 1 or N_amp < 1:
        raise ValueError("sample counts must be positive")
    if directions is None:
        directions = uniform_directions(N_dir, seed=seed)
    else:
        directions = np.asarray(directions, dtype=np.float64)
        if directions.shape != (N_dir, 5):
            raise ValueError("directions must have shape (N_dir, 5)")
    amps = amplitude_levels(t_max, N_amp, spacing)
    j_of_t = 1.0 - compression * amps / t_max

    basis = tangent_basis()
    n = N_dir * N_amp
    jj = np.empty(n)
    tt = np.empty(n)
    nn = np.zeros((n, 5))
    uu = np.empty((n, 3, 3))
    e = 0
    for nd in directions:
        x = np.einsum("k,kij->ij", nd, basis)
        for tp, jm in zip(amps, j_of_t):
            jj[e], tt[e], nn[e] = jm, tp, nd
            uu[e] = jm ** (1.0 / 3.0) * expm_sym(tp * x)
            e += 1
    return SamplingPlan(J_levels=np.unique(j_of_t), directions=directions,
                        amplitudes=amps, J=jj, t=tt, N=nn, U=uu)


def load_case(u):
    """Recover (direction, amplitude, determinant) from a stretch tensor.

    Inverse of the sample construction: J = det U, t = |log(J^{-1/3} U)| and
    N the tangent-basis coefficients of the log. The identity maps to t = 0
    with a zero direction vector.
    """
    u = as_matrix(u)
    j = float(det3(u))
    if j <= 0.0:
        raise ValueError("stretch must have positive determinant")
    x = logm_spd(u * j ** (-1.0 / 3.0))
    t = float(frob(x))
    n = np.zeros(5)
    if t > 0.0:
        basis = tangent_basis()
        for k in range(5):
            n[k] = contract2(x, basis[k]) / t
    return n, t, j


# ---------------------------------------------------------------------------
# text round trip
# ---------------------------------------------------------------------------

_PLAN_COLS = "J t N1 N2 N3 N4 N5 U11 U22 U33 U12 U13 U23"


def save_plan(plan, path):
    """Write the plan as one text line per entry; byte-deterministic."""
    lines = ["# stretch sampling plan", "# " + _PLAN_COLS]
    for e in range(plan.size):
        u = plan.U[e]
        vals = ([plan.J[e], plan.t[e]] + list(plan.N[e])
                + [u[0, 0], u[1, 1], u[2, 2], u[0, 1], u[0, 2], u[1, 2]])
        lines.append(" ".join(repr(float(v)) for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_plan(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(x) for x in line.split()])
    if not rows:
        raise ValueError(f"empty plan file: {path}")
    arr = np.array(rows)
    if arr.shape[1] != 13:
        raise ValueError(f"expected 13 columns per plan entry in {path}")
    n = arr.shape[0]
    uu = np.empty((n, 3, 3))
    uu[:, 0, 0], uu[:, 1, 1], uu[:, 2, 2] = arr[:, 7], arr[:, 8], arr[:, 9]
    uu[:, 0, 1] = uu[:, 1, 0] = arr[:, 10]
    uu[:, 0, 2] = uu[:, 2, 0] = arr[:, 11]
    uu[:, 1, 2] = uu[:, 2, 1] = arr[:, 12]
    return SamplingPlan(J_levels=np.unique(arr[:, 0]), directions=arr[:, 2:7],
                        amplitudes=np.unique(arr[:, 1]), J=arr[:, 0],
                        t=arr[:, 1], N=arr[:, 2:7], U=uu)
