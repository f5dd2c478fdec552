"""Online reduced-order model: reduced coefficients, effective response.

The reduced deformation gradient ansatz is F(xi) = Fbar + sum_i xi_i B(i)
with the basis fields B(i) from snapshot POD. The solver minimizes the
cutoff-weighted average energy over xi with a quasi-Newton scheme and exact
line searches; the effective stress is the weighted average stress, and the
effective tangent carries the correction from the sensitivity of xi* with
respect to Fbar.

General (rotated) macroscopic states are handled by solving at the stretch
tensor of the polar decomposition and pushing the response forward through
the rotation, so the surrogate is objective by construction.
"""

import numpy as np
from dataclasses import dataclass
from scipy.linalg import cho_factor, cho_solve, solve as lin_solve, LinAlgError

from .tensors import as_matrix, det3, polar, contract42
from .material import cutoff, cutoff_diagnostics

__all__ = [
    "SolverSettings", "RBModel", "RBState", "EffectiveResponse",
    "residual", "jacobian", "solve", "evaluate_general",
    "push_forward_tangent", "reconstruct_displacement",
]

_GOLDEN = 0.6180339887498949


@dataclass(frozen=True)
class SolverSettings:
    """Iteration controls for the reduced quasi-Newton solver.

    rtol scales the residual convergence test against max(1, |r(xi=0)|);
    xtol bounds the coefficient update below which the iteration is treated
    as stalled. max_assemblies caps Jacobian assemblies per load increment;
    ls_tol is the absolute window width at which the golden-section line
    search stops.
    """

    rtol: float = 1e-10
    xtol: float = 1e-12
    max_iter: int = 50
    max_assemblies: int = 4
    ls_tol: float = 1e-10
    ls_expansions: int = 12
    ls_shrinks: int = 40


@dataclass
class RBState:
    """Solver outcome: coefficients, convergence flag and effort counters.

    converged reports the residual criterion only; a stalled line search or
    exhausted iteration budget leaves it False. assemblies counts Jacobian
    assemblies spent by the iteration, not the final one used for the
    effective tangent.
    """

    xi: np.ndarray
    converged: bool = False
    iterations: int = 0
    assemblies: int = 0
    residual_norm: float = 0.0


@dataclass(frozen=True)
class EffectiveResponse:
    """Homogenized response at a converged state.

    Ctaylor is the plain weighted average of the microscopic tangents; the
    reduced correction subtracted from it is positive semidefinite, so
    Ctaylor bounds Cbar from above in the quadratic-form sense. c_qp counts
    integration points down-weighted by the cutoff and V_excl the volume
    fraction removed from the averaging measure.
    """

    Wbar: float
    Pbar: np.ndarray
    Cbar: np.ndarray
    Ctaylor: np.ndarray
    c_qp: int = 0
    V_excl: float = 0.0


class RBModel:
    """Reduced basis plus material map plus solver configuration.

    The basis and the material map must share one quadrature layout. The
    cutoff config may be None to disable low-J down-weighting entirely.
    """

    def __init__(self, basis, matmap, cutoff_config=None, settings=None):
        if basis.n_qp != matmap.n_qp:
            raise ValueError("basis and material map use different "
                             f"quadrature layouts ({basis.n_qp} vs {matmap.n_qp})")
        self.basis = basis
        self.matmap = matmap
        self.cutoff = cutoff_config
        self.settings = settings if settings is not None else SolverSettings()
        self.weights = basis.weights
        self.volume = float(self.weights.sum())

    @property
    def n_modes(self):
        return self.basis.N

    def field(self, fbar, xi):
        """Reduced deformation gradient field Fbar + sum_i xi_i B(i)."""
        f = np.broadcast_to(as_matrix(fbar), (self.basis.n_qp, 3, 3)).copy()
        xi = np.asarray(xi, dtype=np.float64)
        if xi.size:
            f += np.tensordot(xi, self.basis.modes, axes=1)
        return f


def _measure(model, f):
    """Cutoff factor and active-point mask for a reduced field."""
    phi = cutoff(det3(f), model.cutoff)
    return phi, phi > 0.0


def _averaging_weights(model, phi):
    wphi = model.weights * phi
    s = wphi.sum()
    if s <= 0.0:
        raise ValueError("all quadrature weight excluded, state is hopeless")
    return wphi / s


def _energy_of(model, f):
    """Cutoff-weighted average energy; +inf when inverted points are active."""
    phi, act = _measure(model, f)
    wphi = model.weights * phi
    s = wphi.sum()
    if s <= 0.0:
        return np.inf
    w = model.matmap.energy(f, act)
    return float(np.dot(w, wphi) / s)


def _residual_of(model, f):
    phi, act = _measure(model, f)
    wn = _averaging_weights(model, phi)
    p = model.matmap.stress(f, act)
    flat = model.basis.modes.reshape(model.basis.N, -1)
    return flat @ (p * wn[:, None, None]).ravel()


def _jacobian_of(model, f):
    """Reduced Jacobian D plus the per-mode averages needed for the tangent.

    Contractions are flattened to batched 9x9 products and one Gram-style
    matrix product so they run in BLAS; the naive index loops dominate solve
    time on fine meshes.
    """
    phi, act = _measure(model, f)
    wn = _averaging_weights(model, phi)
    c = model.matmap.stiffness(f, act)
    n, n_qp = model.basis.N, model.basis.n_qp
    m9 = model.basis.modes.reshape(n, n_qp, 9)
    cb = np.matmul(c.reshape(n_qp, 9, 9), m9.transpose(1, 2, 0))  # (qp, 9, n)
    mw = m9 * wn[None, :, None]
    d = np.tensordot(mw, cb, axes=([1, 2], [0, 1]))
    d = 0.5 * (d + d.T)
    g = np.ascontiguousarray((cb * wn[:, None, None]).sum(axis=0).T)
    g = g.reshape(n, 3, 3)
    cavg = np.tensordot(wn, c, axes=1)
    return d, g, cavg


def residual(model, fbar, xi):
    """Optimality residual r_i = <P(F(xi)) : B(i)> under the cutoff measure."""
    return _residual_of(model, model.field(fbar, xi))


def jacobian(model, fbar, xi):
    """Reduced Jacobian D_ij = <B(i) : C(F(xi)) : B(j)>, symmetric."""
    return _jacobian_of(model, model.field(fbar, xi))[0]


def _golden_min(fun, lo, hi, tol):
    """Golden-section minimum of fun on [lo, hi] to absolute width tol."""
    h = hi - lo
    c = hi - _GOLDEN * h
    d = lo + _GOLDEN * h
    fc, fd = fun(c), fun(d)
    while h > tol:
        if abs(fc - fd) <= 1e-12 * (abs(fc) + abs(fd) + 1e-300):
            # probe energies indistinguishable in floating point; narrowing
            # the bracket further cannot improve the step
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            h = hi - lo
            c = hi - _GOLDEN * h
            fc = fun(c)
        else:
            lo, c, fc = c, d, fd
            h = hi - lo
            d = lo + _GOLDEN * h
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def _line_search(fun, f0, settings):
    """Exact minimization of fun(alpha) for alpha > 0, or None if no descent.

    Brackets a minimizer by doubling while the energy decreases (or halving
    until it does), then runs golden-section to ls_tol.
    """
    a, fa = 1.0, fun(1.0)
    if fa < f0:
        for _ in range(settings.ls_expansions):
            b, fb = 2.0 * a, fun(2.0 * a)
            if not fb < fa:
                break
            a, fa = b, fb
        hi = 2.0 * a
    else:
        for _ in range(settings.ls_shrinks):
            a *= 0.5
            fa = fun(a)
            if fa < f0:
                break
        else:
            return None
        hi = 2.0 * a
    alpha, falpha = _golden_min(fun, 0.0, hi, settings.ls_tol)
    if falpha < f0 and alpha > 0.0:
        return alpha
    if fa < f0:
        return a
    return None


def _direction(fac, d, r):
    """Newton direction from a Cholesky factor, or scaled steepest descent."""
    if fac is not None:
        return -cho_solve(fac, r)
    scale = max(np.abs(np.diag(d)).max(), 1.0) if d is not None else 1.0
    return -r / scale


def _factorize(d):
    try:
        return cho_factor(d)
    except LinAlgError:
        return None


def _solve_increment(model, fbar, xi):
    """Quasi-Newton minimization at one fixed Fbar. Returns an RBState."""
    st = model.settings
    n = model.n_modes
    xi = np.asarray(xi, dtype=np.float64).copy()

    try:
        rnorm0 = float(np.linalg.norm(
            _residual_of(model, model.field(fbar, np.zeros(n)))))
    except ValueError:
        # zero-coefficient reference fully excluded; fall back to the
        # absolute residual floor
        rnorm0 = 0.0
    tol = st.rtol * max(1.0, rnorm0)

    f = model.field(fbar, xi)
    if not np.isfinite(_energy_of(model, f)):
        # a warm start carried over from another load level may be inverted
        xi = np.zeros(n)
        f = model.field(fbar, xi)
        if not np.isfinite(_energy_of(model, f)):
            raise ValueError("all quadrature weight excluded, state is hopeless")
    r = _residual_of(model, f)
    rnorm = float(np.linalg.norm(r))
    state = RBState(xi=xi, residual_norm=rnorm)
    if rnorm < tol:
        state.converged = True
        return state

    d, _, _ = _jacobian_of(model, f)
    fac = _factorize(d)
    state.assemblies = 1
    fresh = True

    while state.iterations < st.max_iter:
        dxi = _direction(fac, d, r)
        df = np.tensordot(dxi, model.basis.modes, axes=1)

        # Probe the plain step first: in the contraction regime Newton needs
        # no search at all, and skipping the energy probes is what keeps
        # fine-mesh solves cheap.
        alpha = 1.0
        f_new = f + df
        try:
            r_new = _residual_of(model, f_new)
        except ValueError:
            r_new = None
        if r_new is None or not np.linalg.norm(r_new) < 0.9 * rnorm:
            e0 = _energy_of(model, f)

            def along(a):
                return _energy_of(model, f + a * df)

            alpha = _line_search(along, e0, st)
            if alpha is not None:
                f_new = f + alpha * df
                r_new = _residual_of(model, f_new)
            else:
                # Near the minimum the energy change of a step drops below
                # the resolution of floating point sums, so descent on the
                # energy is no longer observable. Accept the plain step when
                # it still reduces the residual norm; its quadratic
                # contraction is what pushes the residual to the floor.
                if r_new is None or not np.linalg.norm(r_new) < rnorm:
                    if not fresh and state.assemblies < st.max_assemblies:
                        d, _, _ = _jacobian_of(model, f)
                        fac = _factorize(d)
                        state.assemblies += 1
                        fresh = True
                        continue
                    if fac is not None:
                        # fresh Newton direction without progress: descend
                        fac = None
                        continue
                    break
                alpha = 1.0
                f_new = f + df

        state.xi = state.xi + alpha * dxi
        f = f_new
        rprev = rnorm
        r = r_new
        rnorm = float(np.linalg.norm(r))
        state.iterations += 1
        state.residual_norm = rnorm
        fresh = False
        if rnorm < tol:
            state.converged = True
            return state
        stalled = alpha * float(np.linalg.norm(dxi)) < st.xtol
        if (rnorm > 0.5 * rprev or stalled) and state.assemblies < st.max_assemblies:
            d, _, _ = _jacobian_of(model, f)
            fac = _factorize(d)
            state.assemblies += 1
            fresh = True
        elif stalled:
            break
    return state


def _response_at(model, fbar, xi):
    """Effective energy, stress and consistent tangent at coefficients xi."""
    f = model.field(fbar, xi)
    phi, act = _measure(model, f)
    wn = _averaging_weights(model, phi)
    wbar = float(np.dot(model.matmap.energy(f, act), model.weights * phi)
                 / (model.weights * phi).sum())
    pbar = np.einsum("pab,p->ab", model.matmap.stress(f, act), wn)
    d, g, cavg = _jacobian_of(model, f)
    rhs = g.reshape(model.n_modes, 9)
    fac = _factorize(d)
    if fac is not None:
        x = cho_solve(fac, rhs)
    else:
        x = lin_solve(d, rhs, assume_a="sym")
    corr = (rhs.T @ x).reshape(3, 3, 3, 3)
    c_qp, v_excl = cutoff_diagnostics(phi, model.weights, model.volume)
    return EffectiveResponse(Wbar=wbar, Pbar=pbar, Cbar=cavg - corr,
                             Ctaylor=cavg, c_qp=c_qp, V_excl=v_excl)


def solve(model, fbar, xi0=None, increments=1):
    """Minimize the reduced energy at Fbar and report the effective response.

    Single-increment solves are the default; increments > 1 ramps Fbar
    linearly from the identity and warm-starts each step with the previous
    coefficients. Returns (RBState, EffectiveResponse); the converged flag
    reflects the final increment.
    """
    fb = as_matrix(fbar)
    n = model.n_modes
    xi = np.zeros(n) if xi0 is None else np.asarray(xi0, dtype=np.float64).copy()
    if xi.shape != (n,):
        raise ValueError(f"xi0 must have shape ({n},)")

    total_iter = 0
    total_asm = 0
    state = RBState(xi=xi)
    hbar = fb - np.eye(3)
    for k in range(1, increments + 1):
        fk = np.eye(3) + (k / increments) * hbar
        state = _solve_increment(model, fk, xi)
        xi = state.xi
        total_iter += state.iterations
        total_asm += state.assemblies
    state.iterations = total_iter
    state.assemblies = total_asm
    return state, _response_at(model, fb, state.xi)


def push_forward_tangent(pbar_u, cbar_u, r, u):
    """Tangent of Fbar -> R(Fbar) Pbar(U(Fbar)) given the response at U.

    Differentiates the polar factors: with A = R^T dF, the skew spin solves
    Omega U + U Omega = A - A^T in the eigenbasis of U, dU = A - Omega U,
    and dP = R Omega Pbar(U) + R (Cbar(U) : dU).
    """
    w, q = np.linalg.eigh(u)
    denom = w[:, None] + w[None, :]
    ct = np.empty((3, 3, 3, 3))
    for k in range(3):
        for l in range(3):
            df = np.zeros((3, 3))
            df[k, l] = 1.0
            a = r.T @ df
            s = a - a.T
            om = q @ ((q.T @ s @ q) / denom) @ q.T
            du = a - om @ u
            du = 0.5 * (du + du.T)
            ct[:, :, k, l] = r @ (om @ pbar_u + contract42(cbar_u, du))
    return ct


def evaluate_general(model, fbar, xi0=None, increments=1):
    """Effective response at a general Fbar via its polar decomposition.

    The reduced problem is solved at the stretch tensor U only, so the
    energy of a rotated state equals the energy at U exactly. The stress is
    rotated forward and the tangent is the derivative of the composed map
    Fbar -> R Pbar(U), which for a symmetric input reduces to the plain
    solve output.
    """
    fb = as_matrix(fbar)
    if np.array_equal(fb, fb.T):
        return solve(model, fb, xi0=xi0, increments=increments)
    rot, u = polar(fb)
    state, resp = solve(model, u, xi0=xi0, increments=increments)
    ct = push_forward_tangent(resp.Pbar, resp.Cbar, rot, u)
    return state, EffectiveResponse(
        Wbar=resp.Wbar, Pbar=rot @ resp.Pbar, Cbar=ct,
        Ctaylor=np.einsum("im,kn,mjnl->ijkl", rot, rot, resp.Ctaylor),
        c_qp=resp.c_qp, V_excl=resp.V_excl)


def reconstruct_displacement(model, state, fbar, coords):
    """Nodal displacement (Fbar - I) X + sum_i xi_i u_B(i) at the nodes X.

    The mode displacements are the POD combinations of the training
    fluctuations, so the discrete gradient of the result plus the identity
    reproduces the reduced deformation gradient field.
    """
    if model.basis.disp_modes.size == 0:
        raise ValueError("basis carries no displacement modes")
    coords = np.asarray(coords, dtype=np.float64)
    u = coords @ (as_matrix(fbar) - np.eye(3)).T
    return u + np.tensordot(state.xi, model.basis.disp_modes, axes=1)
