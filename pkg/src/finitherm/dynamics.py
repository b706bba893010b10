"""Dynamical generators, propagation, Drazin inverses and driving expansions.

Super-operators act on column-stacked operators: vec(A X B) = (B^T kron A) vec(X).
The convention is fixed here once and tested by a round-trip identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.linalg import expm

from .operators import (DensityMatrix, as_matrix, gibbs_state,
                        kubo_transform)

ABS_TOL = 1e-10
REL_TOL = 1e-8


class IllConditionedGeneratorError(RuntimeError):
    """Eigenvector matrix of a generator is too ill-conditioned to invert."""


class IntegrationFailure(RuntimeError):
    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


def fermi(x):
    """Occupation 1/(1 + e^x), evaluated without overflow for any sign."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return out if out.ndim else float(out)


def solve_rate_equation(gap_fn, gamma, tau, p0=None, beta=1.0, t_eval=None,
                        rtol=REL_TOL, atol=ABS_TOL):
    """Excited population of a two-level system relaxing at rate gamma.

    dp/dt = -gamma (p - f(beta * gap(t))) with f the thermal occupation
    of the instantaneous gap.  Returns (times, populations).
    """
    if t_eval is None:
        t_eval = np.linspace(0.0, tau, 1001)
    if p0 is None:
        p0 = fermi(beta * gap_fn(0.0))

    def rhs(t, y):
        return -gamma * (y - fermi(beta * gap_fn(t)))

    sol = solve_ivp(rhs, (0.0, tau), [float(p0)], t_eval=t_eval,
                    rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise IntegrationFailure(f"rate equation failed: {sol.message}")
    return sol.t, sol.y[0]


def vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape((dim, dim), order="F")


def left_multiplier(a: np.ndarray) -> np.ndarray:
    d = a.shape[0]
    return np.kron(np.eye(d), a)


def right_multiplier(b: np.ndarray) -> np.ndarray:
    d = b.shape[0]
    return np.kron(b.T, np.eye(d))


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """-i [H, .] as a matrix on vectorized operators (hbar = 1)."""
    return -1j * (left_multiplier(h) - right_multiplier(h))


def dissipator_superop(l_op: np.ndarray, gamma: float) -> np.ndarray:
    """gamma (L . L^dag - 1/2 {L^dag L, .}) in vectorized form."""
    l = np.asarray(l_op, dtype=complex)
    ll = l.conj().T @ l
    return gamma * (np.kron(l.conj(), l)
                    - 0.5 * (left_multiplier(ll) + right_multiplier(ll)))


def lindblad_superop(h, dissipators: Sequence[tuple[np.ndarray, float]]):
    s = commutator_superop(as_matrix(h))
    for l_op, gamma in dissipators:
        s = s + dissipator_superop(l_op, gamma)
    return s


def reset_superop(pi: np.ndarray, tau_eq: float) -> np.ndarray:
    """Decay of the state onto pi at rate 1/tau_eq."""
    d = pi.shape[0]
    return (np.outer(vec(pi), vec(np.eye(d))) - np.eye(d * d)) / tau_eq


def thermal_jump_operators(h, beta, rate=1.0):
    """Detailed-balanced jump operators in the eigenbasis of H.

    Downward jumps carry the base rate, upward jumps are suppressed by the
    Boltzmann factor, so the Gibbs state of (H, beta) is the fixed point.
    """
    hm = as_matrix(h)
    w, u = np.linalg.eigh(hm)
    ops = []
    d = len(w)
    for m in range(d):
        for n in range(m + 1, d):
            gap = w[n] - w[m]
            down = np.outer(u[:, m], u[:, n].conj())
            up = np.outer(u[:, n], u[:, m].conj())
            ops.append((down, rate))
            ops.append((up, rate * np.exp(-beta * gap)))
    # pure dephasing in the energy basis keeps coherences decaying
    for m in range(d):
        ops.append((np.outer(u[:, m], u[:, m].conj()), rate))
    return ops


class DynamicsGenerator:
    """A control-parametrized family of trace-preserving generators.

    `kind` is one of 'unitary', 'lindblad', 'reset'.  The map
    `superoperator(lam)` returns the dim^2 x dim^2 matrix acting on
    vectorized operators; `hamiltonian(lam)` the Hamiltonian it derives
    from.
    """

    def __init__(self, kind, hamiltonian_fn, superoperator_fn, dim,
                 beta=None, tau_eq=None):
        self.kind = kind
        self._h = hamiltonian_fn
        self._s = superoperator_fn
        self.dim = dim
        self.beta = beta
        self.tau_eq = tau_eq

    @classmethod
    def unitary(cls, hamiltonian_fn, dim):
        return cls("unitary", hamiltonian_fn,
                   lambda lam: commutator_superop(as_matrix(hamiltonian_fn(lam))),
                   dim)

    @classmethod
    def lindblad(cls, hamiltonian_fn, dissipators_fn, dim, beta=None):
        return cls("lindblad", hamiltonian_fn,
                   lambda lam: lindblad_superop(hamiltonian_fn(lam),
                                                dissipators_fn(lam)),
                   dim, beta=beta)

    @classmethod
    def thermal_lindblad(cls, hamiltonian_fn, dim, beta, rate=1.0):
        return cls.lindblad(
            hamiltonian_fn,
            lambda lam: thermal_jump_operators(hamiltonian_fn(lam), beta, rate),
            dim, beta=beta)

    @classmethod
    def reset(cls, hamiltonian_fn, dim, beta, tau_eq=1.0):
        def superop(lam):
            pi = gibbs_state(hamiltonian_fn(lam), beta).rho.mat
            return reset_superop(pi, tau_eq)
        return cls("reset", hamiltonian_fn, superop, dim,
                   beta=beta, tau_eq=tau_eq)

    def hamiltonian(self, lam) -> np.ndarray:
        return as_matrix(self._h(lam))

    def superoperator(self, lam) -> np.ndarray:
        return np.asarray(self._s(lam), dtype=complex)

    def fixed_point(self, lam) -> np.ndarray:
        """The stationary state at frozen control (Gibbs for thermal kinds)."""
        if self.kind in ("reset",) or (self.kind == "lindblad" and self.beta):
            return gibbs_state(self.hamiltonian(lam), self.beta).rho.mat
        s = self.superoperator(lam)
        w, v = np.linalg.eig(s)
        k = np.argmin(np.abs(w))
        rho = unvec(v[:, k], self.dim)
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real

    def check_trace_preserving(self, lam, tol=1e-10) -> bool:
        s = self.superoperator(lam)
        lid = vec(np.eye(self.dim)).conj()
        resid = np.abs(lid @ s).max()
        return bool(resid <= tol * max(1.0, np.abs(s).max()))


def _control_path(control) -> Callable[[float], np.ndarray]:
    path = getattr(control, "path", None)
    return path if path is not None else control


def propagate(gen: DynamicsGenerator, control, rho0, t_grid,
              rtol=REL_TOL, atol=ABS_TOL, validate=True) -> np.ndarray:
    """Integrate d(rho)/dt = G_lam(t)[rho] on the given grid.

    Returns an array of density matrices, one per grid time.  Adaptive
    embedded Runge-Kutta handles the stiff regimes; every returned state
    is checked to be trace-one and positive within 1e-8 when `validate`.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    path = _control_path(control)
    d = gen.dim
    rho0 = as_matrix(rho0)

    def rhs(t, y):
        return gen.superoperator(path(t)) @ y

    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), vec(rho0), t_eval=t_grid,
                    rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise IntegrationFailure(f"propagation failed: {sol.message}",
                                 last_time=sol.t[-1] if len(sol.t) else None)
    states = np.array([unvec(sol.y[:, k], d) for k in range(sol.y.shape[1])])
    if validate:
        for k, rho in enumerate(states):
            tr = np.trace(rho).real
            if abs(tr - 1.0) > 1e-8:
                raise IntegrationFailure(
                    f"trace drifted to {tr} at t={t_grid[k]}", t_grid[k])
            wmin = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
            if wmin < -1e-8:
                raise IntegrationFailure(
                    f"negative population {wmin} at t={t_grid[k]}", t_grid[k])
    return states


class Propagator:
    """The two-time solution map G(t, t') as a super-operator matrix.

    `method` is 'exact-diagonal' for a frozen generator (matrix
    exponential via diagonalization) or 'rk4-adaptive' for driven ones.
    """

    _UNSET = object()

    def __init__(self, gen: DynamicsGenerator, control=None, lam=_UNSET,
                 rtol=REL_TOL, atol=ABS_TOL):
        static = lam is not Propagator._UNSET
        if static == (control is not None):
            raise ValueError("provide exactly one of control or lam")
        self.gen = gen
        self.control = control
        self.lam = lam if static else None
        self.method = "exact-diagonal" if static else "rk4-adaptive"
        self.rtol = rtol
        self.atol = atol

    def __call__(self, t: float, t_from: float) -> np.ndarray:
        n = self.gen.dim ** 2
        if self.method == "exact-diagonal":
            return expm(self.gen.superoperator(self.lam) * (t - t_from))
        if t == t_from:
            return np.eye(n, dtype=complex)
        path = _control_path(self.control)

        def rhs(s, y):
            return (self.gen.superoperator(path(s))
                    @ y.reshape(n, n)).reshape(-1)

        sol = solve_ivp(rhs, (t_from, t), np.eye(n, dtype=complex).reshape(-1),
                        rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise IntegrationFailure(f"propagator failed: {sol.message}")
        return sol.y[:, -1].reshape(n, n)


def drazin_inverse(superop: np.ndarray, kernel_rtol=1e-10,
                   cond_limit=1e8) -> np.ndarray:
    """Inverse of a generator on its support, zero on its kernel.

    Diagonalizes the (generally non-normal) generator; eigenvalues below
    kernel_rtol times the spectral radius count as kernel.
    """
    s = np.asarray(superop, dtype=complex)
    w, v = np.linalg.eig(s)
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedGeneratorError(
            f"eigenvector condition number {cond:.2e} exceeds {cond_limit:.0e}")
    radius = np.abs(w).max()
    if radius == 0.0:
        return np.zeros_like(s)
    inv_w = np.where(np.abs(w) > kernel_rtol * radius, 1.0 / np.where(w == 0, 1.0, w), 0.0)
    return v @ (inv_w[:, None] * np.linalg.inv(v))


def _hamiltonian_dot(gen, control, t, dt):
    path = _control_path(control)
    return (gen.hamiltonian(path(t + dt)) - gen.hamiltonian(path(t - dt))) / (2 * dt)


def slow_driving_state(gen: DynamicsGenerator, control, t, tau,
                       fd_step=None) -> np.ndarray:
    """First-order slow-driving state pi(t) - beta G^D[D_pi[dH/dt]].

    The kernel offset is zero for unique-fixed-point dynamics, which is
    the only case handled here.
    """
    if gen.beta is None:
        raise ValueError("generator needs a temperature for the thermal state")
    path = _control_path(control)
    dt = fd_step if fd_step is not None else 1e-6 * tau
    hdot = _hamiltonian_dot(gen, control, t, dt)
    pi = gibbs_state(gen.hamiltonian(path(t)), gen.beta).rho.mat
    if np.abs(hdot).max() == 0.0:
        return pi
    gd = drazin_inverse(gen.superoperator(path(t)))
    correction = unvec(gd @ vec(kubo_transform(pi, hdot)), gen.dim)
    return pi - gen.beta * correction


def dyson_truncated_state(gen: DynamicsGenerator, control, t, n_grid=201,
                          pi0=None) -> np.ndarray:
    """Fast-driving state pi(lam_i) + integral of G_lam(t')[pi(lam_i)] dt'."""
    path = _control_path(control)
    if pi0 is None:
        if gen.beta is None:
            raise ValueError("generator needs a temperature for the thermal state")
        pi0 = gibbs_state(gen.hamiltonian(path(0.0)), gen.beta).rho.mat
    pi0 = as_matrix(pi0)
    if t == 0.0:
        return pi0.copy()
    ts = np.linspace(0.0, t, n_grid)
    v0 = vec(pi0)
    rates = np.array([gen.superoperator(path(s)) @ v0 for s in ts])
    return pi0 + unvec(simpson(rates, x=ts, axis=0), gen.dim)


def work_variance(gen: DynamicsGenerator, control, tau, rho0=None,
                  start_jump=None, end_jump=None, hdot_fn=None,
                  rtol=REL_TOL, atol=ABS_TOL, fd_step=None):
    """Variance of work for a driven open or closed trajectory.

    Evaluates the double time integral of the two-point work correlator
    by co-evolving the state with the accumulated correlation operator
    A(t) = int_0^t G(t,t')[(H'(t') - <H'>) rho(t')] dt'.  Hamiltonian
    quenches (`start_jump`/`end_jump` = Hamiltonian before the grid
    begins / after it ends) contribute their frozen-state variance plus
    the cross correlation with everything earlier.

    Returns (variance, mean_work).
    """
    path = _control_path(control)
    d = gen.dim
    if rho0 is None:
        if gen.beta is None:
            raise ValueError("need rho0 or a thermal generator")
        h0 = start_jump if start_jump is not None else gen.hamiltonian(path(0.0))
        rho0 = gibbs_state(h0, gen.beta).rho.mat
    rho0 = as_matrix(rho0).copy()
    dt = fd_step if fd_step is not None else 1e-6 * max(tau, 1e-30)

    def hdot(t):
        if hdot_fn is not None:
            return as_matrix(hdot_fn(t))
        t0 = min(max(t, dt), tau - dt)
        return _hamiltonian_dot(gen, control, t0, dt)

    var = 0.0
    w = 0.0
    a0 = np.zeros((d, d), dtype=complex)
    if start_jump is not None:
        dh = gen.hamiltonian(path(0.0)) - as_matrix(start_jump)
        mean = np.trace(rho0 @ dh).real
        var += np.trace(rho0 @ dh @ dh).real - mean**2
        w += mean
        a0 += (dh - mean * np.eye(d)) @ rho0

    def rhs(t, y):
        rho = unvec(y[:d * d], d)
        a = unvec(y[d * d:2 * d * d], d)
        s = gen.superoperator(path(t))
        hd = hdot(t)
        mean = np.trace(rho @ hd).real
        drho = unvec(s @ vec(rho), d)
        da = unvec(s @ vec(a), d) + (hd - mean * np.eye(d)) @ rho
        dw = mean
        dv = 2.0 * np.trace(hd @ a).real
        return np.concatenate([vec(drho), vec(da), [dw, dv]])

    y0 = np.concatenate([vec(rho0), vec(a0), [0.0, 0.0]])
    sol = solve_ivp(rhs, (0.0, tau), y0, rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise IntegrationFailure(f"work variance integration failed: {sol.message}")
    y = sol.y[:, -1]
    rho_end = unvec(y[:d * d], d)
    a_end = unvec(y[d * d:2 * d * d], d)
    w += y[-2].real
    var += y[-1].real

    if end_jump is not None:
        dh = as_matrix(end_jump) - gen.hamiltonian(path(tau))
        mean = np.trace(rho_end @ dh).real
        var += np.trace(rho_end @ dh @ dh).real - mean**2
        var += 2.0 * np.trace(dh @ a_end).real
        w += mean
    return float(var), float(w)
