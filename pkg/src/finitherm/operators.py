"""Dense operator algebra, thermal states, entropic functionals and work accounting.

Everything is in natural units (hbar = k_B = 1): energies and inverse
temperatures are reciprocal of each other, entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-10


class SupportError(ValueError):
    """Relative entropy requested between states with incompatible support."""


def as_matrix(op) -> np.ndarray:
    """Accept a wrapper object or a bare array and return the dense matrix."""
    m = getattr(op, "mat", op)
    return np.asarray(m, dtype=complex)


class HermitianOperator:
    """A dense Hermitian matrix (observable or Hamiltonian)."""

    def __init__(self, entries):
        m = np.asarray(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        scale = max(1.0, np.abs(m).max())
        if np.abs(m - m.conj().T).max() > HERMITICITY_TOL * scale:
            raise ValueError("matrix is not Hermitian within 1e-12")
        self.mat = 0.5 * (m + m.conj().T)
        self.dim = m.shape[0]

    def expectation(self, rho) -> float:
        return float(np.real(np.trace(as_matrix(rho) @ self.mat)))


class DensityMatrix(HermitianOperator):
    """A valid quantum state: Hermitian, unit trace, positive semidefinite."""

    def __init__(self, entries):
        super().__init__(entries)
        tr = np.trace(self.mat).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace is {tr}, not 1 within 1e-10")
        w = np.linalg.eigvalsh(self.mat)
        if w.min() < EIGENVALUE_FLOOR:
            raise ValueError(f"negative eigenvalue {w.min()} below tolerance")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mat)


@dataclass(frozen=True)
class ThermalContext:
    """Inverse temperature(s) of the environment; beta_hot < beta for engines."""

    beta: float
    beta_hot: float | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.beta_hot is not None and not self.beta_hot < self.beta:
            raise ValueError("beta_hot must be strictly smaller than beta")

    @property
    def carnot_efficiency(self) -> float:
        if self.beta_hot is None:
            raise ValueError("two temperatures required for an efficiency")
        return 1.0 - self.beta_hot / self.beta


@dataclass
class ThermoReport:
    """Energetic bookkeeping of one protocol or engine cycle.

    All entries are raw energies in natural units; `entropy_production`
    is dimensionless (beta-scaled dissipated work).
    """

    work: float
    free_energy_change: float
    dissipated_work: float
    entropy_production: float
    work_variance: float | None = None
    heat: float | None = None
    power: float | None = None
    power_fluctuations: float | None = None
    efficiency: float | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_work(cls, work, free_energy_change, beta, work_variance=None,
                  heat=None, tau=None, efficiency=None, **extras):
        w_diss = work - free_energy_change
        power = None
        power_fluctuations = None
        if tau is not None:
            power = -work / tau
            if work_variance is not None:
                power_fluctuations = work_variance / tau
        return cls(work=work, free_energy_change=free_energy_change,
                   dissipated_work=w_diss, entropy_production=beta * w_diss,
                   work_variance=work_variance, heat=heat, power=power,
                   power_fluctuations=power_fluctuations,
                   efficiency=efficiency, extras=dict(extras))


def _clipped_eigh(rho):
    w, u = np.linalg.eigh(as_matrix(rho))
    if w.min() < EIGENVALUE_FLOOR:
        raise ValueError(f"matrix has eigenvalue {w.min()} below -1e-10")
    return np.clip(w, 0.0, None), u


@dataclass(frozen=True)
class GibbsState:
    """Thermal state together with its (log) partition function."""

    rho: DensityMatrix
    log_z: float

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))


def gibbs_state(hamiltonian, ctx_or_beta) -> GibbsState:
    """Thermal state exp(-beta H)/Z with the partition function alongside.

    The spectrum is shifted by its minimum before exponentiation so that
    large beta*H never overflows.
    """
    beta = getattr(ctx_or_beta, "beta", ctx_or_beta)
    h = as_matrix(hamiltonian)
    w, u = np.linalg.eigh(h)
    e0 = w.min()
    boltz = np.exp(-beta * (w - e0))
    z_shifted = boltz.sum()
    p = boltz / z_shifted
    rho = (u * p) @ u.conj().T
    return GibbsState(DensityMatrix(rho), float(np.log(z_shifted) - beta * e0))


def log_partition(hamiltonian, beta) -> float:
    w = np.linalg.eigvalsh(as_matrix(hamiltonian))
    e0 = w.min()
    return float(np.log(np.exp(-beta * (w - e0)).sum()) - beta * e0)


def von_neumann_entropy(rho) -> float:
    w, _ = _clipped_eigh(rho)
    w = w[w > 0]
    return float(-(w * np.log(w)).sum())


def _support_checked_logs(rho, sigma, cutoff=1e-14):
    """Eigen-decompose both states and verify supp(rho) within supp(sigma)."""
    pw, pu = _clipped_eigh(rho)
    sw, su = _clipped_eigh(sigma)
    dead = sw <= cutoff * max(sw.max(), 1e-300)
    if dead.any():
        # weight of rho on the kernel of sigma
        overlap = pu.conj().T @ su[:, dead]
        leak = float(np.real((pw[:, None] * np.abs(overlap) ** 2).sum()))
        if leak > 1e-12:
            raise SupportError(
                "infinite relative entropy: first state has weight "
                f"{leak:.3e} outside the support of the second")
    log_sigma = (su * np.log(np.where(dead, 1.0, sw))) @ su.conj().T
    return pw, pu, log_sigma


def relative_entropy(rho, sigma) -> float:
    """S(rho||sigma) = Tr[rho (log rho - log sigma)], >= 0."""
    pw, pu, log_sigma = _support_checked_logs(rho, sigma)
    live = pw > 0
    s_rho = float((pw[live] * np.log(pw[live])).sum())
    cross = float(np.real(np.einsum("i,ij,jk,ki->", pw, pu.conj().T,
                                    log_sigma, pu)))
    return max(s_rho - cross, 0.0)


def relative_entropy_variance(rho, sigma) -> float:
    """V(rho||sigma) = Tr[rho (log rho - log sigma)^2] - S(rho||sigma)^2."""
    pw, pu, log_sigma = _support_checked_logs(rho, sigma)
    log_rho = (pu * np.log(np.where(pw > 0, pw, 1.0))) @ pu.conj().T
    delta = log_rho - log_sigma
    r = as_matrix(rho)
    mean = float(np.real(np.trace(r @ delta)))
    second = float(np.real(np.trace(r @ delta @ delta)))
    return max(second - mean**2, 0.0)


def entropies(rho, sigma) -> tuple[float, float, float]:
    """(S(rho), S(rho||sigma), V(rho||sigma)) in one call."""
    return (von_neumann_entropy(rho), relative_entropy(rho, sigma),
            relative_entropy_variance(rho, sigma))


def matrix_sqrt(rho) -> np.ndarray:
    w, u = _clipped_eigh(rho)
    return (u * np.sqrt(w)) @ u.conj().T


def hellinger_angle(rho, sigma) -> float:
    """2 arccos Tr[sqrt(rho) sqrt(sigma)], the geodesic distance under
    full Hamiltonian control.  Symmetric, in [0, pi]."""
    fid = np.real(np.trace(matrix_sqrt(rho) @ matrix_sqrt(sigma)))
    return float(2.0 * np.arccos(np.clip(fid, -1.0, 1.0)))


def nonequilibrium_free_energy(rho, hamiltonian, beta) -> float:
    """F(rho) = Tr[rho H] - S(rho)/beta."""
    e = float(np.real(np.trace(as_matrix(rho) @ as_matrix(hamiltonian))))
    return e - von_neumann_entropy(rho) / beta


def kubo_transform(rho, op) -> np.ndarray:
    """Integral of rho^s (op - <op>) rho^(1-s) over s in [0, 1].

    This is the kernel through which a Hamiltonian perturbation moves the
    Gibbs state: d(pi)/d(lambda) = -beta * kubo_transform(pi, dH/dlambda).
    """
    w, u = _clipped_eigh(rho)
    a = as_matrix(op)
    mean = float(np.real((w * np.diag(u.conj().T @ a @ u).real).sum()))
    a_tilde = u.conj().T @ (a - mean * np.eye(a.shape[0])) @ u
    pm = w[:, None]
    pn = w[None, :]
    diff = pm - pn
    logdiff = np.log(np.where(pm > 0, pm, 1.0)) - np.log(np.where(pn > 0, pn, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        coeff = np.where(np.abs(logdiff) > 1e-14, diff / logdiff, 0.5 * (pm + pn))
    return u @ (coeff * a_tilde) @ u.conj().T


@dataclass(frozen=True)
class JumpRecord:
    """An instantaneous Hamiltonian quench: the state is frozen across it."""

    state_before: np.ndarray
    h_before: np.ndarray
    h_after: np.ndarray

    def work(self) -> float:
        dh = as_matrix(self.h_after) - as_matrix(self.h_before)
        return float(np.real(np.trace(as_matrix(self.state_before) @ dh)))


def work_and_heat(times, hamiltonians, states, jumps=(), beta=1.0,
                  hdot=None, free_energy_change=None) -> ThermoReport:
    """Work and heat of a sampled trajectory plus endpoint quenches.

    No spurious 1/2 factor on quenches: each jump contributes the full
    Tr[rho_pre (H_after - H_before)].  Q is fixed by the first law,
    Q = W - Delta E, so W - Delta E - Q = 0 identically.

    `hdot` may supply dH/dt on the same grid; otherwise it is taken by
    central differences.  The smooth part is integrated with composite
    Simpson, so grid refinement is the caller's accuracy knob.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    hs = np.asarray([as_matrix(h) for h in hamiltonians])
    rhos = np.asarray([as_matrix(r) for r in states])
    if len(hs) != len(t) or len(rhos) != len(t):
        raise ValueError("times, hamiltonians and states must have equal length")

    if hdot is None:
        hdot = np.gradient(hs, t, axis=0)
    else:
        hdot = np.asarray([as_matrix(h) for h in hdot])
    integrand = np.einsum("tij,tji->t", rhos, hdot).real
    w_smooth = float(simpson(integrand, x=t)) if len(t) > 1 else 0.0

    w_jumps = sum(j.work() for j in jumps)
    work = w_smooth + w_jumps

    # energy change including the quenches at the recorded ends
    e_start = np.real(np.trace(rhos[0] @ hs[0]))
    e_end = np.real(np.trace(rhos[-1] @ hs[-1]))
    delta_e = float(e_end - e_start)
    for j in jumps:
        delta_e += j.work()
    heat = work - delta_e

    if free_energy_change is None:
        free_energy_change = (log_partition(hs[0], beta)
                              - log_partition(hs[-1], beta)) / beta
        for j in jumps:
            free_energy_change += (log_partition(j.h_before, beta)
                                   - log_partition(j.h_after, beta)) / beta
    return ThermoReport.from_work(work, free_energy_change, beta,
                                  heat=heat)
