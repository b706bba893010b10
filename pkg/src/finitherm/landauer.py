"""Strongly coupled resonant-level model: metric, limits and optimal erasure.

The two controls are the level energy eps (measured from the chemical
potential) and the coupling strength mu = kappa^2/2.  Natural units
hbar = k_B = 1; all spectral integrals assume the wide-band limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, simpson, solve_ivp
from scipy.optimize import brentq

from .dynamics import fermi, solve_rate_equation
from .geometry import ControlProtocol, MetricField
from .operators import ThermoReport

OMEGA_CUTOFF = 60.0  # in units of k_B T; Fermi tails beyond are < 1e-26


def _kernel(x, mu):
    """Symmetrized frequency kernel of the coupling metric.

    Rows/columns ordered (eps, mu).  The off-diagonal sign is fixed by
    requiring the zero-temperature limit (an angle metric) to emerge
    from the frequency integral.
    """
    x = np.asarray(x, dtype=float)
    denom = (mu * mu + x * x) ** 3
    m_ee = 4.0 * x * mu * mu / denom
    m_em = mu * (mu * mu - 3.0 * x * x) / denom
    m_mm = 2.0 * x * (x * x - mu * mu) / denom
    return m_ee, m_em, m_mm


def _kernel_tail(x0, mu):
    """Integrals of the kernel over x in (x0, infinity), in closed form."""
    d = mu * mu + x0 * x0
    return (mu * mu / d**2, -mu * x0 / d**2, x0 * x0 / d**2)


def _gauss_panels(breaks, order=24):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        xs.append(0.5 * (a + b) + half * nodes)
        ws.append(half * weights)
    return np.concatenate(xs), np.concatenate(ws)


def _frequency_breaks(eps, mu, beta, cutoff):
    """Panel boundaries: a geometric ladder around the kernel peak at
    omega = eps (the kernels decay algebraically over decades) plus the
    thermal window edges."""
    lo, hi = -cutoff / beta, cutoff / beta
    breaks = {lo, hi, 0.0}
    k = 1.0
    while k * mu < 2.0 * (cutoff / beta):
        for b in (eps - k * mu, eps + k * mu):
            if lo < b < hi:
                breaks.add(b)
        k *= 3.0
    for b in (eps, -1.0 / beta, 1.0 / beta, -10.0 / beta, 10.0 / beta):
        if lo < b < hi:
            breaks.add(b)
    return sorted(breaks)


def resonant_metric(eps, mu, beta=1.0, cutoff=OMEGA_CUTOFF, order=24):
    """Thermodynamic metric of the resonant level at one control point.

    Composite Gauss panels resolve the Lorentzian-like peak at omega =
    eps (width mu) and the Fermi window; the omega < -cutoff/beta tail,
    where the Fermi factor is 1 within 1e-26, is added in closed form.
    """
    if mu <= 0:
        raise ValueError("the coupling mu must be positive")
    om, w = _gauss_panels(_frequency_breaks(eps, mu, beta, cutoff), order)
    f = fermi(beta * om)
    m_ee, m_em, m_mm = _kernel(eps - om, mu)
    g_ee = float(w @ (f * m_ee))
    g_em = float(w @ (f * m_em))
    g_mm = float(w @ (f * m_mm))
    t_ee, t_em, t_mm = _kernel_tail(eps + cutoff / beta, mu)
    g = np.array([[g_ee + t_ee, g_em + t_em], [g_em + t_em, g_mm + t_mm]])
    return (beta / np.pi) * g


def resonant_metric_field(beta=1.0, **kwargs) -> MetricField:
    def fn(lam):
        return resonant_metric(lam[0], lam[1], beta, **kwargs)

    return MetricField(fn, 2, fd_step=1e-5)


def metric_high_temperature(mu, beta=1.0):
    """Leading small-(beta eps, beta mu) form: isotropic, ~ 1/(8 mu)."""
    return beta**2 / (8.0 * mu) * np.eye(2)


def metric_zero_temperature(eps, mu, beta=1.0):
    """Step-function Fermi factor: the angle metric in the (eps, mu) plane."""
    d = (mu * mu + eps * eps) ** 2
    return (beta / np.pi) * np.array([[mu * mu, -eps * mu],
                                      [-eps * mu, eps * eps]]) / d


def metric_weak_coupling(eps, gamma, beta=1.0):
    """Scalar eps-eps metric at small constant coupling (rate Gamma)."""
    f = fermi(beta * eps)
    return beta**2 * f * (1.0 - f) / gamma


def ht_cycloid(eps_star, tau=1.0):
    """Geodesic of the high-temperature metric through the origin.

    eps(t) and mu(t) trace a cycloid from (0, 0) to (eps_star, 0); the
    parametrization is constant-speed.
    """
    def path(t):
        s = t / tau
        return np.array([
            eps_star * (s - np.sin(2 * np.pi * s) / (2 * np.pi)),
            eps_star / np.pi * np.sin(np.pi * s) ** 2,
        ])

    def velocity(t):
        s = t / tau
        return np.array([
            eps_star / tau * (1.0 - np.cos(2 * np.pi * s)),
            eps_star / tau * np.sin(2 * np.pi * s),
        ])

    return ControlProtocol.from_callable(path, tau, 2, velocity_fn=velocity)


@dataclass
class ErasureGeodesic:
    """Optimal erasure path and its saturating dissipation constant."""

    protocol: ControlProtocol
    length: float
    tau_sigma_over_beta: float   # tau * Sigma* / beta, in units of hbar
    eps_end: float
    eps_star: float              # scale of the launching cycloid
    diagnostics: dict = field(default_factory=dict)


def _sqrt_coupling_metric(metric: MetricField) -> MetricField:
    """Pull the metric back to (eps, q) with mu = q^2.

    The coupling axis becomes regular: the integrable 1/sqrt(mu) edge
    singularities of the erasure boundary disappear, and a finite-speed
    zero crossing of q marks the exact decoupling point.
    """
    def fn(lam):
        eps, q = lam
        g = metric([eps, q * q])
        jac = 2.0 * q
        return np.array([[g[0, 0], jac * g[0, 1]],
                         [jac * g[0, 1], jac * jac * g[1, 1]]])

    return MetricField(fn, 2, fd_step=1e-5)


def _shoot_erasure(metric_q: MetricField, eps_star, beta, s0, t_max, rtol,
                   atol):
    """Integrate the geodesic launched tangent to the small cycloid.

    Works in (eps, q = sqrt(mu)); returns (eps at the q = 0 return
    crossing, path length, solution).
    """
    cyc = ht_cycloid(eps_star, 1.0)
    lam0 = cyc.path(s0)
    v0 = cyc.velocity(s0)
    q0 = np.sqrt(lam0[1])
    dq0 = v0[1] / (2.0 * q0)

    def rhs(t, y):
        lam, v = y[:2], y[2:4]
        with np.errstate(all="ignore"):
            gamma = metric_q.christoffel(lam)
            speed = np.sqrt(max(v @ metric_q(lam) @ v, 0.0))
        acc = -np.einsum("ijk,j,k->i", gamma, v, v)
        return [v[0], v[1], acc[0], acc[1], speed]

    def decoupled(t, y):
        return y[1]

    decoupled.terminal = True
    decoupled.direction = -1

    def runaway(t, y):
        return abs(y[0]) - 300.0 / beta

    runaway.terminal = True

    sol = solve_ivp(rhs, (0.0, t_max), [lam0[0], q0, v0[0], dq0, 0.0],
                    events=[decoupled, runaway], rtol=rtol, atol=atol,
                    dense_output=True, max_step=0.02)
    if sol.t_events[0].size == 0:
        return None, None, sol
    y_end = sol.y_events[0][0]
    # the clipped start piece has the exact high-temperature length
    length = y_end[4] + beta * np.sqrt(np.pi * eps_star / 2.0) * s0
    return y_end[0], length, sol


def erasure_geodesic(beta_eps_target, beta=1.0, mu_launch=None,
                     rtol=1e-8, atol=1e-10, xtol=1e-4,
                     max_iter=50) -> ErasureGeodesic:
    """Minimal-dissipation erasure protocol of the resonant level.

    The boundary value problem is turned into an initial value problem:
    the full metric reduces to the high-temperature one near the origin,
    so the geodesic family through (0, 0) is labelled by the scale of
    its tangent cycloid.  The scale is bisected until the coupling
    returns to zero exactly when eps reaches the target.
    """
    if beta_eps_target < 0.05:
        raise ValueError("target too small; the high-temperature cycloid "
                         "already covers it")
    metric_q = _sqrt_coupling_metric(resonant_metric_field(beta))
    target = beta_eps_target / beta

    cache = {}

    def eps_end_of(log_star):
        if log_star in cache:
            return cache[log_star]
        eps_star = np.exp(log_star) / beta
        s0 = np.sqrt((mu_launch or 1e-6 / beta) / (np.pi * eps_star))
        eps_end, length, sol = _shoot_erasure(
            metric_q, eps_star, beta, s0, t_max=40.0, rtol=rtol, atol=atol)
        if eps_end is None:
            raise RuntimeError("geodesic shot did not return to mu = 0")
        cache[log_star] = (eps_end, length, sol)
        return cache[log_star]

    lo, hi = np.log(0.02), np.log(0.02)
    while eps_end_of(hi)[0] < target:
        hi += np.log(2.5)
        if hi > np.log(1e3):
            raise RuntimeError("could not bracket the erasure target")
    lo = hi - np.log(2.5)

    def objective(log_star):
        return eps_end_of(log_star)[0] - target

    log_star = brentq(objective, lo, hi, xtol=xtol, maxiter=max_iter)
    eps_end, length, sol = eps_end_of(log_star)

    n = 400
    ts = np.linspace(sol.t[0], sol.t_events[0][0], n)
    lams = sol.sol(ts)[:2].T
    lams[:, 1] = lams[:, 1] ** 2          # back from q to mu
    protocol = ControlProtocol.from_samples(ts - ts[0], lams)
    return ErasureGeodesic(
        protocol=protocol,
        length=length,
        tau_sigma_over_beta=length**2 / beta,
        eps_end=eps_end,
        eps_star=np.exp(log_star) / beta,
        diagnostics={"n_shots": len(cache), "mu_max": float(lams[:, 1].max()),
                     "eps_end_error": float(eps_end - target)},
    )


def one_param_protocol_cost(beta_mu_star, beta_eps_target, beta=1.0, tau=1.0,
                            order=24):
    """Dissipation of the three-stage protocol with one parameter moving
    at a time: couple up to mu*, sweep eps at fixed coupling, decouple.

    The mu -> 0 edge carries an integrable 1/sqrt(mu) singularity that
    the substitution mu = u^2 removes exactly; the eps-integral tail
    beyond the erasure target is exponentially small and dropped (the
    bound is quoted at the target).
    """
    mu_star = beta_mu_star / beta
    eps_cap = beta_eps_target / beta

    def sqrt_g_mm_of_u(u):
        g = resonant_metric(0.0, u * u, beta, order=order)
        return np.sqrt(max(g[1, 1], 0.0)) * 2.0 * u

    l_couple, _ = quad(sqrt_g_mm_of_u, 0.0, np.sqrt(mu_star), limit=200)

    def sqrt_g_ee(eps):
        g = resonant_metric(eps, mu_star, beta, order=order)
        return np.sqrt(max(g[0, 0], 0.0))

    l_sweep, _ = quad(sqrt_g_ee, 0.0, eps_cap, limit=200)
    # stage 3 (decoupling at large eps) has exponentially small length
    l_decouple, _ = quad(
        lambda u: np.sqrt(max(resonant_metric(eps_cap, u * u, beta,
                                              order=order)[1, 1], 0.0)) * 2 * u,
        0.0, np.sqrt(mu_star), limit=200)
    total = l_couple + l_sweep + l_decouple
    return {
        "sigma_star": total**2 / tau,
        "length_couple": l_couple,
        "length_sweep": l_sweep,
        "length_decouple": l_decouple,
    }


def weak_coupling_protocol(gamma, tau, beta=1.0, beta_eps_cap=40.0):
    """The analytic slow-driving optimal gap ramp for erasure at fixed
    weak coupling; capped once beta*eps reaches the erasure threshold."""
    def gap(t):
        val = 2.0 / beta * np.log(np.tan(np.pi * (t / tau + 1.0) / 4.0))
        return min(val, beta_eps_cap / beta)

    return gap


def weak_coupling_optimal(gamma, tau, beta=1.0, beta_eps_cap=40.0,
                          n_grid=4001) -> tuple[ControlProtocol, ThermoReport]:
    """Work of the analytic protocol under the exact rate equation.

    For gamma*tau >> 1 the work approaches (ln 2 + pi^2/(4 gamma tau))/beta.
    """
    gap = weak_coupling_protocol(gamma, tau, beta, beta_eps_cap)
    ts = np.linspace(0.0, tau, n_grid)
    _, p = solve_rate_equation(gap, gamma, tau, beta=beta, t_eval=ts)
    sin_term = np.sin(np.pi * (ts / tau + 1.0) / 2.0)
    gaps = np.array([gap(t) for t in ts])
    gapdot = np.where(gaps < beta_eps_cap / beta,
                      (np.pi / (beta * tau)) / sin_term, 0.0)
    work = float(simpson(gapdot * p, x=ts))
    d_f = (np.log(2.0) - np.log1p(np.exp(-beta * gaps[-1]))) / beta
    protocol = ControlProtocol.from_samples(ts, gaps[:, None])
    report = ThermoReport.from_work(work, d_f, beta,
                                    landauer_cost=np.log(2.0) / beta)
    return protocol, report


@dataclass
class ThermalizationCheck:
    """Frozen-control relaxation versus the thermal frequency integrals."""

    p_t: float
    v_t: float
    p_thermal: float
    v_thermal: float
    p_error: float
    v_error: float


def frozen_thermalization_check(eps, kappa, p0, horizon, beta=1.0,
                                cutoff=OMEGA_CUTOFF, order=24,
                                inner="quadrature", inner_nodes=None
                                ) -> ThermalizationCheck:
    """Evaluate the exact reduced dynamics at frozen controls and compare
    with the thermal expectation values.

    Both sides are integrated over the same frequency window: the
    interaction energy v carries a logarithmic wide-band divergence that
    cancels in the comparison only when the cutoffs match.
    """
    mu = 0.5 * kappa * kappa
    lo, hi = -cutoff / beta, cutoff / beta
    om, w = _gauss_panels(_frequency_breaks(eps, mu, beta, cutoff), order=order)
    f = fermi(beta * om)

    t = horizon
    if inner == "quadrature":
        # resolve the e^{i omega s} oscillations: > 8 nodes per period
        n_inner = inner_nodes or int(max(2000, 10 * t * (hi - lo) / (2 * np.pi)))
        s_nodes, s_w = _gauss_panels(np.linspace(0.0, t, max(n_inner // 32, 4)),
                                     order=32)
        # G(t, s) = exp(-(mu + i eps)(t - s)) at frozen controls
        expo = np.exp(np.outer(1j * om, t - s_nodes)
                      + (-(mu + 1j * eps)) * (t - s_nodes)[None, :])
        inner_int = kappa * (expo @ s_w)
    else:
        denom = mu + 1j * (eps - om)
        inner_int = kappa * (1.0 - np.exp(-t * denom)) / denom

    g_decay = np.exp(-2.0 * mu * t)
    # analytic omega < -cutoff tail of the occupation integrals (Fermi
    # factor is 1 there); the damped oscillatory parts are < e^{-mu t}
    lorentz_tail = (np.arctan((lo - eps) / mu) + np.pi / 2) / np.pi
    p_t = (g_decay * p0 + float(w @ (f * np.abs(inner_int) ** 2)) / (2 * np.pi)
           + (1.0 + g_decay) * lorentz_tail)
    v_t = float(w @ (f * np.imag(inner_int))) / np.pi

    laplace = 1.0 / (mu + 1j * (eps - om))
    p_th = float(w @ (f * np.real(laplace))) / np.pi + lorentz_tail
    # v carries the wide-band logarithmic divergence: both sides share the
    # same frequency window and only their difference is physical
    v_th = kappa * float(w @ (f * np.imag(laplace))) / np.pi
    return ThermalizationCheck(p_t, v_t, p_th, v_th,
                               abs(p_t - p_th), abs(v_t - v_th))


def rate_equation_work(gap_fn, gamma, tau, beta=1.0, n_grid=4001,
                       gapdot_fn=None):
    """Exact work of a driven two-level rate equation (oracle helper)."""
    ts = np.linspace(0.0, tau, n_grid)
    _, p = solve_rate_equation(gap_fn, gamma, tau, beta=beta, t_eval=ts)
    if gapdot_fn is not None:
        gapdot = np.array([gapdot_fn(t) for t in ts])
    else:
        gaps = np.array([gap_fn(t) for t in ts])
        gapdot = np.gradient(gaps, ts)
    return float(simpson(gapdot * p, x=ts))
