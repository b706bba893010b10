"""Spin-model free energies, Hessian metrics and collective-erasure scaling.

Controls are energies multiplying classical spin variables s = +-1:

    independent  H = eps * sum_i s_i                      controls (eps,)
    all_to_all   H = eps * M + (J/2) * M^2,  M = sum s_i  controls (eps, J)
    chain        H = eps * sum s_i + J * sum s_i s_{i+1}  controls (eps, J)
    star         H = eps0 s_1 + eps1 sum_{i>1} s_i
                     + J sum_{i>1} s_1 s_i                controls (eps0, eps1, J)

The chain is periodic (a single bond for the N = 2 pair).  Everything is
classical (commuting), so the single-timescale metric is tau_eq times
the Hessian of ln Z in the control energies; tau_eq = 1 and k_B T = 1
are the working units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, logsumexp

from .geometry import (ControlProtocol, GeodesicSolution, MetricField,
                       geodesic_minimize)


class SpinModelFreeEnergy:
    """Closed-form ln Z with analytic gradient and Hessian in the controls.

    The Hessian accepts a batch of control points, which is what makes
    large geodesic sweeps affordable.
    """

    def __init__(self, model, n_spins, log_z_fn, grad_fn, hess_batch_fn,
                 n_controls, control_names):
        self.model = model
        self.n_spins = int(n_spins)
        self._log_z = log_z_fn
        self._grad = grad_fn
        self._hess_batch = hess_batch_fn
        self.n_controls = n_controls
        self.control_names = control_names

    def log_partition(self, controls, beta=1.0) -> float:
        return float(self._log_z(np.atleast_1d(np.asarray(controls, float)),
                                 beta))

    def gradient(self, controls, beta=1.0) -> np.ndarray:
        return np.asarray(self._grad(np.atleast_1d(np.asarray(controls, float)),
                                     beta))

    def hessian(self, controls, beta=1.0) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(controls, dtype=float))
        h = self._hess_batch(lam[None, :], beta)[0]
        return 0.5 * (h + h.T)

    def hessian_batch(self, controls, beta=1.0) -> np.ndarray:
        lams = np.asarray(controls, dtype=float)
        h = self._hess_batch(lams, beta)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def hessian_fd(self, controls, beta=1.0, step=1e-5, retries=3):
        """Finite-difference cross-check of the analytic Hessian.

        Retries with a larger step when noise makes the result indefinite.
        """
        lam = np.atleast_1d(np.asarray(controls, dtype=float))
        n = len(lam)
        for attempt in range(retries):
            h = np.empty((n, n))
            for i in range(n):
                for j in range(n):
                    pp, pm, mp, mm = (lam.copy() for _ in range(4))
                    pp[i] += step; pp[j] += step
                    pm[i] += step; pm[j] -= step
                    mp[i] -= step; mp[j] += step
                    mm[i] -= step; mm[j] -= step
                    h[i, j] = (self.log_partition(pp, beta)
                               - self.log_partition(pm, beta)
                               - self.log_partition(mp, beta)
                               + self.log_partition(mm, beta)) / (4 * step**2)
            h = 0.5 * (h + h.T)
            if np.linalg.eigvalsh(h).min() > -1e-8 * max(np.abs(h).max(), 1.0):
                return h
            step *= 10
        raise RuntimeError("finite-difference Hessian stayed indefinite")


def _log_2cosh(x):
    # log(2 cosh x) without overflow
    return np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x)))


def independent_model(n_spins) -> SpinModelFreeEnergy:
    n = n_spins

    def log_z(lam, beta):
        return n * _log_2cosh(beta * lam[0])

    def grad(lam, beta):
        return np.array([-n * beta * np.tanh(beta * lam[0])])

    def hess_batch(lams, beta):
        return (n * beta**2 / np.cosh(beta * lams[:, 0]) ** 2)[:, None, None]

    return SpinModelFreeEnergy("independent", n, log_z, grad, hess_batch, 1,
                               ("eps",))


def all_to_all_model(n_spins) -> SpinModelFreeEnergy:
    n = n_spins
    k = np.arange(n + 1)
    m = 2.0 * k - n
    log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    stats = np.stack([m, 0.5 * m**2])  # conjugate to (eps, J)

    def log_weights(lams, beta):
        return (log_binom[None, :]
                - beta * (lams[:, :1] * m[None, :]
                          + 0.5 * lams[:, 1:2] * (m**2)[None, :]))

    def log_z(lam, beta):
        return logsumexp(log_weights(lam[None, :], beta)[0])

    def moments(lams, beta):
        loga = log_weights(lams, beta)
        p = np.exp(loga - logsumexp(loga, axis=1, keepdims=True))
        mean = p @ stats.T                              # (B, 2)
        centered = stats[None, :, :] - mean[:, :, None]  # (B, 2, n+1)
        cov = np.einsum("bin,bn,bjn->bij", centered, p, centered)
        return mean, cov

    def grad(lam, beta):
        mean, _ = moments(lam[None, :], beta)
        return -beta * mean[0]

    def hess_batch(lams, beta):
        _, cov = moments(lams, beta)
        return beta**2 * cov

    return SpinModelFreeEnergy("all_to_all", n, log_z, grad, hess_batch, 2,
                               ("eps", "J"))


def _chain_eigen_derivs(eps, j, beta):
    """Transfer-matrix eigenvalues a +- sqrt(b) with first and second
    derivatives in (eps, J); `eps`, `j` may be arrays.

    T(s, s') = exp(-beta (J s s' + eps (s + s')/2)), so
    a = e^{-beta J} cosh(beta eps) and
    b = e^{-2 beta J} sinh^2(beta eps) + e^{2 beta J}.
    """
    be, bj = beta * eps, beta * j
    a = np.exp(-bj) * np.cosh(be)
    a_e = beta * np.exp(-bj) * np.sinh(be)
    da = np.stack([a_e, -beta * a], axis=-1)
    d2a = np.stack([
        np.stack([beta**2 * a, -beta * a_e], axis=-1),
        np.stack([-beta * a_e, beta**2 * a], axis=-1)], axis=-2)

    b = np.exp(-2 * bj) * np.sinh(be) ** 2 + np.exp(2 * bj)
    b_e = beta * np.exp(-2 * bj) * np.sinh(2 * be)
    b_j = -2 * beta * (np.exp(-2 * bj) * np.sinh(be) ** 2 - np.exp(2 * bj))
    b_ee = 2 * beta**2 * np.exp(-2 * bj) * np.cosh(2 * be)
    b_ej = -2 * beta**2 * np.exp(-2 * bj) * np.sinh(2 * be)
    b_jj = 4 * beta**2 * b
    db = np.stack([b_e, b_j], axis=-1)
    d2b = np.stack([np.stack([b_ee, b_ej], axis=-1),
                    np.stack([b_ej, b_jj], axis=-1)], axis=-2)

    s = np.sqrt(b)
    ds = db / (2 * s[..., None])
    d2s = (d2b / (2 * s[..., None, None])
           - np.einsum("...i,...j->...ij", db, db) / (4 * s[..., None, None]**3))

    return ((a + s, da + ds, d2a + d2s), (a - s, da - ds, d2a - d2s))


def chain_model(n_spins) -> SpinModelFreeEnergy:
    n = n_spins
    if n == 2:
        # the periodic pair has a single bond: same model as all-to-all up
        # to a term linear in J (no effect on the metric)
        inner = all_to_all_model(2)

        def log_z2(lam, beta):
            return inner._log_z(lam, beta) + beta * lam[1]

        def grad2(lam, beta):
            g = np.array(inner._grad(lam, beta), dtype=float)
            g[1] += beta
            return g

        return SpinModelFreeEnergy("chain", 2, log_z2, grad2,
                                   inner._hess_batch, 2, ("eps", "J"))

    def log_z(lam, beta):
        (lp, _, _), (lm, _, _) = _chain_eigen_derivs(lam[0], lam[1], beta)
        r = lm / lp
        return n * np.log(lp) + np.log1p(r**n)

    def grad_hess(lams, beta):
        (lp, dlp, d2lp), (lm, dlm, d2lm) = _chain_eigen_derivs(
            lams[..., 0], lams[..., 1], beta)
        r = lm / lp
        denom = 1.0 + r**n
        u_p = 1.0 / (lp * denom)
        u_m = r ** (n - 1) / (lp * denom)
        q_p = 1.0 / (lp**2 * denom)
        q_m = r ** (n - 2) / (lp**2 * denom)
        g = n * (u_p[..., None] * dlp + u_m[..., None] * dlm)
        h = n * ((n - 1) * (q_p[..., None, None]
                            * np.einsum("...i,...j->...ij", dlp, dlp)
                            + q_m[..., None, None]
                            * np.einsum("...i,...j->...ij", dlm, dlm))
                 + u_p[..., None, None] * d2lp
                 + u_m[..., None, None] * d2lm) \
            - np.einsum("...i,...j->...ij", g, g)
        return g, h

    return SpinModelFreeEnergy(
        "chain", n, log_z,
        lambda lam, beta: grad_hess(lam, beta)[0],
        lambda lams, beta: grad_hess(lams, beta)[1], 2, ("eps", "J"))


def star_model(n_spins) -> SpinModelFreeEnergy:
    n = n_spins

    def branches(lams, beta):
        eps0, eps1, j = lams[..., 0], lams[..., 1], lams[..., 2]
        out = []
        for sign in (+1.0, -1.0):
            t = np.tanh(beta * (eps1 + sign * j))
            log_a = (-sign * beta * eps0
                     + (n - 1) * _log_2cosh(beta * (eps1 + sign * j)))
            zero = np.zeros_like(t)
            grad = np.stack([-sign * beta * np.ones_like(t),
                             (n - 1) * beta * t,
                             sign * (n - 1) * beta * t], axis=-1)
            sech2 = (n - 1) * beta**2 * (1.0 - t**2)
            hess = np.stack([
                np.stack([zero, zero, zero], axis=-1),
                np.stack([zero, sech2, sign * sech2], axis=-1),
                np.stack([zero, sign * sech2, sech2], axis=-1)], axis=-2)
            out.append((log_a, grad, hess))
        return out

    def log_z(lam, beta):
        (la, _, _), (lb, _, _) = branches(lam[None, :], beta)
        return np.logaddexp(la, lb)[0]

    def grad_hess(lams, beta):
        (la, ga, ha), (lb, gb, hb) = branches(lams, beta)
        lz = np.logaddexp(la, lb)
        wa = np.exp(la - lz)[..., None]
        wb = np.exp(lb - lz)[..., None]
        g = wa * ga + wb * gb
        h = (wa[..., None] * (ha + np.einsum("...i,...j->...ij", ga, ga))
             + wb[..., None] * (hb + np.einsum("...i,...j->...ij", gb, gb))
             - np.einsum("...i,...j->...ij", g, g))
        return g, h

    return SpinModelFreeEnergy(
        "star", n, log_z,
        lambda lam, beta: grad_hess(lam[None, :], beta)[0][0],
        lambda lams, beta: grad_hess(lams, beta)[1], 3,
        ("eps0", "eps1", "J"))


_FACTORIES = {
    "independent": independent_model,
    "all_to_all": all_to_all_model,
    "chain": chain_model,
    "star": star_model,
}


def spin_model(name, n_spins) -> SpinModelFreeEnergy:
    try:
        return _FACTORIES[name](n_spins)
    except KeyError:
        raise ValueError(f"unknown spin model '{name}'; "
                         f"choose from {sorted(_FACTORIES)}") from None


def hessian_metric(model: SpinModelFreeEnergy, beta=1.0, tau_eq=1.0) -> MetricField:
    """Single-relaxation-timescale metric tau_eq * Hessian(ln Z)."""
    return MetricField(
        lambda lam: tau_eq * model.hessian(lam, beta), model.n_controls,
        batch_fn=lambda lams: tau_eq * model.hessian_batch(lams, beta))


def erasure_boundary(model: SpinModelFreeEnergy, eps_final=5.0):
    """Interaction-free boundary conditions for collective erasure."""
    if model.model == "independent":
        return np.array([0.0]), np.array([eps_final])
    if model.model in ("all_to_all", "chain"):
        return np.array([0.0, 0.0]), np.array([eps_final, 0.0])
    if model.model == "star":
        return (np.array([0.0, 0.0, 0.0]),
                np.array([eps_final, eps_final, 0.0]))
    raise ValueError(f"no erasure boundary for model '{model.model}'")


def _erasure_bounds(model, eps_final):
    # generous box that keeps the transfer-matrix exponentials finite;
    # the star hub field legitimately makes excursions of order N
    pad = 4.0 * max(eps_final, 1.0)
    if model.model == "star":
        hub = (0.6 * eps_final * model.n_spins + pad)
        return ([-hub, -pad, -pad], [hub, pad, pad])
    return ([-pad] * model.n_controls, [pad] * model.n_controls)


def _densify(waypoints, per_leg=200):
    pts = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg = a + np.linspace(0.0, 1.0, per_leg)[:, None] * (b - a)
        pts.append(seg[:-1])
    pts.append(waypoints[-1:])
    return np.vstack(pts)


def _star_logodds_transform(n_spins, beta=1.0):
    """Coordinate change (eps0, eps1, J) -> (eta, eps1, J) for the star.

    eta is the half log-odds between the two hub branches of ln Z.  The
    hub field legitimately makes excursions of order N during optimal
    erasure, but the branch crossover region — which carries all the
    length — is exponentially narrow in eps0.  In eta it is O(1) wide,
    so path discretizations resolve it at a fixed node budget.
    """
    m = n_spins - 1

    def leaf_gap(eps1, j):
        return 0.5 * m * (_log_2cosh(beta * (eps1 + j))
                          - _log_2cosh(beta * (eps1 - j)))

    def to_eta(lams):
        lams = np.atleast_2d(np.asarray(lams, dtype=float))
        eta = -beta * lams[:, 0] + leaf_gap(lams[:, 1], lams[:, 2])
        return np.stack([eta, lams[:, 1], lams[:, 2]], axis=1)

    def to_eps0(lams_eta):
        lams_eta = np.atleast_2d(np.asarray(lams_eta, dtype=float))
        eps0 = (leaf_gap(lams_eta[:, 1], lams_eta[:, 2])
                - lams_eta[:, 0]) / beta
        return np.stack([eps0, lams_eta[:, 1], lams_eta[:, 2]], axis=1)

    def jacobian(lams_eta):
        """d(eps0, eps1, J)/d(eta, eps1, J) at a batch of new-chart points."""
        lams_eta = np.atleast_2d(np.asarray(lams_eta, dtype=float))
        b = len(lams_eta)
        t_v = np.tanh(beta * (lams_eta[:, 1] + lams_eta[:, 2]))
        t_u = np.tanh(beta * (lams_eta[:, 1] - lams_eta[:, 2]))
        jac = np.zeros((b, 3, 3))
        jac[:, 0, 0] = -1.0 / beta
        jac[:, 0, 1] = 0.5 * m * (t_v - t_u)
        jac[:, 0, 2] = 0.5 * m * (t_v + t_u)
        jac[:, 1, 1] = 1.0
        jac[:, 2, 2] = 1.0
        return jac

    return to_eta, to_eps0, jacobian


def _star_flip_paths_eta(eps_final, n_spins, beta=1.0):
    """Hub-swing starting shapes in the log-odds chart.

    Slide the leaf field and coupling out along the pinned branch's
    insensitive direction, sweep the hub branch weight across its
    crossover (the leaves polarize there), and bring the coupling home
    while the subdominant branch is suppressed below 1/N^2 so that the
    branch-variance terms stay inert.
    """
    e = eps_final
    paths = []
    for a in (0.5 * e, 0.75 * e):
        for hold in (6.0, 9.0):
            dive = hold + 3.0
            paths.append(_densify(np.array([
                [0.0, 0.0, 0.0],
                [hold, 0.0, 0.0],
                [hold, a, -a],
                [-dive, a, -a],
                [-dive, e, 0.0],
                [-beta * e, e, 0.0],
            ]), per_leg=200))
    return paths


def collective_erasure(model: SpinModelFreeEnergy, eps_final=5.0, beta=1.0,
                       tau_eq=1.0, tau=1.0, **solver_kwargs) -> GeodesicSolution:
    """Minimal-dissipation erasure geodesic for one spin model.

    Returns a GeodesicSolution whose `dissipation` is tau * W_diss in
    units of k_B T (tau_eq = 1 working units).
    """
    metric = hessian_metric(model, beta, tau_eq)
    lam_i, lam_f = erasure_boundary(model, eps_final)
    if model.n_controls == 1:
        # one control: every monotone path has the same length
        l, _ = quad(lambda e: np.sqrt(metric([e])[0, 0]), lam_i[0], lam_f[0],
                    limit=200)
        proto = ControlProtocol.from_callable(
            lambda t: lam_i + (lam_f - lam_i) * t / tau, tau, 1)
        return GeodesicSolution(proto, l, l**2 / tau, {"mode": "quadrature"})
    try:
        if model.model == "star":
            return _star_erasure(model, metric, eps_final, beta, tau,
                                 **solver_kwargs)
        bounds = solver_kwargs.pop("bounds", _erasure_bounds(model, eps_final))
        return geodesic_minimize(metric, lam_i, lam_f, tau=tau, bounds=bounds,
                                 **solver_kwargs)
    except Exception as exc:
        raise RuntimeError(
            f"geodesic solve failed for model '{model.model}' "
            f"(N={model.n_spins}, eps_final={eps_final})") from exc


def _star_erasure(model, metric, eps_final, beta, tau, **solver_kwargs):
    """Star geodesic in the log-odds chart (see _star_logodds_transform)."""
    to_eta, to_eps0, jacobian = _star_logodds_transform(model.n_spins, beta)

    def batch_eta(lams_eta):
        x = to_eps0(lams_eta)
        g = metric.eval_batch(x)
        j = jacobian(lams_eta)
        return np.einsum("bia,bij,bjc->bac", j, g, j)

    metric_eta = MetricField(lambda lam: batch_eta(np.atleast_2d(lam))[0], 3,
                             batch_fn=batch_eta)
    lam_i = np.zeros(3)
    lam_f = np.array([-beta * eps_final, eps_final, 0.0])
    hold = 2.0 * np.log(2.0 * model.n_spins) + 4.0
    pad = 4.0 * max(eps_final, 1.0)
    bounds = ([-hold - 10.0, -pad, -pad], [hold + 10.0, pad, pad])
    starts = solver_kwargs.pop(
        "starts", _star_flip_paths_eta(eps_final, model.n_spins, beta))
    sol = geodesic_minimize(metric_eta, lam_i, lam_f, tau=tau, bounds=bounds,
                            starts=starts, **solver_kwargs)
    # report the protocol in the physical control chart
    ts, nodes_eta = sol.protocol.sample(257)
    nodes = to_eps0(nodes_eta)
    sol.protocol = ControlProtocol.from_samples(ts, nodes)
    sol.diagnostics["chart"] = "log-odds"
    return sol


@dataclass
class ScalingFit:
    """Power-law fit w = alpha * N^x on a dissipation-versus-size series."""

    n_values: np.ndarray
    w_values: np.ndarray
    prefactor: float
    exponent: float
    residual: float


def scaling_fit(n_values, w_values) -> ScalingFit:
    n_values = np.asarray(n_values, dtype=float)
    w_values = np.asarray(w_values, dtype=float)
    if len(n_values) < 5:
        raise ValueError("need at least 5 points for a scaling fit")
    if np.any(np.diff(n_values) <= 0):
        raise ValueError("sizes must be increasing")
    if np.any(w_values <= 0):
        raise ValueError("dissipation values must be positive")
    x, y = np.log(n_values), np.log(w_values)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    return ScalingFit(n_values, w_values, float(np.exp(intercept)),
                      float(slope), resid)


def erasure_sweep(model_name, n_values, eps_final=5.0, beta=1.0, **kwargs):
    """tau * W_diss for a range of system sizes of one model."""
    out = []
    for n in n_values:
        sol = collective_erasure(spin_model(model_name, int(n)), eps_final,
                                 beta, **kwargs)
        out.append(sol.dissipation)
    return np.asarray(out)
