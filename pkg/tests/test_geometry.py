import numpy as np
import pytest

from finitherm.dynamics import DynamicsGenerator, fermi
from finitherm.geometry import (ControlProtocol, MetricDomainError, MetricField,
                                full_control_geodesic, geodesic_solve,
                                length_and_dissipation, metric_from_generator,
                                reparametrize_constant_speed)
from finitherm.operators import gibbs_state, hellinger_angle, log_partition

from conftest import random_hermitian

from test_dynamics import dot_rate_generator, qubit_gap_hamiltonian


def euclidean_metric(dim):
    return MetricField(lambda lam: np.eye(dim), dim)


def inverse_coupling_metric():
    """g = 1/(8 mu) on (eps, mu): geodesics through the origin are cycloids."""
    return MetricField(lambda lam: np.eye(2) / (8.0 * lam[1]), 2)


def cycloid(eps_star, tau=1.0):
    """The known minimal curve from (0,0) to (eps_star, 0) under 1/(8 mu)."""
    def path(t):
        s = t / tau
        return np.array([eps_star * (s - np.sin(2 * np.pi * s) / (2 * np.pi)),
                         eps_star / np.pi * np.sin(np.pi * s) ** 2])

    def velocity(t):
        s = t / tau
        return np.array([eps_star / tau * (1 - np.cos(2 * np.pi * s)),
                         eps_star / tau * np.sin(2 * np.pi * s)])

    return path, velocity


class TestControlProtocol:
    def test_requires_positive_duration(self):
        with pytest.raises(ValueError):
            ControlProtocol(lambda t: np.array([t]), 0.0, 1)

    def test_spline_round_trip(self):
        t = np.linspace(0, 2, 41)
        vals = np.stack([np.sin(t), np.cos(t)], axis=1)
        proto = ControlProtocol.from_samples(t, vals)
        assert np.abs(proto.path(1.3) - [np.sin(1.3), np.cos(1.3)]).max() < 1e-5
        assert np.abs(proto.velocity(1.3) - [np.cos(1.3), -np.sin(1.3)]).max() < 1e-4


class TestLengthAndDissipation:
    def test_constant_path(self):
        proto = ControlProtocol.from_callable(lambda t: [0.3, 0.4], 1.0, 2)
        length, sigma = length_and_dissipation(proto, euclidean_metric(2))
        assert length == pytest.approx(0.0, abs=1e-12)
        assert sigma == pytest.approx(0.0, abs=1e-12)

    def test_straight_line_euclidean(self):
        proto = ControlProtocol.from_callable(
            lambda t: [2.0 * t, -t], 1.0, 2, velocity_fn=lambda t: [2.0, -1.0])
        length, sigma = length_and_dissipation(proto, euclidean_metric(2))
        assert length == pytest.approx(np.sqrt(5.0), rel=1e-10)
        assert sigma == pytest.approx(5.0, rel=1e-10)

    def test_cauchy_schwarz_bound(self, rng):
        # uneven-speed path: Sigma exceeds L^2/tau, equality restored by
        # constant-speed reparametrization
        tau = 2.0
        proto = ControlProtocol.from_callable(
            lambda t: [np.sin(np.pi * t / tau / 2) ** 2 * 3.0, 0.5 * t / tau],
            tau, 2)
        metric = euclidean_metric(2)
        length, sigma = length_and_dissipation(proto, metric)
        assert sigma >= length**2 / tau - 1e-12
        fixed = reparametrize_constant_speed(proto, metric)
        l2, s2 = length_and_dissipation(fixed, metric)
        assert l2 == pytest.approx(length, rel=1e-4)
        assert s2 == pytest.approx(length**2 / tau, rel=1e-2)

    def test_nonpositive_metric_rejected(self):
        bad = MetricField(lambda lam: np.array([[lam[0] - 0.5]]), 1)
        proto = ControlProtocol.from_callable(lambda t: [t], 1.0, 1,
                                              velocity_fn=lambda t: [1.0])
        with pytest.raises(MetricDomainError):
            length_and_dissipation(proto, bad)

    def test_parametrization_invariance_of_length(self, rng):
        # interior cycloid segment, re-traversed under random monotone clocks
        metric = inverse_coupling_metric()
        path, velocity = cycloid(0.8)
        seg = lambda s: path(0.1 + 0.75 * s)
        base = ControlProtocol.from_callable(seg, 1.0, 2)
        l_ref, _ = length_and_dissipation(base, metric, n_grid=2049)
        for k in range(4):
            w = 0.2 + 0.6 * rng.random()
            clock = lambda t, w=w: (1 - w) * t + w * np.sin(np.pi * t / 2) ** 2
            warped = ControlProtocol.from_callable(
                lambda t, clock=clock: seg(clock(t)), 1.0, 2)
            l_w, _ = length_and_dissipation(warped, metric, n_grid=2049)
            assert l_w == pytest.approx(l_ref, rel=5e-3)


class TestReparametrize:
    def test_already_constant_speed_unchanged(self):
        proto = ControlProtocol.from_callable(lambda t: [t, 2 * t], 1.0, 2,
                                              velocity_fn=lambda t: [1.0, 2.0])
        fixed = reparametrize_constant_speed(proto, euclidean_metric(2))
        for t in np.linspace(0, 1, 11):
            assert np.abs(fixed.path(t) - proto.path(t)).max() < 1e-6

    def test_zero_length_returned_unchanged(self):
        proto = ControlProtocol.from_callable(lambda t: [1.0], 1.0, 1)
        fixed = reparametrize_constant_speed(proto, euclidean_metric(1))
        assert fixed is proto

    def test_dissipation_decreases(self):
        # a linear gap ramp is not constant-speed under the thermal dot metric
        gamma, beta = 1.0, 1.0
        metric = MetricField(
            lambda lam: np.array([[beta**2 * fermi(beta * lam[0])
                                   * (1 - fermi(beta * lam[0])) / gamma]]), 1)
        proto = ControlProtocol.from_callable(lambda t: [8.0 * t], 1.0, 1,
                                              velocity_fn=lambda t: [8.0])
        l0, s0 = length_and_dissipation(proto, metric, n_grid=1025)
        fixed = reparametrize_constant_speed(proto, metric, n_grid=1025)
        l1, s1 = length_and_dissipation(fixed, metric, n_grid=1025)
        assert l1 == pytest.approx(l0, rel=1e-3)
        assert s1 <= s0
        assert s1 == pytest.approx(l0**2, rel=1e-2)


class TestChristoffel:
    def test_flat_metric_vanishes(self):
        metric = euclidean_metric(3)
        assert np.abs(metric.christoffel([0.2, -1.0, 0.5])).max() < 1e-12

    def test_finite_difference_convergence(self):
        # halving the step changes Gamma by less than 1e-4 relative
        lam = np.array([0.7, 0.35])
        coarse = MetricField(lambda lam: np.eye(2) / (8 * lam[1]), 2, fd_step=1e-4)
        fine = MetricField(lambda lam: np.eye(2) / (8 * lam[1]), 2, fd_step=5e-5)
        g1 = coarse.christoffel(lam)
        g2 = fine.christoffel(lam)
        assert np.abs(g1 - g2).max() / np.abs(g1).max() < 1e-4

    def test_known_symbols(self):
        # for g = phi(mu) I the symbols follow from d(log phi)/d(mu)
        metric = inverse_coupling_metric()
        eps, mu = 0.4, 0.2
        gamma = metric.christoffel([eps, mu])
        d = -1.0 / mu  # d log phi / d mu with phi = 1/(8 mu)
        assert gamma[0, 0, 1] == pytest.approx(0.5 * d, rel=1e-6)
        assert gamma[1, 1, 1] == pytest.approx(0.5 * d, rel=1e-6)
        assert gamma[1, 0, 0] == pytest.approx(-0.5 * d, rel=1e-6)


class TestGeodesicSolve:
    def test_flat_bvp_straight_line(self):
        sol = geodesic_solve(euclidean_metric(2), bvp=([0.0, 0.0], [1.0, 2.0]))
        assert sol.length == pytest.approx(np.sqrt(5.0), rel=1e-6)
        mid = sol.protocol.path(0.5)
        assert np.abs(mid - [0.5, 1.0]).max() < 1e-6
        assert sol.dissipation == pytest.approx(5.0, rel=1e-6)

    def test_cycloid_followed_from_interior_launch(self):
        # start on the known cycloid away from the singular mu = 0 edge and
        # check the solver reproduces it
        eps_star, tau = 0.5, 1.0
        path, velocity = cycloid(eps_star, tau)
        t0 = 0.2
        metric = inverse_coupling_metric()
        sol = geodesic_solve(metric, ivp=(path(t0), velocity(t0)), tau=0.6)
        for s in np.linspace(0.0, 0.6, 13):
            assert np.abs(sol.protocol.path(s) - path(t0 + s)).max() < 1e-4

    def test_constant_speed_along_geodesic(self):
        path, velocity = cycloid(0.7)
        metric = inverse_coupling_metric()
        sol = geodesic_solve(metric, ivp=(path(0.25), velocity(0.25)), tau=0.5)
        assert sol.diagnostics["speed_drift"] < 1e-2

    def test_curved_bvp_beats_straight_line(self):
        metric = inverse_coupling_metric()
        a, b = np.array([0.0, 0.3]), np.array([1.0, 0.35])
        sol = geodesic_solve(metric, bvp=(a, b))
        straight = ControlProtocol.from_callable(
            lambda t: a + (b - a) * t, 1.0, 2, velocity_fn=lambda t: b - a)
        l_straight, _ = length_and_dissipation(straight, metric)
        assert sol.length <= l_straight + 1e-9
        assert np.abs(sol.protocol.path(1.0) - b).max() < 1e-5

    def test_local_minimality_against_perturbed_paths(self, rng):
        metric = inverse_coupling_metric()
        a, b = np.array([0.0, 0.3]), np.array([0.8, 0.4])
        sol = geodesic_solve(metric, bvp=(a, b))
        for _ in range(20):
            amp = 0.08 * rng.random(2)
            phase = rng.integers(1, 3)
            pert = ControlProtocol.from_callable(
                lambda t, amp=amp, phase=phase: sol.protocol.path(t)
                + amp * np.sin(np.pi * phase * t), 1.0, 2)
            l_pert, _ = length_and_dissipation(pert, metric)
            assert l_pert >= sol.length - 1e-6


class TestMetricFromGenerator:
    def test_dot_weak_coupling_scalar(self):
        gamma, beta = 2.0, 1.0
        gen = dot_rate_generator(gamma, beta)
        x = [np.diag([0.0, 1.0])]  # conjugate observable of the gap
        metric = metric_from_generator(gen, x, beta=beta)
        for eps in (0.0, 0.7, 2.5):
            f = fermi(beta * eps)
            assert metric([eps])[0, 0] == pytest.approx(
                beta**2 * f * (1 - f) / gamma, rel=1e-8)

    def test_reset_commuting_matches_free_energy_hessian(self):
        beta, tau_eq = 1.0, 0.7
        x1 = np.diag([0.0, 1.0, 1.0])
        x2 = np.diag([0.0, 0.0, 1.0])

        def h_of(lam):
            return lam[0] * x1 + lam[1] * x2

        gen = DynamicsGenerator.reset(h_of, 3, beta=beta, tau_eq=tau_eq)
        metric = metric_from_generator(gen, [x1, x2], beta=beta)
        lam = np.array([0.6, -0.3])
        step = 1e-5
        hess = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                lpp, lpm, lmp, lmm = (lam.copy() for _ in range(4))
                lpp[i] += step; lpp[j] += step
                lpm[i] += step; lpm[j] -= step
                lmp[i] -= step; lmp[j] += step
                lmm[i] -= step; lmm[j] -= step
                hess[i, j] = (log_partition(h_of(lpp), beta)
                              - log_partition(h_of(lpm), beta)
                              - log_partition(h_of(lmp), beta)
                              + log_partition(h_of(lmm), beta)) / (4 * step**2)
        assert np.abs(metric(lam) - tau_eq * hess).max() < 1e-5

    def test_thermal_lindblad_positive_definite(self, rng):
        x1 = random_hermitian(rng, 2)
        x2 = random_hermitian(rng, 2)

        def h_of(lam):
            return lam[0] * x1 + lam[1] * x2

        gen = DynamicsGenerator.thermal_lindblad(h_of, 2, beta=1.0)
        metric = metric_from_generator(gen, lambda lam: [x1, x2], beta=1.0,
                                       dimension=2)
        for _ in range(100):
            lam = rng.uniform(-1.5, 1.5, size=2)
            g = metric(lam)
            assert np.abs(g - g.T).max() < 1e-10
            assert np.linalg.eigvalsh(g).min() > 0


class TestFullControl:
    def test_identical_endpoints(self, rng):
        h = random_hermitian(rng, 3)
        pi = gibbs_state(h, 1.0).rho.mat
        h_path, sigma_star, angle, _ = full_control_geodesic(pi, pi, tau=1.0)
        assert sigma_star == pytest.approx(0.0, abs=1e-12)
        assert np.abs(h_path(0.3) - h_path(0.9)).max() < 1e-9

    def test_endpoints_reproduced(self, rng):
        h0 = random_hermitian(rng, 3)
        h1 = random_hermitian(rng, 3)
        pi0 = gibbs_state(h0, 1.0).rho.mat
        pi1 = gibbs_state(h1, 1.0).rho.mat
        _, _, _, state_path = full_control_geodesic(pi0, pi1, tau=1.0)
        assert np.abs(state_path(0.0) - pi0).max() < 1e-9
        assert np.abs(state_path(1.0) - pi1).max() < 1e-9

    def test_n_qubit_erasure_bound(self):
        tau, beta = 1.0, 1.0
        for n in (1, 2, 3):
            d = 2**n
            ground = np.zeros((d, d))
            ground[0, 0] = 1.0
            _, sigma_star, angle, _ = full_control_geodesic(
                np.eye(d) / d, ground, tau, beta=beta)
            assert sigma_star * tau == pytest.approx(
                (2 * np.arccos(2 ** (-n / 2))) ** 2, rel=1e-12)
        # the dissipation approaches pi^2/tau from below as n grows
        assert sigma_star * tau < np.pi**2

    def test_product_basis_coefficients(self):
        # the erasure drive is a uniform combination of all excitation
        # products with an alternating sign and one global control function
        tau, beta = 1.0, 1.0
        for n in (2, 3, 4):
            d = 2**n
            ground = np.zeros((d, d))
            ground[0, 0] = 1.0
            h_path, _, angle, _ = full_control_geodesic(np.eye(d) / d, ground,
                                                        tau, beta=beta)
            half = angle / 2
            for t in (0.21, 0.5, 0.83):
                hdiag = np.real(np.diag(h_path(t)))
                # coefficients on subset products of per-site |1><1| by
                # Moebius inversion over bitstrings
                coeff = {}
                for subset in range(d):
                    total = 0.0
                    sub = subset
                    while True:
                        bits_diff = bin(subset ^ sub).count("1")
                        total += (-1) ** bits_diff * hdiag[sub]
                        if sub == 0:
                            break
                        sub = (sub - 1) & subset
                    coeff[subset] = total
                a = np.sin((1 - t / tau) * half)
                b = np.sin((t / tau) * half)
                gamma_t = 2.0 * np.log1p(2 ** (n / 2) * b / a)
                for subset in range(1, d):
                    j = bin(subset).count("1")
                    assert coeff[subset] == pytest.approx(
                        (-1) ** (j + 1) * gamma_t / beta, abs=1e-8)

    def test_dissipation_matches_eigenvalue_path_length(self):
        # re-evaluate the minimal dissipation as a classical statistical
        # length of the eigenvalue path
        beta, tau = 1.0, 1.0
        h0 = np.diag([0.0, 0.0])
        h1 = np.diag([0.0, 6.0])
        pi0 = gibbs_state(h0, beta).rho.mat
        pi1 = gibbs_state(h1, beta).rho.mat
        _, sigma_star, angle, state_path = full_control_geodesic(pi0, pi1, tau,
                                                                 beta=beta)
        fisher = MetricField(lambda p: np.diag(1.0 / np.maximum(p, 1e-300)), 2)
        ts = np.linspace(0.0, tau, 801)
        ps = np.array([np.diag(state_path(t)).real for t in ts])
        proto = ControlProtocol.from_samples(ts, ps)
        length, _ = length_and_dissipation(proto, fisher, n_grid=1601)
        assert length**2 / tau == pytest.approx(sigma_star, abs=1e-6)
