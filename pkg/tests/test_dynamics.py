import numpy as np
import pytest

from finitherm.dynamics import (DynamicsGenerator, Propagator, drazin_inverse,
                                dyson_truncated_state, fermi,
                                lindblad_superop, propagate, reset_superop,
                                slow_driving_state, solve_rate_equation,
                                thermal_jump_operators, unvec, vec,
                                work_variance)
from finitherm.operators import (gibbs_state, relative_entropy_variance)

from conftest import random_density, random_hermitian

SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])


def qubit_gap_hamiltonian(lam):
    """Two levels {0, eps}: the dot convention used throughout."""
    return np.diag([0.0, float(np.atleast_1d(lam)[0])])


def dot_rate_generator(gamma, beta=1.0):
    """Classical two-level rate equation as a Lindblad family."""
    def dissipators(lam):
        eps = float(np.atleast_1d(lam)[0])
        f = fermi(beta * eps)
        lower = np.array([[0.0, 1.0], [0.0, 0.0]])   # |0><1|
        raise_ = lower.T.copy()
        return [(lower, gamma * (1.0 - f)), (raise_, gamma * f)]

    return DynamicsGenerator.lindblad(qubit_gap_hamiltonian, dissipators,
                                      dim=2, beta=beta)


class TestVectorization:
    def test_round_trip(self, rng):
        m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        assert np.allclose(unvec(vec(m), 3), m)

    def test_column_stacking_convention(self, rng):
        a = rng.normal(size=(3, 3))
        x = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        lhs = np.kron(b.T, np.eye(3)) @ np.kron(np.eye(3), a) @ vec(x)
        assert np.allclose(unvec(lhs, 3), a @ x @ b)


class TestGenerators:
    def test_trace_preservation(self, rng):
        h = random_hermitian(rng, 3)
        gen = DynamicsGenerator.thermal_lindblad(lambda lam: h, 3, beta=1.0)
        assert gen.check_trace_preserving(None)
        gen_r = DynamicsGenerator.reset(lambda lam: h, 3, beta=1.0, tau_eq=0.7)
        assert gen_r.check_trace_preserving(None)

    def test_reset_fixed_point_is_gibbs(self, rng):
        h = random_hermitian(rng, 3)
        gen = DynamicsGenerator.reset(lambda lam: h, 3, beta=2.0, tau_eq=1.0)
        pi = gibbs_state(h, 2.0).rho.mat
        assert np.abs(unvec(gen.superoperator(None) @ vec(pi), 3)).max() < 1e-12

    def test_thermal_lindblad_fixed_point(self, rng):
        h = random_hermitian(rng, 3)
        gen = DynamicsGenerator.thermal_lindblad(lambda lam: h, 3, beta=0.7)
        pi = gibbs_state(h, 0.7).rho.mat
        assert np.abs(unvec(gen.superoperator(None) @ vec(pi), 3)).max() < 1e-10


class TestPropagate:
    def test_unitary_preserves_spectrum(self, rng):
        h = random_hermitian(rng, 3)
        gen = DynamicsGenerator.unitary(lambda lam: h, 3)
        rho0 = random_density(rng, 3)
        states = propagate(gen, lambda t: None, rho0, np.linspace(0, 2.0, 9),
                           rtol=1e-11, atol=1e-13)
        ref = np.sort(np.linalg.eigvalsh(rho0))
        for rho in states:
            assert np.abs(np.sort(np.linalg.eigvalsh(rho)) - ref).max() < 1e-10

    def test_reset_closed_form(self, rng):
        h = random_hermitian(rng, 2)
        tau_eq = 0.6
        gen = DynamicsGenerator.reset(lambda lam: h, 2, beta=1.5, tau_eq=tau_eq)
        pi = gibbs_state(h, 1.5).rho.mat
        rho0 = random_density(rng, 2)
        ts = np.linspace(0, 3.0, 7)
        states = propagate(gen, lambda t: None, rho0, ts)
        for t, rho in zip(ts, states):
            expect = pi + (rho0 - pi) * np.exp(-t / tau_eq)
            assert np.abs(rho - expect).max() < 1e-8

    def test_dot_rate_equation(self):
        gamma, beta, eps = 1.3, 1.0, 0.8
        gen = dot_rate_generator(gamma, beta)
        p0 = 0.9
        rho0 = np.diag([1 - p0, p0])
        ts = np.linspace(0, 4.0, 9)
        states = propagate(gen, lambda t: eps, rho0, ts)
        f = fermi(beta * eps)
        for t, rho in zip(ts, states):
            assert rho[1, 1].real == pytest.approx(
                f + (p0 - f) * np.exp(-gamma * t), abs=1e-8)

    def test_trace_preserved_along_driven_path(self, rng):
        gen = dot_rate_generator(2.0)
        states = propagate(gen, lambda t: 0.5 + 2.0 * t, np.eye(2) / 2,
                           np.linspace(0, 1.0, 11))
        for rho in states:
            assert abs(np.trace(rho).real - 1.0) < 1e-8

    def test_requirement_one_thermalization(self, rng):
        # frozen evolution drives observable averages to their thermal values
        h = random_hermitian(rng, 2)
        for make in (lambda: DynamicsGenerator.reset(lambda lam: h, 2, beta=1.0,
                                                     tau_eq=0.5),
                     lambda: dot_rate_generator(2.0)):
            gen = make()
            lam = 0.7 if gen.kind == "lindblad" else None
            pi = gen.fixed_point(lam)
            rho0 = random_density(rng, 2)
            tau_relax = 0.5
            ts = np.array([0.0, 40 * tau_relax])
            states = propagate(gen, lambda t: lam, rho0, ts)
            x = gen.hamiltonian(lam)
            assert abs(np.trace(states[-1] @ x).real
                       - np.trace(pi @ x).real) < 1e-8


class TestPropagator:
    def test_identity_and_composition(self, rng):
        gen = dot_rate_generator(1.0)
        control = lambda t: 0.3 + np.sin(t)
        prop = Propagator(gen, control=control)
        assert np.allclose(prop(0.7, 0.7), np.eye(4))
        full = prop(1.0, 0.0)
        composed = prop(1.0, 0.5) @ prop(0.5, 0.0)
        assert np.abs(full - composed).max() < 1e-6

    def test_exact_diagonal_static(self, rng):
        h = random_hermitian(rng, 2)
        gen = DynamicsGenerator.reset(lambda lam: h, 2, beta=1.0, tau_eq=1.0)
        prop = Propagator(gen, lam=None)
        rho0 = random_density(rng, 2)
        pi = gibbs_state(h, 1.0).rho.mat
        rho_t = unvec(prop(2.0, 0.0) @ vec(rho0), 2)
        assert np.abs(rho_t - (pi + (rho0 - pi) * np.exp(-2.0))).max() < 1e-10


class TestDrazin:
    def test_invertible_matrix(self, rng):
        m = rng.normal(size=(4, 4)) + 0.1 * np.eye(4)
        while abs(np.linalg.det(m)) < 1e-3:
            m = rng.normal(size=(4, 4))
        assert np.abs(drazin_inverse(m) - np.linalg.inv(m)).max() < 1e-10

    def test_scalar_rate(self):
        g = np.array([[-2.5]])
        assert drazin_inverse(g)[0, 0] == pytest.approx(-0.4)

    def test_projector_property_random_lindblad(self, rng):
        h = random_hermitian(rng, 3)
        gen = DynamicsGenerator.thermal_lindblad(lambda lam: h, 3, beta=1.0)
        s = gen.superoperator(None)
        gd = drazin_inverse(s)
        proj = gd @ s
        # acting on traceless operators the projector is the identity
        for _ in range(5):
            x = random_hermitian(rng, 3)
            x -= np.trace(x) / 3 * np.eye(3)
            assert np.abs(unvec(proj @ vec(x), 3) - x).max() < 1e-8

    def test_drazin_identities(self, rng):
        for dim in (2, 3):
            h = random_hermitian(rng, dim)
            gen = DynamicsGenerator.thermal_lindblad(lambda lam: h, dim, beta=0.8)
            s = gen.superoperator(None)
            gd = drazin_inverse(s)
            assert np.abs(gd @ s @ gd - gd).max() < 1e-8
            assert np.abs(s @ gd @ s - s).max() < 1e-8
            assert np.abs(gd @ s - s @ gd).max() < 1e-8


class TestSlowDriving:
    def test_static_protocol_gives_gibbs(self):
        gen = dot_rate_generator(1.0)
        rho = slow_driving_state(gen, lambda t: 0.6, 0.5, 1.0)
        assert np.abs(rho - gibbs_state(np.diag([0, 0.6]), 1.0).rho.mat).max() < 1e-9

    def test_dot_first_order_population(self):
        # slow ramp: excited population ~ f(t) - f'(t)*gamma^-1 (hbar = 1)
        gamma, beta, tau = 2.0, 1.0, 200.0
        gen = dot_rate_generator(gamma, beta)
        control = lambda t: 1.0 + 0.5 * np.sin(2 * np.pi * t / tau)
        t_probe = 57.0
        rho = slow_driving_state(gen, control, t_probe, tau)
        eps = control(t_probe)
        epsdot = 0.5 * (2 * np.pi / tau) * np.cos(2 * np.pi * t_probe / tau)
        # population lags the instantaneous occupation: p = f - (df/dt)/gamma
        dfdt = -beta * fermi(beta * eps) * (1 - fermi(beta * eps)) * epsdot
        expected = fermi(beta * eps) - dfdt / gamma
        assert rho[1, 1].real == pytest.approx(expected, abs=1e-8)

    def test_error_scales_inverse_square_of_tau(self):
        gamma, beta = 1.0, 1.0
        gen = dot_rate_generator(gamma, beta)
        errors = []
        taus = np.array([1e2, 1e3, 1e4])
        for tau in taus:
            control = lambda t: 0.5 + 1.5 * (t / tau) ** 2 * (3 - 2 * t / tau)
            ts, p = solve_rate_equation(lambda t: control(t), gamma, tau,
                                        beta=beta,
                                        t_eval=np.array([0.0, 0.6 * tau]))
            rho_slow = slow_driving_state(gen, control, 0.6 * tau, tau)
            exact = np.diag([1 - p[-1], p[-1]])
            errors.append(np.abs(exact - rho_slow).max() * 2)  # trace norm
        slope = np.polyfit(np.log(taus), np.log(errors), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.2)


class TestDysonTruncated:
    def test_zero_time_is_initial_gibbs(self):
        gen = dot_rate_generator(1.0)
        sigma = dyson_truncated_state(gen, lambda t: 0.4, 0.0)
        assert np.abs(sigma - gibbs_state(np.diag([0, 0.4]), 1.0).rho.mat).max() < 1e-12

    def test_static_reset_stays_put(self, rng):
        h = random_hermitian(rng, 2)
        gen = DynamicsGenerator.reset(lambda lam: h, 2, beta=1.0, tau_eq=1.0)
        sigma = dyson_truncated_state(gen, lambda t: None, 0.3)
        assert np.abs(sigma - gibbs_state(h, 1.0).rho.mat).max() < 1e-12

    def test_error_scales_tau_squared(self):
        gamma, beta = 1.0, 1.0
        gen = dot_rate_generator(gamma, beta)
        errors = []
        taus = np.array([0.3, 0.1, 0.03, 0.01])
        for tau in taus:
            control = lambda t: 0.5 + 2.0 * t / tau
            sigma = dyson_truncated_state(gen, control, tau)
            states = propagate(gen, control,
                               gibbs_state(np.diag([0, 0.5]), beta).rho.mat,
                               np.array([0.0, tau]))
            err = np.abs(np.linalg.eigvalsh(states[-1] - sigma)).sum()
            errors.append(err)
        slope = np.polyfit(np.log(taus), np.log(errors), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.2)


class TestWorkVariance:
    def test_static_protocol_zero(self, rng):
        gen = dot_rate_generator(1.0)
        var, w = work_variance(gen, lambda t: 0.8, tau=1.0)
        assert var == pytest.approx(0.0, abs=1e-9)
        assert w == pytest.approx(0.0, abs=1e-9)

    def test_pure_quench_matches_relative_entropy_variance(self):
        beta = 1.0
        h_i = np.diag([0.0, 0.4])
        h_f = np.diag([0.0, 1.7])
        gen = dot_rate_generator(1.0, beta)
        var, w = work_variance(gen, lambda t: 1.7, tau=1.0, start_jump=h_i)
        pi_i = gibbs_state(h_i, beta).rho
        pi_f = gibbs_state(h_f, beta).rho
        expected = relative_entropy_variance(pi_i, pi_f) / beta**2
        assert var == pytest.approx(expected, rel=1e-6)
        assert w == pytest.approx(np.trace(pi_i.mat @ (h_f - h_i)).real, rel=1e-9)
