import math

import numpy as np
import pytest

from mfcontrol import (
    CoefficientError,
    LqgCoefficients,
    build_ising,
    extract_coefficients,
    ising_closed_form,
    kalman_forward,
    multinomial_initial_covariance,
    optimize,
    predicted_fluctuation_cost,
    riccati_backward,
    solve_fluctuations,
)
from mfcontrol import ModelSpec
from mfcontrol.ising import (
    closed_form_equilibrium_coefficients,
    reduce_covariance,
    reduce_value,
)
import mfcontrol.model as md
from mfcontrol.meanfield import rollout, costate
from mfcontrol.sir import build_sir, DEFAULT_PARAMS


def scalar_coefficients(n, dt, *, r, b, e, q, w=0.0, et=0.0, theta=0.0,
                        theta_t=0.0, f=0.0):
    ones = np.ones((n, 1, 1))
    return LqgCoefficients(
        dt=dt,
        R=ones * r, B=ones * b, E=ones * e, Q=ones * q, W=ones * w,
        Et=ones * et, Theta=ones * theta, Theta_t=ones * theta_t,
        F=np.full((1, 1), f),
    )


@pytest.fixture(scope="module")
def ising_equilibrium():
    mdl = build_ising(1.0, 0.0, -1.0, 2.0)
    sol = optimize(mdl, np.array([0.5, 0.5]), 0.01, 200)
    return mdl, sol, extract_coefficients(mdl, sol)


class TestExtractCoefficients:
    def test_equilibrium_values(self, ising_equilibrium):
        mdl, sol, coef = ising_equilibrium
        dt = sol.dt
        k = 17
        assert np.allclose(coef.R[k], 0.25 * np.eye(2) * dt)
        assert np.allclose(coef.B[k], np.array([[-0.5, 0.5], [0.5, -0.5]]) * dt)
        assert np.allclose(coef.E[k], np.array([[-1.0, 1.0], [1.0, -1.0]]) * dt)
        # coupling -1 makes the magnetization cost curvature +1/2
        assert reduce_value(coef.Q[k]) == pytest.approx(0.5 * dt)
        assert np.allclose(coef.W[k], 0.0, atol=1e-14)
        assert np.allclose(coef.Et[k], 2.0 * np.eye(2) * dt)
        assert reduce_covariance(coef.Theta[k]) == pytest.approx(4.0 * dt)
        assert reduce_covariance(coef.Theta[k]) / 2.0 == pytest.approx(2.0 * dt)
        assert np.allclose(coef.Theta_t[k], np.eye(2) * dt)  # obs_rate * 1/2 each
        assert np.allclose(coef.F, 0.0)
        # the magnetization reductions reproduce the scalar closed-form set
        scalar = closed_form_equilibrium_coefficients(1.0, -1.0, 2.0, dt, 1)
        assert reduce_value(coef.Q[k]) == pytest.approx(scalar.Q[0, 0, 0])
        assert np.allclose(np.array([-1.0, 1.0]) @ coef.B[k], scalar.B[0, 0])

    def test_degenerate_control_curvature_reported(self):
        mdl = ModelSpec(
            name="linear", n_states=2, n_controls=1, n_obs_channels=0,
            transition_rate=lambda s, g, sig, a: max(0.5 + 0.1 * a[0], 0.0),
            observation_rate=lambda s, ch, sig: 0.0,
            running_cost=lambda sig, a: sig[0] + a[0],
            terminal_cost=lambda sig: 0.0,
        )
        A = np.zeros((5, 1))
        S, U, cost = rollout(mdl, np.array([0.5, 0.5]), A, 0.1, 5)
        P = costate(mdl, S, A, 0.1)
        from mfcontrol.meanfield import MeanFieldSolution
        sol = MeanFieldSolution(0.1, 5, S, A, P, U, cost, 0.0)
        with pytest.raises(CoefficientError) as err:
            extract_coefficients(mdl, sol)
        assert err.value.step == 0

    def test_sir_cross_term_structure(self):
        mdl = build_sir(**DEFAULT_PARAMS)
        sol = optimize(mdl, np.array([0.99, 0.01, 0.0]), 1.0, 30)
        coef = extract_coefficients(mdl, sol)
        k = 10
        s, a, p = sol.S[k], sol.A[k], sol.P[k + 1]
        # finite-difference oracle for the cross coefficient
        from dataclasses import replace
        bare = replace(mdl, analytic=None)
        expect = 0.5 * (md.cost_hess_sa(bare, s, a)
                        - md.drift_hess_sa_costate(bare, s, a, p)) * sol.dt
        assert np.allclose(coef.W[k], expect, rtol=1e-4, atol=1e-7 * np.abs(expect).max())
        assert coef.W[k].shape == (3, 1)
        assert coef.W[k][2, 0] == pytest.approx(0.0, abs=1e-12)

    def test_warns_when_not_converged(self, ising_equilibrium):
        mdl, sol, _ = ising_equilibrium
        from dataclasses import replace
        rough = replace(sol, grad_norm=1.0)
        with pytest.warns(RuntimeWarning):
            extract_coefficients(mdl, rough)


class TestKalmanForward:
    def test_no_observation_is_pure_propagation(self, rng):
        n, l = 30, 3
        e = rng.normal(scale=0.05, size=(l, l))
        theta_half = rng.normal(size=(l, l))
        theta = theta_half @ theta_half.T * 0.01
        coef = LqgCoefficients(
            dt=0.1,
            R=np.zeros((n, 0, 0)), B=np.zeros((n, l, 0)),
            E=np.tile(e, (n, 1, 1)), Q=np.zeros((n, l, l)), W=np.zeros((n, l, 0)),
            Et=np.zeros((n, 0, l)), Theta=np.tile(theta, (n, 1, 1)),
            Theta_t=np.zeros((n, 0, 0)), F=np.zeros((l, l)),
        )
        pi0 = np.eye(l) * 0.3
        pi, gains = kalman_forward(coef, pi0)
        expect = pi0.copy()
        m_step = np.eye(l) + e
        for k in range(n):
            expect = m_step @ expect @ m_step.T + theta
            assert np.allclose(pi[k + 1], expect, atol=1e-13)
        assert gains.shape == (n, l, 0)

    def test_scalar_fixed_point_with_observations(self):
        coef = closed_form_equilibrium_coefficients(1.0, 0.5, 2.0, 1e-3, 8000)
        pi, _ = kalman_forward(coef, np.zeros((1, 1)))
        assert pi[-1][0, 0] == pytest.approx(1.0 / (1.0 + math.sqrt(2.0)), abs=1e-3)

    def test_scalar_fixed_point_without_observations(self):
        coef = closed_form_equilibrium_coefficients(1.0, 0.5, 0.0, 1e-3, 8000)
        pi, gains = kalman_forward(coef, np.zeros((1, 1)))
        assert pi[-1][0, 0] == pytest.approx(0.5, abs=1e-3)
        assert np.all(gains == 0.0)

    def test_positive_semidefinite_random_systems(self, rng):
        for _ in range(100):
            l = int(rng.integers(1, 5))
            lo = int(rng.integers(0, 3))
            n = 40
            e = rng.normal(scale=0.1, size=(l, l))
            e -= np.eye(l) * (0.2 + np.abs(np.linalg.eigvals(e)).max())
            th = rng.normal(size=(l, l))
            th = th @ th.T * 0.05
            et = rng.normal(size=(lo, l))
            tt = np.diag(rng.uniform(0.1, 1.0, lo))
            coef = LqgCoefficients(
                dt=0.1,
                R=np.zeros((n, 0, 0)), B=np.zeros((n, l, 0)),
                E=np.tile(e * 0.1, (n, 1, 1)), Q=np.zeros((n, l, l)),
                W=np.zeros((n, l, 0)), Et=np.tile(et * 0.1, (n, 1, 1)),
                Theta=np.tile(th * 0.1, (n, 1, 1)),
                Theta_t=np.tile(tt * 0.1, (n, 1, 1)), F=np.zeros((l, l)),
            )
            pi0_half = rng.normal(size=(l, l))
            pi, _ = kalman_forward(coef, pi0_half @ pi0_half.T)
            for k in range(n + 1):
                assert np.linalg.eigvalsh(pi[k]).min() >= -1e-10

    def test_noisier_observations_never_reduce_uncertainty(self, rng):
        for _ in range(50):
            scalar = rng.random() < 0.5
            l = 1 if scalar else 2
            n = 25
            e = -np.eye(l) * rng.uniform(0.1, 0.5)
            th = np.eye(l) * rng.uniform(0.2, 1.0)
            et = rng.normal(size=(1, l))
            base = rng.uniform(0.1, 1.0)
            traces = []
            for bump in (1.0, rng.uniform(1.5, 4.0)):
                coef = LqgCoefficients(
                    dt=0.1,
                    R=np.zeros((n, 0, 0)), B=np.zeros((n, l, 0)),
                    E=np.tile(e * 0.1, (n, 1, 1)), Q=np.zeros((n, l, l)),
                    W=np.zeros((n, l, 0)), Et=np.tile(et * 0.1, (n, 1, 1)),
                    Theta=np.tile(th * 0.1, (n, 1, 1)),
                    Theta_t=np.full((n, 1, 1), base * bump * 0.1),
                    F=np.zeros((l, l)),
                )
                pi, _ = kalman_forward(coef, np.eye(l) * 0.2)
                traces.append(np.trace(pi, axis1=1, axis2=2))
            assert np.all(traces[1] - traces[0] >= -1e-12)

    def test_forward_backward_duality_scalar(self, rng):
        # Swapping (Et, Theta_t, Theta) for (B', R, Q) on time-reversed
        # coefficients maps the covariance recursion onto the value recursion.
        n = 15
        e = rng.uniform(-0.3, -0.05)
        b = rng.uniform(0.3, 1.0)
        r = rng.uniform(0.3, 1.0)
        q = rng.uniform(0.1, 0.8)
        f = rng.uniform(0.1, 0.6)
        ric = riccati_backward(scalar_coefficients(n, 1.0, r=r, b=b, e=e, q=q, f=f))
        fwd = kalman_forward(
            scalar_coefficients(n, 1.0, r=0.0, b=0.0, e=e, q=0.0,
                                et=b, theta=q, theta_t=r, f=0.0),
            np.full((1, 1), f),
        )[0]
        assert ric.exists
        for k in range(n + 1):
            assert ric.z[n - k][0, 0] == pytest.approx(fwd[k][0, 0], rel=1e-12)

    def test_continuous_limit_rate(self):
        target = 1.0 / (1.0 + math.sqrt(2.0))
        errs = []
        for dt in (1e-2, 1e-3, 1e-4):
            n = int(8.0 / dt)
            coef = closed_form_equilibrium_coefficients(1.0, 0.5, 2.0, dt, n)
            pi, _ = kalman_forward(coef, np.zeros((1, 1)))
            errs.append(abs(pi[-1][0, 0] - target))
        assert 5.0 <= errs[0] / errs[1] <= 20.0
        assert 5.0 <= errs[1] / errs[2] <= 20.0

    def test_degenerate_innovation_handling(self):
        from mfcontrol import SingularInnovationError
        # benign: a perfect channel over a deterministic state carries no
        # information and is skipped (an exactly PSD covariance can never make
        # the innovation singular in a direction that still has signal)
        coef = scalar_coefficients(3, 1.0, r=1.0, b=0.0, e=-0.1, q=0.0,
                                   et=1.0, theta=0.0, theta_t=0.0)
        pi, gains = kalman_forward(coef, np.zeros((1, 1)))
        assert np.all(pi == 0.0) and np.all(gains == 0.0)
        # guard: a corrupted (indefinite) covariance makes the singular
        # direction informative and must be reported, not inverted
        with pytest.raises(SingularInnovationError):
            kalman_forward(coef, np.full((1, 1), -0.1))


class TestRiccatiBackward:
    def test_zero_cost_terms_give_zero(self):
        coef = scalar_coefficients(10, 0.5, r=1.0, b=0.8, e=-0.2, q=0.0, f=0.0)
        ric = riccati_backward(coef)
        assert ric.exists
        assert np.all(ric.z == 0.0)
        assert np.all(ric.feedback_gains == 0.0)

    def test_scalar_fixed_point(self):
        coef = closed_form_equilibrium_coefficients(1.0, 0.75, 2.0, 1e-3, 10000)
        ric = riccati_backward(coef)
        assert ric.exists
        assert ric.z[0][0, 0] == pytest.approx(-0.125, abs=1e-4)
        cf = ising_closed_form(1.0, 0.75, 2.0)
        assert ric.z[0][0, 0] == pytest.approx(cf.z_star, abs=1e-4)

    def test_supercritical_reports_nonexistence(self):
        coef = closed_form_equilibrium_coefficients(1.0, 1.2, 2.0, 1e-3, 10000)
        ric = riccati_backward(coef)
        assert not ric.exists
        assert ric.failure_step is not None

    def test_gain_includes_cross_term(self, rng):
        # one-step problem: the gain must reduce to (B'FB+R)^-1 (B'F(I+E) + W')
        r, b, e, q, w, f = 0.7, 0.9, -0.2, 0.3, 0.25, 0.8
        coef = scalar_coefficients(1, 1.0, r=r, b=b, e=e, q=q, w=w, f=f)
        ric = riccati_backward(coef)
        h = b * f * b + r
        expect = (b * f * (1 + e) + w) / h
        assert ric.feedback_gains[0][0, 0] == pytest.approx(expect, rel=1e-12)
        z0 = q + (1 + e) * f * (1 + e) - ((1 + e) * f * b + w) ** 2 / h
        assert ric.z[0][0, 0] == pytest.approx(z0, rel=1e-12)


class TestPredictedCost:
    def test_no_noise_no_uncertainty_is_zero(self):
        coef = scalar_coefficients(5, 1.0, r=1.0, b=0.5, e=-0.1, q=0.4, f=0.3)
        pi, _ = kalman_forward(coef, np.zeros((1, 1)))
        ric = riccati_backward(coef)
        val = predicted_fluctuation_cost(coef, pi, ric.z, np.zeros(1), np.zeros((1, 1)))
        assert val == pytest.approx(0.0, abs=1e-15)

    def test_one_step_gaussian_quadrature_oracle(self, rng):
        # n = 1 with uninformed control a0 = 0: the cost is a pure Gaussian
        # quadratic expectation, evaluated independently by Gauss-Hermite.
        r, b, e, q, w, f = 1.3, 0.7, -0.25, 0.6, 0.2, 0.9
        theta, pi0 = 0.35, 0.8
        coef = scalar_coefficients(1, 1.0, r=r, b=b, e=e, q=q, w=w,
                                   et=1.0, theta=theta, theta_t=0.05, f=f)
        pi, _ = kalman_forward(coef, np.full((1, 1), pi0))
        ric = riccati_backward(coef)
        val = predicted_fluctuation_cost(coef, pi, ric.z, np.zeros(1),
                                         np.full((1, 1), pi0))
        nodes, weights = np.polynomial.hermite_e.hermegauss(40)
        total = 0.0
        for s_node, s_weight in zip(nodes, weights):
            s0 = s_node * math.sqrt(pi0)
            stage = q * s0 * s0  # a0 = 0 because shat0 = 0
            for w_node, w_weight in zip(nodes, weights):
                s1 = (1 + e) * s0 + w_node * math.sqrt(theta)
                total += s_weight * w_weight * (stage + f * s1 * s1)
        total /= 2.0 * math.pi
        assert val == pytest.approx(total, rel=1e-10)

    def test_ising_closed_form_values(self):
        cf = ising_closed_form(1.0, 0.5, 2.0)
        assert cf.pi_star == pytest.approx(0.4142136, abs=1e-7)
        assert not cf.critical
        cf2 = ising_closed_form(1.0, 2.0, 2.0)
        assert cf2.critical and cf2.z_star is None
        mags = sorted(m for m, _ in cf2.equilibria)
        assert mags[1] == pytest.approx(math.sqrt(1 - 0.25), abs=1e-7)
        assert mags[0] == pytest.approx(-0.8660254, abs=1e-7)
        p_expect = math.asinh(2.0 * mags[1]) / 2.0
        assert dict(cf2.equilibria)[mags[1]] == pytest.approx(p_expect)
        cf3 = ising_closed_form(1.0, 1.0, 2.0)
        assert cf3.critical
        assert all(m == pytest.approx(0.0) for m, _ in cf3.equilibria)

    def test_full_pipeline_bundle(self, ising_equilibrium):
        mdl, sol, coef = ising_equilibrium
        fg = solve_fluctuations(mdl, sol)
        assert fg.exists
        assert fg.predicted_cost is not None and fg.predicted_cost > 0.0
        assert fg.pi.shape == (sol.n_steps + 1, 2, 2)
        assert fg.feedback_gains.shape == (sol.n_steps, 2, 2)
        # stationary filter covariance approaches the honest continuous root
        honest = 2.0 / (1.0 + math.sqrt(3.0))
        assert reduce_covariance(fg.pi[-1]) == pytest.approx(honest, abs=2e-2)

    def test_multinomial_initial_covariance(self):
        s0 = np.array([0.2, 0.5, 0.3])
        cov = multinomial_initial_covariance(s0)
        assert np.allclose(cov, np.diag(s0) - np.outer(s0, s0))
        assert abs(cov.sum()) <= 1e-15
