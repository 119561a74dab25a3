"""Three-compartment epidemic model with a contact-reduction control.

States: 0 = susceptible, 1 = infectious, 2 = recovered.  The single control
``alpha`` is the effective transmission rate: susceptibles become infectious
at rate ``alpha * sigma[1]``, infectious agents recover at the fixed rate
``recovery``, and infectious agents produce positive tests on the single
observation channel at rate ``test_rate``.  The running cost charges
``control_cost * (-log(alpha / base_rate) + alpha / base_rate - 1)`` for
pushing transmission below its baseline plus ``infection_cost * sigma[1]``
per unit time; there is no terminal cost.
"""

from __future__ import annotations

import math

import numpy as np

from .model import AnalyticDerivatives, MaximizerError, ModelSpec

# Transmission is kept strictly positive so the log-barrier cost stays finite.
CONTROL_FLOOR = 1e-8


def build_sir(base_rate: float, recovery: float, test_rate: float,
              infection_cost: float, control_cost: float) -> ModelSpec:
    """Model factory.  All parameters must be positive except ``test_rate >= 0``."""
    if base_rate <= 0.0:
        raise ValueError("base_rate must be positive")
    if control_cost <= 0.0:
        raise ValueError("control_cost must be positive")
    if recovery <= 0.0:
        raise ValueError("recovery must be positive")
    if infection_cost <= 0.0:
        raise ValueError("infection_cost must be positive")
    if test_rate < 0.0:
        raise ValueError("test_rate must be nonnegative")
    b = float(base_rate)
    gam = float(recovery)
    nu = float(test_rate)
    c = float(infection_cost)
    k = float(control_cost)

    def transition_rate(s, g, sigma, alpha):
        if s == 0 and g == 1:
            return alpha[0] * sigma[1]
        if s == 1 and g == 2:
            return gam
        return 0.0

    def observation_rate(s, ch, sigma):
        return nu if s == 1 else 0.0

    def running_cost(sigma, alpha):
        a = alpha[0]
        return k * (-math.log(a / b) + a / b - 1.0) + c * sigma[1]

    def terminal_cost(sigma):
        return 0.0

    def drift_jac_state(sigma, alpha):
        a = alpha[0]
        return np.array([
            [-a * sigma[1], -a * sigma[0], 0.0],
            [a * sigma[1], a * sigma[0] - gam, 0.0],
            [0.0, gam, 0.0],
        ])

    def drift_jac_control(sigma, alpha):
        ss1 = sigma[0] * sigma[1]
        return np.array([[-ss1], [ss1], [0.0]])

    def obs_drift_jac_state(sigma):
        return np.array([[0.0, nu, 0.0]])

    def cost_grad_state(sigma, alpha):
        return np.array([0.0, c, 0.0])

    def cost_grad_control(sigma, alpha):
        a = alpha[0]
        return np.array([k * (-1.0 / a + 1.0 / b)])

    def drift_hess_ss_costate(sigma, alpha, p):
        a = alpha[0]
        out = np.zeros((3, 3))
        out[0, 1] = out[1, 0] = a * (p[1] - p[0])
        return out

    def drift_hess_sa_costate(sigma, alpha, p):
        dp = p[1] - p[0]
        return np.array([[sigma[1] * dp], [sigma[0] * dp], [0.0]])

    def analytic_argmax(sigma, p):
        dp = p[1] - p[0]
        denom = k - b * sigma[0] * sigma[1] * dp
        if denom <= 0.0:
            raise MaximizerError("Hamiltonian unbounded: costate rewards transmission too strongly")
        return np.array([b * k / denom])

    analytic = AnalyticDerivatives(
        drift_jac_state=drift_jac_state,
        drift_jac_control=drift_jac_control,
        obs_drift_jac_state=obs_drift_jac_state,
        cost_grad_state=cost_grad_state,
        cost_grad_control=cost_grad_control,
        cost_hess_ss=lambda sigma, alpha: np.zeros((3, 3)),
        cost_hess_sa=lambda sigma, alpha: np.zeros((3, 1)),
        cost_hess_aa=lambda sigma, alpha: np.array([[k / alpha[0] ** 2]]),
        terminal_grad=lambda sigma: np.zeros(3),
        terminal_hess=lambda sigma: np.zeros((3, 3)),
        drift_hess_ss_costate=drift_hess_ss_costate,
        drift_hess_sa_costate=drift_hess_sa_costate,
        drift_hess_aa_costate=lambda sigma, alpha, p: np.zeros((1, 1)),
    )

    return ModelSpec(
        name="sir",
        n_states=3,
        n_controls=1,
        n_obs_channels=1,
        transition_rate=transition_rate,
        observation_rate=observation_rate,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        analytic=analytic,
        analytic_argmax=analytic_argmax,
        control_lower=np.array([CONTROL_FLOOR]),
        params={
            "base_rate": b,
            "recovery": gam,
            "test_rate": nu,
            "infection_cost": c,
            "control_cost": k,
        },
    )


DEFAULT_PARAMS = {
    "base_rate": 0.87,
    "recovery": 0.217,
    "test_rate": 1.0 / 3.0,
    "infection_cost": 8000.0,
    "control_cost": 100.0,
}
