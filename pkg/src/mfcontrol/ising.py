"""Two-state model with controlled flip rates and a quadratic alignment cost.

States are 0 and 1; the two controls are exactly the flip rates
``beta(0->1) = alpha[0]`` and ``beta(1->0) = alpha[1]``.  Each agent is also
observed on its own channel at rate ``obs_rate``.  The running cost charges
``beta_inv_cost**-1 * sigma[s] * alpha[s] * (log(alpha[s]) - 1)`` for
deviating the rates from their rest value of 1, an external bias ``field``
on the magnetization ``sigma[1] - sigma[0]``, and a quadratic alignment term
``-(coupling/2) * (sigma[1] - sigma[0])**2``.

The symmetric fixed point at zero magnetization admits closed forms for the
stationary filter covariance and value curvature, exposed here as oracles;
the product ``beta_inv_cost * coupling = 1`` is the critical point where the
backward value recursion stops having a bounded solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AnalyticDerivatives, ModelSpec

# Reduced (magnetization) coordinate: shat = sigma[1] - sigma[0].
_V = np.array([-1.0, 1.0])


def _xlogy(x: float, y: float) -> float:
    return 0.0 if x == 0.0 else x * math.log(y)


def build_ising(beta_inv_cost: float, field: float = 0.0, coupling: float = 0.0,
                obs_rate: float = 0.0) -> ModelSpec:
    """Model factory.  Requires ``beta_inv_cost > 0`` and ``obs_rate >= 0``."""
    if beta_inv_cost <= 0.0:
        raise ValueError("beta_inv_cost must be positive")
    if obs_rate < 0.0:
        raise ValueError("obs_rate must be nonnegative")
    b, h, j, q = float(beta_inv_cost), float(field), float(coupling), float(obs_rate)
    inv_b = 1.0 / b

    def transition_rate(s, g, sigma, alpha):
        return alpha[0] if s == 0 else alpha[1]

    def observation_rate(s, ch, sigma):
        return q if s == ch else 0.0

    def running_cost(sigma, alpha):
        mag = sigma[1] - sigma[0]
        ctrl = inv_b * (
            sigma[0] * (_xlogy(alpha[0], alpha[0]) - alpha[0])
            + sigma[1] * (_xlogy(alpha[1], alpha[1]) - alpha[1])
        )
        return ctrl - h * mag - 0.5 * j * mag * mag

    def terminal_cost(sigma):
        return 0.0

    def drift_jac_state(sigma, alpha):
        return np.array([[-alpha[0], alpha[1]], [alpha[0], -alpha[1]]])

    def drift_jac_control(sigma, alpha):
        return np.array([[-sigma[0], sigma[1]], [sigma[0], -sigma[1]]])

    def obs_drift_jac_state(sigma):
        return np.array([[q, 0.0], [0.0, q]])

    def cost_grad_state(sigma, alpha):
        mag = sigma[1] - sigma[0]
        c0 = inv_b * (_xlogy(alpha[0], alpha[0]) - alpha[0]) + h + j * mag
        c1 = inv_b * (_xlogy(alpha[1], alpha[1]) - alpha[1]) - h - j * mag
        return np.array([c0, c1])

    def cost_grad_control(sigma, alpha):
        g0 = inv_b * sigma[0] * (math.log(alpha[0]) if alpha[0] > 0 else -math.inf)
        g1 = inv_b * sigma[1] * (math.log(alpha[1]) if alpha[1] > 0 else -math.inf)
        if sigma[0] == 0.0:
            g0 = 0.0
        if sigma[1] == 0.0:
            g1 = 0.0
        return np.array([g0, g1])

    def cost_hess_ss(sigma, alpha):
        return np.array([[-j, j], [j, -j]])

    def cost_hess_sa(sigma, alpha):
        d0 = inv_b * (math.log(alpha[0]) if alpha[0] > 0 else -math.inf)
        d1 = inv_b * (math.log(alpha[1]) if alpha[1] > 0 else -math.inf)
        return np.array([[d0, 0.0], [0.0, d1]])

    def cost_hess_aa(sigma, alpha):
        return np.diag([inv_b * sigma[0] / alpha[0], inv_b * sigma[1] / alpha[1]])

    def drift_hess_sa_costate(sigma, alpha, p):
        dp = p[1] - p[0]
        return np.array([[dp, 0.0], [0.0, -dp]])

    def analytic_argmax(sigma, p):
        dp = p[1] - p[0]
        return np.array([math.exp(b * dp), math.exp(-b * dp)])

    analytic = AnalyticDerivatives(
        drift_jac_state=drift_jac_state,
        drift_jac_control=drift_jac_control,
        obs_drift_jac_state=obs_drift_jac_state,
        cost_grad_state=cost_grad_state,
        cost_grad_control=cost_grad_control,
        cost_hess_ss=cost_hess_ss,
        cost_hess_sa=cost_hess_sa,
        cost_hess_aa=cost_hess_aa,
        terminal_grad=lambda sigma: np.zeros(2),
        terminal_hess=lambda sigma: np.zeros((2, 2)),
        drift_hess_ss_costate=lambda sigma, alpha, p: np.zeros((2, 2)),
        drift_hess_sa_costate=drift_hess_sa_costate,
        drift_hess_aa_costate=lambda sigma, alpha, p: np.zeros((2, 2)),
    )

    return ModelSpec(
        name="ising",
        n_states=2,
        n_controls=2,
        n_obs_channels=2,
        transition_rate=transition_rate,
        observation_rate=observation_rate,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        analytic=analytic,
        analytic_argmax=analytic_argmax,
        control_lower=np.zeros(2),
        params={"beta_inv_cost": b, "field": h, "coupling": j, "obs_rate": q},
    )


def reduced_coordinate(sigma: np.ndarray) -> float:
    """Magnetization ``sigma[1] - sigma[0]``."""
    return float(_V @ np.asarray(sigma, dtype=float))


def reduced_costate(p: np.ndarray) -> float:
    """Costate conjugate to the magnetization: ``(p[1] - p[0]) / 2``."""
    return float(_V @ np.asarray(p, dtype=float)) / 2.0


def reduce_covariance(mat: np.ndarray) -> float:
    """Covariance of the magnetization fluctuation: ``v' M v`` with v = (-1, 1)."""
    return float(_V @ np.asarray(mat, dtype=float) @ _V)


def reduce_value(mat: np.ndarray) -> float:
    """Value-matrix pull-back to the magnetization coordinate: ``v' Z v / 4``."""
    return float(_V @ np.asarray(mat, dtype=float) @ _V) / 4.0


@dataclass(frozen=True)
class IsingFixedPoints:
    """Closed-form stationary quantities at the symmetric equilibrium."""

    pi_star: float
    z_star: Optional[float]
    critical: bool
    equilibria: list  # [(magnetization, reduced costate)] for the aligned branches


def closed_form_equilibrium_coefficients(beta_inv_cost: float, coupling: float,
                                         obs_rate: float, dt: float, n_steps: int):
    """Scalar coefficient set at the symmetric equilibrium, magnetization coordinate.

    This is the stationary system whose fixed points are returned by
    :func:`ising_closed_form`: relaxation -2, observation gain and noise both
    ``obs_rate``, control curvature ``I / (4 beta_inv_cost)``, control gain
    ``(1, -1)``, state cost ``-coupling / 2``, zero terminal cost, and state
    noise 2.  Note the state-noise normalization here is the closed-form
    convention, which is half the quadratic variation of the magnetization of
    the jump process itself (the magnetization jumps by 2/N, not 1/N); the
    honest full-coordinate covariances come from
    :func:`mfcontrol.model.noise_covariances`.
    """
    from .fluctuations import LqgCoefficients

    if beta_inv_cost <= 0.0:
        raise ValueError("beta_inv_cost must be positive")
    n = int(n_steps)
    ones = np.ones((n, 1, 1))
    return LqgCoefficients(
        dt=dt,
        R=np.tile(np.eye(2) / (4.0 * beta_inv_cost) * dt, (n, 1, 1)),
        B=np.tile(np.array([[1.0, -1.0]]) * dt, (n, 1, 1)),
        E=ones * (-2.0 * dt),
        Q=ones * (-0.5 * coupling * dt),
        W=np.zeros((n, 1, 2)),
        Et=ones * (obs_rate * dt),
        Theta=ones * (2.0 * dt),
        Theta_t=ones * (obs_rate * dt),
        F=np.zeros((1, 1)),
    )


def ising_closed_form(beta_inv_cost: float, coupling: float, obs_rate: float) -> IsingFixedPoints:
    """Stationary filter covariance and value curvature at zero magnetization.

    ``pi_star = 1 / (1 + sqrt(1 + obs_rate / 2))`` and, while
    ``beta_inv_cost * coupling < 1``,
    ``z_star = (-1 + sqrt(1 - beta_inv_cost * coupling)) / (4 beta_inv_cost)``
    (the root the backward recursion reaches from a zero terminal condition).
    Beyond the critical product the value recursion has no bounded fixed
    point and the aligned equilibria ``+-sqrt(1 - (bj)^-2)`` appear.
    """
    if beta_inv_cost <= 0.0:
        raise ValueError("beta_inv_cost must be positive")
    if obs_rate < 0.0:
        raise ValueError("obs_rate must be nonnegative")
    b, j, q = float(beta_inv_cost), float(coupling), float(obs_rate)
    pi_star = 1.0 / (1.0 + math.sqrt(1.0 + q / 2.0))
    bj = b * j
    z_star = (-1.0 + math.sqrt(1.0 - bj)) / (4.0 * b) if bj < 1.0 else None
    critical = bj >= 1.0
    equilibria = []
    if critical:
        s = math.sqrt(max(0.0, 1.0 - 1.0 / (bj * bj)))
        for mag in (s, -s):
            p = math.asinh(bj * mag) / (2.0 * b)
            equilibria.append((mag, p))
    return IsingFixedPoints(pi_star=pi_star, z_star=z_star, critical=critical,
                            equilibria=equilibria)
