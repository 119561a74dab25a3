"""Finite-state agent models and pointwise quantities derived from them.

A model is a population of identical agents, each occupying one of ``l``
states.  Agents hop between states at rates that may depend on the empirical
state distribution and on a global control vector, and emit observation
events on ``l_obs`` channels at state-dependent rates.  Everything the rest
of the package needs is derived pointwise from the four user-supplied
functions (transition rates, observation rates, running cost, terminal
cost): the population drift, the mean observation drift, the jump-noise
covariances, and the control Hamiltonian with its maximizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_NEG_TOL = 1e-12

# Central-difference steps: first derivatives use h ~ 1e-6, second
# derivatives a larger 1e-4-scaled step to limit cancellation.
FD_STEP_FIRST = 1e-6
FD_STEP_SECOND = 1e-4


class SimplexError(ValueError):
    """State vector is not a probability distribution within tolerance."""


class RateError(ValueError):
    """A rate function returned a negative or non-finite value."""


class MaximizerError(RuntimeError):
    """The inner Hamiltonian maximizer failed to converge or is unbounded."""


@dataclass(frozen=True)
class AnalyticDerivatives:
    """Optional analytic derivative callbacks for a model.

    Any entry left as None is filled in by central finite differences of the
    assembled drift/cost functions.  Hessians of the drift enter only
    contracted against a costate vector, so they are supplied in contracted
    form ``(sigma, alpha, p) -> p . D2 b``.
    """

    drift_jac_state: Optional[Callable] = None       # (sigma, alpha) -> (l, l)
    drift_jac_control: Optional[Callable] = None     # (sigma, alpha) -> (l, m)
    obs_drift_jac_state: Optional[Callable] = None   # (sigma,) -> (l_obs, l)
    cost_grad_state: Optional[Callable] = None       # (sigma, alpha) -> (l,)
    cost_grad_control: Optional[Callable] = None     # (sigma, alpha) -> (m,)
    cost_hess_ss: Optional[Callable] = None          # (sigma, alpha) -> (l, l)
    cost_hess_sa: Optional[Callable] = None          # (sigma, alpha) -> (l, m)
    cost_hess_aa: Optional[Callable] = None          # (sigma, alpha) -> (m, m)
    terminal_grad: Optional[Callable] = None         # (sigma,) -> (l,)
    terminal_hess: Optional[Callable] = None         # (sigma,) -> (l, l)
    drift_hess_ss_costate: Optional[Callable] = None  # (sigma, alpha, p) -> (l, l)
    drift_hess_sa_costate: Optional[Callable] = None  # (sigma, alpha, p) -> (l, m)
    drift_hess_aa_costate: Optional[Callable] = None  # (sigma, alpha, p) -> (m, m)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable definition of a finite-state agent model.

    Parameters
    ----------
    n_states : int
        Number of agent states ``l``.
    n_controls : int
        Dimension ``m`` of the global control vector (may be 0).
    n_obs_channels : int
        Number of observation channels ``l_obs`` (may be 0).
    transition_rate : callable
        ``(from_state, to_state, sigma, alpha) -> rate >= 0``.  Never called
        with ``from_state == to_state``.
    observation_rate : callable
        ``(state, channel, sigma) -> rate >= 0``.
    running_cost, terminal_cost : callable
        ``L(sigma, alpha)`` and ``G(sigma)``.
    analytic : AnalyticDerivatives, optional
        Analytic derivatives; missing pieces fall back to finite differences.
    analytic_argmax : callable, optional
        ``(sigma, p) -> alpha`` attaining the Hamiltonian supremum.
    control_lower, control_upper : arrays, optional
        Admissible control box; used to clamp feedback controls so that all
        rates stay nonnegative.
    """

    name: str
    n_states: int
    n_controls: int
    n_obs_channels: int
    transition_rate: Callable
    observation_rate: Callable
    running_cost: Callable
    terminal_cost: Callable
    analytic: Optional[AnalyticDerivatives] = None
    analytic_argmax: Optional[Callable] = None
    control_lower: Optional[np.ndarray] = None
    control_upper: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be a positive integer")
        if self.n_controls < 0 or self.n_obs_channels < 0:
            raise ValueError("n_controls and n_obs_channels must be >= 0")

    def clamp_control(self, alpha: np.ndarray) -> np.ndarray:
        lo = -np.inf if self.control_lower is None else self.control_lower
        hi = np.inf if self.control_upper is None else self.control_upper
        return np.clip(alpha, lo, hi)


@dataclass(frozen=True)
class PointEval:
    """Drift and noise quantities evaluated at one ``(sigma, alpha)`` point."""

    drift: np.ndarray        # (l,)
    obs_drift: np.ndarray    # (l_obs,)
    theta: np.ndarray        # (l, l) jump-noise covariance
    theta_tilde: np.ndarray  # (l_obs, l_obs) diagonal observation-noise covariance


def validate_simplex(sigma: np.ndarray, n_states: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n_states,):
        raise SimplexError(f"state vector has shape {sigma.shape}, expected ({n_states},)")
    if not np.all(np.isfinite(sigma)):
        raise SimplexError("state vector has non-finite entries")
    if np.min(sigma) < -SIMPLEX_NEG_TOL:
        raise SimplexError(f"state vector has negative entry {np.min(sigma)}")
    total = float(np.sum(sigma))
    if abs(total - 1.0) > SIMPLEX_SUM_TOL:
        raise SimplexError(f"state vector sums to {total}, expected 1")
    return sigma


def renormalize_simplex(sigma: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and rescale to unit sum."""
    sigma = np.maximum(np.asarray(sigma, dtype=float), 0.0)
    total = sigma.sum()
    if total <= 0.0:
        raise SimplexError("state vector has no mass after clamping")
    return sigma / total


def rate_matrix(model: ModelSpec, sigma, alpha) -> np.ndarray:
    """Transition-rate matrix with zero diagonal; checks finiteness and sign."""
    l = model.n_states
    beta = np.zeros((l, l))
    for s in range(l):
        for g in range(l):
            if g == s:
                continue
            r = float(model.transition_rate(s, g, sigma, alpha))
            if not math.isfinite(r):
                raise RateError(f"transition rate ({s}->{g}) is not finite")
            if r < 0.0:
                raise RateError(f"transition rate ({s}->{g}) is negative: {r}")
            beta[s, g] = r
    return beta


def obs_rate_matrix(model: ModelSpec, sigma) -> np.ndarray:
    """Observation-rate matrix, shape (l, l_obs)."""
    l, lo = model.n_states, model.n_obs_channels
    beta = np.zeros((l, lo))
    for s in range(l):
        for ch in range(lo):
            r = float(model.observation_rate(s, ch, sigma))
            if not math.isfinite(r):
                raise RateError(f"observation rate ({s}, channel {ch}) is not finite")
            if r < 0.0:
                raise RateError(f"observation rate ({s}, channel {ch}) is negative: {r}")
            beta[s, ch] = r
    return beta


def _drift_raw(model: ModelSpec, sigma, alpha) -> np.ndarray:
    # No simplex validation: also used off-simplex by finite differences.
    sigma = np.asarray(sigma, dtype=float)
    beta = rate_matrix(model, sigma, alpha)
    flux = sigma[:, None] * beta
    return flux.sum(axis=0) - flux.sum(axis=1)


def drift(model: ModelSpec, sigma, alpha) -> np.ndarray:
    """Population drift ``b(sigma, alpha)``; components sum to zero."""
    sigma = validate_simplex(sigma, model.n_states)
    return _drift_raw(model, sigma, alpha)


def _obs_drift_raw(model: ModelSpec, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if model.n_obs_channels == 0:
        return np.zeros(0)
    beta = obs_rate_matrix(model, sigma)
    return beta.T @ sigma


def obs_drift(model: ModelSpec, sigma) -> np.ndarray:
    """Mean observation drift per channel, ``bt(sigma)[ch] = sum_s rate(s,ch) sigma[s]``."""
    sigma = validate_simplex(sigma, model.n_states)
    out = _obs_drift_raw(model, sigma)
    return np.maximum(out, 0.0)


def noise_covariances(model: ModelSpec, sigma, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Jump-noise covariance ``theta`` and observation-noise covariance ``theta_tilde``.

    ``theta[s, s] = sum_{g != s} (sigma[g] beta(g,s) + sigma[s] beta(s,g))`` with the
    matching negative off-diagonal entries, so rows sum to zero exactly and the
    matrix is positive semidefinite.  ``theta_tilde`` is diagonal because the
    observation channels are driven by independent event streams; the cross
    covariance between state noise and observation noise is identically zero
    for the same reason.
    """
    sigma = validate_simplex(sigma, model.n_states)
    l = model.n_states
    beta = rate_matrix(model, sigma, alpha)
    w = sigma[:, None] * beta + (sigma[:, None] * beta).T  # w[s,g] = sig_s b(s,g) + sig_g b(g,s)
    theta = -w
    for s in range(l):
        theta[s, s] = 0.0
        theta[s, s] = -theta[s].sum()  # exact row-sum cancellation
    theta_tilde = np.diag(_obs_drift_raw(model, np.maximum(sigma, 0.0)))
    return theta, theta_tilde


def point_eval(model: ModelSpec, sigma, alpha) -> PointEval:
    theta, theta_tilde = noise_covariances(model, sigma, alpha)
    return PointEval(
        drift=drift(model, sigma, alpha),
        obs_drift=obs_drift(model, sigma),
        theta=theta,
        theta_tilde=theta_tilde,
    )


# ---------------------------------------------------------------------------
# Derivative dispatch: analytic callbacks with a finite-difference fallback.
# ---------------------------------------------------------------------------

def _fd_steps(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.maximum(1.0, np.abs(x))


def _fd_jacobian(f: Callable, x: np.ndarray, out_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x, FD_STEP_FIRST)
    jac = np.zeros((out_dim, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        jac[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h[j])
    return jac


def _fd_gradient(f: Callable, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x, FD_STEP_FIRST)
    g = np.zeros(x.size)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2 * h[j])
    return g


def _fd_hessian(f: Callable, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x, FD_STEP_SECOND)
    n = x.size
    hess = np.zeros((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros_like(x)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / (h[i] ** 2)
        for j in range(i + 1, n):
            ej = np.zeros_like(x)
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


def _fd_cross(f: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mixed second derivative d^2 f / dx dy of a scalar f(x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hx = _fd_steps(x, FD_STEP_SECOND)
    hy = _fd_steps(y, FD_STEP_SECOND)
    out = np.zeros((x.size, y.size))
    for i in range(x.size):
        ei = np.zeros_like(x)
        ei[i] = hx[i]
        for j in range(y.size):
            ej = np.zeros_like(y)
            ej[j] = hy[j]
            out[i, j] = (
                f(x + ei, y + ej) - f(x + ei, y - ej) - f(x - ei, y + ej) + f(x - ei, y - ej)
            ) / (4 * hx[i] * hy[j])
    return out


def drift_jac_state(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.drift_jac_state is not None:
        return np.asarray(a.drift_jac_state(sigma, alpha), dtype=float)
    return _fd_jacobian(lambda s: _drift_raw(model, s, alpha), sigma, model.n_states)


def drift_jac_control(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.drift_jac_control is not None:
        return np.asarray(a.drift_jac_control(sigma, alpha), dtype=float)
    if model.n_controls == 0:
        return np.zeros((model.n_states, 0))
    return _fd_jacobian(lambda c: _drift_raw(model, sigma, c), np.asarray(alpha, float), model.n_states)


def obs_drift_jac_state(model: ModelSpec, sigma) -> np.ndarray:
    a = model.analytic
    if a is not None and a.obs_drift_jac_state is not None:
        return np.asarray(a.obs_drift_jac_state(sigma), dtype=float)
    return _fd_jacobian(lambda s: _obs_drift_raw(model, s), sigma, model.n_obs_channels)


def cost_grad_state(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.cost_grad_state is not None:
        return np.asarray(a.cost_grad_state(sigma, alpha), dtype=float)
    return _fd_gradient(lambda s: model.running_cost(s, alpha), sigma)


def cost_grad_control(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.cost_grad_control is not None:
        return np.asarray(a.cost_grad_control(sigma, alpha), dtype=float)
    if model.n_controls == 0:
        return np.zeros(0)
    return _fd_gradient(lambda c: model.running_cost(sigma, c), np.asarray(alpha, float))


def cost_hess_ss(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.cost_hess_ss is not None:
        return np.asarray(a.cost_hess_ss(sigma, alpha), dtype=float)
    return _fd_hessian(lambda s: model.running_cost(s, alpha), sigma)


def cost_hess_sa(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.cost_hess_sa is not None:
        return np.asarray(a.cost_hess_sa(sigma, alpha), dtype=float)
    if model.n_controls == 0:
        return np.zeros((model.n_states, 0))
    return _fd_cross(lambda s, c: model.running_cost(s, c), sigma, np.asarray(alpha, float))


def cost_hess_aa(model: ModelSpec, sigma, alpha) -> np.ndarray:
    a = model.analytic
    if a is not None and a.cost_hess_aa is not None:
        return np.asarray(a.cost_hess_aa(sigma, alpha), dtype=float)
    if model.n_controls == 0:
        return np.zeros((0, 0))
    return _fd_hessian(lambda c: model.running_cost(sigma, c), np.asarray(alpha, float))


def terminal_grad(model: ModelSpec, sigma) -> np.ndarray:
    a = model.analytic
    if a is not None and a.terminal_grad is not None:
        return np.asarray(a.terminal_grad(sigma), dtype=float)
    return _fd_gradient(model.terminal_cost, sigma)


def terminal_hess(model: ModelSpec, sigma) -> np.ndarray:
    a = model.analytic
    if a is not None and a.terminal_hess is not None:
        return np.asarray(a.terminal_hess(sigma), dtype=float)
    return _fd_hessian(model.terminal_cost, sigma)


def drift_hess_ss_costate(model: ModelSpec, sigma, alpha, p) -> np.ndarray:
    a = model.analytic
    if a is not None and a.drift_hess_ss_costate is not None:
        return np.asarray(a.drift_hess_ss_costate(sigma, alpha, p), dtype=float)
    p = np.asarray(p, dtype=float)
    return _fd_hessian(lambda s: float(p @ _drift_raw(model, s, alpha)), sigma)


def drift_hess_sa_costate(model: ModelSpec, sigma, alpha, p) -> np.ndarray:
    a = model.analytic
    if a is not None and a.drift_hess_sa_costate is not None:
        return np.asarray(a.drift_hess_sa_costate(sigma, alpha, p), dtype=float)
    if model.n_controls == 0:
        return np.zeros((model.n_states, 0))
    p = np.asarray(p, dtype=float)
    return _fd_cross(lambda s, c: float(p @ _drift_raw(model, s, c)), sigma, np.asarray(alpha, float))


def drift_hess_aa_costate(model: ModelSpec, sigma, alpha, p) -> np.ndarray:
    a = model.analytic
    if a is not None and a.drift_hess_aa_costate is not None:
        return np.asarray(a.drift_hess_aa_costate(sigma, alpha, p), dtype=float)
    if model.n_controls == 0:
        return np.zeros((0, 0))
    p = np.asarray(p, dtype=float)
    return _fd_hessian(lambda c: float(p @ _drift_raw(model, sigma, c)), np.asarray(alpha, float))


# ---------------------------------------------------------------------------
# Control Hamiltonian.
# ---------------------------------------------------------------------------

def hamiltonian_at(model: ModelSpec, sigma, alpha, p) -> float:
    """Pre-maximization Hamiltonian ``p . b(sigma, alpha) - L(sigma, alpha)``."""
    p = np.asarray(p, dtype=float)
    return float(p @ _drift_raw(model, sigma, alpha) - model.running_cost(sigma, alpha))


def hamiltonian_grad_control(model: ModelSpec, sigma, alpha, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return drift_jac_control(model, sigma, alpha).T @ p - cost_grad_control(model, sigma, alpha)


def hamiltonian_grad_state(model: ModelSpec, sigma, alpha, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return drift_jac_state(model, sigma, alpha).T @ p - cost_grad_state(model, sigma, alpha)


_HAMILTONIAN_GTOL = 1e-10
_HAMILTONIAN_POST_TOL = 1e-8
_MAX_NEWTON_ITERS = 100


def _fd_gradient_noise_floor(model: ModelSpec, value: float) -> float:
    """Roundoff level of a central-difference gradient of the Hamiltonian.

    Analytic control derivatives have no such floor; finite differences cannot
    certify stationarity below eps * |H| / h.
    """
    a = model.analytic
    if a is not None and a.cost_grad_control is not None and a.drift_jac_control is not None:
        return 0.0
    return 4.0 * np.finfo(float).eps * (1.0 + abs(value)) / FD_STEP_FIRST


def maximize_hamiltonian(model: ModelSpec, sigma, p, alpha0=None) -> np.ndarray:
    """Damped Newton ascent (Armijo backtracking) on the control Hamiltonian.

    Warm-start with ``alpha0`` (typically the previous time step's control).
    """
    if model.n_controls == 0:
        return np.zeros(0)
    if alpha0 is None:
        alpha = np.ones(model.n_controls)
    else:
        alpha = np.array(alpha0, dtype=float)
    val = hamiltonian_at(model, sigma, alpha, p)
    if not math.isfinite(val):
        raise MaximizerError("Hamiltonian is not finite at the initial control")
    noise_floor = _fd_gradient_noise_floor(model, val)
    for _ in range(_MAX_NEWTON_ITERS):
        g = hamiltonian_grad_control(model, sigma, alpha, p)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= max(_HAMILTONIAN_GTOL, noise_floor):
            return alpha
        hess = drift_hess_aa_costate(model, sigma, alpha, p) - cost_hess_aa(model, sigma, alpha)
        step = None
        try:
            cand = np.linalg.solve(hess, -g)
            if float(cand @ g) > 0.0:  # ascent direction only if hessian is negative definite
                step = cand
        except np.linalg.LinAlgError:
            pass
        if step is None:
            step = g / max(1.0, gnorm)
        t = 1.0
        slope = float(g @ step)
        accepted = False
        for _ in range(60):
            trial = alpha + t * step
            tv = hamiltonian_at(model, sigma, trial, p)
            if math.isfinite(tv) and tv >= val + 1e-4 * t * slope:
                alpha, val = trial, tv
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise MaximizerError("Hamiltonian line search failed (step underflow)")
        if abs(val) > 1e15:
            raise MaximizerError("Hamiltonian appears unbounded over controls")
    g = hamiltonian_grad_control(model, sigma, alpha, p)
    if float(np.linalg.norm(g)) > max(_HAMILTONIAN_POST_TOL, noise_floor):
        raise MaximizerError(
            f"Hamiltonian maximizer did not converge: |grad| = {np.linalg.norm(g):.3e}"
        )
    return alpha


def hamiltonian(model: ModelSpec, sigma, p, alpha0=None) -> tuple[float, np.ndarray]:
    """Maximized Hamiltonian ``H(sigma, p)`` and its attaining control.

    Uses ``analytic_argmax`` when the model provides one, otherwise the
    damped-Newton maximizer.  The returned control satisfies
    ``|grad_alpha| <= 1e-8``.
    """
    sigma = validate_simplex(sigma, model.n_states)
    if model.analytic_argmax is not None:
        alpha = np.asarray(model.analytic_argmax(sigma, np.asarray(p, float)), dtype=float)
    else:
        alpha = maximize_hamiltonian(model, sigma, p, alpha0=alpha0)
    value = hamiltonian_at(model, sigma, alpha, p)
    if not math.isfinite(value):
        raise MaximizerError("Hamiltonian value is not finite at the maximizing control")
    return value, alpha


def random_simplex(rng: np.random.Generator, n_states: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_states))
