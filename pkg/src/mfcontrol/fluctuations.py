"""Quadratic fluctuation analysis around a mean-field trajectory.

A converged open-loop trajectory induces a time-varying linear-quadratic
problem for the scaled deviations ``s = sqrt(N) (empirical - mean)``: linear
dynamics ``s[k+1] = (I + E[k]) s[k] + B[k] a[k] + noise(Theta[k])``, noisy
observation increments ``du[k] = Et[k] s[k] + noise(Theta_t[k])``, and a
quadratic stage cost ``s'Qs + 2 s'W a + a'R a`` with terminal ``s'F s``.
This module extracts those per-step coefficients, runs the forward
covariance recursion of the optimal linear filter (Joseph form), runs the
backward value recursion with its feedback gains, and evaluates the exact
expected cost of the resulting estimate-feedback policy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model as md
from .meanfield import MeanFieldSolution

Z_DIVERGENCE_BOUND = 1e12


class CoefficientError(RuntimeError):
    """A per-step coefficient violates a requirement (e.g. R not positive definite)."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class SingularInnovationError(RuntimeError):
    """Innovation covariance is singular on a channel that carries signal."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class LqgCoefficients:
    """Per-step matrices of the fluctuation problem (time step folded in)."""

    dt: float
    R: np.ndarray        # (n, m, m)
    B: np.ndarray        # (n, l, m)
    E: np.ndarray        # (n, l, l)
    Q: np.ndarray        # (n, l, l)
    W: np.ndarray        # (n, l, m)
    Et: np.ndarray       # (n, l_obs, l)
    Theta: np.ndarray    # (n, l, l)
    Theta_t: np.ndarray  # (n, l_obs, l_obs)
    F: np.ndarray        # (l, l)

    @property
    def n_steps(self) -> int:
        return self.E.shape[0]

    @property
    def n_states(self) -> int:
        return self.E.shape[1]

    @property
    def n_controls(self) -> int:
        return self.B.shape[2]

    @property
    def n_obs(self) -> int:
        return self.Et.shape[1]


@dataclass(frozen=True)
class FilterAndGain:
    """Filter covariances/gains, value matrices/gains, and the predicted cost."""

    pi: np.ndarray             # (n + 1, l, l)
    kalman_gains: np.ndarray   # (n, l, l_obs)
    z: np.ndarray              # (n + 1, l, l)
    feedback_gains: np.ndarray  # (n, m, l)
    exists: bool
    failure_step: Optional[int]
    predicted_cost: Optional[float]


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def extract_coefficients(mdl: md.ModelSpec, mf: MeanFieldSolution,
                         converged_tol: float = 1e-6) -> LqgCoefficients:
    """Evaluate the quadratic expansion along ``(S[k], A[k])`` with costate ``P[k+1]``.

    The expansion drops first-order terms, which is valid only at a stationary
    trajectory; a warning is emitted when the stored gradient norm exceeds
    ``converged_tol``.  Raises :class:`CoefficientError` naming the first step
    at which the control curvature ``R`` is not positive definite.
    """
    if mf.grad_norm > converged_tol:
        warnings.warn(
            f"extracting fluctuation coefficients from a non-stationary trajectory "
            f"(|grad| = {mf.grad_norm:.3e})",
            RuntimeWarning,
        )
    n, dt = mf.n_steps, mf.dt
    l, m, lo = mdl.n_states, mdl.n_controls, mdl.n_obs_channels
    R = np.zeros((n, m, m))
    B = np.zeros((n, l, m))
    E = np.zeros((n, l, l))
    Q = np.zeros((n, l, l))
    W = np.zeros((n, l, m))
    Et = np.zeros((n, lo, l))
    Theta = np.zeros((n, l, l))
    Theta_t = np.zeros((n, lo, lo))
    for k in range(n):
        s, a, p = mf.S[k], mf.A[k], mf.P[k + 1]
        R[k] = _sym(0.5 * (md.cost_hess_aa(mdl, s, a) - md.drift_hess_aa_costate(mdl, s, a, p))) * dt
        B[k] = md.drift_jac_control(mdl, s, a) * dt
        E[k] = md.drift_jac_state(mdl, s, a) * dt
        Q[k] = _sym(0.5 * (md.cost_hess_ss(mdl, s, a) - md.drift_hess_ss_costate(mdl, s, a, p))) * dt
        W[k] = 0.5 * (md.cost_hess_sa(mdl, s, a) - md.drift_hess_sa_costate(mdl, s, a, p)) * dt
        Et[k] = md.obs_drift_jac_state(mdl, s) * dt
        th, tht = md.noise_covariances(mdl, s, a)
        Theta[k] = th * dt
        Theta_t[k] = tht * dt
        if m > 0:
            eigs = np.linalg.eigvalsh(R[k])
            if eigs.min() <= 0.0:
                raise CoefficientError(
                    f"control curvature R is not positive definite at step {k} "
                    f"(min eigenvalue {eigs.min():.3e})",
                    step=k,
                )
    F = _sym(0.5 * md.terminal_hess(mdl, mf.S[n]))
    return LqgCoefficients(dt=dt, R=R, B=B, E=E, Q=Q, W=W, Et=Et,
                           Theta=Theta, Theta_t=Theta_t, F=F)


def _innovation_solve(et: np.ndarray, pi: np.ndarray, theta_t: np.ndarray, step: int):
    """Kalman gain ``pi Et' (Et pi Et' + Theta_t)^-1`` with dead channels skipped.

    Channels whose observation row is identically zero and whose noise entry is
    zero carry no events and are excluded from the inverse.  A singular
    innovation covariance on a live channel is an error.
    """
    lo = et.shape[0]
    gain = np.zeros((pi.shape[0], lo))
    if lo == 0:
        return gain
    live = [j for j in range(lo) if np.any(et[j] != 0.0) or theta_t[j, j] != 0.0]
    if not live:
        return gain
    et_live = et[live]
    tt_live = theta_t[np.ix_(live, live)]
    innov = et_live @ pi @ et_live.T + tt_live
    innov = _sym(innov)
    w, v = np.linalg.eigh(innov)
    tol = max(innov.shape[0], 1) * np.finfo(float).eps * max(1.0, float(w.max(initial=0.0)))
    bad = w <= tol
    if np.any(bad):
        carries_signal = np.linalg.norm((v[:, bad].T @ et_live) @ pi) > tol
        if carries_signal:
            raise SingularInnovationError(
                f"innovation covariance singular at step {step} on a channel with signal",
                step=step,
            )
    w_inv = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, w))
    innov_inv = (v * w_inv) @ v.T
    gain[:, live] = pi @ et_live.T @ innov_inv
    return gain


def kalman_forward(coef: LqgCoefficients, pi0: np.ndarray):
    """Forward error-covariance recursion with per-step gains.

    Correction with the step-k observation increment (which measures ``s[k]``)
    followed by prediction through ``I + E[k]``, in Joseph form so positive
    semidefiniteness survives roundoff:

    ``pi[k+1] = (I+E)(pi[k] - K Et pi[k] ...)(I+E)' + Theta[k]``

    Returns ``(pi, gains)`` with ``pi`` of length ``n_steps + 1``.
    """
    n, l = coef.n_steps, coef.n_states
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != (l, l):
        raise ValueError(f"pi0 has shape {pi0.shape}, expected ({l}, {l})")
    pi = np.zeros((n + 1, l, l))
    gains = np.zeros((n, l, coef.n_obs))
    pi[0] = _sym(pi0)
    eye = np.eye(l)
    for k in range(n):
        gain = _innovation_solve(coef.Et[k], pi[k], coef.Theta_t[k], k)
        gains[k] = gain
        ikh = eye - gain @ coef.Et[k]
        post = ikh @ pi[k] @ ikh.T + gain @ coef.Theta_t[k] @ gain.T
        m_step = eye + coef.E[k]
        pi[k + 1] = _sym(m_step @ post @ m_step.T + coef.Theta[k])
    return pi, gains


@dataclass(frozen=True)
class RiccatiResult:
    z: np.ndarray               # (n + 1, l, l); rows below failure_step are not meaningful
    feedback_gains: np.ndarray  # (n, m, l)
    exists: bool
    failure_step: Optional[int]


def riccati_backward(coef: LqgCoefficients) -> RiccatiResult:
    """Backward value recursion with estimate-feedback gains.

    ``Z[k] = Q + M'Z'M - (M'Z'B + W)(B'Z'B + R)^-1 (B'Z'M + W')`` with
    ``M = I + E[k]`` and ``Z[n] = F``; gain ``G[k] = (B'Z'B+R)^-1 (B'Z'M + W')``
    so the optimal fluctuation control is ``a[k] = -G[k] shat[k]``.
    Non-existence (indefinite ``B'Z'B + R`` or ``|Z|`` beyond 1e12) is a
    reported outcome, not an exception.
    """
    n, l, m = coef.n_steps, coef.n_states, coef.n_controls
    z = np.zeros((n + 1, l, l))
    gains = np.zeros((n, m, l))
    z[n] = _sym(coef.F)
    eye = np.eye(l)
    for k in range(n - 1, -1, -1):
        zn = z[k + 1]
        m_step = eye + coef.E[k]
        h = _sym(coef.B[k].T @ zn @ coef.B[k] + coef.R[k])
        if m > 0:
            eigs = np.linalg.eigvalsh(h)
            if eigs.min() <= 0.0:
                return RiccatiResult(z, gains, False, k)
            cross = m_step.T @ zn @ coef.B[k] + coef.W[k]
            gains[k] = np.linalg.solve(h, cross.T)
            z[k] = _sym(coef.Q[k] + m_step.T @ zn @ m_step - cross @ gains[k])
        else:
            z[k] = _sym(coef.Q[k] + m_step.T @ zn @ m_step)
        if np.max(np.abs(z[k])) > Z_DIVERGENCE_BOUND:
            return RiccatiResult(z, gains, False, k)
    return RiccatiResult(z, gains, True, None)


def predicted_fluctuation_cost(coef: LqgCoefficients, pi: np.ndarray, z: np.ndarray,
                               s0hat: np.ndarray, pi0: np.ndarray) -> float:
    """Exact expected cost of the estimate-feedback policy.

    Telescoping ``s'Z s`` through the recursion gives

    ``shat0' Z0 shat0 + tr(pi0 Z0)
      + sum_k [ tr(pi[k] G[k]' (B'Z'B + R) G[k]) + tr(Theta[k] Z[k+1]) ]``

    which holds for any zero-mean square-integrable noises, Gaussian or not,
    as long as the estimator is the orthogonal linear filter.
    """
    n = coef.n_steps
    s0hat = np.asarray(s0hat, dtype=float)
    total = float(s0hat @ z[0] @ s0hat) + float(np.trace(np.asarray(pi0) @ z[0]))
    for k in range(n):
        zn = z[k + 1]
        total += float(np.trace(coef.Theta[k] @ zn))
        if coef.n_controls > 0:
            m_step = np.eye(coef.n_states) + coef.E[k]
            h = _sym(coef.B[k].T @ zn @ coef.B[k] + coef.R[k])
            cross = m_step.T @ zn @ coef.B[k] + coef.W[k]
            gain = np.linalg.solve(h, cross.T)
            total += float(np.trace(pi[k] @ gain.T @ h @ gain))
    return total


def solve_fluctuations(mdl: md.ModelSpec, mf: MeanFieldSolution,
                       pi0: Optional[np.ndarray] = None) -> FilterAndGain:
    """Full fluctuation pipeline: extract, filter forward, value backward."""
    coef = extract_coefficients(mdl, mf)
    if pi0 is None:
        pi0 = np.zeros((mdl.n_states, mdl.n_states))
    pi, kgains = kalman_forward(coef, pi0)
    ric = riccati_backward(coef)
    predicted = None
    if ric.exists:
        predicted = predicted_fluctuation_cost(coef, pi, ric.z, np.zeros(mdl.n_states), pi0)
    return FilterAndGain(
        pi=pi,
        kalman_gains=kgains,
        z=ric.z,
        feedback_gains=ric.feedback_gains,
        exists=ric.exists,
        failure_step=ric.failure_step,
        predicted_cost=predicted,
    )


def multinomial_initial_covariance(s0: np.ndarray) -> np.ndarray:
    """Fluctuation covariance of multinomially sampled initial counts."""
    s0 = np.asarray(s0, dtype=float)
    return np.diag(s0) - np.outer(s0, s0)
