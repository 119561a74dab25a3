"""Deterministic population-limit optimal control in discrete time.

The state rolls forward with the Euler map ``S[k+1] = S[k] + b(S[k], A[k]) dt``
and the cost is ``sum_k L(S[k], A[k]) dt + G(S[T])``.  The costate recursion
below is the exact discrete adjoint of that rollout, so ``cost_gradient`` is
the exact gradient of the discrete cost with respect to the control
trajectory (not an O(dt) approximation), and gradient descent with an Armijo
line search drives it to a stationary trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model as md


class RolloutError(RuntimeError):
    """Rollout left the simplex or violated the rate*dt stability bound."""


class LineSearchError(RuntimeError):
    """Armijo backtracking underflowed without finding a descent step."""


@dataclass(frozen=True)
class MeanFieldSolution:
    """Optimal (or best-found) open-loop trajectory bundle.

    ``S`` has ``n_steps + 1`` rows on the simplex, ``A`` one control row per
    step, ``P`` the adjoint trajectory with ``P[n_steps] = -grad G(S[-1])``,
    and ``U`` the accumulated mean observations started at zero.
    """

    dt: float
    n_steps: int
    S: np.ndarray       # (n_steps + 1, l)
    A: np.ndarray       # (n_steps, m)
    P: np.ndarray       # (n_steps + 1, l)
    U: np.ndarray       # (n_steps + 1, l_obs)
    cost: float
    grad_norm: float
    iterations: int = 0
    converged: bool = True
    cost_history: Optional[np.ndarray] = None  # accepted line-search costs, in order


def _check_cfl(beta: np.ndarray, dt: float, k: int):
    exit_rates = beta.sum(axis=1)
    if np.max(exit_rates) * dt >= 1.0:
        raise RolloutError(
            f"rate*dt bound violated at step {k}: max exit rate {np.max(exit_rates):.4g} "
            f"with dt {dt:.4g}"
        )


def rollout(mdl: md.ModelSpec, s0, A: np.ndarray, dt: float, n_steps: int):
    """Forward Euler rollout.

    Returns ``(S, U, cost)``.  Requires ``s0`` on the simplex and
    ``max exit rate * dt < 1`` along the whole trajectory (which also keeps
    the states on the simplex).
    """
    s0 = md.validate_simplex(s0, mdl.n_states)
    A = np.asarray(A, dtype=float).reshape(n_steps, mdl.n_controls)
    S = np.zeros((n_steps + 1, mdl.n_states))
    U = np.zeros((n_steps + 1, mdl.n_obs_channels))
    S[0] = s0
    cost = 0.0
    for k in range(n_steps):
        sig = S[k]
        if np.min(sig) < -md.SIMPLEX_NEG_TOL:
            raise RolloutError(f"state left the simplex at step {k}: min component {np.min(sig)}")
        beta = md.rate_matrix(mdl, sig, A[k])
        _check_cfl(beta, dt, k)
        flux = sig[:, None] * beta
        S[k + 1] = sig + (flux.sum(axis=0) - flux.sum(axis=1)) * dt
        U[k + 1] = U[k] + md._obs_drift_raw(mdl, sig) * dt
        cost += float(mdl.running_cost(sig, A[k])) * dt
    cost += float(mdl.terminal_cost(S[n_steps]))
    if not math.isfinite(cost):
        raise RolloutError("rollout cost is not finite")
    return S, U, cost


def costate(mdl: md.ModelSpec, S: np.ndarray, A: np.ndarray, dt: float) -> np.ndarray:
    """Backward adjoint recursion at the current control trajectory.

    ``P[k] = P[k+1] + (P[k+1] . D_S b(S[k], A[k]) - D_S L(S[k], A[k])) dt`` with
    terminal value ``P[T] = -grad G(S[T])``.
    """
    n_steps = A.shape[0]
    P = np.zeros((n_steps + 1, mdl.n_states))
    P[n_steps] = -md.terminal_grad(mdl, S[n_steps])
    for k in range(n_steps - 1, -1, -1):
        jac = md.drift_jac_state(mdl, S[k], A[k])
        dh = jac.T @ P[k + 1] - md.cost_grad_state(mdl, S[k], A[k])
        if not np.all(np.isfinite(dh)):
            raise RolloutError(f"non-finite costate derivative at step {k}")
        P[k] = P[k + 1] + dh * dt
    return P


def cost_gradient(mdl: md.ModelSpec, S: np.ndarray, A: np.ndarray, P: np.ndarray,
                  dt: float) -> np.ndarray:
    """Exact gradient of the rollout cost with respect to each control row."""
    n_steps = A.shape[0]
    if P.shape[0] != n_steps + 1:
        raise ValueError("costate trajectory length does not match control trajectory")
    grad = np.zeros((n_steps, mdl.n_controls))
    for k in range(n_steps):
        jac = md.drift_jac_control(mdl, S[k], A[k])
        grad[k] = -(jac.T @ P[k + 1] - md.cost_grad_control(mdl, S[k], A[k])) * dt
    return grad


def default_initial_control(mdl: md.ModelSpec, s0, n_steps: int) -> np.ndarray:
    """Zero-costate Hamiltonian argmax, tiled along the horizon."""
    if mdl.n_controls == 0:
        return np.zeros((n_steps, 0))
    _, a0 = md.hamiltonian(mdl, s0, np.zeros(mdl.n_states))
    return np.tile(a0, (n_steps, 1))


@dataclass
class OptimizerOptions:
    max_iters: int = 20000
    tol: float = 1e-8
    step_rule: str = "armijo-scaled"  # curvature-preconditioned direction; "armijo" for the plain rule
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    restarts: int = 0
    restart_scale: float = 0.5
    seed: int = 0


def _precondition(mdl, S, A, P, grad, dt):
    """Scale the gradient by the per-step control curvature of the stage problem.

    The curvature ``(D_AA L - P . D_AA b) dt`` is the dominant block of the
    cost Hessian in control space; preconditioning with it removes the huge
    stiffness spread of barrier-type control costs while Armijo acceptance
    on the true cost keeps descent monotone.
    """
    out = np.empty_like(grad)
    eye = np.eye(mdl.n_controls)
    for k in range(grad.shape[0]):
        curv = (md.cost_hess_aa(mdl, S[k], A[k])
                - md.drift_hess_aa_costate(mdl, S[k], A[k], P[k + 1])) * dt
        curv = 0.5 * (curv + curv.T)
        eigs = np.linalg.eigvalsh(curv) if curv.size else np.array([1.0])
        floor = max(1e-10, 1e-6 * float(np.max(np.abs(eigs), initial=0.0)))
        if eigs.size == 0 or eigs.min() <= floor:
            curv = curv + (floor - min(float(eigs.min(initial=0.0)), 0.0) + floor) * eye
        out[k] = np.linalg.solve(curv, grad[k])
    return out


def _stationarity_map(mdl, S, P, A, n_steps):
    """Pointwise Hamiltonian argmax along the trajectory (warm-started)."""
    out = np.empty_like(A)
    for k in range(n_steps):
        if mdl.analytic_argmax is not None:
            out[k] = mdl.analytic_argmax(S[k], P[k + 1])
        else:
            out[k] = md.maximize_hamiltonian(mdl, S[k], P[k + 1], alpha0=A[k])
    return out


def _grad_norm(mdl, s0, A, dt, n_steps):
    S, U, cost = rollout(mdl, s0, A, dt, n_steps)
    P = costate(mdl, S, A, dt)
    grad = cost_gradient(mdl, S, A, P, dt)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    return S, U, P, cost, gnorm


def _polish(mdl, s0, A, dt, n_steps, opts, budget):
    """Damped iteration of the first-order stationarity map.

    Near the optimum the cost changes fall below float resolution and the
    Armijo test can no longer certify descent, so this phase accepts sweeps
    by gradient-norm decrease instead.  The damping adapts: growth of the
    gradient halves it, progress nudges it back up.
    """
    S, U, P, cost, gnorm = _grad_norm(mdl, s0, A, dt, n_steps)
    omega = 0.25
    sweeps = 0
    rejects = 0
    while gnorm > opts.tol and sweeps < budget and rejects < 60:
        sweeps += 1
        try:
            target = _stationarity_map(mdl, S, P, A, n_steps)
        except md.MaximizerError:
            break
        trial = mdl.clamp_control((1.0 - omega) * A + omega * target)
        try:
            S_t, U_t, P_t, cost_t, gnorm_t = _grad_norm(mdl, s0, trial, dt, n_steps)
        except (RolloutError, md.RateError):
            omega = max(omega * 0.5, 1e-3)
            rejects += 1
            continue
        if gnorm_t < gnorm:
            A, S, U, P, cost, gnorm = trial, S_t, U_t, P_t, cost_t, gnorm_t
            omega = min(1.0, omega * 1.2)
            rejects = 0
        else:
            omega = max(omega * 0.5, 1e-3)
            rejects += 1
    return A, S, U, P, cost, gnorm, sweeps


def _descend(mdl, s0, A, dt, n_steps, opts) -> MeanFieldSolution:
    A = np.array(A, dtype=float)
    S, U, cost = rollout(mdl, s0, A, dt, n_steps)
    history = [cost]
    step = opts.initial_step
    gnorm = math.inf
    floor_hits = 0
    iters = 0
    stalled = False
    for iters in range(1, opts.max_iters + 1):
        P = costate(mdl, S, A, dt)
        grad = cost_gradient(mdl, S, A, P, dt)
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm <= opts.tol:
            return MeanFieldSolution(dt, n_steps, S, A, P, U, cost, gnorm, iters, True,
                                     np.asarray(history))
        if floor_hits >= 25:
            stalled = True  # cost at its float floor; hand over to the polish phase
            break
        if opts.step_rule == "armijo-scaled":
            direction = _precondition(mdl, S, A, P, grad, dt)
        elif opts.step_rule == "armijo":
            direction = grad
        else:
            raise ValueError(f"unknown step rule: {opts.step_rule!r}")
        gsq = float(np.sum(grad * direction))
        if gsq <= 0.0:
            direction, gsq = grad, float(np.sum(grad * grad))
        step = min(step * 2.0, 1e12)
        accepted = False
        while step > 1e-20:
            trial = A - step * direction
            if mdl.control_lower is not None or mdl.control_upper is not None:
                trial = mdl.clamp_control(trial)
                gsq_eff = float(np.sum((A - trial) * grad)) / step if step > 0 else gsq
            else:
                gsq_eff = gsq
            try:
                S_t, U_t, cost_t = rollout(mdl, s0, trial, dt, n_steps)
            except (RolloutError, md.RateError):
                step *= 0.5
                continue
            if cost_t <= cost - opts.armijo_c * step * gsq_eff:
                rel_drop = (cost - cost_t) / max(1.0, abs(cost))
                floor_hits = floor_hits + 1 if rel_drop < 5e-15 else 0
                A, S, U, cost = trial, S_t, U_t, cost_t
                history.append(cost)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if iters > 1:
                stalled = True
                break
            raise LineSearchError(f"Armijo step underflow at iteration {iters} (|grad| = {gnorm:.3e})")
        if not math.isfinite(cost):
            raise RolloutError("optimizer produced a non-finite cost")
    if gnorm > opts.tol and (stalled or iters >= opts.max_iters) and mdl.n_controls > 0:
        budget = max(opts.max_iters - iters, 500)
        A, S, U, P, cost, gnorm, sweeps = _polish(mdl, s0, A, dt, n_steps, opts, budget)
        iters += sweeps
    else:
        P = costate(mdl, S, A, dt)
    converged = gnorm <= opts.tol
    if not converged:
        warnings.warn(
            f"mean-field optimizer stopped at |grad| = {gnorm:.3e} after {iters} iterations",
            RuntimeWarning,
        )
    return MeanFieldSolution(dt, n_steps, S, A, P, U, cost, gnorm, iters, converged,
                             np.asarray(history))


def optimize(mdl: md.ModelSpec, s0, dt: float, n_steps: int,
             opts: Optional[OptimizerOptions] = None,
             A_init: Optional[np.ndarray] = None) -> MeanFieldSolution:
    """Gradient descent on the open-loop control trajectory.

    Accepted iterates are monotone in cost (Armijo backtracking with c=1e-4
    and step halving).  With ``opts.restarts > 0`` additional descents start
    from randomly perturbed initial controls and the best local optimum wins,
    which matters in regimes with several stationary trajectories.
    """
    opts = opts or OptimizerOptions()
    s0 = md.validate_simplex(s0, mdl.n_states)
    if A_init is None:
        A_init = default_initial_control(mdl, s0, n_steps)
    best = _descend(mdl, s0, A_init, dt, n_steps, opts)
    if opts.restarts > 0 and mdl.n_controls > 0:
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.restarts):
            jitter = 1.0 + opts.restart_scale * rng.standard_normal(A_init.shape)
            trial_init = mdl.clamp_control(A_init * np.abs(jitter))
            try:
                cand = _descend(mdl, s0, trial_init, dt, n_steps, opts)
            except (LineSearchError, RolloutError, md.RateError, md.MaximizerError):
                continue
            if cand.cost < best.cost:
                best = cand
    return best
