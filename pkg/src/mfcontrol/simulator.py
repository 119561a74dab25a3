"""Exact N-agent jump-process simulation and Monte Carlo aggregation.

Each step moves agents between states with one multinomial draw per source
state (probabilities ``rate * dt`` plus an explicit stay probability), which
conserves the agent count exactly and never overdraws a state, and draws
observation events from Poisson counts channel by channel.  Controllers are
either the open-loop mean-field control or the estimate-feedback law built
from the fluctuation gains; the feedback controller sees only observation
increments, never the hidden counts.

Replicas own independent counter-based random streams keyed by
``(base_seed, replica_index)``, so ensemble statistics are bit-identical
regardless of how replicas are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import model as md
from .fluctuations import FilterAndGain, LqgCoefficients
from .meanfield import MeanFieldSolution


class StepError(RuntimeError):
    """A step precondition failed (rate * dt >= 1)."""


def replica_rng(base_seed: int, replica_index: int) -> np.random.Generator:
    """Counter-based stream for one replica; independent of scheduling order."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(replica_index,))
    return np.random.Generator(np.random.Philox(seq))


def largest_remainder(s0: np.ndarray, n_agents: int) -> np.ndarray:
    """Deterministic integer apportionment of ``n_agents * s0`` preserving the total."""
    s0 = np.asarray(s0, dtype=float)
    target = s0 * n_agents
    counts = np.floor(target).astype(np.int64)
    short = n_agents - int(counts.sum())
    if short > 0:
        remainders = target - counts
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


@dataclass
class SimReplica:
    """Mutable per-replica simulation state."""

    counts: np.ndarray                 # (l,) int64, sums to n_agents
    obs_counts: np.ndarray             # (l_obs,) int64, cumulative
    shat: np.ndarray                   # (l,) filter estimate of the scaled fluctuation
    k: int = 0
    realized_cost: float = 0.0
    seed: int = 0
    last_control_dev: Optional[np.ndarray] = None  # sqrt(N) * (applied - open loop)
    clamp_events: int = 0


@dataclass(frozen=True)
class OpenLoop:
    """Apply the precomputed control trajectory regardless of observations."""

    a_star: np.ndarray  # (n, m)


@dataclass(frozen=True)
class KalmanFeedback:
    """Estimate-feedback controller around an open-loop trajectory.

    Consumes only observation increments: the filter state advances with the
    previous step's increment and the control is
    ``a_star[k] - feedback_gain[k] @ shat / sqrt(N)``, clamped to the model's
    admissible box.
    """

    a_star: np.ndarray         # (n, m)
    e: np.ndarray              # (n, l, l)   state Jacobian * dt
    b: np.ndarray              # (n, l, m)   control Jacobian * dt
    et: np.ndarray             # (n, l_obs, l) observation Jacobian * dt
    kalman_gains: np.ndarray   # (n, l, l_obs)
    feedback_gains: np.ndarray  # (n, m, l)
    mean_obs: np.ndarray       # (n, l_obs)  mean observation increment per step

    @classmethod
    def from_solution(cls, mdl: md.ModelSpec, mf: MeanFieldSolution,
                      coef: LqgCoefficients, fg: FilterAndGain) -> "KalmanFeedback":
        if not fg.exists:
            raise ValueError("cannot build feedback controller: value recursion has no solution")
        n = mf.n_steps
        mean_obs = np.zeros((n, mdl.n_obs_channels))
        for k in range(n):
            mean_obs[k] = md.obs_drift(mdl, mf.S[k]) * mf.dt
        return cls(
            a_star=mf.A.copy(),
            e=coef.E.copy(),
            b=coef.B.copy(),
            et=coef.Et.copy(),
            kalman_gains=fg.kalman_gains.copy(),
            feedback_gains=fg.feedback_gains.copy(),
            mean_obs=mean_obs,
        )


Controller = Union[OpenLoop, KalmanFeedback]


def _multinomial_moves(rng: np.random.Generator, n: int, probs: np.ndarray) -> np.ndarray:
    """Multinomial draw over destinations via the conditional-binomial chain.

    ``probs`` are the per-destination probabilities (sum < 1); the remainder
    is the stay probability.  Fixed draw order makes replays deterministic.
    """
    out = np.zeros(probs.size, dtype=np.int64)
    remaining = n
    tail = 1.0
    for j in range(probs.size):
        if remaining == 0:
            break
        p = probs[j]
        if p <= 0.0:
            tail -= p
            continue
        cond = min(1.0, p / tail)
        out[j] = rng.binomial(remaining, cond)
        remaining -= int(out[j])
        tail -= p
    return out


def step(mdl: md.ModelSpec, replica: SimReplica, control: np.ndarray, dt: float,
         rng: np.random.Generator, n_agents: int) -> SimReplica:
    """Advance one replica by one step; accrues ``L(sigma, control) * dt``."""
    counts = replica.counts
    sigma = counts / n_agents
    beta = md.rate_matrix(mdl, sigma, control)
    probs = beta * dt
    exit_probs = probs.sum(axis=1)
    if np.max(exit_probs) >= 1.0:
        raise StepError(
            f"rate*dt bound violated at step {replica.k}: max exit probability "
            f"{np.max(exit_probs):.4g}"
        )
    l = mdl.n_states
    moves = np.zeros((l, l), dtype=np.int64)
    for s in range(l):
        if counts[s] == 0 or exit_probs[s] == 0.0:
            continue
        dests = np.concatenate([probs[s, :s], probs[s, s + 1:]])
        drawn = _multinomial_moves(rng, int(counts[s]), dests)
        moves[s, :s] = drawn[:s]
        moves[s, s + 1:] = drawn[s:]
    new_counts = counts - moves.sum(axis=1) + moves.sum(axis=0)
    if mdl.n_obs_channels > 0:
        obs_beta = md.obs_rate_matrix(mdl, sigma)
        lam = (counts[:, None] * obs_beta).sum(axis=0) * dt
        inc = rng.poisson(lam)
        replica.obs_counts = replica.obs_counts + inc.astype(np.int64)
    replica.realized_cost += float(mdl.running_cost(sigma, control)) * dt
    replica.counts = new_counts
    replica.k += 1
    return replica


def _filter_advance(ctrl: KalmanFeedback, replica: SimReplica,
                    obs_increment: np.ndarray, j: int, n_agents: int) -> None:
    """Correct with the step-j increment (which measures s[j]) and predict to j+1."""
    sqrt_n = math.sqrt(n_agents)
    u_inc = sqrt_n * (np.asarray(obs_increment, dtype=float) / n_agents - ctrl.mean_obs[j])
    innovation = u_inc - ctrl.et[j] @ replica.shat
    corrected = replica.shat + ctrl.kalman_gains[j] @ innovation
    predicted = corrected + ctrl.e[j] @ corrected
    if replica.last_control_dev is not None and replica.last_control_dev.size:
        predicted = predicted + ctrl.b[j] @ replica.last_control_dev
    replica.shat = predicted


def kalman_controller_step(ctrl: KalmanFeedback, replica: SimReplica,
                           obs_increment: Optional[np.ndarray], k: int,
                           n_agents: int) -> np.ndarray:
    """Advance the filter with the previous step's increment, return the step-k control.

    The control uses only increments from steps < k, so the measurement
    information constraint holds by construction.
    """
    if k > 0:
        _filter_advance(ctrl, replica, obs_increment, k - 1, n_agents)
    dev = -ctrl.feedback_gains[k] @ replica.shat
    return ctrl.a_star[k] + dev / math.sqrt(n_agents)


@dataclass
class EpisodeResult:
    counts: np.ndarray            # (n + 1, l) int64
    obs_counts: np.ndarray        # (n + 1, l_obs) int64, cumulative
    controls: np.ndarray          # (n, m)
    shat: Optional[np.ndarray]    # (n + 1, l) for feedback runs
    realized_cost: float
    clamp_events: int
    seed: int


def initial_counts(s0: np.ndarray, n_agents: int, mode: str,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if mode == "round":
        return largest_remainder(s0, n_agents)
    if mode == "multinomial":
        if rng is None:
            raise ValueError("multinomial initialization needs the replica rng")
        return rng.multinomial(n_agents, np.asarray(s0, dtype=float) / np.sum(s0)).astype(np.int64)
    raise ValueError(f"unknown initial-condition mode: {mode!r}")


def run_episode(mdl: md.ModelSpec, controller: Controller, n_agents: int, s0,
                dt: float, n_steps: int, seed: int, init: str = "round") -> EpisodeResult:
    """Simulate one replica; identical seeds give bit-identical paths."""
    rng = replica_rng(seed, 0)
    counts0 = initial_counts(s0, n_agents, init, rng)
    return _run_episode_with_rng(mdl, controller, n_agents, counts0, dt, n_steps, rng, seed)


def _run_episode_with_rng(mdl, controller, n_agents, counts0, dt, n_steps, rng, seed):
    l, lo, m = mdl.n_states, mdl.n_obs_channels, mdl.n_controls
    feedback = isinstance(controller, KalmanFeedback)
    replica = SimReplica(
        counts=np.array(counts0, dtype=np.int64),
        obs_counts=np.zeros(lo, dtype=np.int64),
        shat=np.zeros(l),
        seed=seed,
    )
    counts_path = np.zeros((n_steps + 1, l), dtype=np.int64)
    obs_path = np.zeros((n_steps + 1, lo), dtype=np.int64)
    ctrl_path = np.zeros((n_steps, m))
    shat_path = np.zeros((n_steps + 1, l)) if feedback else None
    counts_path[0] = replica.counts
    prev_obs = replica.obs_counts.copy()
    obs_increment = None
    for k in range(n_steps):
        if feedback:
            raw = kalman_controller_step(controller, replica, obs_increment, k, n_agents)
            control = mdl.clamp_control(raw)
            if not np.array_equal(control, raw):
                replica.clamp_events += 1
            replica.last_control_dev = math.sqrt(n_agents) * (control - controller.a_star[k])
            shat_path[k] = replica.shat
        else:
            control = controller.a_star[k]
        ctrl_path[k] = control
        step(mdl, replica, control, dt, rng, n_agents)
        obs_increment = replica.obs_counts - prev_obs
        prev_obs = replica.obs_counts.copy()
        counts_path[k + 1] = replica.counts
        obs_path[k + 1] = replica.obs_counts
    if feedback and n_steps > 0:
        # Final advance so shat[n] reflects every increment.
        _filter_advance(controller, replica, obs_increment, n_steps - 1, n_agents)
        shat_path[n_steps] = replica.shat
    replica.realized_cost += float(mdl.terminal_cost(replica.counts / n_agents))
    return EpisodeResult(
        counts=counts_path,
        obs_counts=obs_path,
        controls=ctrl_path,
        shat=shat_path,
        realized_cost=replica.realized_cost,
        clamp_events=replica.clamp_events,
        seed=seed,
    )


@dataclass
class EnsembleStats:
    """Deterministic reduction of M independent replicas."""

    n_agents: int
    n_replicas: int
    base_seed: int
    mean_state: np.ndarray               # (n + 1, l) mean fractions
    fluct_cov: np.ndarray                # (n + 1, l, l) covariance of sqrt(N)(X - ref)
    fluct_mean: np.ndarray               # (n + 1, l)
    mean_control: np.ndarray             # (n, m)
    mean_obs_increment: np.ndarray       # (n, l_obs)
    msd: np.ndarray                      # (n + 1,) mean |counts/N - ref|^2 per step
    msd_stderr: np.ndarray               # (n + 1,)
    costs: np.ndarray                    # (M,)
    mean_cost: float
    cost_stderr: float
    clamp_fraction: float
    err_cov: Optional[np.ndarray] = None       # (n + 1, l, l) cov of (s - shat)
    err_mean: Optional[np.ndarray] = None      # (n + 1, l)
    err_est_cross: Optional[np.ndarray] = None  # (n + 1, l, l) E[(s - shat) shat']

    def cost_gap_scaled(self, mf_cost: float) -> tuple[float, float]:
        """``N * (mean cost - mf_cost)`` and its standard error."""
        return (self.n_agents * (self.mean_cost - mf_cost),
                self.n_agents * self.cost_stderr)


def run_ensemble(mdl: md.ModelSpec, controller: Controller, n_agents: int,
                 n_replicas: int, s0, dt: float, n_steps: int, base_seed: int,
                 reference_state: np.ndarray, init: str = "round",
                 threads: int = 1) -> EnsembleStats:
    """Run M replicas and reduce their statistics in fixed replica order.

    ``reference_state`` (normally the mean-field trajectory) centers the
    scaled fluctuations ``sqrt(N) (counts/N - reference)``.  Covariances are
    the unbiased sample versions; the cost standard error is the replica-level
    central-limit estimate.
    """
    if n_replicas < 2:
        raise ValueError("need at least 2 replicas for covariance estimates")
    reference = np.asarray(reference_state, dtype=float)
    feedback = isinstance(controller, KalmanFeedback)

    def one(i: int) -> EpisodeResult:
        rng = replica_rng(base_seed, i)
        counts0 = initial_counts(s0, n_agents, init, rng)
        return _run_episode_with_rng(mdl, controller, n_agents, counts0, dt, n_steps, rng, base_seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            episodes = list(pool.map(one, range(n_replicas)))
    else:
        episodes = [one(i) for i in range(n_replicas)]

    l, lo, m = mdl.n_states, mdl.n_obs_channels, mdl.n_controls
    sqrt_n = math.sqrt(n_agents)
    sum_state = np.zeros((n_steps + 1, l))
    sum_s = np.zeros((n_steps + 1, l))
    sum_ss = np.zeros((n_steps + 1, l, l))
    sum_d2 = np.zeros(n_steps + 1)
    sum_d4 = np.zeros(n_steps + 1)
    sum_ctrl = np.zeros((n_steps, m))
    sum_obs_inc = np.zeros((n_steps, lo))
    sum_e = np.zeros((n_steps + 1, l)) if feedback else None
    sum_ee = np.zeros((n_steps + 1, l, l)) if feedback else None
    sum_es = np.zeros((n_steps + 1, l, l)) if feedback else None
    costs = np.zeros(n_replicas)
    clamp_total = 0
    for i, ep in enumerate(episodes):
        frac = ep.counts / n_agents
        fluct = sqrt_n * (frac - reference)
        d2 = np.einsum("ki,ki->k", frac - reference, frac - reference)
        sum_state += frac
        sum_s += fluct
        sum_ss += np.einsum("ki,kj->kij", fluct, fluct)
        sum_d2 += d2
        sum_d4 += d2 ** 2
        sum_ctrl += ep.controls
        sum_obs_inc += np.diff(ep.obs_counts, axis=0) / n_agents
        if feedback:
            err = fluct - ep.shat
            sum_e += err
            sum_ee += np.einsum("ki,kj->kij", err, err)
            sum_es += np.einsum("ki,kj->kij", err, ep.shat)
        costs[i] = ep.realized_cost
        clamp_total += ep.clamp_events
    M = n_replicas
    fluct_mean = sum_s / M
    fluct_cov = (sum_ss - M * np.einsum("ki,kj->kij", fluct_mean, fluct_mean)) / (M - 1)
    msd = sum_d2 / M
    msd_var = np.maximum(sum_d4 / M - msd ** 2, 0.0)
    stats = EnsembleStats(
        n_agents=n_agents,
        n_replicas=M,
        base_seed=base_seed,
        mean_state=sum_state / M,
        fluct_cov=fluct_cov,
        fluct_mean=fluct_mean,
        mean_control=sum_ctrl / M,
        mean_obs_increment=sum_obs_inc / M,
        msd=msd,
        msd_stderr=np.sqrt(msd_var / max(M - 1, 1)),
        costs=costs,
        mean_cost=float(np.mean(costs)),
        cost_stderr=float(np.std(costs, ddof=1) / math.sqrt(M)),
        clamp_fraction=clamp_total / (M * max(n_steps, 1)),
    )
    if feedback:
        err_mean = sum_e / M
        stats.err_mean = err_mean
        stats.err_cov = (sum_ee - M * np.einsum("ki,kj->kij", err_mean, err_mean)) / (M - 1)
        stats.err_est_cross = sum_es / M
    return stats


def covariance_stderr(cov: np.ndarray, n_replicas: int) -> np.ndarray:
    """Gaussian-approximation standard error of each sample-covariance entry."""
    diag = np.diagonal(cov, axis1=-2, axis2=-1)
    outer = np.einsum("...i,...j->...ij", diag, diag)
    return np.sqrt((outer + cov ** 2) / (n_replicas - 1))


@dataclass
class ScalingPoint:
    n_agents: int
    sup_msd: float
    sup_msd_stderr: float
    sup_step: int
    mean_cost: float
    cost_stderr: float
    clamp_fraction: float


@dataclass
class ScalingStudy:
    points: list
    slope: float
    slope_stderr: float
    slope_ci95: tuple
    mf_cost: float

    def cost_gaps_scaled(self):
        return [(p.n_agents,
                 p.n_agents * (p.mean_cost - self.mf_cost),
                 p.n_agents * p.cost_stderr) for p in self.points]


def _ols_loglog(ns, ys):
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    x_c = x - x.mean()
    slope = float(np.sum(x_c * y) / np.sum(x_c ** 2))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = max(len(x) - 2, 1)
    se = float(math.sqrt(np.sum(resid ** 2) / dof / np.sum(x_c ** 2)))
    return slope, se


def scaling_study(mdl: md.ModelSpec, controller_factory, n_list, n_replicas: int,
                  s0, dt: float, n_steps: int, base_seed: int,
                  reference_state: np.ndarray, mf_cost: float,
                  init: str = "round", threads: int = 1) -> ScalingStudy:
    """Sup-over-time mean squared deviation versus N, with an OLS log-log slope.

    ``controller_factory(n_agents)`` builds the controller for each population
    size (feedback gains do not depend on N, but clamping does act in the
    original control units).  Degenerate zero-variance points are excluded
    from the fit and reported with ``sup_msd = 0``.
    """
    points = []
    for n_agents in n_list:
        stats = run_ensemble(mdl, controller_factory(n_agents), n_agents, n_replicas,
                             s0, dt, n_steps, base_seed, reference_state,
                             init=init, threads=threads)
        k_star = int(np.argmax(stats.msd))
        points.append(ScalingPoint(
            n_agents=n_agents,
            sup_msd=float(stats.msd[k_star]),
            sup_msd_stderr=float(stats.msd_stderr[k_star]),
            sup_step=k_star,
            mean_cost=stats.mean_cost,
            cost_stderr=stats.cost_stderr,
            clamp_fraction=stats.clamp_fraction,
        ))
    usable = [(p.n_agents, p.sup_msd) for p in points if p.sup_msd > 0.0]
    if len(usable) >= 2:
        slope, se = _ols_loglog([u[0] for u in usable], [u[1] for u in usable])
    else:
        slope, se = float("nan"), float("nan")
    ci = (slope - 1.96 * se, slope + 1.96 * se)
    return ScalingStudy(points=points, slope=slope, slope_stderr=se,
                        slope_ci95=ci, mf_cost=mf_cost)
