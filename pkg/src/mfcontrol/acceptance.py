"""Acceptance harness: the quantitative exit checks for the whole pipeline.

Each criterion function returns a :class:`CriterionResult` with the measured
values, the target, the tolerance actually applied, and the verdict.  The
pytest suite asserts the verdicts; the CLI prints one line per criterion and
writes the structured report.  Criteria share solved artifacts through
:class:`AcceptanceContext` so the expensive solves happen once.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ising, model as md, sir
from .fluctuations import (
    LqgCoefficients,
    extract_coefficients,
    kalman_forward,
    predicted_fluctuation_cost,
    riccati_backward,
    solve_fluctuations,
)
from .meanfield import OptimizerOptions, cost_gradient, costate, optimize, rollout
from .simulator import (
    KalmanFeedback,
    OpenLoop,
    _ols_loglog,
    covariance_stderr,
    largest_remainder,
    run_ensemble,
    run_episode,
)

SIR_S0 = np.array([0.99, 0.01, 0.0])


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict
    target: dict
    tolerance: str
    seconds: float
    notes: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.number}: {self.title} ({self.seconds:.1f}s)"


@dataclass
class AcceptanceContext:
    """Shared solved artifacts, built lazily."""

    threads: int = 1
    _sir_model: Optional[md.ModelSpec] = None
    _sir_solution: Optional[object] = None
    _ising_bundle: Optional[tuple] = None

    def sir_model(self):
        if self._sir_model is None:
            self._sir_model = sir.build_sir(**sir.DEFAULT_PARAMS)
        return self._sir_model

    def sir_solution(self):
        if self._sir_solution is None:
            self._sir_solution = optimize(self.sir_model(), SIR_S0, 1.0, 100,
                                          OptimizerOptions(max_iters=5000, tol=1e-8))
        return self._sir_solution

    def ising_bundle(self):
        """Model, solution, coefficients, filter/gains for coupling -1, obs rate 2."""
        if self._ising_bundle is None:
            mdl = ising.build_ising(1.0, 0.0, -1.0, 2.0)
            sol = optimize(mdl, np.array([0.5, 0.5]), 0.01, 600)
            coef = extract_coefficients(mdl, sol)
            fg = solve_fluctuations(mdl, sol)
            self._ising_bundle = (mdl, sol, coef, fg)
        return self._ising_bundle


def _timed(fn):
    start = time.perf_counter()
    result = fn()
    return result, time.perf_counter() - start


def criterion_1(ctx: AcceptanceContext) -> CriterionResult:
    """Stationary filter covariance of the two-state scalar system."""
    def run():
        dt = 1e-3
        n = 8000
        coef = ising.closed_form_equilibrium_coefficients(1.0, 0.5, 2.0, dt, n)
        pi, _ = kalman_forward(coef, np.zeros((1, 1)))
        return float(pi[-1][0, 0]), float(abs(pi[-1][0, 0] - pi[-100][0, 0]))
    (measured, drift_tail), seconds = _timed(run)
    target = 1.0 / (1.0 + math.sqrt(2.0))
    passed = abs(measured - target) <= 1e-3 and drift_tail < 1e-9
    return CriterionResult(
        1, "stationary filter covariance, two-state scalar system", passed,
        {"pi_stationary": measured, "tail_drift": drift_tail},
        {"pi_star": target}, "abs err <= 1e-3", seconds,
    )


def criterion_2(ctx: AcceptanceContext) -> CriterionResult:
    """Value-recursion fixed point and its disappearance past the critical product."""
    def run():
        dt = 1e-3
        n = 10000
        out = {}
        coef = ising.closed_form_equilibrium_coefficients(1.0, 0.75, 2.0, dt, n)
        ric = riccati_backward(coef)
        out["z_at_0.75"] = float(ric.z[0][0, 0])
        out["exists_at_0.75"] = ric.exists
        for coupling in (1.0, 1.2):
            ric_c = riccati_backward(
                ising.closed_form_equilibrium_coefficients(1.0, coupling, 2.0, dt, n))
            out[f"exists_at_{coupling}"] = ric_c.exists
            out[f"failure_step_at_{coupling}"] = ric_c.failure_step
            out[f"z_end_at_{coupling}"] = float(ric_c.z[0][0, 0]) if ric_c.exists else None
        return out
    out, seconds = _timed(run)
    ok_fixed_point = abs(out["z_at_0.75"] - (-0.125)) <= 1e-4 and out["exists_at_0.75"]
    ok_supercritical = out["exists_at_1.2"] is False
    ok_critical = out["exists_at_1.0"] is False
    passed = ok_fixed_point and ok_supercritical and ok_critical
    notes = ""
    if not ok_critical:
        notes = ("at product exactly 1 the backward recursion converges to the double "
                 "root -0.25 without divergence or loss of definiteness, so no "
                 "non-existence is detectable; see decisions ledger")
    return CriterionResult(
        2, "value-recursion fixed point and phase boundary", passed,
        out, {"z_star": -0.125, "exists_at_1.0": False, "exists_at_1.2": False},
        "abs err <= 1e-4; existence flags exact", seconds, notes,
    )


def criterion_3(ctx: AcceptanceContext) -> CriterionResult:
    """Adjoint gradient against central finite differences, random controls."""
    def run():
        mdl = ctx.sir_model()
        rng = np.random.default_rng(31)
        dt, n = 1.0, 20
        worst = 0.0
        for _ in range(50):
            A = rng.uniform(0.3, 1.3, size=(n, 1))
            S, _, _ = rollout(mdl, SIR_S0, A, dt, n)
            P = costate(mdl, S, A, dt)
            grad = cost_gradient(mdl, S, A, P, dt)
            fd = np.zeros_like(grad)
            for k in range(n):
                h = 1e-6 * max(1.0, abs(A[k, 0]))
                Ap, Am = A.copy(), A.copy()
                Ap[k, 0] += h
                Am[k, 0] -= h
                _, _, cp = rollout(mdl, SIR_S0, Ap, dt, n)
                _, _, cm = rollout(mdl, SIR_S0, Am, dt, n)
                fd[k, 0] = (cp - cm) / (2 * h)
            rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-10)
            worst = max(worst, float(rel.max()))
        return worst
    worst, seconds = _timed(run)
    passed = worst <= 1e-5
    return CriterionResult(
        3, "adjoint gradient matches finite differences", passed,
        {"max_rel_error": worst}, {"max_rel_error": 0.0}, "<= 1e-5", seconds,
    )


def criterion_4(ctx: AcceptanceContext) -> CriterionResult:
    """Convergence rate of the empirical state to the deterministic limit."""
    def run():
        mdl = ctx.sir_model()
        sol = ctx.sir_solution()
        n_list = [100, 400, 1600, 6400]
        sup_all = []
        sup_bulk = []
        bulk_end = 90  # before the end-of-horizon rebound, where CLT scaling is clean
        for n_agents in n_list:
            stats = run_ensemble(mdl, OpenLoop(a_star=sol.A), n_agents, 200, SIR_S0,
                                 sol.dt, sol.n_steps, base_seed=411,
                                 reference_state=sol.S, threads=ctx.threads)
            sup_all.append(float(np.max(stats.msd)))
            sup_bulk.append(float(np.max(stats.msd[:bulk_end + 1])))
        slope, slope_se = _ols_loglog(n_list, sup_all)
        slope_bulk, _ = _ols_loglog(n_list, sup_bulk)
        # diagnostic: the same statistic under the uncontrolled baseline, whose
        # epidemic wave keeps agent counts large enough for the normal regime
        base = np.full((sol.n_steps, 1), mdl.params["base_rate"])
        s_base, _, _ = rollout(mdl, SIR_S0, base, sol.dt, sol.n_steps)
        sup_base = []
        for n_agents in n_list:
            stats = run_ensemble(mdl, OpenLoop(a_star=base), n_agents, 200, SIR_S0,
                                 sol.dt, sol.n_steps, base_seed=411,
                                 reference_state=s_base, threads=ctx.threads)
            sup_base.append(float(np.max(stats.msd)))
        slope_base, _ = _ols_loglog(n_list, sup_base)
        return slope, slope_se, slope_bulk, slope_base, dict(zip(n_list, sup_all))
    (slope, slope_se, slope_bulk, slope_base, sup_all), seconds = _timed(run)
    passed = -1.2 <= slope <= -0.8
    notes = ""
    if not passed:
        notes = ("under the optimal (suppressing) control the infected sub-population "
                 "is a near-extinct absorbing process at these N, outside the normal-"
                 "fluctuation regime; the same statistic under the uncontrolled "
                 f"baseline control scales with slope {slope_base:.3f}; see decisions ledger")
    return CriterionResult(
        4, "mean-field convergence rate over population size", passed,
        {"slope": slope, "slope_stderr": slope_se, "sup_msd": sup_all,
         "slope_bulk_before_rebound": slope_bulk,
         "slope_uncontrolled_baseline": slope_base},
        {"slope": -1.0}, "slope in [-1.2, -0.8]", seconds, notes,
    )


def build_uncontrolled_two_state(rate01: float = 1.0, rate10: float = 1.0) -> md.ModelSpec:
    """Two-state constant-rate model with no controls and no observations."""
    rates = np.array([[0.0, rate01], [rate10, 0.0]])

    analytic = md.AnalyticDerivatives(
        drift_jac_state=lambda s, a: np.array([[-rate01, rate10], [rate01, -rate10]]),
        drift_jac_control=lambda s, a: np.zeros((2, 0)),
        obs_drift_jac_state=lambda s: np.zeros((0, 2)),
        cost_grad_state=lambda s, a: np.zeros(2),
        cost_grad_control=lambda s, a: np.zeros(0),
        cost_hess_ss=lambda s, a: np.zeros((2, 2)),
        cost_hess_sa=lambda s, a: np.zeros((2, 0)),
        cost_hess_aa=lambda s, a: np.zeros((0, 0)),
        terminal_grad=lambda s: np.zeros(2),
        terminal_hess=lambda s: np.zeros((2, 2)),
        drift_hess_ss_costate=lambda s, a, p: np.zeros((2, 2)),
        drift_hess_sa_costate=lambda s, a, p: np.zeros((2, 0)),
        drift_hess_aa_costate=lambda s, a, p: np.zeros((0, 0)),
    )
    return md.ModelSpec(
        name="two-state",
        n_states=2,
        n_controls=0,
        n_obs_channels=0,
        transition_rate=lambda s, g, sigma, alpha: rates[s, g],
        observation_rate=lambda s, ch, sigma: 0.0,
        running_cost=lambda sigma, alpha: 0.0,
        terminal_cost=lambda sigma: 0.0,
        analytic=analytic,
    )


def criterion_5(ctx: AcceptanceContext) -> CriterionResult:
    """Empirical fluctuation covariance against the no-observation propagation."""
    def run():
        mdl = build_uncontrolled_two_state()
        s0 = np.array([0.5, 0.5])
        dt, n, n_agents, m_reps = 0.02, 150, 10000, 1000
        sol = optimize(mdl, s0, dt, n)
        coef = extract_coefficients(mdl, sol)
        pi, _ = kalman_forward(coef, np.zeros((2, 2)))
        stats = run_ensemble(mdl, OpenLoop(a_star=sol.A), n_agents, m_reps, s0,
                             dt, n, base_seed=55, reference_state=sol.S,
                             threads=ctx.threads)
        emp = stats.fluct_cov[-1]
        se = covariance_stderr(emp, m_reps)
        return emp, pi[-1], se
    (emp, lyap, se), seconds = _timed(run)
    diff = np.abs(emp - lyap)
    passed = bool(np.all(diff <= 3.0 * se))
    return CriterionResult(
        5, "fluctuation covariance matches covariance propagation", passed,
        {"empirical": emp.tolist(), "propagated": lyap.tolist(),
         "max_sigma_distance": float((diff / se).max())},
        {"componentwise": "within 3 standard errors"}, "3 SE componentwise", seconds,
    )


def criterion_6(ctx: AcceptanceContext) -> CriterionResult:
    """Filter consistency: error covariance against the closed-form fixed point."""
    def run():
        mdl, sol, coef, fg = ctx.ising_bundle()
        n_agents, m_reps = 10000, 1000
        ctrl = KalmanFeedback.from_solution(mdl, sol, coef, fg)
        stats = run_ensemble(mdl, ctrl, n_agents, m_reps, np.array([0.5, 0.5]),
                             sol.dt, sol.n_steps, base_seed=66,
                             reference_state=sol.S, threads=ctx.threads)
        emp_err = ising.reduce_covariance(stats.err_cov[-1])
        pipeline_pi = ising.reduce_covariance(fg.pi[-1])
        cross_vals = ising.reduce_covariance(stats.err_est_cross[-1])
        se_err = emp_err * math.sqrt(2.0 / (m_reps - 1))
        # SE of the cross moment from the same Gaussian approximation
        est_var = ising.reduce_covariance(stats.fluct_cov[-1] - stats.err_cov[-1])
        se_cross = math.sqrt(max(emp_err * max(est_var, 0.0) + cross_vals ** 2, 0.0) / (m_reps - 1))
        return emp_err, pipeline_pi, cross_vals, se_err, se_cross
    (emp_err, pipeline_pi, cross, se_err, se_cross), seconds = _timed(run)
    target = ising.ising_closed_form(1.0, -1.0, 2.0).pi_star
    ok_cov = abs(emp_err - target) <= 3.0 * se_err
    ok_orth = abs(cross) <= 3.0 * max(se_cross, 1e-12)
    passed = ok_cov and ok_orth
    notes = ""
    if not ok_cov:
        notes = ("the closed-form fixed point uses a state-noise normalization that is "
                 "half the jump-process quadratic variation; the measured error "
                 f"covariance instead matches the recursion on the honest coefficients "
                 f"({pipeline_pi:.4f}); see decisions ledger")
    return CriterionResult(
        6, "filter error covariance and orthogonality", passed,
        {"empirical_err_cov": emp_err, "pipeline_pi": pipeline_pi,
         "orthogonality": cross, "se_err": se_err, "se_cross": se_cross},
        {"pi_star": target, "orthogonality": 0.0},
        "3 SE each", seconds, notes,
    )


def criterion_7(ctx: AcceptanceContext) -> CriterionResult:
    """First-order cost expansion: measured scaled cost gap vs prediction."""
    def run():
        mdl, sol, coef, fg = ctx.ising_bundle()
        n_agents, m_reps = 10000, 600
        s0 = np.array([0.5, 0.5])
        ctrl = KalmanFeedback.from_solution(mdl, sol, coef, fg)
        stats = run_ensemble(mdl, ctrl, n_agents, m_reps, s0, sol.dt, sol.n_steps,
                             base_seed=77, reference_state=sol.S, threads=ctx.threads)
        gap, gap_se = stats.cost_gap_scaled(sol.cost)
        zeta = largest_remainder(s0, n_agents) - n_agents * s0
        rounding_slack = abs(float(sol.P[0] @ zeta))
        return gap, gap_se, fg.predicted_cost, rounding_slack
    (gap, gap_se, predicted, rounding_slack), seconds = _timed(run)
    tol = max(0.15 * abs(predicted), 3.0 * gap_se) + rounding_slack
    passed = abs(gap - predicted) <= tol
    return CriterionResult(
        7, "first-order cost expansion", passed,
        {"scaled_cost_gap": gap, "stderr": gap_se, "predicted": predicted,
         "rounding_slack": rounding_slack},
        {"scaled_cost_gap": predicted}, "max(15%, 3 SE) + rounding slack", seconds,
    )


def criterion_8(ctx: AcceptanceContext) -> CriterionResult:
    """Value of information: feedback beats open loop on paired seeds."""
    def run():
        mdl, sol, coef, fg = ctx.ising_bundle()
        n_agents, m_reps = 10000, 1500
        s0 = np.array([0.5, 0.5])
        ctrl = KalmanFeedback.from_solution(mdl, sol, coef, fg)
        fb = run_ensemble(mdl, ctrl, n_agents, m_reps, s0, sol.dt, sol.n_steps,
                          base_seed=88, reference_state=sol.S, threads=ctx.threads)
        ol = run_ensemble(mdl, OpenLoop(a_star=sol.A), n_agents, m_reps, s0,
                          sol.dt, sol.n_steps, base_seed=88,
                          reference_state=sol.S, threads=ctx.threads)
        diffs = ol.costs - fb.costs
        mean = float(np.mean(diffs))
        se = float(np.std(diffs, ddof=1) / math.sqrt(m_reps))
        return mean, se
    (mean, se), seconds = _timed(run)
    passed = mean > 0.0 and mean >= 3.0 * se
    return CriterionResult(
        8, "feedback control beats open loop (paired seeds)", passed,
        {"mean_paired_saving": mean, "stderr": se, "sigma_distance": mean / se if se else math.inf},
        {"mean_paired_saving": "> 0"}, ">= 3 SE of paired differences", seconds,
    )


def criterion_9(ctx: AcceptanceContext) -> CriterionResult:
    """Epidemic-model qualitative shape and tests-per-day consistency."""
    def run():
        mdl = ctx.sir_model()
        sol = ctx.sir_solution()
        s1 = sol.S[:, 1]
        base = mdl.params["base_rate"]
        nu = mdl.params["test_rate"]
        n_agents, m_reps = 10000, 40
        k_peak = int(np.argmax(s1))
        interior = 0 < k_peak < sol.n_steps
        d = np.diff(s1)
        local_maxima = np.where((d[:-1] > 0) & (d[1:] <= 0))[0] + 1
        single_interior_max = interior and local_maxima.size == 1
        below = sol.A[:, 0] < base - 1e-9
        # longest contiguous below-baseline run and whether it overlaps the peak
        runs = []
        start = None
        for k, flag in enumerate(below):
            if flag and start is None:
                start = k
            if not flag and start is not None:
                runs.append((start, k - 1))
                start = None
        if start is not None:
            runs.append((start, len(below) - 1))
        overlap = any(a <= min(k_peak, sol.n_steps - 1) <= b for a, b in runs)
        coef = extract_coefficients(mdl, sol)
        fg = solve_fluctuations(mdl, sol)
        if fg.exists:
            ctrl = KalmanFeedback.from_solution(mdl, sol, coef, fg)
        else:
            ctrl = OpenLoop(a_star=sol.A)
        # Tests/day must track the realized infected population: at the peak of
        # the simulated mean infected count, the mean test rate is
        # test_rate * infected * N up to Monte Carlo noise.
        inf_counts = np.zeros((m_reps, sol.n_steps + 1))
        test_inc = np.zeros((m_reps, sol.n_steps))
        for i in range(m_reps):
            ep = run_episode(mdl, ctrl, n_agents, SIR_S0, sol.dt, sol.n_steps,
                             seed=900 + i)
            inf_counts[i] = ep.counts[:, 1]
            test_inc[i] = np.diff(ep.obs_counts[:, 0])
        mean_inf = inf_counts.mean(axis=0)
        k_obs = int(np.argmax(mean_inf[:-1]))
        tests_measured = float(test_inc[:, k_obs].mean() / sol.dt)
        tests_se = float(test_inc[:, k_obs].std(ddof=1) / math.sqrt(m_reps) / sol.dt)
        tests_expected = float(nu * mean_inf[k_obs])
        return {
            "peak_step": k_peak,
            "single_interior_max": bool(single_interior_max),
            "below_baseline_runs": runs,
            "overlap": bool(overlap),
            "sim_infected_peak_step": k_obs,
            "tests_per_day_measured": tests_measured,
            "tests_per_day_expected": tests_expected,
            "tests_se": tests_se,
            "riccati_exists": fg.exists,
        }
    out, seconds = _timed(run)
    ok_tests = abs(out["tests_per_day_measured"] - out["tests_per_day_expected"]) \
        <= 3.0 * max(out["tests_se"], 1e-9)
    passed = out["single_interior_max"] and out["overlap"] and ok_tests
    notes = ""
    if not out["single_interior_max"]:
        notes = ("with these parameters the converged optimum suppresses the epidemic "
                 "(infected fraction decays, then surges only at the horizon boundary), "
                 "so the infected-fraction maximum sits on the boundary; see decisions ledger")
    return CriterionResult(
        9, "epidemic-model qualitative reproduction", passed, out,
        {"single_interior_max": True, "overlap": True,
         "tests_per_day": "test rate * infected * N at the peak"},
        "shape booleans; tests/day within 3 SE", seconds, notes,
    )


# --- criterion 10: brute-force dynamic program on a lattice ---------------

def _three_point(rng, spread_lo=0.4, spread_hi=1.2):
    d = rng.uniform(spread_lo, spread_hi)
    p = rng.uniform(0.15, 0.35)
    return np.array([-d, 0.0, d]), np.array([p, 1.0 - 2 * p, p])


def _lattice_instance(seed: int):
    """Random scalar problem: 3-point process noise, perfect one-step-delayed observation."""
    rng = np.random.default_rng(seed)
    n = 3
    e = rng.uniform(-0.6, 0.3)
    b = rng.uniform(0.4, 1.2)
    q = rng.uniform(0.1, 1.0)
    w = rng.uniform(-0.15, 0.15)
    r = rng.uniform(0.5, 1.5)
    f = rng.uniform(0.2, 1.0)
    w_vals, w_probs = _three_point(rng)
    s0_vals, s0_probs = _three_point(rng)
    theta = float(np.sum(w_probs * w_vals ** 2))
    pi0 = float(np.sum(s0_probs * s0_vals ** 2))
    ones = np.ones((n, 1, 1))
    coef = LqgCoefficients(
        dt=1.0,
        R=ones * r, B=ones * b, E=ones * e, Q=ones * q, W=ones * w,
        Et=ones * 1.0, Theta=ones * theta, Theta_t=np.zeros((n, 1, 1)),
        F=np.full((1, 1), f),
    )
    return coef, w_vals, w_probs, s0_vals, s0_probs, pi0


def _dp_optimal_cost(coef, w_vals, w_probs, s0_vals, s0_probs) -> float:
    """Exact optimum over all measurement-feedback policies on the noise lattice.

    The controller at stage k knows the realized states s_0..s_{k-1} (perfect
    observation delayed one step).  Stage objectives are exactly quadratic in
    the control, so the per-information-atom minimization is solved by
    three-point quadratic interpolation, and the expectation branches over the
    finite noise support.
    """
    n = coef.n_steps
    e = float(coef.E[0, 0, 0])
    b = float(coef.B[0, 0, 0])
    q = float(coef.Q[0, 0, 0])
    w = float(coef.W[0, 0, 0])
    r = float(coef.R[0, 0, 0])
    f = float(coef.F[0, 0])

    def stage(dist, a):
        s = dist[0]
        pr = dist[1]
        return float(np.sum(pr * (q * s * s + 2.0 * w * s * a + r * a * a)))

    def value(k, dist):
        # dist: (values, probs) for the not-yet-observed current state s_k
        if k == n:
            s, pr = dist
            return float(np.sum(pr * f * s * s))

        def total(a):
            out = stage(dist, a)
            s, pr = dist
            for sv, pv in zip(s, pr):
                if pv == 0.0:
                    continue
                nxt = (1.0 + e) * sv + b * a + w_vals
                out += pv * value(k + 1, (nxt, w_probs))
            return out

        f0, fp, fm = total(0.0), total(1.0), total(-1.0)
        curv = fp - 2.0 * f0 + fm           # 2 * quadratic coefficient
        slope = (fp - fm) / 2.0             # linear coefficient
        a_opt = -slope / curv
        return total(a_opt)

    return value(0, (s0_vals, s0_probs))


def criterion_10(ctx: AcceptanceContext) -> CriterionResult:
    """Recursive filter + value solution equals brute-force policy enumeration."""
    def run():
        worst = 0.0
        details = []
        for seed in (1, 2, 3):
            coef, w_vals, w_probs, s0_vals, s0_probs, pi0 = _lattice_instance(seed)
            pi, _ = kalman_forward(coef, np.full((1, 1), pi0))
            ric = riccati_backward(coef)
            pred = predicted_fluctuation_cost(coef, pi, ric.z, np.zeros(1),
                                              np.full((1, 1), pi0))
            dp = _dp_optimal_cost(coef, w_vals, w_probs, s0_vals, s0_probs)
            details.append({"seed": seed, "recursive": pred, "brute_force": dp})
            worst = max(worst, abs(pred - dp))
        return worst, details
    (worst, details), seconds = _timed(run)
    passed = worst <= 1e-6
    return CriterionResult(
        10, "scalar policy cost equals brute-force enumeration", passed,
        {"max_abs_difference": worst, "instances": details},
        {"max_abs_difference": 0.0}, "<= 1e-6", seconds,
    )


ALL_CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def run_all(threads: int = 1, numbers=None) -> list:
    ctx = AcceptanceContext(threads=threads)
    wanted = set(numbers) if numbers else None
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, fn in enumerate(ALL_CRITERIA, start=1):
            if wanted and i not in wanted:
                continue
            results.append(fn(ctx))
    return results
