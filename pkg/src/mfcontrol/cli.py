"""Command-line pipeline: solve-meanfield -> solve-lqg -> simulate -> report.

Every command reads one JSON config (--config), writes its delimited outputs
and a metadata JSON into the output directory, and renders matplotlib figures
next to them unless --no-figures is given.  Config errors exit with status 2
and name the offending field; solver failures exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import figures, output
from .acceptance import run_all
from .fluctuations import (
    CoefficientError,
    extract_coefficients,
    kalman_forward,
    multinomial_initial_covariance,
    predicted_fluctuation_cost,
    riccati_backward,
    solve_fluctuations,
)
from .meanfield import LineSearchError, RolloutError, optimize
from .model import MaximizerError, RateError, SimplexError
from .simulator import KalmanFeedback, OpenLoop, run_episode, run_ensemble, scaling_study

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _load_config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
    elif cfg.output_dir == "out":
        cfg.output_dir = cfgmod.default_output_dir()
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve_meanfield(cfg):
    mdl = cfg.build_model()
    return mdl, optimize(mdl, np.asarray(cfg.s0), cfg.dt, cfg.n_steps,
                         cfg.optimizer_options())


def cmd_solve_meanfield(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    mdl, sol = _solve_meanfield(cfg)
    output.write_meanfield_csv(out / "meanfield.csv", sol)
    output.write_meanfield_json(out / "meanfield.json", sol)
    if not args.no_figures:
        figures.render_meanfield(out / "meanfield.png", sol)
    print(f"wrote {out/'meanfield.csv'} (cost {sol.cost:.6g}, |grad| {sol.grad_norm:.3g}, "
          f"{sol.iterations} iterations)")
    if not sol.converged:
        print("warning: optimizer did not reach its tolerance", file=sys.stderr)
    return EXIT_OK


def _load_or_solve_meanfield(cfg, out):
    csv_path, json_path = out / "meanfield.csv", out / "meanfield.json"
    mdl = cfg.build_model()
    if csv_path.exists() and json_path.exists():
        return mdl, output.read_meanfield(csv_path, json_path)
    raise FileNotFoundError(
        f"mean-field files not found in {out}; run solve-meanfield first")


def _pi0(cfg, mdl):
    if cfg.pi0_mode == "multinomial":
        return multinomial_initial_covariance(np.asarray(cfg.s0))
    return np.zeros((mdl.n_states, mdl.n_states))


def cmd_solve_lqg(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    mdl, sol = _load_or_solve_meanfield(cfg, out)
    coef = extract_coefficients(mdl, sol)
    pi0 = _pi0(cfg, mdl)
    pi, kgains = kalman_forward(coef, pi0)
    ric = riccati_backward(coef)
    predicted = None
    if ric.exists:
        predicted = predicted_fluctuation_cost(coef, pi, ric.z, np.zeros(mdl.n_states), pi0)
    output.write_matrix_path_csv(out / "pi.csv", "Pi", pi, cfg.dt)
    output.write_matrix_path_csv(out / "z.csv", "Z", ric.z, cfg.dt)
    output.write_gains_csv(out / "gains.csv", kgains, ric.feedback_gains, cfg.dt)
    output.write_lqg_json(out / "lqg.json", ric.exists, ric.failure_step, predicted,
                          cfg.dt, cfg.n_steps)
    if not args.no_figures:
        figures.render_lqg(out / "lqg.png", pi, ric.z, cfg.dt, ric.exists)
    if ric.exists:
        print(f"wrote {out/'lqg.json'} (predicted fluctuation cost {predicted:.6g})")
    else:
        print(f"wrote {out/'lqg.json'} (no solution past step {ric.failure_step})")
    return EXIT_OK


def _build_controller(name, mdl, sol, cfg):
    if name == "open-loop":
        return OpenLoop(a_star=sol.A)
    if name == "kalman":
        coef = extract_coefficients(mdl, sol)
        fg = solve_fluctuations(mdl, sol, _pi0(cfg, mdl))
        if not fg.exists:
            raise CoefficientError(
                f"value recursion has no solution (fails at step {fg.failure_step}); "
                "cannot build the feedback controller", step=fg.failure_step)
        return KalmanFeedback.from_solution(mdl, sol, coef, fg)
    raise cfgmod.ConfigError("controller", f"unknown controller {name!r}")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    mdl, sol = _load_or_solve_meanfield(cfg, out)
    lqg_meta = out / "lqg.json"
    if args.controller == "kalman" and lqg_meta.exists():
        with open(lqg_meta) as fh:
            meta = json.load(fh)
        if not meta.get("exists", True):
            print("error: lqg.json reports no solution; feedback controller unavailable",
                  file=sys.stderr)
            return EXIT_FAILURE
    controller = _build_controller(args.controller, mdl, sol, cfg)
    init = "multinomial" if cfg.pi0_mode == "multinomial" else "round"
    stats = run_ensemble(mdl, controller, cfg.n_agents, cfg.replicas,
                         np.asarray(cfg.s0), cfg.dt, cfg.n_steps, cfg.base_seed,
                         reference_state=sol.S, init=init, threads=args.threads)
    written = output.write_ensemble_outputs(out, stats, cfg.dt)
    episode = run_episode(mdl, controller, cfg.n_agents, np.asarray(cfg.s0),
                          cfg.dt, cfg.n_steps, seed=cfg.base_seed, init=init)
    output.write_episode_csv(out / "episode0.csv", episode, cfg.dt)
    gap, gap_se = stats.cost_gap_scaled(sol.cost)
    summary = {
        "n_agents": cfg.n_agents,
        "replicas": cfg.replicas,
        "base_seed": cfg.base_seed,
        "controller": args.controller,
        "mean_cost": stats.mean_cost,
        "cost_stderr": stats.cost_stderr,
        "meanfield_cost": sol.cost,
        "scaled_cost_gap": gap,
        "scaled_cost_gap_stderr": gap_se,
        "clamp_fraction": stats.clamp_fraction,
        "threads": args.threads,
    }
    output.write_json(out / "summary.json", summary)
    if not args.no_figures:
        figures.render_ensemble(out / "ensemble.png", stats, cfg.dt, cfg.n_agents)
    print(f"wrote {out/'summary.json'} (mean cost {stats.mean_cost:.6g} "
          f"+- {stats.cost_stderr:.3g})")
    return EXIT_OK


def cmd_scaling_study(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    mdl, sol = _load_or_solve_meanfield(cfg, out)

    def factory(n_agents):
        return _build_controller(args.controller, mdl, sol, cfg)

    study = scaling_study(mdl, factory, cfg.n_list, cfg.replicas, np.asarray(cfg.s0),
                          cfg.dt, cfg.n_steps, cfg.base_seed, reference_state=sol.S,
                          mf_cost=sol.cost, threads=args.threads)
    rows = ["N,sup_msd,sup_msd_stderr,sup_step,mean_cost,cost_stderr,"
            "scaled_cost_gap,scaled_gap_stderr,clamp_fraction"]
    for point, (n_agents, gap, gap_se) in zip(study.points, study.cost_gaps_scaled()):
        rows.append(",".join([
            str(point.n_agents), output.fmt(point.sup_msd), output.fmt(point.sup_msd_stderr),
            str(point.sup_step), output.fmt(point.mean_cost), output.fmt(point.cost_stderr),
            output.fmt(gap), output.fmt(gap_se), output.fmt(point.clamp_fraction),
        ]))
    (out / "scaling.csv").write_text("\n".join(rows) + "\n")
    output.write_json(out / "scaling.json", {
        "slope": study.slope,
        "slope_stderr": study.slope_stderr,
        "slope_ci95": list(study.slope_ci95),
        "controller": args.controller,
        "replicas": cfg.replicas,
        "base_seed": cfg.base_seed,
        "n_list": cfg.n_list,
        "meanfield_cost": study.mf_cost,
    })
    if not args.no_figures:
        figures.render_scaling(out / "scaling.png", study)
    print(f"wrote {out/'scaling.json'} (slope {study.slope:.3f} "
          f"+- {study.slope_stderr:.3f})")
    return EXIT_OK


def cmd_acceptance(args) -> int:
    out = Path(args.out or cfgmod.default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    numbers = [int(x) for x in args.only.split(",")] if args.only else None
    start = time.perf_counter()
    results = run_all(threads=args.threads, numbers=numbers)
    for res in results:
        print(res.line())
        if res.notes:
            print(f"       note: {res.notes}")
    tree = [{
        "number": r.number, "title": r.title, "passed": r.passed,
        "measured": r.measured, "target": r.target, "tolerance": r.tolerance,
        "seconds": r.seconds, "notes": r.notes,
    } for r in results]
    output.write_json(out / "acceptance.json", {
        "total_seconds": time.perf_counter() - start,
        "passed": sum(r.passed for r in results),
        "failed": sum(not r.passed for r in results),
        "criteria": tree,
    })
    print(f"wrote {out/'acceptance.json'} "
          f"({sum(r.passed for r in results)}/{len(results)} passed)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="mean-field control with partially observed fluctuation feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: config output_dir or $MFCONTROL_OUT)")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; statistics are invariant to this")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("solve-meanfield", help="solve the deterministic limit problem")
    common(p)
    p.set_defaults(fn=cmd_solve_meanfield)

    p = sub.add_parser("solve-lqg", help="filter covariances and feedback gains")
    common(p)
    p.set_defaults(fn=cmd_solve_lqg)

    p = sub.add_parser("simulate", help="Monte Carlo ensemble of the N-agent process")
    common(p)
    p.add_argument("--controller", choices=["open-loop", "kalman"], default="kalman")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("scaling-study", help="deviation scaling over population sizes")
    common(p)
    p.add_argument("--controller", choices=["open-loop", "kalman"], default="open-loop")
    p.set_defaults(fn=cmd_scaling_study)

    p = sub.add_parser("acceptance", help="run the acceptance suite")
    common(p, needs_config=False)
    p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    p.set_defaults(fn=cmd_acceptance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.fn(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (LineSearchError, RolloutError, CoefficientError, MaximizerError,
            RateError, SimplexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
