"""Command line runner: solve | learn | test over a scenario file.

Exit codes: 0 success, 2 configuration error, 3 solver stall or exhausted
budget, 4 at least one test task failed. Verbosity via the STL_MTL_LOG
environment variable (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys as _sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import reporting
from .parser import ParseError
from .pipeline import StageReport, learning_stage, testing_stage
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .scp import ScpStallError, SubproblemError, scp_run

log = logging.getLogger("stlmtl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALL = 3
EXIT_TASKS_FAILED = 4


def _setup_logging() -> None:
    level = os.environ.get("STL_MTL_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=_sys.stderr,
    )


def _scp_result_payload(res) -> Dict[str, Any]:
    return {
        "converged": res.converged,
        "iterations": res.iterations,
        "accepted_steps": res.accepted_steps,
        "rho_exact": res.rho_exact,
        "rho_smooth_history": list(res.rho_smooth_history),
        "radius_history": list(res.radius_history),
    }


def _stage_payload(report: StageReport) -> Dict[str, Any]:
    return {
        "tasks": [
            {
                "task_id": r.task_id,
                "iterations": r.iterations,
                "accepted_steps": r.accepted_steps,
                "converged": r.converged,
                "rho_exact": r.rho_exact,
                "iterations_to_positive": r.iterations_to_positive,
                "rho_history": list(r.rho_history),
                "error": r.error,
            }
            for r in report.records
        ],
        "rd_avg": list(report.rho_avg),
        "rd_min": list(report.rho_min),
        "rd_max": list(report.rho_max),
    }


def cmd_solve(cfg: ScenarioConfig) -> int:
    """Cold SCP on the unperturbed base task."""
    out = cfg.output_dir
    base = cfg.base_formula
    stalled = False
    try:
        res = scp_run(cfg.system, cfg.x0, [(1.0, base)], cfg.solver,
                      u_init=cfg.initial_controls(), stop=base, n_steps=cfg.n_steps)
    except (ScpStallError, SubproblemError) as exc:
        log.error("solver stalled: %s", exc)
        res = getattr(exc, "result", None)
        if res is None:
            return EXIT_STALL
        stalled = True

    reporting.write_trajectory_csv(out / "trajectory.csv", res.trajectory, cfg.system)
    reporting.write_json(out / "run.json", {
        "config": cfg.resolved,
        "result": _scp_result_payload(res),
        "stalled": stalled,
    })
    reporting.plot_trajectory(out / "trajectory.svg", res.trajectory, cfg.system,
                              cfg.path_vars)
    reporting.plot_solve_history(out / "solve_history.svg",
                                 res.rho_smooth_history, res.radius_history)
    print(f"solve: converged={res.converged} iterations={res.iterations} "
          f"rho_exact={res.rho_exact:.6g} -> {out}")
    return EXIT_OK if res.converged else EXIT_STALL


def cmd_learn(cfg: ScenarioConfig) -> int:
    """Learning stage: averaged robustness over the drawn task bundle."""
    out = cfg.output_dir / "learn"
    try:
        learn = learning_stage(cfg.system, cfg.x0, cfg.templates, cfg.learn_tasks,
                               cfg.solver, cfg.learn_seed, cfg.n_steps,
                               u_init=cfg.initial_controls())
    except (ScpStallError, SubproblemError) as exc:
        log.error("learning stage stalled: %s", exc)
        return EXIT_STALL

    reporting.write_controls_csv(out / "controls.csv", learn.u_learn, cfg.system)
    reporting.write_trajectory_csv(out / "trajectory.csv", learn.trajectory, cfg.system)
    reporting.write_json(out / "report.json", {
        "config": cfg.resolved,
        "stage": "learn",
        "scp": _scp_result_payload(learn.scp),
        "report": _stage_payload(learn.report),
        "draws": [[_draw_record(rec) for rec in t.draw_record] for t in learn.tasks],
    })
    reporting.plot_rd_history(out / "rd_history.svg", learn.report.rho_avg,
                              learn.report.rho_min, learn.report.rho_max,
                              "exact robustness across learning tasks")
    reporting.plot_trajectory(out / "trajectory.svg", learn.trajectory, cfg.system,
                              cfg.path_vars)
    log.info("learning stage wall time %.1f s", learn.report.wall_time)
    print(f"learn: converged={learn.scp.converged} iterations={learn.scp.iterations} "
          f"avg_rho={learn.scp.rho_exact:.6g} -> {out}")
    return EXIT_OK if learn.scp.converged else EXIT_STALL


def _draw_record(rec: Dict[str, float]) -> Dict[str, float]:
    return {k: float(v) for k, v in sorted(rec.items())}


def cmd_test(cfg: ScenarioConfig, warm_path: Optional[str], cold: bool,
             workers: int) -> int:
    """Testing stage over every sigma level, warm from a controls file or cold."""
    out = cfg.output_dir / "test"
    u_learn = None
    if not cold:
        if warm_path is None:
            log.error("test needs --warm <controls.csv> or --cold")
            return EXIT_CONFIG
        try:
            u_learn = reporting.read_controls_csv(Path(warm_path), cfg.system)
        except (OSError, ValueError, IndexError) as exc:
            log.error("cannot read warm-start controls: %s", exc)
            return EXIT_CONFIG
        if u_learn.shape[0] != cfg.n_steps:
            log.error("warm-start file has %d steps, scenario horizon is %d",
                      u_learn.shape[0], cfg.n_steps)
            return EXIT_CONFIG

    summary_levels: Dict[str, Any] = {}
    plot_levels: Dict[str, Dict[str, List[float]]] = {}
    any_failed = False
    for level in cfg.test_sigma_levels:
        templates = cfg.templates_for_level(level)
        report, tasks, trajectories = testing_stage(
            cfg.system, cfg.x0, templates, cfg.test_tasks, u_learn, cfg.solver,
            cfg.test_seed, cfg.n_steps, workers=workers)
        level_key = f"{level:g}"
        level_dir = out / level_key
        for task, traj in zip(tasks, trajectories):
            if traj is not None:
                reporting.write_trajectory_csv(level_dir / f"task_{task.id}.csv",
                                               traj, cfg.system)
        iters = [r.iterations_to_positive for r in report.records]
        done = [v for v in iters if v is not None]
        summary_levels[level_key] = {
            "sigma": level,
            "converged": sum(r.converged for r in report.records),
            "tasks": _stage_payload(report)["tasks"],
            "iterations_to_positive": iters,
            "mean_iterations_to_positive": float(np.mean(done)) if done else None,
            "min_iterations_to_positive": min(done) if done else None,
            "max_iterations_to_positive": max(done) if done else None,
            "draws": [[_draw_record(rec) for rec in t.draw_record] for t in tasks],
        }
        plot_levels[level_key] = {"avg": report.rho_avg, "min": report.rho_min,
                                  "max": report.rho_max}
        if not report.all_converged:
            any_failed = True
        log.info("sigma=%s: %d/%d tasks converged, wall time %.1f s", level_key,
                 summary_levels[level_key]["converged"], len(tasks), report.wall_time)

    reporting.write_json(out / "summary.json", {
        "config": cfg.resolved,
        "stage": "test",
        "warm_start": None if cold else str(warm_path),
        "levels": summary_levels,
    })
    reporting.plot_rd_levels(out / "rd_vs_iter.svg", plot_levels)
    for key, lv in summary_levels.items():
        print(f"test sigma={key}: converged {lv['converged']}/{cfg.test_tasks} "
              f"mean-iterations={lv['mean_iterations_to_positive']}")
    print(f"-> {out}")
    return EXIT_TASKS_FAILED if any_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stlmtl",
        description="Trajectory synthesis under timed logic tasks: solve the "
                    "base task, learn a warm start over perturbed tasks, and "
                    "test few-shot adaptation.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "cold-start solve of the base task"),
        ("learn", "learning stage over perturbed tasks"),
        ("test", "testing stage, warm or cold"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override stage seeds")
        sp.add_argument("--out", default=None, help="override output directory")
        if name == "test":
            sp.add_argument("--warm", default=None,
                            help="warm-start controls CSV (from learn)")
            sp.add_argument("--cold", action="store_true",
                            help="cold start instead of --warm")
            sp.add_argument("--workers", type=int, default=1,
                            help="parallel workers for per-task solves")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_scenario(args.config, seed_override=args.seed,
                            out_override=args.out)
    except (ScenarioError, ParseError) as exc:
        log.error("%s", exc)
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG

    if args.command == "solve":
        return cmd_solve(cfg)
    if args.command == "learn":
        return cmd_learn(cfg)
    return cmd_test(cfg, args.warm, args.cold, args.workers)


if __name__ == "__main__":
    raise SystemExit(main())
