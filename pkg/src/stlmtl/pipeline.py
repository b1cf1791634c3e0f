"""Task generation from perturbed templates, plus the learn and test stages.

The learning stage runs one SCP solve maximizing the average smoothed
robustness of a bundle of perturbed tasks; its solution warm-starts the
per-task solves of the testing stage.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import LinearSystem, Trajectory
from .formula import And, Formula, formula_horizon
from .parser import parse
from .scp import AverageStop, FormulaStop, ScpConfig, ScpResult, ScpStallError, SubproblemError, scp_run

log = logging.getLogger("stlmtl.pipeline")

_MAX_RESAMPLES = 100


class GenerationError(RuntimeError):
    """A template kept producing invalid draws."""


@dataclass(frozen=True)
class SlotSpec:
    """One perturbable number in a template pattern.

    Gaussian draws around `nominal` with spread `sigma`; `bounds`, when given,
    clamp the draw (used for spatial constants). `test_mode` says what the
    testing stage does with the slot: "level" replaces sigma by the stage's
    perturbation level, "keep" leaves it unchanged.
    """

    nominal: float
    sigma: float = 0.0
    bounds: Optional[Tuple[float, float]] = None
    test_mode: str = "level"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.bounds is not None and self.bounds[0] > self.bounds[1]:
            raise ValueError("slot bounds must satisfy lo <= hi")
        if self.test_mode not in ("level", "keep"):
            raise ValueError("test_mode must be 'level' or 'keep'")


@dataclass(frozen=True)
class SpecTemplate:
    """A DSL pattern with named perturbable slots.

    `pattern` is DSL text with placeholders like "G[{ta},{tb}](x1 >= {c})".
    The reserved slots ta/tb are temporal (seconds) and are repaired by
    resampling when a draw is negative, inverted, or beyond the horizon;
    spatial slots are clamped to their bounds if any.
    """

    pattern: str
    ta: Optional[SlotSpec] = None
    tb: Optional[SlotSpec] = None
    spatial: Dict[str, SlotSpec] = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        if (self.ta is None) != (self.tb is None):
            raise ValueError(f"template {self.label}: ta and tb come as a pair")
        if self.ta is not None and self.ta.nominal > self.tb.nominal:
            raise ValueError(f"template {self.label}: nominal ta exceeds tb")
        for reserved in ("ta", "tb"):
            if reserved in self.spatial:
                raise ValueError(f"template {self.label}: {reserved} is a temporal slot")

    @property
    def label(self) -> str:
        return self.name or self.pattern

    def slot_names(self) -> List[str]:
        names = []
        if self.ta is not None:
            names += ["ta", "tb"]
        return names + sorted(self.spatial)

    def nominal_values(self) -> Dict[str, float]:
        vals = {}
        if self.ta is not None:
            vals["ta"] = self.ta.nominal
            vals["tb"] = self.tb.nominal
        vals.update({k: s.nominal for k, s in self.spatial.items()})
        return vals

    def instantiate(self, values: Dict[str, float], var_names: Sequence[str]) -> Formula:
        text = self.pattern.format_map({k: repr(float(v)) for k, v in values.items()})
        return parse(text, var_names)

    def for_test_level(self, sigma_level: float) -> "SpecTemplate":
        """Template with 'level'-mode slots re-pointed at the given sigma."""

        def adj(slot: Optional[SlotSpec]) -> Optional[SlotSpec]:
            if slot is None or slot.test_mode != "level":
                return slot
            return replace(slot, sigma=float(sigma_level))

        return SpecTemplate(self.pattern, adj(self.ta), adj(self.tb),
                            {k: adj(s) for k, s in self.spatial.items()}, self.name)


@dataclass(frozen=True)
class Task:
    """A concrete conjunction of perturbed specs."""

    id: int
    specs: Tuple[Formula, ...]
    draw_record: Tuple[Dict[str, float], ...]

    @property
    def formula(self) -> Formula:
        return And(self.specs) if len(self.specs) > 1 else self.specs[0]


def base_task(templates: Sequence[SpecTemplate], var_names: Sequence[str]) -> Task:
    """The unperturbed task: every slot at its nominal value."""
    specs = []
    records = []
    for t in templates:
        vals = t.nominal_values()
        specs.append(t.instantiate(vals, var_names))
        records.append(vals)
    return Task(-1, tuple(specs), tuple(records))


# -- counter-based sampling ------------------------------------------------

_TAG = {"ta": 0, "tb": 1}


def _stream(seed: int, task_i: int, spec_j: int, tag: int) -> np.random.Generator:
    # One Philox stream per (seed, task, spec, slot): streams sit 2^64 apart
    # in counter space, so draws never overlap and every value is a pure
    # function of its coordinates.
    counter = ((task_i * (1 << 20) + spec_j) * (1 << 12) + tag) << 64
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def _draw(slot: SlotSpec, gen: np.random.Generator, valid, what: str) -> float:
    if slot.sigma == 0.0:
        value = slot.nominal
        if not valid(value):
            raise GenerationError(f"{what}: nominal value {value} is invalid")
        return value
    for _ in range(_MAX_RESAMPLES):
        value = float(gen.normal(slot.nominal, slot.sigma))
        if slot.bounds is not None:
            value = float(np.clip(value, slot.bounds[0], slot.bounds[1]))
        if valid(value):
            return value
    raise GenerationError(f"{what}: no valid draw in {_MAX_RESAMPLES} resamples")


def _draw_interval(t: SpecTemplate, gen_ta: np.random.Generator,
                   gen_tb: np.random.Generator, horizon: Optional[float]
                   ) -> Tuple[float, float]:
    """Joint resampling: an extreme ta draw near the horizon could leave tb
    no room, so on tb failure the pair is redrawn rather than aborting."""
    in_horizon = lambda v: 0.0 <= v and (horizon is None or v <= horizon)
    last_error = None
    for _ in range(10):
        ta = _draw(t.ta, gen_ta, in_horizon, f"template {t.label}, slot ta")
        try:
            tb = _draw(t.tb, gen_tb, lambda v: v >= ta and in_horizon(v),
                       f"template {t.label}, slot tb")
            return ta, tb
        except GenerationError as exc:
            last_error = exc
    raise last_error


def task_generator(M: int, templates: Sequence[SpecTemplate], seed: int,
                   var_names: Sequence[str], horizon: Optional[float] = None
                   ) -> List[Task]:
    """Draw M perturbed tasks, each a conjunction of one formula per template.

    Draws are keyed by (seed, task index, template index, slot), so any task
    is reproducible in isolation. Temporal draws are resampled until the
    interval is ordered, nonnegative, and inside the horizon; spatial draws
    are clamped to their bounds.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not templates:
        raise ValueError("need at least one template")
    tasks = []
    for i in range(M):
        specs = []
        records: List[Dict[str, float]] = []
        for j, t in enumerate(templates):
            values: Dict[str, float] = {}
            if t.ta is not None:
                values["ta"], values["tb"] = _draw_interval(
                    t, _stream(seed, i, j, 0), _stream(seed, i, j, 1), horizon)
            for tag, (slot_name, slot) in enumerate(sorted(t.spatial.items()), start=2):
                values[slot_name] = _draw(slot, _stream(seed, i, j, tag),
                                          lambda v: True,
                                          f"template {t.label}, slot {slot_name}")
            f = t.instantiate(values, var_names)
            if horizon is not None and formula_horizon(f) > horizon + 1e-9:
                raise GenerationError(
                    f"template {t.label}: instantiated formula exceeds the horizon")
            specs.append(f)
            records.append(values)
        tasks.append(Task(i, tuple(specs), tuple(records)))
    return tasks


# -- stage reports ----------------------------------------------------------


@dataclass
class TaskRunRecord:
    task_id: int
    iterations: int
    accepted_steps: int
    converged: bool
    rho_exact: float
    iterations_to_positive: Optional[int]
    rho_history: List[float]
    error: Optional[str] = None


@dataclass
class StageReport:
    records: List[TaskRunRecord]
    rho_avg: List[float]
    rho_min: List[float]
    rho_max: List[float]
    wall_time: float = 0.0

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.records)


def _first_positive(history: Sequence[float]) -> Optional[int]:
    for i, v in enumerate(history):
        if v > 0.0:
            return i + 1  # iterations are 1-based loop passes
    return None


def _dispersion(histories: Sequence[Sequence[float]]) -> Tuple[List[float], List[float], List[float]]:
    """Per-iteration mean/min/max across tasks, forward-filling short runs."""
    width = max((len(h) for h in histories), default=0)
    if width == 0:
        return [], [], []
    padded = np.array([list(h) + [h[-1]] * (width - len(h)) for h in histories])
    return (padded.mean(axis=0).tolist(), padded.min(axis=0).tolist(),
            padded.max(axis=0).tolist())


@dataclass
class LearnResult:
    u_learn: np.ndarray
    trajectory: Trajectory
    report: StageReport
    scp: ScpResult
    tasks: List[Task]


def learning_stage(sys: LinearSystem, x0: np.ndarray, templates: Sequence[SpecTemplate],
                   M_L: int, cfg: ScpConfig, seed: int, n_steps: int,
                   u_init: Optional[np.ndarray] = None) -> LearnResult:
    """One SCP solve over the averaged smoothed robustness of M_L drawn tasks.

    Stops when the mean exact robustness over the bundle turns positive and
    the unperturbed base task is boolean-satisfied. Per-task exact robustness
    is recorded every pass for reporting.
    """
    if M_L < 1:
        raise ValueError("M_L must be >= 1")
    horizon = n_steps * sys.dt
    tasks = task_generator(M_L, templates, seed, sys.var_names, horizon)
    gate = base_task(templates, sys.var_names).formula
    formulas = [t.formula for t in tasks]
    terms = [(1.0 / M_L, f) for f in formulas]
    stop = AverageStop(formulas, gate=gate)

    histories: List[List[float]] = [[] for _ in tasks]

    def record(_h, _u, traj):
        from .robustness import eval_exact
        for hist, f in zip(histories, formulas):
            hist.append(eval_exact(f, traj.trace))

    started = time.perf_counter()
    res = scp_run(sys, x0, terms, cfg, u_init=u_init, stop=stop,
                  n_steps=n_steps, on_iteration=record)
    wall = time.perf_counter() - started

    records = []
    for t, hist in zip(tasks, histories):
        records.append(TaskRunRecord(
            task_id=t.id,
            iterations=res.iterations,
            accepted_steps=res.accepted_steps,
            converged=res.converged,
            rho_exact=hist[-1] if hist else float("nan"),
            iterations_to_positive=_first_positive(hist),
            rho_history=hist,
        ))
    avg, lo, hi = _dispersion(histories)
    report = StageReport(records, avg, lo, hi, wall)
    return LearnResult(res.trajectory.controls, res.trajectory, report, res, tasks)


def _run_one_task(args) -> Tuple[TaskRunRecord, Optional[np.ndarray]]:
    sys, x0, task, cfg, u_init, n_steps = args
    history: List[float] = []

    def record(_h, _u, traj):
        from .robustness import eval_exact
        history.append(eval_exact(task.formula, traj.trace))

    try:
        res = scp_run(sys, x0, [(1.0, task.formula)], cfg, u_init=u_init,
                      stop=FormulaStop(task.formula), n_steps=n_steps,
                      on_iteration=record)
        rec = TaskRunRecord(task.id, res.iterations, res.accepted_steps,
                            res.converged, res.rho_exact,
                            _first_positive(history), history)
        return rec, res.trajectory.controls
    except (ScpStallError, SubproblemError) as exc:
        partial = getattr(exc, "result", None)
        rec = TaskRunRecord(
            task.id,
            partial.iterations if partial else 0,
            partial.accepted_steps if partial else 0,
            False,
            partial.rho_exact if partial else float("nan"),
            _first_positive(history),
            history,
            error=str(exc),
        )
        return rec, partial.trajectory.controls if partial else None


def testing_stage(sys: LinearSystem, x0: np.ndarray, templates_test: Sequence[SpecTemplate],
                  M_T: int, u_learn: Optional[np.ndarray], cfg: ScpConfig, seed: int,
                  n_steps: int, workers: int = 1,
                  tasks: Optional[Sequence[Task]] = None
                  ) -> Tuple[StageReport, List[Task], List[Optional[Trajectory]]]:
    """Per-task SCP solves warm-started from the learning controls.

    Pass u_learn=None for a cold run (all-zero initial controls). Tasks are
    independent; `workers` > 1 solves them in parallel with results ordered
    by task id either way. Failed tasks are recorded, not raised.
    """
    horizon = n_steps * sys.dt
    if tasks is None:
        tasks = task_generator(M_T, templates_test, seed, sys.var_names, horizon)
    if u_learn is not None:
        u_learn = np.asarray(u_learn, dtype=float)
        if u_learn.reshape(-1).size != n_steps * sys.m:
            raise ValueError(
                f"warm-start controls have {u_learn.reshape(-1).size} entries, "
                f"expected {n_steps * sys.m}")
    arglist = [(sys, x0, t, cfg, u_learn, n_steps) for t in tasks]

    started = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one_task, arglist))
    else:
        outcomes = [_run_one_task(a) for a in arglist]
    wall = time.perf_counter() - started

    from .dynamics import rollout
    records = [rec for rec, _ in outcomes]
    trajectories: List[Optional[Trajectory]] = [
        rollout(sys, x0, controls) if controls is not None else None
        for _, controls in outcomes
    ]

    avg, lo, hi = _dispersion([r.rho_history for r in records])
    return StageReport(records, avg, lo, hi, wall), list(tasks), trajectories
