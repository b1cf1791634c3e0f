"""Declarative scenario files: system, horizon, task templates, stage knobs.

A scenario is one YAML document. Minimal example:

    name: demo
    system:
      builtin: mass_spring_damper
      params: {mass: 1.0, spring: 2.0, damping: 0.2, dt: 0.1}
    x0: [3.141592653589793, 2.0]
    horizon_steps: 300
    templates:
      - pattern: "G[{ta},{tb}](x1 >= {c})"
        ta: {nominal: 4.0, sigma: 1.1}
        tb: {nominal: 6.0, sigma: 1.1}
        c:  {nominal: 9.0, sigma: 1.1}
    stages:
      learn: {tasks: 25, seed: 1}
      test:  {tasks: 10, sigma_levels: [2.5], seed: 2}
    solver: {max_iterations: 600}
    output_dir: runs/demo

Slot entries accept nominal, sigma, bounds ([lo, hi] clamp), and test
("level" to take the testing stage's sigma level, "keep" to keep sigma).
An optional base_task list of DSL strings is validated against the
templates' nominal instantiation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from .dynamics import LinearSystem, lqr_tracking_controls, mass_spring_damper, quadrotor
from .formula import Formula, formula_horizon
from .parser import ParseError, parse
from .pipeline import SlotSpec, SpecTemplate, base_task
from .scp import ScpConfig


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario file."""


_SOLVER_DEFAULTS: Dict[str, Any] = {
    "max_iterations": 100,
    "smoothing": 10.0,
    "alpha": 1e-3,
    "q_weight": 1.0,
    "r_weight": 1.0,
    "r0": 1.0,
    "r_min": 1e-4,
    "r_max": 100.0,
    "shrink": 0.5,
    "grow": 2.0,
    "eta_accept": 0.1,
    "eta_good": 0.7,
    "tol_kkt": 1e-8,
    "linearization": "first_order",
    "control_bounds": None,
    "initial_controls": "zeros",
}

_STAGE_DEFAULTS: Dict[str, Any] = {
    "learn": {"tasks": 1, "seed": 0},
    "test": {"tasks": 10, "sigma_levels": [1.0], "seed": 1},
}


def _require(mapping: Dict[str, Any], key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"missing key '{key}' in {where}")
    return mapping[key]


def _build_system(section: Dict[str, Any]) -> LinearSystem:
    if "builtin" in section:
        name = section["builtin"]
        params = section.get("params", {})
        if name == "mass_spring_damper":
            return mass_spring_damper(
                float(params.get("mass", 1.0)),
                float(params.get("spring", 2.0)),
                float(params.get("damping", 0.2)),
                float(params.get("dt", 0.1)),
            )
        if name == "quadrotor":
            return quadrotor()
        raise ScenarioError(f"unknown builtin system '{name}'")
    if "raw" in section:
        raw = section["raw"]
        A = np.asarray(_require(raw, "A", "system.raw"), dtype=float)
        B = np.asarray(_require(raw, "B", "system.raw"), dtype=float)
        dt = float(_require(raw, "dt", "system.raw"))
        names = raw.get("state_names") or [f"x{i + 1}" for i in range(A.shape[0])]
        u_names = raw.get("control_names") or [f"u{i + 1}" for i in range(B.shape[1])]
        return LinearSystem(A, B, dt, tuple(names), tuple(u_names))
    raise ScenarioError("system section needs 'builtin' or 'raw'")


def _build_slot(data: Any, where: str) -> SlotSpec:
    if isinstance(data, (int, float)):
        return SlotSpec(nominal=float(data))
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: slot must be a number or a mapping")
    try:
        bounds = data.get("bounds")
        return SlotSpec(
            nominal=float(_require(data, "nominal", where)),
            sigma=float(data.get("sigma", 0.0)),
            bounds=(float(bounds[0]), float(bounds[1])) if bounds is not None else None,
            test_mode=data.get("test", "level"),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _build_template(data: Dict[str, Any], index: int) -> SpecTemplate:
    where = f"templates[{index}]"
    pattern = _require(data, "pattern", where)
    name = data.get("name")
    ta = tb = None
    spatial: Dict[str, SlotSpec] = {}
    for key, value in data.items():
        if key in ("pattern", "name"):
            continue
        slot = _build_slot(value, f"{where}.{key}")
        if key == "ta":
            ta = slot
        elif key == "tb":
            tb = slot
        else:
            spatial[key] = slot
    try:
        return SpecTemplate(pattern, ta, tb, spatial, name)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


@dataclass
class ScenarioConfig:
    name: str
    system: LinearSystem
    x0: np.ndarray
    n_steps: int
    templates: List[SpecTemplate]
    base_formulas: List[Formula]
    learn_tasks: int
    learn_seed: int
    test_tasks: int
    test_sigma_levels: List[float]
    test_seed: int
    solver: ScpConfig
    output_dir: Path
    initial_controls_spec: Any
    path_vars: List[str] = field(default_factory=list)
    resolved: Dict[str, Any] = field(default_factory=dict)

    @property
    def horizon_seconds(self) -> float:
        return self.n_steps * self.system.dt

    @property
    def base_formula(self) -> Formula:
        return base_task(self.templates, self.system.var_names).formula

    def templates_for_level(self, sigma_level: float) -> List[SpecTemplate]:
        return [t.for_test_level(sigma_level) for t in self.templates]

    def initial_controls(self) -> Optional[np.ndarray]:
        """Initial control sequence per the scenario: zeros or an LQR shot."""
        spec = self.initial_controls_spec
        if spec in (None, "zeros"):
            return None
        if isinstance(spec, dict) and "lqr" in spec:
            lqr = spec["lqr"]
            ref = np.asarray(_require(lqr, "reference", "solver.initial_controls.lqr"),
                             dtype=float)
            return lqr_tracking_controls(self.system, self.x0, ref, self.n_steps,
                                         q=float(lqr.get("q", 1.0)),
                                         r=float(lqr.get("r", 1.0)))
        raise ScenarioError("initial_controls must be 'zeros' or {lqr: {...}}")


def _solver_config(section: Dict[str, Any], m: int) -> ScpConfig:
    merged = dict(_SOLVER_DEFAULTS)
    unknown = set(section) - set(_SOLVER_DEFAULTS)
    if unknown:
        raise ScenarioError(f"unknown solver keys: {sorted(unknown)}")
    merged.update(section)
    bounds = merged["control_bounds"]
    if bounds is not None:
        bounds = (np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))
    try:
        return ScpConfig(
            max_iterations=int(merged["max_iterations"]),
            K=float(merged["smoothing"]),
            alpha=float(merged["alpha"]),
            Q=float(merged["q_weight"]),
            R=float(merged["r_weight"]),
            r0=float(merged["r0"]),
            r_min=float(merged["r_min"]),
            r_max=float(merged["r_max"]),
            shrink=float(merged["shrink"]),
            grow=float(merged["grow"]),
            eta_accept=float(merged["eta_accept"]),
            eta_good=float(merged["eta_good"]),
            control_bounds=bounds,
            linearization=str(merged["linearization"]),
            tol_kkt=float(merged["tol_kkt"]),
        )
    except ValueError as exc:
        raise ScenarioError(f"solver: {exc}") from None


def load_scenario(path: str | Path, seed_override: Optional[int] = None,
                  out_override: Optional[str] = None) -> ScenarioConfig:
    """Load and validate a scenario file; overrides come from the CLI."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")

    system = _build_system(_require(raw, "system", "scenario"))
    x0 = np.asarray(_require(raw, "x0", "scenario"), dtype=float)
    if x0.shape != (system.n,):
        raise ScenarioError(f"x0 has shape {x0.shape}, system expects ({system.n},)")
    n_steps = int(_require(raw, "horizon_steps", "scenario"))
    if n_steps < 1:
        raise ScenarioError("horizon_steps must be >= 1")

    tdata = _require(raw, "templates", "scenario")
    if not isinstance(tdata, list) or not tdata:
        raise ScenarioError("templates must be a nonempty list")
    templates = [_build_template(t, i) for i, t in enumerate(tdata)]

    horizon = n_steps * system.dt
    base = base_task(templates, system.var_names)
    for f, t in zip(base.specs, templates):
        if formula_horizon(f) > horizon + 1e-9:
            raise ScenarioError(
                f"template '{t.label}' has horizon {formula_horizon(f)} s "
                f"but the trace covers only {horizon} s")

    base_strings = raw.get("base_task")
    if base_strings is not None:
        if len(base_strings) != len(templates):
            raise ScenarioError("base_task length differs from templates")
        for text, f, t in zip(base_strings, base.specs, templates):
            declared = parse(text, system.var_names)
            if declared != f:
                raise ScenarioError(
                    f"base_task entry {text!r} does not match template "
                    f"'{t.label}' at nominal values")

    stages = {**_STAGE_DEFAULTS, **raw.get("stages", {})}
    learn = {**_STAGE_DEFAULTS["learn"], **(stages.get("learn") or {})}
    test = {**_STAGE_DEFAULTS["test"], **(stages.get("test") or {})}
    if seed_override is not None:
        learn["seed"] = seed_override
        test["seed"] = seed_override

    solver_raw = raw.get("solver", {})
    solver = _solver_config(solver_raw, system.m)

    out_dir = Path(out_override or raw.get("output_dir", f"runs/{raw.get('name', path.stem)}"))

    resolved = {
        "name": raw.get("name", path.stem),
        "scenario_file": str(path),
        "system": copy.deepcopy(raw["system"]),
        "x0": [float(v) for v in x0],
        "horizon_steps": n_steps,
        "templates": copy.deepcopy(tdata),
        "stages": {"learn": learn, "test": test},
        "solver": {**_SOLVER_DEFAULTS, **solver_raw},
        "output_dir": str(out_dir),
    }

    return ScenarioConfig(
        name=resolved["name"],
        system=system,
        x0=x0,
        n_steps=n_steps,
        templates=templates,
        base_formulas=list(base.specs),
        learn_tasks=int(learn["tasks"]),
        learn_seed=int(learn["seed"]),
        test_tasks=int(test["tasks"]),
        test_sigma_levels=[float(s) for s in test["sigma_levels"]],
        test_seed=int(test["seed"]),
        solver=solver,
        output_dir=out_dir,
        initial_controls_spec=_SOLVER_DEFAULTS["initial_controls"]
        if "initial_controls" not in solver_raw else solver_raw["initial_controls"],
        path_vars=list(raw.get("path_vars", [])),
        resolved=resolved,
    )
