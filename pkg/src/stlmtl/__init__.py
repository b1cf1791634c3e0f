"""Control synthesis under timed logic tasks via smoothed robustness
maximization, with a multi-task learn/warm-start pipeline."""

from .formula import (
    And,
    Always,
    Eventually,
    Formula,
    FormulaError,
    Implies,
    Not,
    Or,
    Predicate,
    TimeInterval,
    TRUE,
    Until,
    WindowError,
    formula_horizon,
    time_to_steps,
)
from .parser import ParseError, parse, pretty_print
from .robustness import (
    HorizonError,
    SmoothConfig,
    Trace,
    boolean_sat,
    eval_exact,
    eval_smooth,
    grad_smooth,
    smooth_analysis,
)
from .dynamics import (
    LinearSystem,
    Trajectory,
    condensed_map,
    lqr_tracking_controls,
    mass_spring_damper,
    quadrotor,
    rollout,
)
from .scp import (
    AverageStop,
    FormulaStop,
    QuadModel,
    ScpConfig,
    ScpResult,
    ScpStallError,
    SmoothObjective,
    SubproblemError,
    linearize_objective,
    scp_run,
    solve_subproblem,
)
from .pipeline import (
    GenerationError,
    LearnResult,
    SlotSpec,
    SpecTemplate,
    StageReport,
    Task,
    TaskRunRecord,
    base_task,
    learning_stage,
    task_generator,
    testing_stage,
)
from .scenario import ScenarioConfig, ScenarioError, load_scenario

__version__ = "0.1.0"
