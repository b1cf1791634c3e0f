from pathlib import Path

import numpy as np
import pytest

from stlmtl.scenario import ScenarioError, load_scenario

REPO = Path(__file__).resolve().parent.parent


class TestShippedScenarios:
    def test_msd_loads(self):
        cfg = load_scenario(REPO / "scenarios" / "msd.yaml")
        assert cfg.system.n == 2
        assert cfg.n_steps == 300
        assert len(cfg.templates) == 5
        assert cfg.learn_tasks == 25
        assert cfg.test_sigma_levels == [2.5, 3.5]

    def test_atc_loads(self):
        cfg = load_scenario(REPO / "scenarios" / "atc.yaml")
        assert cfg.system.n == 6
        assert cfg.n_steps == 10
        assert len(cfg.templates) == 7
        # temporal parameters are unperturbed in this scenario
        for t in cfg.templates:
            assert t.ta.sigma == 0.0 and t.tb.sigma == 0.0

    def test_atc_test_levels_shift_positions_only(self):
        cfg = load_scenario(REPO / "scenarios" / "atc.yaml")
        lv = cfg.templates_for_level(0.6)
        way = next(t for t in lv if t.name == "way-point")
        assert way.spatial["px"].sigma == 0.6
        assert way.spatial["py"].sigma == 0.6
        assert way.spatial["pz"].sigma == 0.0
        assert way.spatial["c"].sigma == 0.3  # radius keeps the learning spread
        cyl = next(t for t in lv if t.name == "no-fly-cylinder")
        assert cyl.spatial["c"].sigma == 0.3


class TestValidation:
    def write(self, tmp_path, text):
        p = tmp_path / "s.yaml"
        p.write_text(text)
        return p

    def test_missing_system(self, tmp_path):
        p = self.write(tmp_path, "name: x\nx0: [0]\nhorizon_steps: 5\ntemplates: []\n")
        with pytest.raises(ScenarioError):
            load_scenario(p)

    def test_x0_dimension_checked(self, tmp_path):
        p = self.write(tmp_path, """
system: {builtin: mass_spring_damper}
x0: [0.0]
horizon_steps: 5
templates:
  - pattern: "F[{ta},{tb}](x1 >= 0)"
    ta: {nominal: 0.0}
    tb: {nominal: 0.4}
""")
        with pytest.raises(ScenarioError, match="x0"):
            load_scenario(p)

    def test_base_task_mismatch_detected(self, tmp_path):
        p = self.write(tmp_path, """
system: {builtin: mass_spring_damper}
x0: [0.0, 0.0]
horizon_steps: 20
base_task: ["F[0,1](x1 >= 99)"]
templates:
  - pattern: "F[{ta},{tb}](x1 >= {c})"
    ta: {nominal: 0.0}
    tb: {nominal: 1.0}
    c: {nominal: 0.3}
""")
        with pytest.raises(ScenarioError, match="does not match"):
            load_scenario(p)

    def test_unknown_solver_key(self, tmp_path):
        p = self.write(tmp_path, """
system: {builtin: mass_spring_damper}
x0: [0.0, 0.0]
horizon_steps: 20
templates:
  - pattern: "F[{ta},{tb}](x1 >= {c})"
    ta: {nominal: 0.0}
    tb: {nominal: 1.0}
    c: {nominal: 0.3}
solver: {newton_tol: 1e-3}
""")
        with pytest.raises(ScenarioError, match="unknown solver"):
            load_scenario(p)

    def test_raw_system(self, tmp_path):
        p = self.write(tmp_path, """
system:
  raw:
    A: [[1.0, 0.1], [0.0, 1.0]]
    B: [[0.0], [0.1]]
    dt: 0.1
    state_names: [pos, vel]
x0: [0.0, 0.0]
horizon_steps: 20
templates:
  - pattern: "F[{ta},{tb}](pos >= {c})"
    ta: {nominal: 0.0}
    tb: {nominal: 1.0}
    c: {nominal: 0.1}
""")
        cfg = load_scenario(p)
        assert cfg.system.var_names == ("pos", "vel")

    def test_seed_override_reflected_in_resolved(self, tmp_path):
        p = self.write(tmp_path, """
system: {builtin: mass_spring_damper}
x0: [0.0, 0.0]
horizon_steps: 20
templates:
  - pattern: "F[{ta},{tb}](x1 >= {c})"
    ta: {nominal: 0.0}
    tb: {nominal: 1.0}
    c: {nominal: 0.3}
""")
        cfg = load_scenario(p, seed_override=777)
        assert cfg.learn_seed == 777 and cfg.test_seed == 777
        assert cfg.resolved["stages"]["learn"]["seed"] == 777
