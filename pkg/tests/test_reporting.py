import json
import math

import numpy as np
import pytest

from stlmtl.dynamics import mass_spring_damper, rollout
from stlmtl.reporting import (
    _plain,
    read_controls_csv,
    write_controls_csv,
    write_json,
    write_trajectory_csv,
)


class TestPlain:
    def test_bool_stays_bool(self):
        assert _plain({"ok": np.bool_(True)}) == {"ok": True}
        assert json.dumps(_plain(True)) == "true"

    def test_numpy_scalars_become_python(self):
        out = _plain({"a": np.float64(0.1), "b": np.int64(3)})
        assert type(out["a"]) is float and out["a"] == 0.1
        assert type(out["b"]) is int

    def test_arrays_become_lists(self):
        assert _plain(np.array([1.5, 2.5])) == [1.5, 2.5]

    def test_nonfinite_serialized_as_text(self):
        assert _plain(math.inf) == "inf"
        assert _plain(float("nan")) == "nan"


class TestCsv:
    def test_controls_roundtrip_exact(self, tmp_path):
        sys = mass_spring_damper(1.0, 2.0, 0.2, 0.1)
        rng = np.random.default_rng(0)
        u = rng.normal(size=(20, 1))
        path = tmp_path / "c.csv"
        write_controls_csv(path, u, sys)
        back = read_controls_csv(path, sys)
        assert np.array_equal(back, u)  # repr floats round-trip bit-exactly

    def test_controls_header_mismatch(self, tmp_path):
        sys = mass_spring_damper(1.0, 2.0, 0.2, 0.1)
        path = tmp_path / "c.csv"
        path.write_text("step,thrust\n0,1.0\n")
        with pytest.raises(ValueError, match="do not match"):
            read_controls_csv(path, sys)

    def test_trajectory_shape(self, tmp_path):
        sys = mass_spring_damper(1.0, 2.0, 0.2, 0.1)
        traj = rollout(sys, [0.0, 0.0], np.ones((7, 1)))
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, traj, sys)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1 + 8
        assert lines[0] == "step,t,x1,x2,u1"
        # column count is 2 + n + m on every row
        assert all(len(line.split(",")) == 5 for line in lines[1:])
        assert lines[-1].endswith(",")  # final row carries no control


def test_json_deterministic(tmp_path):
    payload = {"b": [1.0, np.float64(2.25)], "a": {"x": np.int32(1)}}
    p1 = tmp_path / "a.json"
    p2 = tmp_path / "b.json"
    write_json(p1, payload)
    write_json(p2, payload)
    assert p1.read_bytes() == p2.read_bytes()
