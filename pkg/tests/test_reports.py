import json
import math

import numpy as np

from driftlab.reports import ExperimentReport, config_hash, fmt, to_jsonable


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 2.4e-9, -7.0, 1e300):
        assert float(fmt(v)) == v
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(np.int64(3)) == "3" and fmt(None) == ""


def test_to_jsonable():
    out = to_jsonable({"a": np.arange(3), "b": (np.float64(0.5), math.inf), 1: np.bool_(True)})
    assert out == {"a": [0, 1, 2], "b": [0.5, "inf"], "1": True}
    json.dumps(out)


def test_config_hash_stable():
    assert config_hash("x") == config_hash(b"x")
    assert config_hash("x") != config_hash("y")
    assert len(config_hash("")) == 64


def test_experiment_report():
    rep = ExperimentReport("demo", ["n", "value"])
    rep.rows.append({"n": 1, "value": 0.1})
    rep.rows.append({"n": 2, "value": 0.2})
    assert rep.passed
    rep.check("positive", True)
    rep.check("small", False, "value too large")
    assert not rep.passed
    assert rep.to_csv() == "n,value\n1,0.10000000000000001\n2,0.20000000000000001\n"
    np.testing.assert_array_equal(rep.column("n"), [1, 2])
    data = json.loads(rep.to_json())
    assert data["pass"] is False and data["assertions"][1]["detail"] == "value too large"
