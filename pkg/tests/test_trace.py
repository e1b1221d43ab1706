import json

import numpy as np
import pytest

from potnash.trace import PathHistory, SolveTrace, dumps_json, unique_deviator


def test_unique_deviator():
    assert unique_deviator([1, 2, 3], [1, 5, 3]) == 1
    with pytest.raises(ValueError):
        unique_deviator([1, 2], [1, 2])
    with pytest.raises(ValueError):
        unique_deviator([1, 2], [0, 0])
    with pytest.raises(ValueError):
        unique_deviator([1, 2], [1, 2, 3])


def test_path_rejects_multilateral_move():
    path = PathHistory()
    path.append((0, 0), [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        path.append((1, 1), [1.0, 1.0], [0.0, 0.0])


def test_csv_roundtrips_floats_exactly():
    tr = SolveTrace("infinite", 2)
    tr.add_row(phase="initial", x_1=0.1 + 0.2, x_2=1 / 3, y_1=np.float64(2.5), y_2=-0.0, clipped=True)
    line = tr.to_csv().splitlines()[1].split(",")
    cols = tr.columns
    assert float(line[cols.index("x_1")]) == 0.1 + 0.2
    assert float(line[cols.index("x_2")]) == 1 / 3
    assert line[cols.index("clipped")] == "1"
    assert line[cols.index("ei")] == ""


def test_unknown_column_rejected():
    tr = SolveTrace("finite", 2)
    with pytest.raises(KeyError):
        tr.add_row(phase="search", bogus=1)


def test_summary_is_json_serializable(tmp_path):
    tr = SolveTrace("finite", 2, final_profile=(np.int64(3), 4), final_point=np.array([0.5, 1.0]), iterations=3)
    tr.extra["flag"] = np.bool_(True)
    tr.write(tmp_path / "t.csv", tmp_path / "s.json", seed=4)
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["final_profile"] == [3, 4] and s["seed"] == 4 and s["flag"] is True
    assert dumps_json({"b": 1, "a": 2}).index('"a"') < dumps_json({"b": 1, "a": 2}).index('"b"')
