import numpy as np
import pytest

from pgocp import io
from pgocp.errors import ParameterError
from pgocp.features import KnownBasisV5
from pgocp.model import Dataset, LinearObservation, StateTrajectory, BasisStateSpaceModel, make_rng
from pgocp.pgas import PosteriorSamples
from pgocp.scenario import RolloutResult


def _samples(full=False):
    rng = make_rng(0)
    obs = LinearObservation(C=[[1.0, 0.0]], R=[[0.1]])
    models = [BasisStateSpaceModel(A=rng.standard_normal((2, 5)), Q=np.diag([0.03, 0.01]),
                                   basis=KnownBasisV5(), obs=obs) for _ in range(3)]
    trajs = [StateTrajectory(rng.standard_normal((4, 2))) for _ in range(3)]
    return PosteriorSamples(models, trajs, provenance={"note": "test"})


def test_dataset_round_trip_is_exact(tmp_path):
    rng = make_rng(1)
    ds = Dataset(inputs=rng.standard_normal((7, 1)), outputs=rng.standard_normal((7, 2)))
    io.write_dataset(ds, tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "t,u_1,y_1,y_2"
    back = io.read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.outputs, ds.outputs)


def test_dataset_reader_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,u_1,y_1\n0,1,2\n")
    with pytest.raises(ParameterError):
        io.read_dataset(p)
    p.write_text("t,u_1\n0,1\n")
    with pytest.raises(ParameterError):
        io.read_dataset(p)


def test_samples_round_trip(tmp_path):
    s = _samples()
    ds = Dataset(inputs=[[0.5], [-1.5]], outputs=[[0.0], [0.0]])
    io.write_samples(s, ds, tmp_path / "s.json")
    back, last_u = io.read_samples(tmp_path / "s.json")
    assert len(back) == 3
    np.testing.assert_array_equal(last_u, [-1.5])
    for a, b, ta, tb in zip(s.models, back.models, s.trajectories, back.trajectories):
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.Q, b.Q)
        np.testing.assert_array_equal(ta.last, tb.last)
    assert back.provenance == {"note": "test"}
    d = io.load_json(tmp_path / "s.json")
    assert len(d["records"][0]["A"]) == 10 and d["records"][0]["basis_id"] == "known_v5"


def test_full_trajectories_are_optional(tmp_path):
    ds = Dataset(inputs=[[0.0]] * 4, outputs=[[0.0]] * 4)
    io.write_samples(_samples(), ds, tmp_path / "s.json", full_trajectories=True)
    back, _ = io.read_samples(tmp_path / "s.json")
    assert len(back.trajectories[0]) == 4


def test_sample_digest_ignores_formatting(tmp_path):
    ds = Dataset(inputs=[[0.0]], outputs=[[0.0]])
    d = io.samples_to_dict(_samples(), ds)
    d2 = dict(d, provenance={"other": 1})
    assert io.samples_to_digest(d) == io.samples_to_digest(d2)
    d3 = io.samples_to_dict(_samples(), ds)
    d3["records"][0]["A"][0] += 1e-9
    assert io.samples_to_digest(d) != io.samples_to_digest(d3)


def test_unknown_samples_format():
    with pytest.raises(ParameterError):
        io.samples_from_dict({"format": "other"})


def test_problem_spec_round_trip():
    spec = io.problem_spec_from_dict({
        "horizon": 20, "seed": 4, "cost": {"input_weight": 2.0},
        "constraints": [{"component": 0, "t_start": 3, "t_end": 5, "lower": 1.0}],
        "bounds": {"lower": -1.0, "upper": 1.0}})
    again = io.problem_spec_from_dict(io.problem_spec_to_dict(spec))
    assert again["horizon"] == 20 and again["seed"] == 4
    assert again["constraints"] == spec["constraints"]
    assert again["bounds"] == spec["bounds"] and again["cost"] == spec["cost"]


def test_problem_toml_defaults(tmp_path):
    p = tmp_path / "p.toml"
    p.write_text("horizon = 5\n")
    spec = io.problem_spec_from_dict(io.read_toml(p))
    assert spec["constraints"] == [] and spec["bounds"].upper == np.inf


def test_read_inputs_from_csv_and_json(tmp_path):
    (tmp_path / "u.csv").write_text("t,u_1\n0,0.5\n1,-1.0\n")
    np.testing.assert_array_equal(io.read_inputs(tmp_path / "u.csv"), [[0.5], [-1.0]])
    io.dump_json({"u_star": [[1.0], [2.0]]}, tmp_path / "s.json")
    np.testing.assert_array_equal(io.read_inputs(tmp_path / "s.json"), [[1.0], [2.0]])


def test_rollouts_csv(tmp_path):
    r = RolloutResult(inputs=np.zeros((3, 1)), outputs=np.ones((3, 1)), states=np.zeros((4, 2)),
                      cost=0.0)
    io.write_rollouts([r, r], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "scenario,t,u_1,y_1,cost" and len(lines) == 7


def test_json_is_deterministic(tmp_path):
    io.dump_json({"b": 1.0, "a": [0.1, 2]}, tmp_path / "x.json")
    io.dump_json({"a": [0.1, 2], "b": 1.0}, tmp_path / "y.json")
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()
