"""File formats: dataset CSV, posterior-sample JSON, OCP problem TOML, result JSON."""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .features import basis_from_dict
from .model import BasisStateSpaceModel, Dataset, LinearObservation, StateTrajectory
from .ocp import InputBounds, OutputConstraint, ScenarioOCP
from .pgas import PosteriorSamples
from .scenario import QuadraticCost

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SAMPLES_FORMAT = "pgocp-posterior-samples/1"


def read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def dump_json(obj, path):
    """Deterministic JSON: sorted keys, shortest round-trip floats, trailing newline."""
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# dataset CSV

def write_dataset(dataset: Dataset, path):
    header = (["t"] + [f"u_{i + 1}" for i in range(dataset.n_u)]
              + [f"y_{i + 1}" for i in range(dataset.n_y)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, u, y in zip(dataset.times, dataset.inputs, dataset.outputs):
            w.writerow([int(t)] + [repr(float(v)) for v in u] + [repr(float(v)) for v in y])


def read_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: empty dataset file")
    header = rows[0]
    if not header or header[0] != "t":
        raise ParameterError(f"{path}: first column must be 't'")
    u_cols = [i for i, h in enumerate(header) if h.startswith("u_")]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not u_cols or not y_cols:
        raise ParameterError(f"{path}: need u_* and y_* columns")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        raise ParameterError(f"{path}: no data rows")
    return Dataset(inputs=data[:, u_cols], outputs=data[:, y_cols])


# posterior samples JSON

def samples_to_dict(samples: PosteriorSamples, dataset: Dataset, full_trajectories=False) -> dict:
    """Records hold ``A`` and ``Q`` row-major; the final latent state is always kept."""
    first = samples.models[0]
    records = []
    for model, traj in zip(samples.models, samples.trajectories):
        rec = {"A": model.A.ravel().tolist(), "Q": model.Q.ravel().tolist(),
               "basis_id": first.basis.basis_id, "x_last": traj.last.tolist()}
        if full_trajectories:
            rec["trajectory"] = traj.states.tolist()
        records.append(rec)
    return {"format": SAMPLES_FORMAT, "n_x": first.n_x, "n_a": first.n_a,
            "basis": first.basis.to_dict(), "observation": first.obs.to_dict(),
            "last_input": dataset.inputs[-1].tolist(), "provenance": samples.provenance,
            "records": records}


def write_samples(samples, dataset, path, full_trajectories=False):
    dump_json(samples_to_dict(samples, dataset, full_trajectories), path)


def samples_from_dict(d):
    """Returns ``(PosteriorSamples, last_input)``; ``last_input`` is ``u_{-1}`` of the data window."""
    if d.get("format") != SAMPLES_FORMAT:
        raise ParameterError(f"unsupported samples format {d.get('format')!r}")
    basis, _ = basis_from_dict(d["basis"])
    obs = LinearObservation.from_dict(d["observation"])
    n_x, n_a = d["n_x"], d["n_a"]
    models, trajs = [], []
    for rec in d["records"]:
        if rec["basis_id"] != basis.basis_id:
            raise ParameterError("sample record basis does not match the file's basis")
        A = np.asarray(rec["A"], dtype=float).reshape(n_x, n_a)
        Q = np.asarray(rec["Q"], dtype=float).reshape(n_x, n_x)
        models.append(BasisStateSpaceModel(A=A, Q=Q, basis=basis, obs=obs))
        states = rec.get("trajectory") or [rec["x_last"]]
        trajs.append(StateTrajectory(np.asarray(states, dtype=float)))
    samples = PosteriorSamples(models=models, trajectories=trajs,
                               provenance=d.get("provenance", {}))
    return samples, np.asarray(d["last_input"], dtype=float)


def samples_to_digest(d) -> str:
    """Digest of the sampled content (A, Q, final state), independent of formatting."""
    h = hashlib.sha256()
    for rec in d["records"]:
        for key in ("A", "Q", "x_last"):
            h.update(np.asarray(rec[key], dtype=float).tobytes())
    return h.hexdigest()


def read_samples(path):
    return samples_from_dict(load_json(path))


def tail_dataset(last_input, n_y) -> Dataset:
    """One-row stand-in for the data window when only ``u_{-1}`` is needed."""
    u = np.atleast_2d(np.asarray(last_input, dtype=float))
    return Dataset(inputs=u, outputs=np.zeros((1, n_y)))


# OCP problem TOML

def problem_spec_from_dict(d) -> dict:
    """Normalise a problem table (horizon, cost, constraints, bounds, seed) with defaults."""
    cost = QuadraticCost(**d.get("cost", {}))
    cons = [OutputConstraint(component=int(c.get("component", 0)), t_start=int(c["t_start"]),
                             t_end=int(c["t_end"]), lower=c.get("lower"), upper=c.get("upper"))
            for c in d.get("constraints", [])]
    b = d.get("bounds", {})
    bounds = InputBounds(lower=float(b.get("lower", -np.inf)), upper=float(b.get("upper", np.inf)))
    horizon = int(d.get("horizon", 100))
    if horizon < 0:
        raise ParameterError("horizon must be non-negative")
    return {"horizon": horizon, "cost": cost, "constraints": cons, "bounds": bounds,
            "seed": int(d.get("seed", 0))}


def problem_spec_to_dict(spec) -> dict:
    b = spec["bounds"]
    out = {"horizon": spec["horizon"], "cost": spec["cost"].to_dict(), "seed": spec["seed"],
           "constraints": [{k: v for k, v in vars(c).items() if v is not None}
                           for c in spec["constraints"]]}
    bounds = {k: v for k, v in (("lower", b.lower), ("upper", b.upper)) if np.isfinite(v)}
    if bounds:
        out["bounds"] = bounds
    return out


def build_problem(spec, scenarios) -> ScenarioOCP:
    return ScenarioOCP(scenarios, spec["cost"], spec["constraints"], spec["bounds"],
                       horizon=spec["horizon"])


# results

def solution_record(solution, extra=None) -> dict:
    d = solution.to_dict()
    if extra:
        d.update(extra)
    return d


def read_inputs(path) -> np.ndarray:
    """Input sequence from a solution JSON (``u_star``) or a CSV with ``u_*`` columns."""
    path = Path(path)
    if path.suffix == ".json":
        return np.asarray(load_json(path)["u_star"], dtype=float)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = [i for i, h in enumerate(rows[0]) if h.startswith("u_")]
    if not cols:
        raise ParameterError(f"{path}: no u_* columns")
    return np.array([[float(r[i]) for i in cols] for r in rows[1:] if r])


def write_rollouts(rollouts, path):
    """Long-format CSV ``scenario,t,u_*,y_*,cost`` (cost repeated per row)."""
    first = rollouts[0]
    n_u, n_y = first.inputs.shape[1], first.outputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "t"] + [f"u_{i + 1}" for i in range(n_u)]
                   + [f"y_{i + 1}" for i in range(n_y)] + ["cost"])
        for k, r in enumerate(rollouts):
            for t in range(len(r.inputs)):
                w.writerow([k, t] + [repr(float(v)) for v in r.inputs[t]]
                           + [repr(float(v)) for v in r.outputs[t]] + [repr(r.cost)])
