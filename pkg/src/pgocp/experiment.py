"""End-to-end experiment: data, identification, scenario OCP, certificate, validation.

Every stage draws from its own generator, seeded from the master seed and the
stage name, so each artifact is a deterministic function of the config.
"""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .errors import ParameterError, StageError
from .features import ReducedRankGPConfig, known_basis_v5, reduced_rank_gp
from .guarantees import certify_ocp, greedy_support
from .model import (
    Dataset,
    InitialStatePrior,
    MNIWPrior,
    first_state_observation,
    make_rng,
)
from .ocp import SolverConfig, constraint_margin, solve, solver_with
from .pgas import PGConfig, run_pg
from .plant import PlantConfig, TruePlant, simulate_plant_states
from .scenario import draw_scenarios

log = logging.getLogger(__name__)

PRIOR_MISMATCH_NOTE = ("the true system is not a draw from the basis-function prior, "
                       "so the sample-from-prior assumption fails and the level is indicative only")

DEFAULT_PROBLEM = {
    "horizon": 100,
    "cost": {"input_weight": 1.0},
    "constraints": [{"component": 0, "t_start": 40, "t_end": 60, "lower": 2.0}],
    "bounds": {"lower": -5.0, "upper": 5.0},
}


def stage_seed(master: int, stage: str) -> int:
    """64-bit seed for one pipeline stage, stable across runs and platforms."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class BasisConfig:
    kind: str = "known_v5"
    V_scale: float = 2.0  # known_v5 only: V = V_scale * I
    gp: ReducedRankGPConfig = field(default_factory=ReducedRankGPConfig)

    def build(self):
        """``(basis, V)`` for the chosen feature map."""
        if self.kind == "known_v5":
            basis = known_basis_v5()
            return basis, self.V_scale * np.eye(basis.n_a)
        if self.kind == "reduced_rank_gp":
            return reduced_rank_gp(self.gp)
        raise ParameterError(f"unknown basis kind {self.kind!r}")


@dataclass(frozen=True)
class PriorConfig:
    scale: float = 0.3   # IW scale is scale * I
    dof: float = 5.0
    init_Q: float = 0.3  # Q for the first sweep is init_Q * I; A starts at zero


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    pg: PGConfig = field(default_factory=PGConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    problem: dict = field(default_factory=lambda: dict(DEFAULT_PROBLEM))
    solver: SolverConfig = field(default_factory=SolverConfig)
    beta: float = 0.01
    delta: float | None = None
    validation_rollouts: int = 100

    def __post_init__(self):
        if self.plant.n_data < 2:
            raise ParameterError("need at least two data points")
        if self.validation_rollouts < 0:
            raise ParameterError("validation_rollouts must be >= 0")
        if not 0 < self.beta < 1:
            raise ParameterError("beta must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        known = {"seed", "plant", "pg", "prior", "basis", "ocp", "certify", "validate"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config sections: {sorted(unknown)}")
        pg = dict(d.get("pg", {}))
        prior = {k: pg.pop(k) for k in ("prior_scale", "prior_dof", "init_Q") if k in pg}
        prior = PriorConfig(**{k.replace("prior_", ""): v for k, v in prior.items()})
        basis = dict(d.get("basis", {}))
        gp_keys = {f.name for f in fields(ReducedRankGPConfig)}
        gp = ReducedRankGPConfig(**{k: basis.pop(k) for k in list(basis) if k in gp_keys})
        ocp = dict(d.get("ocp", {}))
        solver = SolverConfig(**ocp.pop("solver", {}))
        problem = {**DEFAULT_PROBLEM, **ocp}
        io.problem_spec_from_dict(problem)  # validate early
        cert = d.get("certify", {})
        plant = dict(d.get("plant", {}))
        for k in ("x_start_mean", "process_cov", "x_start"):
            if k in plant and plant[k] is not None:
                v = plant[k]
                plant[k] = tuple(tuple(r) if isinstance(r, list) else r for r in v)
        return cls(seed=int(d.get("seed", 0)), plant=PlantConfig(**plant), pg=PGConfig(**pg),
                   prior=prior, basis=BasisConfig(gp=gp, **basis), problem=problem,
                   solver=solver, beta=float(cert.get("beta", 0.01)), delta=cert.get("delta"),
                   validation_rollouts=int(d.get("validate", {}).get("n_rollouts", 100)))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(io.read_toml(path))

    def to_dict(self) -> dict:
        pg = asdict(self.pg)
        pg.update(prior_scale=self.prior.scale, prior_dof=self.prior.dof, init_Q=self.prior.init_Q)
        basis = {"kind": self.basis.kind, "V_scale": self.basis.V_scale, **asdict(self.basis.gp)}
        plant = {k: v for k, v in asdict(self.plant).items() if v is not None}
        ocp = {**self.problem, "solver": asdict(self.solver)}
        cert = {"beta": self.beta}
        if self.delta is not None:
            cert["delta"] = self.delta
        return {"seed": self.seed, "plant": plant, "pg": pg, "basis": basis, "ocp": ocp,
                "certify": cert, "validate": {"n_rollouts": self.validation_rollouts}}

    # model pieces shared by the CLI stages

    def observation(self):
        return first_state_observation(2, self.plant.measurement_var)

    def initial_state_prior(self):
        return InitialStatePrior(mean=np.asarray(self.plant.x_start_mean, dtype=float),
                                 cov=self.plant.x_start_var * np.eye(2))

    def mniw_prior(self, n_x, V):
        return MNIWPrior(scale=self.prior.scale * np.eye(n_x), dof=self.prior.dof,
                         M=np.zeros((n_x, len(V))), V=V)


def generate_data(config: ExperimentConfig):
    """Simulated dataset plus the true final state and input, for later validation."""
    rng = make_rng(stage_seed(config.seed, "plant"))
    dataset, states = simulate_plant_states(config.plant, rng)
    tail = {"x_last": states[-1].tolist(), "u_last": dataset.inputs[-1].tolist()}
    return dataset, tail


def fit(config: ExperimentConfig, dataset: Dataset, seed=None):
    basis, V = config.basis.build()
    n_x = basis.n_x
    prior = config.mniw_prior(n_x, V)
    init = (np.zeros((n_x, basis.n_a)), config.prior.init_Q * np.eye(n_x))
    rng = make_rng(stage_seed(config.seed, "pg") if seed is None else seed)
    return run_pg(dataset, prior, basis, config.observation(), init, config.pg,
                  config.initial_state_prior(), rng=rng)


def validate_solution(u_star, plant: TruePlant, n_rollouts, rng, x_prev, u_prev,
                      constraints=(), cost=None, tol=1e-8) -> dict:
    """Roll the true plant under ``u_star`` ``n_rollouts`` times from the end of the data window.

    A rollout counts as violating when its constraint margin exceeds ``tol``.
    """
    u = np.asarray(u_star, dtype=float).reshape(-1, 1)
    outputs, costs, margins = [], [], []
    for _ in range(int(n_rollouts)):
        _, y = plant.rollout(np.asarray(x_prev, dtype=float), np.asarray(u_prev, dtype=float), u, rng)
        outputs.append(y)
        if cost is not None:
            costs.append(float(cost.total(u, y)))
        margins.append(constraint_margin(y, constraints) if constraints else -np.inf)
    n = len(outputs)
    violations = int(sum(m > tol for m in margins))
    report = {"n_rollouts": n, "violations": violations,
              "violation_frequency": violations / n if n else None}
    if costs:
        report.update(cost_mean=float(np.mean(costs)), cost_min=float(np.min(costs)),
                      cost_max=float(np.max(costs)))
    if outputs:
        report["example_outputs"] = outputs[0].ravel().tolist()
    return report


class _Stages:
    """Runs named stages, persisting a status file after each one."""

    def __init__(self, out: Path):
        self.out, self.done = out, []

    def run(self, name, fn, *args):
        log.info("stage %s", name)
        try:
            result = fn(*args)
        except Exception as exc:
            io.dump_json({"completed": self.done, "failed": name, "error": repr(exc)},
                         self.out / "status.json")
            raise StageError(name, exc) from exc
        self.done.append(name)
        io.dump_json({"completed": self.done}, self.out / "status.json")
        return result


def run_pipeline(config: ExperimentConfig, out_dir) -> dict:
    """Data, PG fit, scenarios, OCP, greedy support, certificate, validation; returns the certificate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.dump_json(config.to_dict(), out / "config.json")
    st = _Stages(out)

    def data_stage():
        dataset, tail = generate_data(config)
        io.write_dataset(dataset, out / "data.csv")
        io.dump_json(tail, out / "true_state.json")
        return dataset, tail

    dataset, tail = st.run("generate-data", data_stage)

    def fit_stage():
        samples = fit(config, dataset)
        io.write_samples(samples, dataset, out / "samples.json")
        return samples

    samples = st.run("fit", fit_stage)

    spec = io.problem_spec_from_dict({**config.problem, "seed": stage_seed(config.seed, "scenarios")})
    io.dump_json(io.problem_spec_to_dict(spec), out / "problem.json")

    def solve_stage():
        scen = draw_scenarios(samples, dataset, spec["horizon"], make_rng(spec["seed"]))
        problem = io.build_problem(spec, scen)
        sol = solve(problem, config.solver)
        io.dump_json(io.solution_record(sol), out / "solution.json")
        if not sol.converged:
            raise RuntimeError(f"OCP solve did not converge (KKT residual {sol.kkt_residual:.3e})")
        return problem, sol

    problem, sol = st.run("solve-ocp", solve_stage)

    def certify_stage():
        sup = greedy_support(problem, sol, solver_with(config.solver))
        notes = () if config.basis.kind == "known_v5" else (PRIOR_MISMATCH_NOTE,)
        cert = certify_ocp(sol, sup.support, config.beta, notes)
        io.dump_json({"support": sup.support, "verification_deviation": sup.deviation,
                      "probes": [list(p) for p in sup.probes]}, out / "support.json")
        io.dump_json(cert.to_dict(), out / "certificate.json")
        return cert

    cert = st.run("certify", certify_stage)

    def validate_stage():
        plant = TruePlant.from_config(config.plant)
        report = validate_solution(sol.u_star, plant, config.validation_rollouts,
                                   make_rng(stage_seed(config.seed, "validate")),
                                   tail["x_last"], tail["u_last"], spec["constraints"], spec["cost"])
        io.dump_json(report, out / "validation.json")
        return report

    st.run("validate", validate_stage)
    st.run("emit-figure-data", lambda: emit_figure_data(out, out / "figure.csv"))
    return cert.to_dict()


FIGURE_COLUMNS = ["t_control", "y_opt_min", "y_opt_max", "y_mean", "t_all", "y_all"]


def emit_figure_data(exp_dir, out_path=None, n_pre=5) -> Path:
    """Scenario envelope and mean under ``u*`` plus one true-plant rollout, as CSV.

    Rows run over ``t = -n_pre..H``; the control-window columns are blank
    before ``t = 0`` and ``y_all`` holds measured outputs there.
    """
    exp_dir = Path(exp_dir)
    need = ["data.csv", "samples.json", "problem.json", "solution.json", "validation.json"]
    for name in need:
        if not (exp_dir / name).exists():
            raise FileNotFoundError(f"missing artifact {exp_dir / name}")
    dataset = io.read_dataset(exp_dir / "data.csv")
    samples, _ = io.read_samples(exp_dir / "samples.json")
    spec = io.problem_spec_from_dict(io.load_json(exp_dir / "problem.json"))
    u_star = np.asarray(io.load_json(exp_dir / "solution.json")["u_star"], dtype=float)
    report = io.load_json(exp_dir / "validation.json")
    if "example_outputs" not in report:
        raise ParameterError("validation.json holds no rollout (n_rollouts was 0)")

    scen = draw_scenarios(samples, dataset, spec["horizon"], make_rng(spec["seed"]))
    problem = io.build_problem(spec, scen)
    _, y = problem.compiled().batch.rollout(u_star)
    y = y[..., 0]
    H = spec["horizon"]
    pre = dataset.outputs[-n_pre:, 0]
    plant_y = np.asarray(report["example_outputs"], dtype=float)
    out_path = Path(out_path) if out_path is not None else exp_dir / "figure.csv"
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIGURE_COLUMNS)
        for i, t in enumerate(range(-len(pre), H + 1)):
            y_all = pre[i] if t < 0 else plant_y[t]
            if t < 0:
                row = ["", "", "", ""]
            else:
                row = [t, repr(float(y[:, t].min())), repr(float(y[:, t].max())),
                       repr(float(y[:, t].mean()))]
            w.writerow(row + [t, repr(float(y_all))])
    return out_path
