"""Command-line interface.

Exit codes: 0 on success (for ``certify``: a certificate was issued and its
level meets ``--delta``), 1 on failure, 2 for usage errors, 3 when ``certify``
refuses or the level misses ``--delta``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ParameterError, StageError
from .experiment import (
    ExperimentConfig,
    emit_figure_data,
    fit,
    generate_data,
    run_pipeline,
    stage_seed,
    validate_solution,
)
from .guarantees import (
    Certificate,
    CertificationRequest,
    certify_cost_bound,
    certify_ocp,
    certify_policy_constraints,
    greedy_support,
)
from .model import make_rng
from .ocp import SolverConfig, constraint_margin, solve, solver_with
from .plant import TruePlant
from .scenario import (
    constant_policy,
    draw_scenarios,
    open_loop_policy,
    output_feedback_policy,
    rollout_policy,
)

log = logging.getLogger("pgocp")

EXIT_REFUSED = 3


def parse_policy(spec: str, n_u=1):
    """``constant:V``, ``open-loop:FILE`` (solution JSON or CSV) or ``feedback:GAIN[,OFFSET]``."""
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return constant_policy(np.full(n_u, float(arg or 0.0)))
    if kind == "open-loop":
        return open_loop_policy(io.read_inputs(arg))
    if kind == "feedback":
        parts = [float(p) for p in arg.split(",")]
        if len(parts) not in (1, 2):
            raise ParameterError("feedback policy takes GAIN or GAIN,OFFSET")
        return output_feedback_policy([[parts[0]]], parts[1] if len(parts) == 2 else 0.0)
    raise ParameterError(f"unknown policy spec {spec!r}")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _problem_spec(path, seed=None):
    d = io.read_toml(path) if str(path).endswith(".toml") else io.load_json(path)
    if seed is not None:
        d = {**d, "seed": seed}
    return io.problem_spec_from_dict(d)


def _scenarios(samples_path, spec):
    samples, last_input = io.read_samples(samples_path)
    tail = io.tail_dataset(last_input, samples.models[0].n_y)
    return samples, tail, draw_scenarios(samples, tail, spec["horizon"], make_rng(spec["seed"]))


def _emit(obj, out):
    if out:
        io.dump_json(obj, out)
    print(json.dumps(obj, sort_keys=True))


def cmd_generate_data(args):
    cfg = _config(args)
    dataset, tail = generate_data(cfg)
    io.write_dataset(dataset, args.out)
    if args.state_out:
        io.dump_json(tail, args.state_out)
    log.info("wrote %d rows to %s", len(dataset), args.out)
    return 0


def cmd_fit(args):
    cfg = _config(args)
    dataset = io.read_dataset(args.data)
    samples = fit(cfg, dataset)
    io.write_samples(samples, dataset, args.out, full_trajectories=args.full_trajectories)
    log.info("wrote %d posterior samples to %s", len(samples), args.out)
    return 0


def cmd_simulate(args):
    spec = _problem_spec(args.problem, args.seed) if args.problem else io.problem_spec_from_dict(
        {"horizon": args.horizon, "seed": args.seed or 0})
    if args.horizon is not None:
        spec["horizon"] = args.horizon
    samples, tail, scen = _scenarios(args.samples, spec)
    policy = parse_policy(args.policy, samples.models[0].n_u)
    rollouts = [rollout_policy(s, policy, tail, spec["cost"]) for s in scen]
    io.write_rollouts(rollouts, args.out)
    log.info("wrote %d rollouts to %s", len(rollouts), args.out)
    return 0


def cmd_solve_ocp(args):
    spec = _problem_spec(args.problem, args.seed)
    _, _, scen = _scenarios(args.samples, spec)
    sol = solve(io.build_problem(spec, scen), SolverConfig())
    io.dump_json(io.solution_record(sol), args.out)
    log.info("objective %.6g, converged %s, KKT residual %.2e",
             sol.objective, sol.converged, sol.kkt_residual)
    return 0 if sol.converged else 1


def _records_digest(path):
    # digest of the sample content, so a reformatted copy of the same samples is caught
    return io.samples_to_digest(io.load_json(path))


def _finish_certificate(cert, args, extra=None):
    out = cert.to_dict()
    if extra:
        out.update(extra)
    _emit(out, args.out)
    if not isinstance(cert, Certificate):
        return EXIT_REFUSED
    if args.delta is not None and not CertificationRequest(cert.K, cert.beta, args.delta).accepts(cert):
        log.warning("certified level %.4g misses delta=%.4g", cert.level, args.delta)
        return EXIT_REFUSED
    return 0


def cmd_certify(args):
    spec = _problem_spec(args.problem, args.seed)
    if args.mode == "ocp":
        samples, _, scen = _scenarios(args.samples, spec)
        problem = io.build_problem(spec, scen)
        sol = solve(problem, SolverConfig())
        if args.solution:
            stored = np.asarray(io.load_json(args.solution)["u_star"], dtype=float)
            dev = float(np.max(np.abs(stored - sol.u_star)))
            if dev > 1e-6:
                raise ParameterError(
                    f"{args.solution} does not solve the problem built from {args.samples} "
                    f"(max deviation {dev:.3e})")
        sup = greedy_support(problem, sol, solver_with(SolverConfig()))
        cert = certify_ocp(sol, sup.support, args.beta)
        return _finish_certificate(cert, args, {"support": sup.support})

    if not args.design_samples:
        raise ParameterError("policy mode needs --design-samples (the samples the policy was built on)")
    if _records_digest(args.design_samples) == _records_digest(args.samples):
        raise ParameterError("certification samples must differ from the design samples")
    samples, tail, scen = _scenarios(args.samples, spec)
    policy = parse_policy(args.policy, samples.models[0].n_u)
    rollouts = [rollout_policy(s, policy, tail, spec["cost"]) for s in scen]
    cost_cert = certify_cost_bound([r.cost for r in rollouts], args.beta)
    if not spec["constraints"]:
        return _finish_certificate(cost_cert, args)
    cert = certify_policy_constraints(
        rollouts, lambda r: constraint_margin(r.outputs, spec["constraints"]), args.beta)
    return _finish_certificate(cert, args, {"cost_bound": cost_cert.to_dict()})


def cmd_validate(args):
    cfg = _config(args)
    spec = _problem_spec(args.problem) if args.problem else io.problem_spec_from_dict(cfg.problem)
    u_star = io.read_inputs(args.solution)
    tail = io.load_json(args.state)
    seed = stage_seed(cfg.seed, "validate") if args.seed is None else args.seed
    report = validate_solution(u_star, TruePlant.from_config(cfg.plant), args.n_rollouts,
                               make_rng(seed), tail["x_last"], tail["u_last"],
                               spec["constraints"], spec["cost"])
    summary = {k: v for k, v in report.items() if k != "example_outputs"}
    if args.out:
        io.dump_json(report, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_reproduce(args):
    cfg = _config(args)
    cert = run_pipeline(cfg, args.out)
    print(json.dumps(cert, sort_keys=True))
    return 0


def cmd_emit_figure_data(args):
    path = emit_figure_data(args.experiment, args.out)
    log.info("wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgocp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="experiment TOML; defaults are used when omitted")
        sp.add_argument("--seed", type=int, help="override the master seed")

    sp = sub.add_parser("generate-data", help="simulate the benchmark plant")
    with_config(sp)
    sp.add_argument("--out", required=True, help="dataset CSV")
    sp.add_argument("--state-out", help="JSON with the true final state, for validate")
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("fit", help="particle Gibbs posterior samples from a dataset")
    sp.add_argument("--data", required=True)
    with_config(sp)
    sp.add_argument("--out", required=True, help="samples JSON")
    sp.add_argument("--full-trajectories", action="store_true",
                    help="store every latent trajectory, not only the final state")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("simulate", help="roll a control law over frozen scenarios")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--policy", required=True,
                    help="constant:V | open-loop:FILE | feedback:GAIN[,OFFSET]")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--problem", help="problem TOML for cost and scenario seed")
    sp.add_argument("--seed", type=int, help="scenario seed")
    sp.add_argument("--out", required=True, help="rollouts CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("solve-ocp", help="solve the scenario OCP")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--problem", required=True)
    sp.add_argument("--seed", type=int, help="override the problem's scenario seed")
    sp.add_argument("--out", required=True, help="solution JSON")
    sp.set_defaults(func=cmd_solve_ocp)

    sp = sub.add_parser("certify", help="issue a probabilistic certificate")
    sp.add_argument("--mode", choices=["policy", "ocp"], required=True)
    sp.add_argument("--samples", required=True, help="samples the certificate is computed on")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--beta", type=float, default=0.01)
    sp.add_argument("--delta", type=float, help="required satisfaction probability")
    sp.add_argument("--support-from", choices=["greedy"], default="greedy")
    sp.add_argument("--solution", help="ocp mode: check this stored solution against the re-solve")
    sp.add_argument("--policy", default="constant:0", help="policy mode: control law spec")
    sp.add_argument("--design-samples", help="policy mode: samples the policy was designed on")
    sp.add_argument("--seed", type=int, help="override the problem's scenario seed")
    sp.add_argument("--out", help="certificate JSON")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("validate", help="apply an input sequence to the true plant")
    sp.add_argument("--solution", required=True, help="solution JSON or inputs CSV")
    sp.add_argument("--state", required=True, help="true final state JSON from generate-data")
    sp.add_argument("--problem", help="problem TOML for constraints and cost")
    sp.add_argument("--n-rollouts", type=int, default=100)
    with_config(sp)
    sp.add_argument("--out", help="report JSON")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("reproduce-v", help="run the whole experiment pipeline")
    with_config(sp)
    sp.add_argument("--out", required=True, help="experiment directory")
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("emit-figure-data", help="figure CSV from an experiment directory")
    sp.add_argument("--experiment", required=True)
    sp.add_argument("--out", help="CSV path (default: <experiment>/figure.csv)")
    sp.set_defaults(func=cmd_emit_figure_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParameterError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2
    except StageError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
