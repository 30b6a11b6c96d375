"""Command-line front end: JSON configs in, deterministic artifacts out.

``solve`` runs the full pipeline for one scenario and writes
``report.json``, ``dual_trace.csv``, and one policy or plan file per
mixture component. ``validate`` rebuilds the problem from the config,
re-evaluates the saved components from their dumped files, and re-runs
the optimality checks and Monte Carlo. ``sweep`` samples the dual
function on a multiplier grid for plotting.

Exit codes: 0 success, 1 infeasible problem or failed validation,
2 invalid config or usage. Reports are byte-identical across repeated
runs with the same config and seed; the measured wall time would break
that, so it goes to stderr and the report carries a null placeholder.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ccmdp import Mdp, Policy, simulate
from .core import (
    Bounds,
    CostVector,
    DualVector,
    InfeasibleProblemError,
    InvalidInputError,
    LagrangianOracle,
    MixedControlError,
    MixedSolution,
    PureCandidate,
    lagrangian_value,
    mix_costs,
    wilson_ci_99,
)
from .dual import ScalarSolveConfig, check_optimality, solve_mixed_scalar
from .scenarios import (
    EdlScenario,
    FiniteSetOracle,
    GridScenario,
    edl_oracle,
    grid_oracle,
    parse_grid_map,
)
from .smpc import (
    ControlPlan,
    Obstacle,
    SmpcModel,
    SmpcOracle,
    build_pwl_cdf,
    estimate_mixture_risk_mc,
)

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("iteration", "lambda", "c0", "c1", "lagrangian_value")

_REQUIRED_KEYS = {
    "toy": ("policies", "risk_bound"),
    "grid": ("map", "horizon", "max_step", "sigma", "risk_bound"),
    "edl": ("map", "stages", "ellipsoids", "sigmas", "risk_bound"),
    "smpc": (
        "a",
        "b",
        "sigma_w",
        "horizon",
        "x_init",
        "x_goal",
        "u_lower",
        "u_upper",
        "obstacles",
        "risk_bound",
    ),
}


def load_config(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise InvalidInputError("config root must be a JSON object")
    if config.get("schema") != SCHEMA_VERSION:
        raise InvalidInputError(
            f"config schema must be {SCHEMA_VERSION}, got {config.get('schema')!r}"
        )
    kind = config.get("kind")
    if kind not in _REQUIRED_KEYS:
        raise InvalidInputError(f"unknown scenario kind {kind!r}")
    missing = [key for key in _REQUIRED_KEYS[kind] if key not in config]
    if missing:
        raise InvalidInputError(f"{kind} config is missing: {', '.join(missing)}")
    return config


@dataclass
class RunSetup:
    """Oracle plus whatever backend objects the reporting code needs."""

    kind: str
    oracle: LagrangianOracle
    bounds: Bounds
    mdp: Mdp | None = None
    model: SmpcModel | None = None


def _read_map(config: dict, base_dir: Path):
    rel = config["map"]
    if not isinstance(rel, str):
        raise InvalidInputError("map must be a relative path string")
    path = base_dir / rel
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read map {path}: {exc}") from exc
    return parse_grid_map(text)


def _single_marker(markers: dict, char: str) -> tuple[int, int]:
    cells = markers.get(char, [])
    if len(cells) != 1:
        raise InvalidInputError(
            f"map must contain exactly one '{char}' marker, found {len(cells)}"
        )
    return cells[0]


def _build_toy(config: dict, base_dir: Path) -> RunSetup:
    policies = config["policies"]
    if not isinstance(policies, list) or not policies:
        raise InvalidInputError("policies must be a non-empty list of [cost, risk] pairs")
    costs = []
    for entry in policies:
        if not isinstance(entry, list) or len(entry) != 2:
            raise InvalidInputError(f"policy entry {entry!r} is not a [cost, risk] pair")
        costs.append(CostVector(float(entry[0]), (float(entry[1]),)))
    bounds = Bounds((float(config["risk_bound"]),))
    return RunSetup("toy", FiniteSetOracle(costs, bounds), bounds)


def _build_grid(config: dict, base_dir: Path) -> RunSetup:
    feasible, markers = _read_map(config, base_dir)
    width, height = feasible.shape
    obstacles = frozenset(
        (x, y) for x in range(width) for y in range(height) if not feasible[x, y]
    )
    miss = config.get("miss_penalty")
    scn = GridScenario(
        width=width,
        height=height,
        horizon=int(config["horizon"]),
        start=_single_marker(markers, "S"),
        goal=_single_marker(markers, "G"),
        obstacles=obstacles,
        max_step=int(config["max_step"]),
        sigma=float(config["sigma"]),
        risk_bound=float(config["risk_bound"]),
        miss_penalty=None if miss is None else float(miss),
    )
    oracle = grid_oracle(scn)
    return RunSetup("grid", oracle, Bounds((scn.risk_bound,)), mdp=oracle.mdp)


def _build_edl(config: dict, base_dir: Path) -> RunSetup:
    feasible, markers = _read_map(config, base_dir)
    ellipsoids = tuple(
        (np.asarray(e["matrix"], dtype=float), float(e["radius"]))
        for e in config["ellipsoids"]
    )
    sigmas = tuple((float(sx), float(sy)) for sx, sy in config["sigmas"])
    unreachable = config.get("unreachable_cost")
    scn = EdlScenario(
        width=feasible.shape[0],
        height=feasible.shape[1],
        stages=int(config["stages"]),
        start=_single_marker(markers, "S"),
        feasible=feasible,
        ellipsoids=ellipsoids,
        sigmas=sigmas,
        sites=(_single_marker(markers, "A"), _single_marker(markers, "B")),
        risk_bound=float(config["risk_bound"]),
        unreachable_cost=None if unreachable is None else float(unreachable),
    )
    oracle = edl_oracle(scn)
    return RunSetup("edl", oracle, Bounds((scn.risk_bound,)), mdp=oracle.mdp)


def _build_smpc(config: dict, base_dir: Path) -> RunSetup:
    obstacles = tuple(
        Obstacle(entry["normals"], entry["offsets"]) for entry in config["obstacles"]
    )
    model = SmpcModel(
        a_mat=config["a"],
        b_mat=config["b"],
        sigma_w=config["sigma_w"],
        horizon=int(config["horizon"]),
        x_init=config["x_init"],
        x_goal=config["x_goal"],
        u_lower=config["u_lower"],
        u_upper=config["u_upper"],
        obstacles=obstacles,
    )
    oracle = SmpcOracle(
        model,
        build_pwl_cdf(int(config.get("pwl_segments", 24))),
        milp_gap=float(config.get("milp_gap", 1e-9)),
        max_nodes=int(config.get("max_nodes", 200_000)),
    )
    return RunSetup("smpc", oracle, Bounds((float(config["risk_bound"]),)), model=model)


_BUILDERS = {
    "toy": _build_toy,
    "grid": _build_grid,
    "edl": _build_edl,
    "smpc": _build_smpc,
}


def build_setup(config: dict, base_dir: Path) -> RunSetup:
    builder = _BUILDERS[config["kind"]]
    try:
        return builder(config, base_dir)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad {config['kind']} config: {exc}") from exc


class _TracingOracle(LagrangianOracle):
    """Pass-through wrapper recording one trace row per multiplier query."""

    def __init__(self, inner: LagrangianOracle, bounds: Bounds):
        self.inner = inner
        self.bounds = bounds
        self.rows: list[tuple[int, float, float, float, float]] = []

    @property
    def k_constraints(self) -> int:
        return self.inner.k_constraints

    def query(self, lam: DualVector) -> PureCandidate:
        cand = self.inner.query(lam)
        self.rows.append(
            (
                len(self.rows),
                lam.values[0],
                cand.cost.c0,
                cand.cost.c1,
                lagrangian_value(cand.cost, lam, self.bounds),
            )
        )
        return cand

    def evaluate(self, policy: object) -> CostVector:
        return self.inner.evaluate(policy)


def _solver_config(config: dict, args: argparse.Namespace) -> ScalarSolveConfig:
    section = dict(config.get("solver", {}))
    unknown = set(section) - {"lambda_max", "tol_lambda", "tol_risk", "max_iter"}
    if unknown:
        raise InvalidInputError(f"unknown solver options: {', '.join(sorted(unknown))}")
    if args.tol_lambda is not None:
        section["tol_lambda"] = args.tol_lambda
    if args.tol_risk is not None:
        section["tol_risk"] = args.tol_risk
    if "max_iter" in section:
        section["max_iter"] = int(section["max_iter"])
    return ScalarSolveConfig(**{k: float(v) if k != "max_iter" else v for k, v in section.items()})


def _mc_settings(config: dict, args: argparse.Namespace) -> tuple[int, int]:
    section = config.get("monte_carlo", {})
    seed = int(section.get("seed", 0))
    n = int(section.get("n", 100_000))
    if args.seed is not None:
        seed = args.seed
    if n < 1:
        raise InvalidInputError("monte_carlo.n must be at least 1")
    return seed, n


def _run_monte_carlo(setup: RunSetup, solution: MixedSolution, seed: int, n: int) -> dict:
    if setup.kind in ("grid", "edl"):
        summary = simulate(setup.mdp, solution, seed, n)
        return {
            "seed": seed,
            "n": summary.n_rollouts,
            "cost_mean": summary.cost_mean,
            "failure_rate": summary.failure_rate,
            "ci99": list(summary.failure_ci99),
        }
    if setup.kind == "smpc":
        est = estimate_mixture_risk_mc(setup.model, solution, n, seed)
        return {
            "seed": seed,
            "n": est.n_rollouts,
            "failure_rate": est.rate,
            "ci99": list(est.ci99),
        }
    # Finite-set backend: draw a component per rollout, then a Bernoulli
    # failure at that component's exact risk.
    rng = np.random.default_rng(seed)
    weights = np.array(solution.probabilities)
    comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
    costs = np.array([cand.cost.c0 for cand, _ in solution.components])
    risks = np.array([cand.cost.c1 for cand, _ in solution.components])
    failures = int((rng.random(n) < risks[comp]).sum())
    lo, hi = wilson_ci_99(failures, n)
    return {
        "seed": seed,
        "n": n,
        "cost_mean": float(costs[comp].mean()),
        "failure_rate": failures / n,
        "ci99": [lo, hi],
    }


def _component_file(kind: str, index: int) -> str:
    return f"plan_{index}.csv" if kind == "smpc" else f"policy_{index}.csv"


def _dump_policy(policy: Policy, path: Path) -> None:
    lines = ["step,state,action"]
    for step, actions in enumerate(policy.actions):
        for state in np.flatnonzero(actions >= 0):
            lines.append(f"{step},{int(state)},{int(actions[state])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_policy(path: Path, mdp: Mdp) -> Policy:
    actions = [np.full(count, -1, dtype=int) for count in mdp.state_counts[:-1]]
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "step,state,action":
        raise InvalidInputError(f"{path} is not a policy table")
    for line in lines[1:]:
        try:
            step, state, action = (int(v) for v in line.split(","))
        except ValueError as exc:
            raise InvalidInputError(f"{path} has a bad row {line!r}") from exc
        if not 0 <= step < mdp.horizon or not 0 <= state < mdp.state_counts[step]:
            raise InvalidInputError(f"{path} references step {step}, state {state}")
        if not 0 <= action < mdp.stage_costs[step].shape[1]:
            raise InvalidInputError(f"{path} references action {action} at step {step}")
        actions[step][state] = action
    return Policy(tuple(actions))


def _dump_plan(controls: np.ndarray, path: Path) -> None:
    header = ",".join(f"u{j}" for j in range(controls.shape[1]))
    lines = [header]
    for row in controls:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_plan(path: Path, model: SmpcModel) -> np.ndarray:
    lines = path.read_text(encoding="utf-8").splitlines()
    try:
        rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
        controls = np.array(rows, dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path} is not a control plan table") from exc
    if controls.shape != (model.horizon, model.dim_u):
        raise InvalidInputError(
            f"{path} has shape {controls.shape}, expected {(model.horizon, model.dim_u)}"
        )
    return controls


def _dump_component(setup: RunSetup, policy: object, path: Path) -> None:
    if setup.kind == "smpc":
        _dump_plan(policy.controls, path)
    else:
        _dump_policy(policy, path)


def _load_component(setup: RunSetup, ref: object, out_dir: Path) -> object:
    if setup.kind == "toy":
        try:
            return int(ref)
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad policy index {ref!r} in report") from exc
    if not isinstance(ref, str):
        raise InvalidInputError(f"component policy reference {ref!r} is not a file name")
    path = out_dir / ref
    if setup.kind == "smpc":
        controls = _load_plan(path, setup.model)
        return ControlPlan(controls, None, 0.0, 0.0)
    return _load_policy(path, setup.mdp)


def _write_trace(path: Path, rows: Sequence[tuple[int, float, float, float, float]]) -> None:
    lines = [",".join(TRACE_COLUMNS)]
    for it, lam, c0, c1, value in rows:
        lines.append(f"{it},{lam!r},{c0!r},{c1!r},{value!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_solve(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    config = load_config(config_path)
    setup = build_setup(config, config_path.parent)
    solver_cfg = _solver_config(config, args)
    seed, n_rollouts = _mc_settings(config, args)

    started = time.perf_counter()
    tracer = _TracingOracle(setup.oracle, setup.bounds)
    result, solution = solve_mixed_scalar(tracer, setup.bounds, solver_cfg)
    optimality = check_optimality(solution, setup.bounds, setup.oracle, tol=1e-6)
    monte_carlo = _run_monte_carlo(setup, solution, seed, n_rollouts)
    wall = time.perf_counter() - started

    # Output gate: randomizing can only help, so a mixture costlier than
    # the best pure candidate means something upstream went wrong.
    if solution.aggregate.c0 > result.upper.cost.c0 + 1e-9:
        raise MixedControlError(
            "mixed cost exceeds the pure upper bound; refusing to write the report"
        )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    components = []
    pure_ref: object = None
    for i, (cand, weight) in enumerate(solution.components):
        if setup.kind == "toy":
            ref: object = int(cand.policy)
        else:
            ref = _component_file(setup.kind, i)
            _dump_component(setup, cand.policy, out_dir / ref)
        if cand.cost == result.upper.cost:
            pure_ref = ref
        components.append(
            {
                "policy": ref,
                "probability": weight,
                "cost": cand.cost.c0,
                "risk": cand.cost.c1,
            }
        )
    if pure_ref is None:
        # The safe bisection endpoint did not survive into the mixture;
        # dump it separately so the report's pure solution stays loadable.
        if setup.kind == "toy":
            pure_ref = int(result.upper.policy)
        else:
            pure_ref = "policy_pure.csv" if setup.kind != "smpc" else "plan_pure.csv"
            _dump_component(setup, result.upper.policy, out_dir / pure_ref)

    report = {
        "schema": SCHEMA_VERSION,
        "kind": setup.kind,
        "risk_bound": setup.bounds.values[0],
        "pure": {
            "policy": pure_ref,
            "cost": result.upper.cost.c0,
            "risk": result.upper.cost.c1,
        },
        "mixed": {
            "components": components,
            "aggregate": {"cost": solution.aggregate.c0, "risk": solution.aggregate.c1},
            "gap_estimate": solution.gap_estimate,
        },
        "dual": {
            "lambda_star": result.lambda_star,
            "q_star": result.q_star,
            "iterations": result.iterations,
            "converged": result.converged,
        },
        "optimality": {
            "overall": optimality.overall,
            "conditions": optimality.conditions,
            "residuals": optimality.residuals,
        },
        "monte_carlo": monte_carlo,
        "wall_time_s": None,
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_trace(out_dir / "dual_trace.csv", tracer.rows)
    print(
        f"solve {setup.kind}: lambda*={result.lambda_star:.6g} "
        f"aggregate=({solution.aggregate.c0:.6g}, {solution.aggregate.c1:.6g}) "
        f"components={len(components)} wall={wall:.3f}s -> {out_dir}",
        file=sys.stderr,
    )
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    config = load_config(config_path)
    setup = build_setup(config, config_path.parent)
    out_dir = Path(args.out)
    report_path = out_dir / "report.json"
    try:
        report = json.loads(report_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidInputError(f"cannot read report {report_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{report_path} is not valid JSON: {exc}") from exc

    try:
        saved_components = report["mixed"]["components"]
        lambda_star = float(report["dual"]["lambda_star"])
        gap = float(report["mixed"]["gap_estimate"])
        saved_cost = float(report["mixed"]["aggregate"]["cost"])
        saved_risk = float(report["mixed"]["aggregate"]["risk"])
        saved_mc = report["monte_carlo"]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"report is missing field {exc}") from exc

    components = []
    for entry in saved_components:
        policy = _load_component(setup, entry["policy"], out_dir)
        cost = setup.oracle.evaluate(policy)
        components.append((PureCandidate(policy, cost), float(entry["probability"])))
    aggregate = mix_costs([(cand.cost, w) for cand, w in components])
    solution = MixedSolution(
        tuple(components), aggregate, DualVector((lambda_star,)), gap
    )

    failures = []
    optimality = check_optimality(solution, setup.bounds, setup.oracle, tol=1e-6)
    if not optimality.overall:
        failed = sorted(k for k, ok in optimality.conditions.items() if not ok)
        failures.append(f"optimality conditions failed: {', '.join(failed)}")
    if abs(aggregate.c0 - saved_cost) > 1e-9:
        failures.append(
            f"re-evaluated aggregate cost {aggregate.c0!r} differs from saved {saved_cost!r}"
        )
    if abs(aggregate.c1 - saved_risk) > 1e-9:
        failures.append(
            f"re-evaluated aggregate risk {aggregate.c1!r} differs from saved {saved_risk!r}"
        )

    seed = int(saved_mc["seed"]) if args.seed is None else args.seed
    n_rollouts = int(saved_mc["n"])
    monte_carlo = _run_monte_carlo(setup, solution, seed, n_rollouts)
    if seed == int(saved_mc["seed"]):
        if abs(monte_carlo["failure_rate"] - float(saved_mc["failure_rate"])) > 1e-12:
            failures.append(
                f"replayed failure rate {monte_carlo['failure_rate']!r} differs "
                f"from saved {saved_mc['failure_rate']!r}"
            )
    lo, hi = monte_carlo["ci99"]
    if setup.kind == "smpc":
        # The reported risk is an upper bound, so only a rate whose whole
        # interval clears it signals trouble.
        if lo > aggregate.c1:
            failures.append(
                f"violation rate CI ({lo:.6g}, {hi:.6g}) sits above the bound {aggregate.c1:.6g}"
            )
    elif not lo <= aggregate.c1 <= hi:
        failures.append(
            f"exact risk {aggregate.c1:.6g} outside the simulated CI ({lo:.6g}, {hi:.6g})"
        )

    if failures:
        for line in failures:
            print(f"validate: {line}", file=sys.stderr)
        return 1
    print(
        f"validate {setup.kind}: optimality ok, aggregate matches, "
        f"failure rate {monte_carlo['failure_rate']:.6g} in CI ({lo:.6g}, {hi:.6g})",
        file=sys.stderr,
    )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    config = load_config(config_path)
    setup = build_setup(config, config_path.parent)
    section = config.get("sweep", {})
    lam_min = float(section.get("lambda_min", 0.0))
    lam_max = float(section.get("lambda_max", 2000.0))
    points = int(section.get("points", 21))
    if lam_min < 0 or lam_max <= lam_min or points < 2:
        raise InvalidInputError("sweep needs 0 <= lambda_min < lambda_max and points >= 2")

    rows = []
    for i, lam in enumerate(np.linspace(lam_min, lam_max, points)):
        vec = DualVector((float(lam),))
        cand = setup.oracle.query(vec)
        rows.append(
            (
                i,
                float(lam),
                cand.cost.c0,
                cand.cost.c1,
                lagrangian_value(cand.cost, vec, setup.bounds),
            )
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trace(out_dir / "sweep.csv", rows)
    best = max(rows, key=lambda r: r[4])
    print(
        f"sweep {setup.kind}: {points} samples on [{lam_min:g}, {lam_max:g}], "
        f"best dual value {best[4]:.6g} at lambda={best[1]:g} -> {out_dir}",
        file=sys.stderr,
    )
    return 0


def _check_thread_cap() -> None:
    raw = os.environ.get("MIXEDCTRL_THREADS")
    if raw is None:
        return
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise InvalidInputError(
            f"MIXEDCTRL_THREADS must be a positive integer, got {raw!r}"
        )
    # Every solver in this package runs sequentially, so any positive cap
    # is honored as-is.


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedctrl",
        description="Solve risk-constrained control problems with mixed strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("solve", _cmd_solve, "run the full pipeline and write report artifacts"),
        ("validate", _cmd_validate, "re-check a saved report against its config"),
        ("sweep", _cmd_sweep, "sample the dual function on a multiplier grid"),
    )
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a JSON run config")
        p.add_argument("--out", default="out", help="artifact directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the Monte Carlo seed")
        p.add_argument(
            "--tol-lambda", type=float, default=None, help="bisection width tolerance"
        )
        p.add_argument(
            "--tol-risk", type=float, default=None, help="risk slack tolerance"
        )
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _check_thread_cap()
        return args.func(args)
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except InvalidInputError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except MixedControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
