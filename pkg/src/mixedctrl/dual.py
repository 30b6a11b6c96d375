"""Dual solvers and mixture recovery.

The pure-policy problem is relaxed through nonnegative multipliers on the
expectation constraints; a backend oracle returns the pointwise minimizer
for any multiplier. For one constraint the optimal multiplier is found by
bisection on the monotone risk curve; for several, by projected
subgradient ascent. The final mixture randomizes over the candidates at
the optimal multiplier so the aggregate meets the bounds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Bounds,
    CostVector,
    DualVector,
    InfeasibleProblemError,
    InvalidInputError,
    LagrangianOracle,
    MixedSolution,
    MixtureRecoveryError,
    NonMonotoneOracleError,
    PureCandidate,
    lagrangian_value,
    mix_costs,
)
from .lpsolve import LpProblem, solve_lp


@dataclass(frozen=True)
class ScalarSolveConfig:
    lambda_max: float = 1e9
    tol_lambda: float = 1e-6
    tol_risk: float = 1e-9
    max_iter: int = 200


@dataclass(frozen=True)
class ScalarDualResult:
    """Bisection output: optimal multiplier plus the two bracketing candidates.

    ``lower`` is the endpoint whose risk is >= the bound (cheap, risky);
    ``upper`` the endpoint with risk <= the bound (costly, safe).
    ``iterations`` counts oracle queries.
    """

    lambda_star: float
    lower: PureCandidate
    upper: PureCandidate
    q_star: float
    iterations: int
    converged: bool


def _require_scalar(oracle: LagrangianOracle, bounds: Bounds):
    if oracle.k_constraints != 1 or bounds.k != 1:
        raise InvalidInputError(
            f"scalar solver needs K=1, got oracle K={oracle.k_constraints}, bounds K={bounds.k}"
        )


def solve_dual_scalar(
    oracle: LagrangianOracle,
    bounds: Bounds,
    config: ScalarSolveConfig | None = None,
) -> ScalarDualResult:
    """Maximize the dual function for a single constraint by bisection.

    The risk returned by the oracle is non-increasing in the multiplier,
    so the bracket [lam_lo, lam_hi] with risk(lam_lo) >= V >= risk(lam_hi)
    shrinks geometrically. Stops once the bracket is narrower than
    ``tol_lambda`` or an endpoint risk is within ``tol_risk`` of the bound.
    """
    cfg = config or ScalarSolveConfig()
    _require_scalar(oracle, bounds)
    v = bounds.values[0]
    queries = 0

    def ask(lam: float) -> PureCandidate:
        nonlocal queries
        queries += 1
        return oracle.query(DualVector((lam,)))

    mono_tol = max(cfg.tol_risk, 1e-12)
    cand0 = ask(0.0)
    if cand0.cost.c1 <= v:
        q0 = lagrangian_value(cand0.cost, DualVector((0.0,)), bounds)
        return ScalarDualResult(0.0, cand0, cand0, q0, queries, True)

    lam_lo, cand_lo = 0.0, cand0
    lam_hi = 1.0
    cand_hi = ask(lam_hi)
    while cand_hi.cost.c1 > v:
        if cand_hi.cost.c1 > cand_lo.cost.c1 + mono_tol:
            raise NonMonotoneOracleError(
                f"risk rose from {cand_lo.cost.c1} to {cand_hi.cost.c1} "
                f"as the multiplier grew from {lam_lo} to {lam_hi}"
            )
        if lam_hi >= cfg.lambda_max:
            raise InfeasibleProblemError(
                f"risk {cand_hi.cost.c1} still above the bound {v} at the "
                f"multiplier cap {cfg.lambda_max}; no policy meets the bound"
            )
        lam_lo, cand_lo = lam_hi, cand_hi
        lam_hi = min(lam_hi * 2.0, cfg.lambda_max)
        cand_hi = ask(lam_hi)

    converged = False
    while queries < cfg.max_iter:
        if lam_hi - lam_lo <= cfg.tol_lambda:
            converged = True
            break
        if cand_lo.cost.c1 - v <= cfg.tol_risk or v - cand_hi.cost.c1 <= cfg.tol_risk:
            converged = True
            break
        mid = 0.5 * (lam_lo + lam_hi)
        cand_mid = ask(mid)
        if (
            cand_mid.cost.c1 > cand_lo.cost.c1 + mono_tol
            or cand_mid.cost.c1 < cand_hi.cost.c1 - mono_tol
        ):
            raise NonMonotoneOracleError(
                f"risk at multiplier {mid} ({cand_mid.cost.c1}) leaves the bracket "
                f"[{cand_hi.cost.c1}, {cand_lo.cost.c1}]"
            )
        if cand_mid.cost.c1 > v:
            lam_lo, cand_lo = mid, cand_mid
        else:
            lam_hi, cand_hi = mid, cand_mid

    lambda_star = 0.5 * (lam_lo + lam_hi)
    cand_star = ask(lambda_star)
    q_star = lagrangian_value(cand_star.cost, DualVector((lambda_star,)), bounds)
    return ScalarDualResult(lambda_star, cand_lo, cand_hi, q_star, queries, converged)


def recover_mixture_scalar(
    lower: PureCandidate, upper: PureCandidate, bounds: Bounds
) -> MixedSolution:
    """Mix the two bracket endpoints so the aggregate risk equals the bound.

    The implied multiplier is the slope between the endpoint cost pairs,
    which is exactly where both are Lagrangian-minimal. ``gap_estimate``
    is the saving of the mixture over the safe endpoint (the best feasible
    pure candidate the bisection saw).
    """
    if lower.cost.k != 1 or upper.cost.k != 1 or bounds.k != 1:
        raise InvalidInputError("scalar recovery needs K=1 candidates and bounds")
    v = bounds.values[0]
    c_lo, c_hi = lower.cost.c1, upper.cost.c1
    if not (c_lo >= v >= c_hi):
        raise InvalidInputError(
            f"endpoint risks {c_lo}, {c_hi} do not straddle the bound {v}"
        )
    if c_lo == c_hi:
        p = 1.0
        lam = 0.0
    else:
        p = (v - c_hi) / (c_lo - c_hi)
        lam = max(0.0, (upper.cost.c0 - lower.cost.c0) / (c_lo - c_hi))
    components = ((lower, p), (upper, 1.0 - p))
    aggregate = mix_costs([(lower.cost, p), (upper.cost, 1.0 - p)])
    gap = max(0.0, upper.cost.c0 - aggregate.c0)
    return MixedSolution(components, aggregate, DualVector((lam,)), gap)


def solve_mixed_scalar(
    oracle: LagrangianOracle,
    bounds: Bounds,
    config: ScalarSolveConfig | None = None,
) -> tuple[ScalarDualResult, MixedSolution]:
    """End-to-end single-constraint pipeline: bisection then recovery.

    With an inactive constraint the mixture degenerates to the pure
    minimizer with probability one.
    """
    result = solve_dual_scalar(oracle, bounds, config)
    if result.lambda_star == 0.0:
        cand = result.upper
        solution = MixedSolution(((cand, 1.0),), cand.cost, DualVector((0.0,)), 0.0)
    else:
        solution = recover_mixture_scalar(result.lower, result.upper, bounds)
        if result.lower.cost.c1 == result.upper.cost.c1:
            # endpoints tied at the bound; the chord slope is undefined, so
            # carry the bisection multiplier instead
            solution = replace(solution, dual=DualVector((result.lambda_star,)))
    return result, solution


@dataclass(frozen=True)
class SubgradientConfig:
    alpha0: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-6


@dataclass(frozen=True)
class SubgradientResult:
    """Best multiplier seen during ascent plus the deduplicated answer pool."""

    dual: DualVector
    pool: tuple[PureCandidate, ...]
    q_star: float
    iterations: int
    converged: bool


def solve_dual_subgradient(
    oracle: LagrangianOracle,
    bounds: Bounds,
    config: SubgradientConfig | None = None,
) -> SubgradientResult:
    """Projected subgradient ascent for any number of constraints.

    Steps follow the diminishing schedule alpha0/sqrt(t); the iterate is
    projected onto the nonnegative orthant. Ascent stops early when the
    projected step falls below ``tol``; otherwise the best iterate so far
    is returned flagged unconverged.
    """
    cfg = config or SubgradientConfig()
    k = oracle.k_constraints
    if bounds.k != k:
        raise InvalidInputError(f"bounds K={bounds.k} does not match oracle K={k}")
    if cfg.alpha0 <= 0 or cfg.max_iter < 1:
        raise InvalidInputError("subgradient config needs alpha0 > 0 and max_iter >= 1")
    v = np.array(bounds.values)
    lam = np.zeros(k)
    pool: list[PureCandidate] = []
    seen: set[CostVector] = set()
    best_q = -math.inf
    best_lam = lam.copy()
    converged = False
    iterations = 0
    for t in range(1, cfg.max_iter + 1):
        iterations = t
        cand = oracle.query(DualVector(tuple(lam)))
        if cand.cost not in seen:
            seen.add(cand.cost)
            pool.append(cand)
        g = np.array(cand.cost.c_rest) - v
        q_here = lagrangian_value(cand.cost, DualVector(tuple(lam)), bounds)
        if q_here > best_q:
            best_q = q_here
            best_lam = lam.copy()
        if t == 1 and np.all(g <= 0.0):
            # already feasible with zero multipliers: dual optimum at zero
            converged = True
            break
        step = cfg.alpha0 / math.sqrt(t)
        new_lam = np.maximum(0.0, lam + step * g)
        moved = float(np.max(np.abs(new_lam - lam)))
        lam = new_lam
        if moved <= cfg.tol:
            converged = True
            break
    return SubgradientResult(
        DualVector(tuple(best_lam)), tuple(pool), best_q, iterations, converged
    )


def recover_mixture_general(
    pool: list[PureCandidate] | tuple[PureCandidate, ...],
    lam: DualVector,
    bounds: Bounds,
    tol: float = 1e-6,
) -> MixedSolution:
    """Mix pool candidates near the Lagrangian minimum at ``lam``.

    Keeps candidates within ``tol`` of the pool's minimal penalized cost,
    then solves a small LP for mixing weights: weights sum to one, every
    aggregate channel respects its bound, and channels whose multiplier
    exceeds ``tol`` are forced to equality. The simplex vertex keeps the
    support at K+1 points or fewer. Raises MixtureRecoveryError (carrying
    the pool) when no feasible weights exist; the caller should re-query
    the oracle near ``lam`` and retry with the enlarged pool.
    """
    candidates = list(pool)
    if not candidates:
        raise InvalidInputError("empty candidate pool")
    k = lam.k
    if bounds.k != k or any(c.cost.k != k for c in candidates):
        raise InvalidInputError("candidate pool, multiplier and bounds disagree on K")
    values = [lagrangian_value(c.cost, lam, bounds) for c in candidates]
    cutoff = min(values) + tol
    keep = [c for c, val in zip(candidates, values) if val <= cutoff]

    n = len(keep)
    lhs = np.zeros((k + 1, n))
    senses: list[str] = []
    rhs = np.zeros(k + 1)
    for i in range(k):
        lhs[i] = [c.cost.c_rest[i] for c in keep]
        senses.append("=" if lam.values[i] > tol else "<=")
        rhs[i] = bounds.values[i]
    lhs[k] = 1.0
    senses.append("=")
    rhs[k] = 1.0
    lp = LpProblem(
        objective=np.array([c.cost.c0 for c in keep]),
        lhs=lhs,
        senses=tuple(senses),
        rhs=rhs,
        lower=np.zeros(n),
        upper=np.full(n, np.inf),
    )
    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise MixtureRecoveryError(
            f"no feasible mixing weights over {n} candidates at multiplier "
            f"{lam.values} (LP {sol.status})",
            candidates,
        )
    weights = np.clip(sol.x, 0.0, None)
    weights /= weights.sum()
    components = tuple(
        (cand, float(w)) for cand, w in zip(keep, weights) if w > 1e-15
    )
    aggregate = mix_costs([(cand.cost, w) for cand, w in components])
    feasible_costs = [
        c.cost.c0
        for c in candidates
        if all(ci <= vi for ci, vi in zip(c.cost.c_rest, bounds.values))
    ]
    gap = max(0.0, min(feasible_costs) - aggregate.c0) if feasible_costs else 0.0
    return MixedSolution(components, aggregate, lam, gap)


@dataclass(frozen=True)
class OptimalityReport:
    """Pass/fail flags and residuals for the six mixture optimality conditions.

    a) every component with positive weight attains the oracle's Lagrangian
       minimum at the solution's multiplier;
    b) complementary slackness of the aggregate;
    c) weights sum to one;
    d) weights are nonnegative;
    e) the aggregate respects every bound;
    f) component costs match a backend re-evaluation of their policies
       (skipped, and reported as passing, when the backend cannot
       re-evaluate).
    """

    conditions: dict[str, bool]
    residuals: dict[str, float]
    overall: bool


def check_optimality(
    solution: MixedSolution,
    bounds: Bounds,
    oracle: LagrangianOracle,
    tol: float = 1e-6,
) -> OptimalityReport:
    lam = solution.dual
    if bounds.k != lam.k:
        raise InvalidInputError("bounds and solution disagree on K")
    reference = oracle.query(lam)
    l_min = lagrangian_value(reference.cost, lam, bounds)

    res_a = 0.0
    for cand, p in solution.components:
        if p > tol:
            res_a = max(res_a, lagrangian_value(cand.cost, lam, bounds) - l_min)

    agg = solution.aggregate
    res_b = abs(
        math.fsum(
            l * (c - v) for l, c, v in zip(lam.values, agg.c_rest, bounds.values)
        )
    )
    res_c = abs(math.fsum(solution.probabilities) - 1.0)
    res_d = max(0.0, -min(solution.probabilities))
    res_e = max(0.0, max(c - v for c, v in zip(agg.c_rest, bounds.values)))

    res_f = 0.0
    for cand, _ in solution.components:
        try:
            fresh = oracle.evaluate(cand.policy)
        except NotImplementedError:
            break
        res_f = max(res_f, abs(fresh.c0 - cand.cost.c0))
        res_f = max(
            res_f, max(abs(a - b) for a, b in zip(fresh.c_rest, cand.cost.c_rest))
        )

    residuals = {"a": res_a, "b": res_b, "c": res_c, "d": res_d, "e": res_e, "f": res_f}
    conditions = {name: r <= tol for name, r in residuals.items()}
    return OptimalityReport(conditions, residuals, all(conditions.values()))
