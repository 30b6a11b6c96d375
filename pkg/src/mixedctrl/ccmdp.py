"""Finite-horizon MDP backend with a first-passage failure channel.

States live on a per-step basis (the spaces may differ between steps).
Entering a failure state charges the multiplier once and freezes the
trajectory: no further stage cost accrues. The backward sweep prices that
by assigning failure states the constant value ``lam``; the forward pass
splits probability mass into an alive distribution and an absorbed
failure mass, which keeps policy evaluation exact rather than sampled.

Transitions come in two layouts: explicit per-action sparse matrices for
small hand-built models, and a shared "spread" matrix composed with
per-action deterministic target maps for translation-invariant dynamics
(grid worlds), where one sparse product per step covers every action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    Bounds,
    CostVector,
    DualVector,
    InvalidInputError,
    InvalidPolicyError,
    LagrangianOracle,
    MixedControlError,
    MixedSolution,
    PureCandidate,
    wilson_ci_99,
)

_MASS_TOL = 1e-12


class ActionTransitions:
    """One sparse row-stochastic matrix per action."""

    def __init__(self, mats):
        self.mats = [sp.csr_matrix(m, dtype=float) for m in mats]
        if not self.mats:
            raise InvalidInputError("step needs at least one action")
        shape = self.mats[0].shape
        if any(m.shape != shape for m in self.mats):
            raise InvalidInputError("per-action transition shapes differ")
        self.num_states, self.num_next = shape

    @property
    def num_actions(self) -> int:
        return len(self.mats)

    def expected_next(self, j_next: np.ndarray) -> np.ndarray:
        return np.column_stack([m @ j_next for m in self.mats])

    def push_forward(self, dist: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = np.zeros(self.num_next)
        used = np.unique(actions[dist > 0])
        for a in used:
            mask = (actions == a) & (dist > 0)
            out += self.mats[a].T @ (dist * mask)
        return out

    def row(self, state: int, action: int):
        m = self.mats[action]
        sl = slice(m.indptr[state], m.indptr[state + 1])
        return m.indices[sl], m.data[sl]

    def check_rows(self, admissible: np.ndarray):
        for a, m in enumerate(self.mats):
            sums = np.asarray(m.sum(axis=1)).ravel()
            bad = admissible[:, a] & (np.abs(sums - 1.0) > _MASS_TOL)
            if np.any(bad):
                x = int(np.flatnonzero(bad)[0])
                raise InvalidInputError(
                    f"transition row for state {x}, action {a} sums to {sums[x]}"
                )
            if (m.data < 0).any():
                raise InvalidInputError(f"negative transition probability in action {a}")


class ShiftSpread:
    """Deterministic per-action target map composed with a shared noise spread.

    ``targets[a][x]`` is the pre-noise destination cell (-1 marks an
    inadmissible pair); ``spread`` is one row-stochastic matrix applying
    the disturbance. The step kernel is then row ``targets[a][x]`` of the
    spread, so a sweep needs a single sparse product shared by all actions.
    The spread may carry extra rows beyond the next-state count, e.g. a
    deterministic parking row for an absorbing cell.
    """

    def __init__(self, targets: np.ndarray, spread):
        self.targets = np.asarray(targets, dtype=np.int64)
        self.spread = sp.csr_matrix(spread, dtype=float)
        if self.targets.ndim != 2:
            raise InvalidInputError("targets must be (actions, states)")
        self.num_states = self.targets.shape[1]
        self.num_next = self.spread.shape[1]
        if self.targets.max() >= self.spread.shape[0]:
            raise InvalidInputError("target index outside the spread matrix")

    @property
    def num_actions(self) -> int:
        return self.targets.shape[0]

    def expected_next(self, j_next: np.ndarray) -> np.ndarray:
        y = self.spread @ j_next
        safe = np.where(self.targets >= 0, self.targets, 0)
        q = y[safe].T  # (states, actions)
        return np.where(self.targets.T >= 0, q, 0.0)

    def push_forward(self, dist: np.ndarray, actions: np.ndarray) -> np.ndarray:
        inter = np.zeros(self.spread.shape[0])
        live = np.flatnonzero(dist > 0)
        t = self.targets[actions[live], live]
        np.add.at(inter, t, dist[live])
        return self.spread.T @ inter

    def row(self, state: int, action: int):
        t = int(self.targets[action, state])
        sl = slice(self.spread.indptr[t], self.spread.indptr[t + 1])
        return self.spread.indices[sl], self.spread.data[sl]

    def check_rows(self, admissible: np.ndarray):
        sums = np.asarray(self.spread.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > _MASS_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise InvalidInputError(f"spread row {bad} sums to {sums[bad]}")
        if (self.spread.data < 0).any():
            raise InvalidInputError("negative probability in the spread matrix")
        for a in range(self.num_actions):
            bad = admissible[:, a] & (self.targets[a] < 0)
            if np.any(bad):
                raise InvalidInputError(
                    f"action {a} marked admissible but has no target at state "
                    f"{int(np.flatnonzero(bad)[0])}"
                )


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-step action index for every state; -1 where undefined."""

    actions: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class EvalResult:
    expected_cost: float
    failure_prob: float


@dataclass(eq=False)
class Mdp:
    """Time-varying finite MDP. ``stage_costs`` hold +inf for inadmissible pairs."""

    horizon: int
    state_counts: tuple[int, ...]
    dynamics: tuple
    stage_costs: tuple[np.ndarray, ...]
    failure_masks: tuple[np.ndarray, ...]
    initial: np.ndarray
    state_labels: tuple | None = None
    action_labels: tuple | None = None

    def __post_init__(self):
        t = self.horizon
        if t < 1:
            raise InvalidInputError("horizon must be at least one decision step")
        if len(self.state_counts) != t + 1:
            raise InvalidInputError("state_counts must have horizon+1 entries")
        if len(self.dynamics) != t or len(self.stage_costs) != t:
            raise InvalidInputError("dynamics and stage_costs must have horizon entries")
        if len(self.failure_masks) != t + 1:
            raise InvalidInputError("failure_masks must have horizon+1 entries")
        self.initial = np.asarray(self.initial, dtype=float)
        if self.initial.shape != (self.state_counts[0],):
            raise InvalidInputError("initial distribution does not match step-1 states")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1.0) > _MASS_TOL:
            raise InvalidInputError(
                f"initial distribution sums to {self.initial.sum()}"
            )
        self.failure_masks = tuple(
            np.asarray(m, dtype=bool) for m in self.failure_masks
        )
        for k, mask in enumerate(self.failure_masks):
            if mask.shape != (self.state_counts[k],):
                raise InvalidInputError(f"failure mask at step {k} has wrong length")
        self.stage_costs = tuple(np.asarray(c, dtype=float) for c in self.stage_costs)
        for k in range(t):
            dyn = self.dynamics[k]
            cost = self.stage_costs[k]
            n_k, n_next = self.state_counts[k], self.state_counts[k + 1]
            if dyn.num_states != n_k or dyn.num_next != n_next:
                raise InvalidInputError(f"dynamics at step {k} have wrong shape")
            if cost.shape != (n_k, dyn.num_actions):
                raise InvalidInputError(f"stage costs at step {k} have wrong shape")
            if np.any(np.isnan(cost)):
                raise InvalidInputError(f"NaN stage cost at step {k}")
            admissible = np.isfinite(cost)
            alive = ~self.failure_masks[k]
            if np.any(alive & ~admissible.any(axis=1)):
                x = int(np.flatnonzero(alive & ~admissible.any(axis=1))[0])
                raise InvalidInputError(
                    f"alive state {x} at step {k} has no admissible action"
                )
            dyn.check_rows(admissible)


def lagrangian_dp(mdp: Mdp, lam: float) -> tuple[Policy, float]:
    """Backward sweep minimizing stage cost plus ``lam`` per first failure.

    Failure states carry the constant value ``lam`` so transitioning into
    one charges the penalty exactly once with no continuation. Ties among
    actions break to the lowest index. Returns the greedy policy and the
    initial-distribution value (equal to c0 + lam*c1 of that policy).
    """
    if lam < 0 or not math.isfinite(lam):
        raise InvalidInputError(f"multiplier must be finite and nonnegative, got {lam}")
    t = mdp.horizon
    j_next = np.where(mdp.failure_masks[t], lam, 0.0)
    actions: list[np.ndarray] = [None] * t
    for k in reversed(range(t)):
        q = mdp.stage_costs[k] + mdp.dynamics[k].expected_next(j_next)
        act = np.argmin(q, axis=1)
        val = q[np.arange(q.shape[0]), act]
        fail_k = mdp.failure_masks[k]
        actions[k] = np.where(fail_k, -1, act).astype(np.int64)
        j_next = np.where(fail_k, lam, val)
    value = float(mdp.initial @ j_next)
    return Policy(tuple(actions)), value


def evaluate_policy(mdp: Mdp, policy: Policy) -> EvalResult:
    """Exact expected cost and first-passage failure probability.

    Mass entering a failure state is moved to an absorbed ledger and the
    trajectory accrues no further cost, matching the backward sweep's
    accounting exactly.
    """
    if len(policy.actions) != mdp.horizon:
        raise InvalidPolicyError("policy does not cover every decision step")
    dist = mdp.initial.copy()
    fail_mass = float(dist[mdp.failure_masks[0]].sum())
    dist = np.where(mdp.failure_masks[0], 0.0, dist)
    total_cost = 0.0
    for k in range(mdp.horizon):
        acts = np.asarray(policy.actions[k])
        if acts.shape != (mdp.state_counts[k],):
            raise InvalidPolicyError(f"policy at step {k} has wrong length")
        active = dist > 0
        if np.any(active & (acts < 0)):
            x = int(np.flatnonzero(active & (acts < 0))[0])
            raise InvalidPolicyError(f"no action for reachable state {x} at step {k}")
        safe_acts = np.where(acts >= 0, acts, 0)
        stage = mdp.stage_costs[k][np.arange(len(acts)), safe_acts]
        if np.any(active & ~np.isfinite(stage)):
            x = int(np.flatnonzero(active & ~np.isfinite(stage))[0])
            raise InvalidPolicyError(
                f"inadmissible action at reachable state {x}, step {k}"
            )
        total_cost += float(dist @ np.where(active, stage, 0.0))
        dist = mdp.dynamics[k].push_forward(dist, safe_acts)
        mask = mdp.failure_masks[k + 1]
        fail_mass += float(dist[mask].sum())
        dist = np.where(mask, 0.0, dist)
        if abs(dist.sum() + fail_mass - 1.0) > 1e-9:
            raise MixedControlError(
                f"probability mass not conserved at step {k}: "
                f"{dist.sum() + fail_mass}"
            )
    return EvalResult(total_cost, min(max(fail_mass, 0.0), 1.0))


class MdpOracle(LagrangianOracle):
    """Lagrangian oracle backed by the backward sweep, exact costs from the forward pass."""

    def __init__(self, mdp: Mdp, bounds: Bounds):
        if bounds.k != 1:
            raise InvalidInputError("MDP backend supports a single risk channel")
        self.mdp = mdp
        self.bounds = bounds

    @property
    def k_constraints(self) -> int:
        return 1

    def query(self, lam: DualVector) -> PureCandidate:
        policy, _ = lagrangian_dp(self.mdp, lam.values[0])
        ev = evaluate_policy(self.mdp, policy)
        return PureCandidate(policy, CostVector(ev.expected_cost, (ev.failure_prob,)))

    def evaluate(self, policy: object) -> CostVector:
        ev = evaluate_policy(self.mdp, policy)
        return CostVector(ev.expected_cost, (ev.failure_prob,))


def mdp_oracle(mdp: Mdp, bounds: Bounds) -> MdpOracle:
    return MdpOracle(mdp, bounds)


@dataclass(frozen=True)
class SimulationSummary:
    cost_mean: float
    failure_rate: float
    failure_ci99: tuple[float, float]
    n_rollouts: int


def simulate(
    mdp: Mdp, solution: MixedSolution, seed: int, n_rollouts: int
) -> SimulationSummary:
    """Monte Carlo check of a mixed solution.

    Each rollout draws its component policy once up front (that is the
    whole randomization), then follows the policy through sampled
    transitions. Costs stop accruing at the first failure. The 99%
    Wilson interval on the failure rate should cover the exact aggregate
    risk of the solution.
    """
    if n_rollouts < 1:
        raise InvalidInputError("need at least one rollout")
    rng = np.random.default_rng(seed)
    probs = np.array(solution.probabilities)
    comp = rng.choice(len(probs), size=n_rollouts, p=probs / probs.sum())
    costs = np.zeros(n_rollouts)
    failed = np.zeros(n_rollouts, dtype=bool)
    for ci, (cand, _) in enumerate(solution.components):
        sel = np.flatnonzero(comp == ci)
        if sel.size == 0:
            continue
        c, f = _rollout(mdp, cand.policy, rng, sel.size)
        costs[sel] = c
        failed[sel] = f
    lo, hi = wilson_ci_99(int(failed.sum()), n_rollouts)
    return SimulationSummary(
        cost_mean=float(costs.mean()),
        failure_rate=float(failed.mean()),
        failure_ci99=(lo, hi),
        n_rollouts=n_rollouts,
    )


def _rollout(mdp: Mdp, policy: Policy, rng: np.random.Generator, m: int):
    if not isinstance(policy, Policy):
        raise InvalidPolicyError("simulation needs MDP policies")
    cost = np.zeros(m)
    states = rng.choice(mdp.state_counts[0], size=m, p=mdp.initial)
    failed = mdp.failure_masks[0][states]
    for k in range(mdp.horizon):
        alive = np.flatnonzero(~failed)
        if alive.size == 0:
            break
        acts = policy.actions[k][states[alive]]
        if np.any(acts < 0):
            raise InvalidPolicyError(f"rollout reached an undefined action at step {k}")
        cost[alive] += mdp.stage_costs[k][states[alive], acts]
        new_states = states.copy()
        cur = states[alive]
        for x in np.unique(cur):
            rows = alive[cur == x]
            idxs, pvals = mdp.dynamics[k].row(int(x), int(policy.actions[k][x]))
            new_states[rows] = rng.choice(idxs, size=rows.size, p=pvals / pvals.sum())
        states = new_states
        now_failed = np.zeros(m, dtype=bool)
        now_failed[alive] = mdp.failure_masks[k + 1][states[alive]]
        failed |= now_failed
    return cost, failed


def from_tables(
    horizon: int,
    states: list[list[str]],
    actions: list[list[str]],
    transitions: dict,
    costs: dict,
    failures: list,
    initial: dict,
) -> Mdp:
    """Build a small labelled MDP from dictionaries.

    ``transitions[(k, state, action)]`` maps next-state labels to
    probabilities; pairs missing from ``transitions`` are inadmissible.
    """
    t = horizon
    if len(states) != t + 1 or len(actions) != t or len(failures) != t + 1:
        raise InvalidInputError("states/actions/failures lengths do not match horizon")
    index = [{s: i for i, s in enumerate(level)} for level in states]
    counts = tuple(len(level) for level in states)
    dynamics = []
    stage_costs = []
    for k in range(t):
        n_k, n_next = counts[k], counts[k + 1]
        a_k = len(actions[k])
        mats = [sp.lil_matrix((n_k, n_next)) for _ in range(a_k)]
        cost = np.full((n_k, a_k), np.inf)
        for (kk, s, a), row in transitions.items():
            if kk != k:
                continue
            x = index[k][s]
            ai = actions[k].index(a)
            for s_next, p in row.items():
                mats[ai][x, index[k + 1][s_next]] = p
            cost[x, ai] = costs[(kk, s, a)]
        dynamics.append(ActionTransitions([m.tocsr() for m in mats]))
        stage_costs.append(cost)
    masks = []
    for k in range(t + 1):
        mask = np.zeros(counts[k], dtype=bool)
        for s in failures[k]:
            mask[index[k][s]] = True
        masks.append(mask)
    init = np.zeros(counts[0])
    for s, p in initial.items():
        init[index[0][s]] = p
    return Mdp(
        horizon=t,
        state_counts=counts,
        dynamics=tuple(dynamics),
        stage_costs=tuple(stage_costs),
        failure_masks=tuple(masks),
        initial=init,
        state_labels=tuple(tuple(level) for level in states),
        action_labels=tuple(tuple(level) for level in actions),
    )
