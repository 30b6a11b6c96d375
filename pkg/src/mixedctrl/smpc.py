"""Linear-Gaussian model predictive control with obstacle chance constraints.

The plant is x_{k+1} = A x_k + B u_k + w_k with known Gaussian noise and a
deterministic start, so the state mean is affine in the controls and the
covariance follows a fixed recursion. Obstacles are convex polytopes; a
trajectory fails if any step lands inside one. The per-step, per-obstacle
collision probability is over-approximated by (1) picking one separating
face per obstacle and step via binaries, (2) bounding the Gaussian tail
across that face with a piecewise-linear majorant of the normal CDF, and
(3) summing the pieces with a union bound. That makes the multiplier
oracle one mixed-binary linear program per query.

Control effort is the L1 norm of the input sequence, linearized with the
usual pair of slack inequalities per entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

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
    wilson_ci_99,
)
from .lpsolve import EQ, GE, LE, LpProblem, solve_lp
from .milp import MilpProblem, solve_milp

# below this the face distance in standard deviations is treated as exact
_SIGMA_FLOOR = 1e-12
# objective weight on risk terms when the multiplier is zero, keeps the
# inner solve deterministic instead of leaving risk ties to pivot order
_RISK_WEIGHT_FLOOR = 1e-9


@dataclass(frozen=True)
class Obstacle:
    """Convex region {x : face_normals @ x <= face_offsets}, entered means failed."""

    face_normals: np.ndarray
    face_offsets: np.ndarray

    def __post_init__(self):
        normals = np.asarray(self.face_normals, dtype=float)
        offsets = np.asarray(self.face_offsets, dtype=float)
        if normals.ndim != 2 or offsets.shape != (normals.shape[0],):
            raise InvalidInputError("obstacle faces need matching normal/offset counts")
        if normals.shape[0] < 1:
            raise InvalidInputError("obstacle needs at least one face")
        if not (np.isfinite(normals).all() and np.isfinite(offsets).all()):
            raise InvalidInputError("obstacle faces must be finite")
        if np.any(np.all(normals == 0.0, axis=1)):
            raise InvalidInputError("obstacle face with zero normal")
        object.__setattr__(self, "face_normals", normals)
        object.__setattr__(self, "face_offsets", offsets)

    @property
    def num_faces(self) -> int:
        return self.face_normals.shape[0]

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask over points (last axis is the state dimension)."""
        vals = points @ self.face_normals.T - self.face_offsets
        return np.all(vals <= 0.0, axis=-1)


@dataclass(eq=False)
class SmpcModel:
    a_mat: np.ndarray
    b_mat: np.ndarray
    sigma_w: np.ndarray
    horizon: int
    x_init: np.ndarray
    x_goal: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    obstacles: tuple[Obstacle, ...]

    def __post_init__(self):
        self.a_mat = np.asarray(self.a_mat, dtype=float)
        self.b_mat = np.asarray(self.b_mat, dtype=float)
        self.sigma_w = np.asarray(self.sigma_w, dtype=float)
        self.x_init = np.asarray(self.x_init, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        self.u_lower = np.asarray(self.u_lower, dtype=float)
        self.u_upper = np.asarray(self.u_upper, dtype=float)
        self.obstacles = tuple(self.obstacles)
        n = self.a_mat.shape[0]
        if self.a_mat.shape != (n, n):
            raise InvalidInputError("state matrix must be square")
        if self.b_mat.ndim != 2 or self.b_mat.shape[0] != n:
            raise InvalidInputError("input matrix rows must match the state dimension")
        m = self.b_mat.shape[1]
        if self.sigma_w.shape != (n, n):
            raise InvalidInputError("noise covariance must be state-sized")
        if not np.allclose(self.sigma_w, self.sigma_w.T, atol=1e-12):
            raise InvalidInputError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(self.sigma_w).min() < -1e-10:
            raise InvalidInputError("noise covariance must be positive semidefinite")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be at least one step")
        if self.x_init.shape != (n,) or self.x_goal.shape != (n,):
            raise InvalidInputError("start and goal must be state-sized vectors")
        if self.u_lower.shape != (m,) or self.u_upper.shape != (m,):
            raise InvalidInputError("control bounds must be input-sized vectors")
        if not (np.isfinite(self.u_lower).all() and np.isfinite(self.u_upper).all()):
            raise InvalidInputError("control bounds must be finite")
        if np.any(self.u_lower > self.u_upper):
            raise InvalidInputError("control lower bound exceeds upper bound")
        for obs in self.obstacles:
            if obs.face_normals.shape[1] != n:
                raise InvalidInputError("obstacle faces must be state-sized")

    @property
    def dim_x(self) -> int:
        return self.a_mat.shape[0]

    @property
    def dim_u(self) -> int:
        return self.b_mat.shape[1]


def propagate_covariance(model: SmpcModel) -> list[np.ndarray]:
    """State covariances for steps 1..N+1; the start is deterministic."""
    n = model.dim_x
    covs = [np.zeros((n, n))]
    for _ in range(model.horizon):
        covs.append(model.a_mat @ covs[-1] @ model.a_mat.T + model.sigma_w)
    return covs


def mean_path(model: SmpcModel, controls: np.ndarray) -> np.ndarray:
    """Noise-free trajectory (N+1, n) under the given (N, m) control sequence."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (model.horizon, model.dim_u):
        raise InvalidInputError(
            f"control sequence must be ({model.horizon}, {model.dim_u})"
        )
    path = np.empty((model.horizon + 1, model.dim_x))
    path[0] = model.x_init
    for k in range(model.horizon):
        path[k + 1] = model.a_mat @ path[k] + model.b_mat @ controls[k]
    return path


@dataclass(frozen=True)
class PwlCdf:
    """Chord majorant of the standard normal CDF on [y_min, 0], floored at zero.

    The CDF is convex left of zero, so chords between grid points lie on
    or above it there; evaluating the max of the chords gives a
    conservative tail probability for any separating-face margin in the
    covered range.
    """

    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    y_min: float

    def value(self, y: float) -> float:
        best = max(a * y + b for a, b in zip(self.slopes, self.intercepts))
        return max(0.0, best)


def build_pwl_cdf(n_segments: int = 24, y_min: float = -6.0) -> PwlCdf:
    if n_segments < 1 or y_min >= 0.0:
        raise InvalidInputError("need at least one segment over a negative range")
    ys = np.linspace(y_min, 0.0, n_segments + 1)
    ps = ndtr(ys)
    slopes = (ps[1:] - ps[:-1]) / (ys[1:] - ys[:-1])
    intercepts = ps[:-1] - slopes * ys[:-1]
    return PwlCdf(tuple(slopes), tuple(intercepts), float(y_min))


def _interval_matvec(mat, lo, hi):
    pos = np.clip(mat, 0.0, None)
    neg = np.clip(mat, None, 0.0)
    return pos @ lo + neg @ hi, pos @ hi + neg @ lo


def _mean_ranges(model: SmpcModel):
    """Componentwise reachable intervals of the mean at steps 2..N+1.

    Forward propagation through the control box always applies. When the
    state matrix is the identity the terminal pin on the mean also bounds
    earlier steps (the mean must stay within N+1-t control moves of the
    goal), and intersecting both funnels tightens every big-M constant
    and lets more face binaries be pinned outright.
    """
    lo = model.x_init.copy()
    hi = model.x_init.copy()
    out = []
    for _ in range(model.horizon):
        alo, ahi = _interval_matvec(model.a_mat, lo, hi)
        blo, bhi = _interval_matvec(model.b_mat, model.u_lower, model.u_upper)
        lo, hi = alo + blo, ahi + bhi
        out.append([lo, hi])
    if np.array_equal(model.a_mat, np.eye(model.dim_x)):
        blo, bhi = _interval_matvec(model.b_mat, model.u_lower, model.u_upper)
        back_lo = model.x_goal.copy()
        back_hi = model.x_goal.copy()
        for t in range(model.horizon - 1, -1, -1):
            out[t][0] = np.maximum(out[t][0], back_lo)
            out[t][1] = np.minimum(out[t][1], back_hi)
            # an empty slice means the goal is unreachable; keep the
            # arrays ordered and let the relaxation report infeasibility
            out[t][1] = np.maximum(out[t][1], out[t][0])
            back_lo, back_hi = out[t][0] - bhi, out[t][1] - blo
    return [(lo, hi) for lo, hi in out]


@dataclass(frozen=True)
class MilpLayout:
    """Column offsets of each variable block in the inner problem."""

    num_cols: int
    u_off: int
    v_off: int
    x_off: int
    delta_off: int
    z_off: int
    z_bases: tuple[int, ...]

    def u_index(self, step: int, dim: int, dim_u: int) -> int:
        return self.u_off + step * dim_u + dim

    def x_index(self, step_block: int, dim: int, dim_x: int) -> int:
        return self.x_off + step_block * dim_x + dim

    def delta_index(self, obs: int, step_block: int, horizon: int) -> int:
        return self.delta_off + obs * horizon + step_block

    def z_index(self, obs: int, face: int, step_block: int, horizon: int) -> int:
        return self.z_bases[obs] + face * horizon + step_block


def build_inner_milp(
    model: SmpcModel, risk_weight: float, pwl: PwlCdf
) -> tuple[MilpProblem, MilpLayout]:
    """Assemble the multiplier subproblem as a mixed-binary LP.

    Columns: controls u, L1 slacks v, means for steps 2..N+1, one risk
    term per obstacle and step, and one relax binary per obstacle face
    and step (0 keeps the face as the separating constraint, so each
    obstacle needs at least one zero per step). Minimizes sum(v) +
    risk_weight * sum(delta).
    """
    n, m, big_n = model.dim_x, model.dim_u, model.horizon
    n_obs = len(model.obstacles)
    u_off, v_off = 0, big_n * m
    x_off = 2 * big_n * m
    delta_off = x_off + big_n * n
    z_off = delta_off + n_obs * big_n
    z_bases = []
    z_count = 0
    for obs in model.obstacles:
        z_bases.append(z_off + z_count)
        z_count += obs.num_faces * big_n
    num_cols = z_off + z_count
    layout = MilpLayout(
        num_cols, u_off, v_off, x_off, delta_off, z_off, tuple(z_bases)
    )

    covs = propagate_covariance(model)
    ranges = _mean_ranges(model)
    rows, senses, rhs = [], [], []

    def add_row(cols, vals, sense, b):
        row = np.zeros(num_cols)
        row[cols] = vals
        rows.append(row)
        senses.append(sense)
        rhs.append(b)

    # |u| linearization: u - v <= 0 and -u - v <= 0
    for t in range(big_n):
        for d in range(m):
            ui = layout.u_index(t, d, m)
            vi = v_off + t * m + d
            add_row([ui, vi], [1.0, -1.0], LE, 0.0)
            add_row([ui, vi], [-1.0, -1.0], LE, 0.0)

    # dynamics: x_{t+1} - A x_t - B u_t = (A x_init for the first step)
    for t in range(big_n):
        for d in range(n):
            cols = [layout.x_index(t, d, n)]
            vals = [1.0]
            for dd in range(m):
                if model.b_mat[d, dd] != 0.0:
                    cols.append(layout.u_index(t, dd, m))
                    vals.append(-model.b_mat[d, dd])
            if t == 0:
                b = float(model.a_mat[d] @ model.x_init)
            else:
                for dd in range(n):
                    if model.a_mat[d, dd] != 0.0:
                        cols.append(layout.x_index(t - 1, dd, n))
                        vals.append(-model.a_mat[d, dd])
                b = 0.0
            add_row(cols, vals, EQ, b)

    # terminal condition on the mean
    for d in range(n):
        add_row([layout.x_index(big_n - 1, d, n)], [1.0], EQ, float(model.x_goal[d]))

    # obstacle separation and tail bounds at steps 2..N+1. The binary of
    # face j relaxes that face's rows; the per-group cap makes at least
    # one face bind, and the risk term answers only to bound faces.
    # Pinning more than one binary to zero would therefore overcount the
    # risk (delta would have to clear every pinned face's chords), so a
    # group is pre-resolved only when a single face settles it for free:
    # the reachable mean set never crosses it and its tail is past the
    # chord range. Such a group emits no rows at all.
    z_fix: dict[int, float] = {}
    for i, obs in enumerate(model.obstacles):
        for t in range(big_n):
            lo_t, hi_t = ranges[t]
            cov = covs[t + 1]
            faces = []
            certificate = None
            for j in range(obs.num_faces):
                a = obs.face_normals[j]
                b = float(obs.face_offsets[j])
                s = math.sqrt(max(float(a @ cov @ a), 0.0))
                row_lo = float(np.clip(a, 0, None) @ lo_t + np.clip(a, None, 0) @ hi_t)
                row_hi = float(np.clip(a, 0, None) @ hi_t + np.clip(a, None, 0) @ lo_t)
                always = row_lo >= b - 1e-9
                never = row_hi < b - 1e-9
                vacuous = s <= _SIGMA_FLOOR or pwl.value((b - row_lo) / s) == 0.0
                if always and vacuous and certificate is None:
                    certificate = j
                faces.append((j, a, b, s, row_lo, always, never, vacuous))
            if certificate is not None:
                for j, *_ in faces:
                    zi = layout.z_index(i, j, t, big_n)
                    z_fix[zi] = 0.0 if j == certificate else 1.0
                continue
            for j, a, b, s, row_lo, always, never, vacuous in faces:
                zi = layout.z_index(i, j, t, big_n)
                if never:
                    z_fix[zi] = 1.0  # cannot separate; its rows relax
                    continue  # to vacuity under z = 1, so skip them
                xcols = [layout.x_index(t, d, n) for d in range(n)]
                if not always:
                    # face kept (z = 0) forces the mean to its outer side
                    m_out = max(0.0, b - row_lo) + 1.0
                    add_row(xcols + [zi], list(a) + [m_out], GE, b)
                if vacuous:
                    # the worst reachable margin already sits past the
                    # left end of every chord: delta >= 0 covers them
                    continue
                y_max = (b - row_lo) / s
                di = layout.delta_index(i, t, big_n)
                for alpha, beta in zip(pwl.slopes, pwl.intercepts):
                    # delta >= alpha*(b - a@x)/s + beta unless relaxed
                    m_c = max(0.0, alpha * y_max + beta) + 1e-3
                    add_row(
                        [di] + xcols + [zi],
                        [1.0] + list(alpha * a / s) + [m_c],
                        GE,
                        alpha * b / s + beta,
                    )
            # keep at least one face per obstacle and step
            zcols = [layout.z_index(i, j, t, big_n) for j in range(obs.num_faces)]
            add_row(zcols, [1.0] * len(zcols), LE, float(obs.num_faces - 1))

    objective = np.zeros(num_cols)
    objective[v_off : v_off + big_n * m] = 1.0
    objective[delta_off : delta_off + n_obs * big_n] = risk_weight
    lower = np.full(num_cols, -np.inf)
    upper = np.full(num_cols, np.inf)
    lower[u_off : u_off + big_n * m] = np.tile(model.u_lower, big_n)
    upper[u_off : u_off + big_n * m] = np.tile(model.u_upper, big_n)
    lower[v_off : v_off + big_n * m] = 0.0
    lower[delta_off:] = 0.0
    upper[delta_off : delta_off + n_obs * big_n] = 1.0
    upper[z_off:] = 1.0
    for zi, val in z_fix.items():
        lower[zi] = upper[zi] = val

    lp = LpProblem(
        objective=objective,
        lhs=np.array(rows) if rows else np.zeros((0, num_cols)),
        senses=tuple(senses),
        rhs=np.array(rhs),
        lower=lower,
        upper=upper,
    )
    problem = MilpProblem(lp=lp, binary=tuple(range(z_off, num_cols)))
    return problem, layout


@dataclass(frozen=True, eq=False)
class ControlPlan:
    """Open-loop control sequence with its certified cost pair."""

    controls: np.ndarray
    mean: np.ndarray
    control_cost: float
    risk_bound: float


def _risk_terms(model: SmpcModel, covs, pwl: PwlCdf, path: np.ndarray):
    """Tightest per-face tail bound for each obstacle and step 2..N+1.

    Returns the (n_obs, N) bound matrix and a mask of (obstacle, step)
    pairs whose mean had no separating face at all; those entries carry
    probability one.
    """
    n_obs, big_n = len(model.obstacles), model.horizon
    terms = np.zeros((n_obs, big_n))
    inside = np.zeros((n_obs, big_n), dtype=bool)
    for i, obs in enumerate(model.obstacles):
        for t in range(big_n):
            x = path[t + 1]
            cov = covs[t + 1]
            best = None
            for j in range(obs.num_faces):
                a = obs.face_normals[j]
                b = float(obs.face_offsets[j])
                margin = float(a @ x) - b
                if margin < -1e-9:
                    continue
                s = math.sqrt(max(float(a @ cov @ a), 0.0))
                if s <= _SIGMA_FLOOR:
                    val = 0.0
                else:
                    val = pwl.value(min(-margin, 0.0) / s)
                best = val if best is None else min(best, val)
            if best is None:
                inside[i, t] = True
                terms[i, t] = 1.0
            else:
                terms[i, t] = best
    return terms, inside


class SmpcOracle(LagrangianOracle):
    """Multiplier oracle solving one mixed-binary program per query.

    Reported costs are recomputed from the extracted control sequence
    rather than read off the solver objective, so `evaluate` reproduces
    them exactly. Plans found at earlier multipliers are kept: re-pricing
    them gives each new solve an achievable incumbent, and when the tree
    proves nothing beats it the cached plan is returned without a fresh
    extraction. Bisection queries cluster around the optimal multiplier,
    so most solves end that way.
    """

    def __init__(
        self,
        model: SmpcModel,
        pwl: PwlCdf | None = None,
        milp_gap: float = 1e-9,
        max_nodes: int = 200_000,
    ):
        self.model = model
        self.pwl = pwl if pwl is not None else build_pwl_cdf()
        self.milp_gap = milp_gap
        self.max_nodes = max_nodes
        self._covs = propagate_covariance(model)
        self._plans: list[ControlPlan] = []
        self._plan_keys: set[bytes] = set()

    @property
    def k_constraints(self) -> int:
        return 1

    def query(self, lam: DualVector) -> PureCandidate:
        if lam.k != 1:
            raise InvalidInputError("this oracle has a single risk channel")
        weight = max(lam.values[0], _RISK_WEIGHT_FLOOR)
        problem, layout = build_inner_milp(self.model, weight, self.pwl)
        cached: ControlPlan | None = None
        incumbent = None
        if self._plans:
            vals = [p.control_cost + weight * p.risk_bound for p in self._plans]
            cached = self._plans[int(np.argmin(vals))]
            incumbent = min(vals) + 1e-10
        sol = solve_milp(
            problem,
            abs_gap=self.milp_gap,
            max_nodes=self.max_nodes,
            incumbent_objective=incumbent,
        )
        if sol.status == "bounded":
            assert cached is not None
            plan = cached
        elif sol.status == "optimal":
            big_n, m = self.model.horizon, self.model.dim_u
            controls = sol.x[layout.u_off : layout.u_off + big_n * m].reshape(big_n, m)
            plan = self._make_plan(controls)
            key = plan.controls.tobytes()
            if key not in self._plan_keys:
                self._plan_keys.add(key)
                self._plans.append(plan)
        else:
            raise InfeasibleProblemError(
                f"inner problem ended {sol.status}: {diagnose_infeasible(self.model)}"
            )
        return PureCandidate(plan, CostVector(plan.control_cost, (plan.risk_bound,)))

    def _make_plan(self, controls: np.ndarray) -> ControlPlan:
        path = mean_path(self.model, controls)
        terms, inside = _risk_terms(self.model, self._covs, self.pwl, path)
        if inside.any():
            i, t = np.argwhere(inside)[0]
            raise MixedControlError(
                f"solver returned a mean inside obstacle {i} at step {t + 2}"
            )
        cost = float(np.abs(controls).sum())
        return ControlPlan(controls, path, cost, float(terms.sum()))

    def evaluate(self, policy: object) -> CostVector:
        if not isinstance(policy, ControlPlan):
            raise InvalidInputError("expected a control plan")
        path = mean_path(self.model, policy.controls)
        terms, _ = _risk_terms(self.model, self._covs, self.pwl, path)
        return CostVector(float(np.abs(policy.controls).sum()), (float(terms.sum()),))


def diagnose_infeasible(model: SmpcModel) -> str:
    """Distinguish an unreachable goal from unsatisfiable obstacle constraints."""
    big_n, n, m = model.horizon, model.dim_x, model.dim_u
    nu = big_n * m
    nx = big_n * n
    num = nu + nx + n  # controls, means, miss slacks
    rows, senses, rhs = [], [], []
    for t in range(big_n):
        for d in range(n):
            row = np.zeros(num)
            row[nu + t * n + d] = 1.0
            row[t * m : (t + 1) * m] = -model.b_mat[d]
            if t == 0:
                b = float(model.a_mat[d] @ model.x_init)
            else:
                row[nu + (t - 1) * n : nu + t * n] -= model.a_mat[d]
                b = 0.0
            rows.append(row)
            senses.append(EQ)
            rhs.append(b)
    for d in range(n):
        for sign in (1.0, -1.0):
            row = np.zeros(num)
            row[nu + (big_n - 1) * n + d] = sign
            row[nu + nx + d] = -1.0
            rows.append(row)
            senses.append(LE)
            rhs.append(sign * float(model.x_goal[d]))
    objective = np.zeros(num)
    objective[nu + nx :] = 1.0
    lower = np.full(num, -np.inf)
    upper = np.full(num, np.inf)
    lower[:nu] = np.tile(model.u_lower, big_n)
    upper[:nu] = np.tile(model.u_upper, big_n)
    lower[nu + nx :] = 0.0
    sol = solve_lp(
        LpProblem(
            objective=objective,
            lhs=np.array(rows),
            senses=tuple(senses),
            rhs=np.array(rhs),
            lower=lower,
            upper=upper,
        )
    )
    if sol.status == "optimal" and sol.objective > 1e-6:
        return (
            f"terminal stage {big_n} cannot reach the goal, "
            f"best L1 miss {sol.objective:.6g}"
        )
    return "goal reachable but obstacle constraints cannot all be met"


@dataclass(frozen=True)
class RiskEstimate:
    rate: float
    ci99: tuple[float, float]
    n_rollouts: int


def _noise_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def estimate_risk_mc(
    model: SmpcModel,
    controls: np.ndarray,
    n_rollouts: int,
    seed: int,
    chunk: int = 100_000,
) -> RiskEstimate:
    """Empirical collision probability of one control sequence."""
    if n_rollouts < 1:
        raise InvalidInputError("need at least one rollout")
    rng = np.random.default_rng(seed)
    root = _noise_sqrt(model.sigma_w)
    controls = np.asarray(controls, dtype=float)
    failures = 0
    done = 0
    while done < n_rollouts:
        size = min(chunk, n_rollouts - done)
        x = np.tile(model.x_init, (size, 1))
        failed = np.zeros(size, dtype=bool)
        for k in range(model.horizon):
            noise = rng.standard_normal((size, model.dim_x)) @ root.T
            x = x @ model.a_mat.T + model.b_mat @ controls[k] + noise
            for obs in model.obstacles:
                failed |= obs.contains(x)
        failures += int(failed.sum())
        done += size
    lo, hi = wilson_ci_99(failures, n_rollouts)
    return RiskEstimate(failures / n_rollouts, (lo, hi), n_rollouts)


def estimate_mixture_risk_mc(
    model: SmpcModel,
    solution: MixedSolution,
    n_rollouts: int,
    seed: int,
) -> RiskEstimate:
    """Empirical collision probability of a mixed strategy over plans."""
    rng = np.random.default_rng(seed)
    probs = np.array(solution.probabilities)
    counts = rng.multinomial(n_rollouts, probs / probs.sum())
    failures = 0
    for (cand, _), cnt in zip(solution.components, counts):
        if cnt == 0:
            continue
        sub = estimate_risk_mc(
            model, cand.policy.controls, int(cnt), int(rng.integers(2**63))
        )
        failures += round(sub.rate * cnt)
    lo, hi = wilson_ci_99(failures, n_rollouts)
    return RiskEstimate(failures / n_rollouts, (lo, hi), n_rollouts)
