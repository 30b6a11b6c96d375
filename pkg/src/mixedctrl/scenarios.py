"""Problem backends packaged as Lagrangian oracles.

The finite-set oracle answers queries by scanning an explicit candidate
list; it doubles as the reference backend in tests. Grid and landing
scenarios build finite MDPs for the dynamic-programming backend.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .ccmdp import Mdp, MdpOracle, ShiftSpread
from .core import (
    Bounds,
    CostVector,
    DualVector,
    InvalidInputError,
    LagrangianOracle,
    PureCandidate,
    lagrangian_value,
)


class FiniteSetOracle(LagrangianOracle):
    """Pointwise minimizer over an explicit finite set of cost vectors.

    Policies are indices into the candidate list; ties break to the lowest
    index so queries are deterministic.
    """

    def __init__(self, costs: Sequence[CostVector], bounds: Bounds):
        costs = tuple(costs)
        if not costs:
            raise InvalidInputError("finite oracle needs at least one cost vector")
        if any(c.k != bounds.k for c in costs):
            raise InvalidInputError("cost vectors and bounds disagree on K")
        self._costs = costs
        self.bounds = bounds

    @property
    def k_constraints(self) -> int:
        return self.bounds.k

    @property
    def costs(self) -> tuple[CostVector, ...]:
        return self._costs

    def query(self, lam: DualVector) -> PureCandidate:
        values = [lagrangian_value(c, lam, self.bounds) for c in self._costs]
        best = values.index(min(values))
        return PureCandidate(best, self._costs[best])

    def evaluate(self, policy: object) -> CostVector:
        return self._costs[int(policy)]


def toy_oracle() -> FiniteSetOracle:
    """Two-point instance: a safe costly policy and a cheap risky one.

    The risk bound 0.01 sits between the two risks, so the optimal
    strategy mixes them half and half for an aggregate of (15, 0.01).
    """
    return FiniteSetOracle(
        costs=(CostVector(20.0, (0.005,)), CostVector(10.0, (0.015,))),
        bounds=Bounds((0.01,)),
    )


# --- grid plumbing shared by the MDP scenarios ---
#
# Cells are (x, y) with x in [0, width) and y in [0, height); y grows
# downward so map files read naturally. Flat index is x * height + y.


def parse_grid_map(text: str):
    """Read a character grid: '#' infeasible, '.' feasible, else a marker.

    Returns the feasibility array indexed [x, y] and a dict mapping each
    marker character to its cell list (marker cells are feasible).
    """
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty map")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise InvalidInputError("map rows have unequal lengths")
    height = len(lines)
    feasible = np.ones((width, height), dtype=bool)
    markers: dict[str, list[tuple[int, int]]] = {}
    for y, line in enumerate(lines):
        for x, ch in enumerate(line):
            if ch == "#":
                feasible[x, y] = False
            elif ch != ".":
                markers.setdefault(ch, []).append((x, y))
    return feasible, markers


def format_grid_map(feasible: np.ndarray, markers: dict | None = None) -> str:
    cells = {}
    for ch, pts in (markers or {}).items():
        for pt in pts:
            cells[tuple(pt)] = ch
    width, height = feasible.shape
    rows = []
    for y in range(height):
        rows.append(
            "".join(
                cells.get((x, y), "." if feasible[x, y] else "#")
                for x in range(width)
            )
        )
    return "\n".join(rows) + "\n"


def _kernel_1d(sigma: float):
    if sigma < 0:
        raise InvalidInputError("noise scale must be nonnegative")
    if sigma == 0:
        return np.array([0]), np.array([1.0])
    radius = max(1, math.ceil(3.0 * sigma))
    off = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (off / sigma) ** 2)
    return off, w / w.sum()


def _product_kernel(sigma_x: float, sigma_y: float):
    ox, wx = _kernel_1d(sigma_x)
    oy, wy = _kernel_1d(sigma_y)
    offs = np.array([(a, b) for a in ox for b in oy], dtype=np.int64)
    ws = np.outer(wx, wy).ravel()
    return offs, ws


def _clipped_spread(width: int, height: int, offsets, weights) -> sp.csr_matrix:
    """Row-stochastic disturbance matrix; mass pushed off-grid piles on the edge."""
    n = width * height
    xs, ys = np.divmod(np.arange(n), height)
    tx = np.clip(xs[:, None] + offsets[None, :, 0], 0, width - 1)
    ty = np.clip(ys[:, None] + offsets[None, :, 1], 0, height - 1)
    rows = np.repeat(np.arange(n), len(weights))
    cols = (tx * height + ty).ravel()
    data = np.tile(weights, n)
    m = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    return m


@dataclass(frozen=True)
class GridScenario:
    """Single-integrator navigation on a W x H grid with crash cells."""

    width: int
    height: int
    horizon: int
    start: tuple[int, int]
    goal: tuple[int, int]
    obstacles: frozenset
    max_step: int = 6
    sigma: float = 1.0
    risk_bound: float = 0.02
    miss_penalty: float | None = None


def grid_actions(max_step: int):
    """Integer displacements of Euclidean length at most max_step, in fixed order."""
    d = max_step
    return [
        (dx, dy)
        for dx in range(-d, d + 1)
        for dy in range(-d, d + 1)
        if dx * dx + dy * dy <= d * d
    ]


def grid_scenario(scn: GridScenario):
    """Build the navigation Mdp; the goal is enforced by a terminal miss penalty.

    Stage cost is the displacement length, so the cost channel is the
    expected path length. Mass that ends the horizon alive anywhere but
    the goal pays the penalty; mass absorbed by a crash pays only the
    risk channel.
    """
    w, h, t = scn.width, scn.height, scn.horizon
    if w < 1 or h < 1 or t < 1 or scn.max_step < 1:
        raise InvalidInputError("grid dimensions, horizon, and step must be positive")

    def check_cell(cell, what):
        x, y = cell
        if not (0 <= x < w and 0 <= y < h):
            raise InvalidInputError(f"{what} {cell} outside the grid")
        if (x, y) in scn.obstacles:
            raise InvalidInputError(f"{what} {cell} sits on an obstacle")

    check_cell(scn.start, "start")
    check_cell(scn.goal, "goal")
    n = w * h
    goal_idx = scn.goal[0] * h + scn.goal[1]
    xs, ys = np.divmod(np.arange(n), h)
    actions = grid_actions(scn.max_step)
    targets = np.full((len(actions), n), -1, dtype=np.int64)
    lengths = np.empty(len(actions))
    for a, (dx, dy) in enumerate(actions):
        lengths[a] = math.hypot(dx, dy)
        tx, ty = xs + dx, ys + dy
        ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
        targets[a, ok] = tx[ok] * h + ty[ok]
    spread = _clipped_spread(w, h, *_product_kernel(scn.sigma, scn.sigma))
    # the goal is absorbing: once there the only move is a free noise-free
    # stay, implemented as an extra deterministic spread row
    park = sp.csr_matrix(
        (np.ones(1), (np.zeros(1, dtype=int), np.array([goal_idx]))), shape=(1, n)
    )
    spread = sp.vstack([spread, park]).tocsr()
    stay = actions.index((0, 0))
    targets[:, goal_idx] = -1
    targets[stay, goal_idx] = n
    dyn = ShiftSpread(targets, spread)

    base = np.where(targets.T >= 0, lengths[None, :], np.inf)
    fail = np.zeros(n, dtype=bool)
    for x, y in scn.obstacles:
        if 0 <= x < w and 0 <= y < h:
            fail[x * h + y] = True
    penalty = scn.miss_penalty
    if penalty is None:
        penalty = 10.0 * t * scn.max_step
    goal_mass = spread[:, goal_idx].toarray().ravel()
    crash_mass = spread @ fail.astype(float)
    miss = np.clip(1.0 - goal_mass - crash_mass, 0.0, 1.0)
    safe_t = np.where(targets >= 0, targets, 0)
    last = base + penalty * np.where(targets.T >= 0, miss[safe_t].T, 0.0)

    initial = np.zeros(n)
    initial[scn.start[0] * h + scn.start[1]] = 1.0
    return Mdp(
        horizon=t,
        state_counts=(n,) * (t + 1),
        dynamics=(dyn,) * t,
        stage_costs=(base,) * (t - 1) + (last,),
        failure_masks=(fail,) * (t + 1),
        initial=initial,
    )


def grid_oracle(scn: GridScenario) -> MdpOracle:
    return MdpOracle(grid_scenario(scn), Bounds((scn.risk_bound,)))


@dataclass(eq=False)
class EdlScenario:
    """Multi-stage landing-site targeting over a hazard map.

    Each stage re-aims within an ellipsoid around the current projected
    point and picks up stage disturbance; the only failure check is the
    touchdown cell, and the only cost is the surface traverse from the
    touchdown cell through both science sites in the cheaper order.
    """

    width: int
    height: int
    stages: int
    start: tuple[int, int]
    feasible: np.ndarray
    ellipsoids: tuple  # (matrix, radius) per stage
    sigmas: tuple  # (sigma_x, sigma_y) per stage
    sites: tuple
    risk_bound: float
    unreachable_cost: float | None = None


def _bfs_distance(feasible: np.ndarray, source) -> np.ndarray:
    w, h = feasible.shape
    dist = np.full((w, h), np.inf)
    sx, sy = source
    if not feasible[sx, sy]:
        return dist
    dist[sx, sy] = 0.0
    queue = deque([(sx, sy)])
    while queue:
        x, y = queue.popleft()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < w and 0 <= ny < h and feasible[nx, ny]:
                if dist[nx, ny] == np.inf:
                    dist[nx, ny] = dist[x, y] + 1.0
                    queue.append((nx, ny))
    return dist


def traverse_field(feasible: np.ndarray, sites) -> np.ndarray:
    """Walk distance from each cell through both sites, cheaper order first."""
    if len(sites) != 2:
        raise InvalidInputError("exactly two science sites expected")
    (ax, ay), (bx, by) = sites
    if not (feasible[ax, ay] and feasible[bx, by]):
        raise InvalidInputError("science site on an infeasible cell")
    da = _bfs_distance(feasible, (ax, ay))
    db = _bfs_distance(feasible, (bx, by))
    between = da[bx, by]
    if not np.isfinite(between):
        raise InvalidInputError("science sites are not connected")
    return np.minimum(da, db) + between


def ellipsoid_offsets(matrix, radius: float):
    """Integer points with offset' @ matrix @ offset <= radius^2, fixed order."""
    mat = np.asarray(matrix, dtype=float)
    if mat.shape != (2, 2) or not np.allclose(mat, mat.T, atol=1e-12):
        raise InvalidInputError("ellipsoid matrix must be symmetric 2x2")
    eigs = np.linalg.eigvalsh(mat)
    if eigs[0] <= 0:
        raise InvalidInputError("ellipsoid matrix must be positive definite")
    reach = int(math.ceil(radius / math.sqrt(eigs[0])))
    out = []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            v = np.array([dx, dy], dtype=float)
            if v @ mat @ v <= radius * radius + 1e-12:
                out.append((dx, dy))
    return out


def edl_scenario(scn: EdlScenario):
    w, h, t = scn.width, scn.height, scn.stages
    if t < 2:
        raise InvalidInputError("landing problem needs at least two stages")
    feasible = np.asarray(scn.feasible, dtype=bool)
    if feasible.shape != (w, h):
        raise InvalidInputError("feasibility map shape mismatch")
    if not feasible.any():
        raise InvalidInputError("feasibility map has no feasible cell")
    if len(scn.ellipsoids) != t or len(scn.sigmas) != t:
        raise InvalidInputError("need one ellipsoid and one noise pair per stage")
    sx, sy = scn.start
    if not (0 <= sx < w and 0 <= sy < h):
        raise InvalidInputError("start outside the grid")

    trav = traverse_field(feasible, scn.sites)
    sentinel = scn.unreachable_cost
    if sentinel is None:
        sentinel = 4.0 * w * h
    landed_cost = np.where(feasible, np.where(np.isfinite(trav), trav, sentinel), 0.0)

    n = w * h
    xs, ys = np.divmod(np.arange(n), h)
    dynamics = []
    costs = []
    for k in range(t):
        offsets = ellipsoid_offsets(*scn.ellipsoids[k])
        targets = np.full((len(offsets), n), -1, dtype=np.int64)
        for a, (dx, dy) in enumerate(offsets):
            tx, ty = xs + dx, ys + dy
            ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
            targets[a, ok] = tx[ok] * h + ty[ok]
        spread = _clipped_spread(w, h, *_product_kernel(*scn.sigmas[k]))
        dynamics.append(ShiftSpread(targets, spread))
        admissible = targets.T >= 0
        if k < t - 1:
            costs.append(np.where(admissible, 0.0, np.inf))
        else:
            expected = spread @ landed_cost.ravel()
            safe_t = np.where(targets >= 0, targets, 0)
            costs.append(np.where(admissible, expected[safe_t].T, np.inf))
    masks = [np.zeros(n, dtype=bool) for _ in range(t)]
    masks.append(~feasible.ravel())
    initial = np.zeros(n)
    initial[sx * h + sy] = 1.0
    return Mdp(
        horizon=t,
        state_counts=(n,) * (t + 1),
        dynamics=tuple(dynamics),
        stage_costs=tuple(costs),
        failure_masks=tuple(masks),
        initial=initial,
    )


def edl_oracle(scn: EdlScenario) -> MdpOracle:
    return MdpOracle(edl_scenario(scn), Bounds((scn.risk_bound,)))


def default_grid_scenario() -> GridScenario:
    """Desk-scale navigation map: two wall blocks, a narrow middle passage,
    and a wider detour corridor along the bottom edge."""
    obstacles = set()
    for x in range(12, 18):
        for y in range(0, 12):
            obstacles.add((x, y))
        for y in range(15, 26):
            obstacles.add((x, y))
    return GridScenario(
        width=30,
        height=30,
        horizon=15,
        start=(2, 13),
        goal=(27, 13),
        obstacles=frozenset(obstacles),
        max_step=6,
        sigma=1.0,
        risk_bound=0.02,
    )


def default_edl_scenario(seed: int = 7) -> EdlScenario:
    """Desk-scale landing map: seeded hazard blobs around two science sites."""
    width = height = 36
    rng = np.random.default_rng(seed)
    feasible = np.ones((width, height), dtype=bool)
    for _ in range(40):
        cx = int(rng.integers(0, width))
        cy = int(rng.integers(0, height))
        r = int(rng.integers(1, 4))
        xs, ys = np.meshgrid(np.arange(width), np.arange(height), indexing="ij")
        feasible &= (xs - cx) ** 2 + (ys - cy) ** 2 > r * r
    sites = ((6, 28), (30, 8))
    for sx, sy in sites:
        xs, ys = np.meshgrid(np.arange(width), np.arange(height), indexing="ij")
        feasible |= (xs - sx) ** 2 + (ys - sy) ** 2 <= 4
    return EdlScenario(
        width=width,
        height=height,
        stages=3,
        start=(18, 18),
        feasible=feasible,
        ellipsoids=((np.eye(2), 10.0), (np.eye(2), 6.0), (np.eye(2), 3.0)),
        sigmas=((2.0, 2.0), (1.2, 1.2), (0.7, 0.7)),
        sites=sites,
        risk_bound=0.001,
    )


@dataclass(eq=False)
class CorridorScenario:
    """Default chance-constrained corridor instance for the MPC backend."""

    model: object
    bounds: Bounds
    pwl_segments: int


def corridor_scenario() -> CorridorScenario:
    """Two walls with a narrow slot between them, start and goal on axis.

    Per-step moves are capped at 1.0 while the walls are 1.0 wide, so a
    mean path cannot jump the band: it must thread the slot (short but
    close to both walls) or climb over the upper wall (longer, far from
    everything). The lower wall runs deeper, so going under never pays.
    """
    from .smpc import Obstacle, SmpcModel

    upper = Obstacle(
        [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
        [3.5, -2.5, 2.0, -0.6],
    )
    lower = Obstacle(
        [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
        [3.5, -2.5, -0.2, 3.0],
    )
    model = SmpcModel(
        a_mat=np.eye(2),
        b_mat=np.eye(2),
        sigma_w=0.005 * np.eye(2),
        horizon=7,
        x_init=[0.0, 0.0],
        x_goal=[6.0, 0.0],
        u_lower=[-1.0, -1.0],
        u_upper=[1.0, 1.0],
        obstacles=(upper, lower),
    )
    return CorridorScenario(model=model, bounds=Bounds((0.001,)), pwl_segments=6)
