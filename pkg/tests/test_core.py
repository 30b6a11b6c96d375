from __future__ import annotations

import numpy as np
import pytest

from mixedctrl.core import (
    Bounds,
    CostVector,
    DualVector,
    InvalidInputError,
    MixedSolution,
    PureCandidate,
    lagrangian_value,
    mix_costs,
)


def test_mix_costs_even_two_point():
    mixed = mix_costs(
        [(CostVector(20.0, (0.005,)), 0.5), (CostVector(10.0, (0.015,)), 0.5)]
    )
    assert mixed.c0 == pytest.approx(15.0, abs=1e-12)
    assert mixed.c1 == pytest.approx(0.01, abs=1e-12)


def test_mix_costs_identity():
    c = CostVector(3.5, (0.2, 0.7))
    assert mix_costs([(c, 1.0)]) == c


def test_mix_costs_landing_weights():
    mixed = mix_costs(
        [
            (CostVector(645.49, (0.00016,)), 0.849),
            (CostVector(641.02, (0.00574,)), 0.151),
        ]
    )
    assert mixed.c0 == pytest.approx(644.81503, abs=1e-8)
    assert mixed.c1 == pytest.approx(0.00100258, abs=1e-10)
    # coarse targets the fine values round to
    assert mixed.c0 == pytest.approx(644.81, abs=1e-2)
    assert mixed.c1 == pytest.approx(0.001, abs=1e-4)


def test_mix_costs_rejects_bad_weights():
    c = CostVector(1.0, (0.5,))
    with pytest.raises(InvalidInputError):
        mix_costs([(c, 0.7), (c, 0.7)])
    with pytest.raises(InvalidInputError):
        mix_costs([(c, -0.2), (c, 1.2)])
    with pytest.raises(InvalidInputError):
        mix_costs([(c, 0.5), (CostVector(1.0, (0.5, 0.5)), 0.5)])


def test_mix_costs_weight_tolerance():
    c = CostVector(1.0, (0.5,))
    mixed = mix_costs([(c, 0.5), (c, 0.5 + 5e-10)])
    assert mixed.c0 == pytest.approx(1.0, abs=1e-9)


def test_lagrangian_value_frozen():
    val = lagrangian_value(
        CostVector(20.0, (0.005,)), DualVector((1000.0,)), Bounds((0.01,))
    )
    assert val == pytest.approx(15.0, abs=1e-12)


def test_lagrangian_value_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        lagrangian_value(
            CostVector(1.0, (0.5, 0.5)), DualVector((1.0,)), Bounds((0.1, 0.1))
        )


def test_lagrangian_mix_linearity():
    rng = np.random.default_rng(42)
    for _ in range(50):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        costs = [
            CostVector(float(rng.uniform(0, 50)), tuple(rng.uniform(0, 1, size=k)))
            for _ in range(n)
        ]
        w = rng.uniform(0.1, 1.0, size=n)
        w /= w.sum()
        lam = DualVector(tuple(rng.uniform(0, 20, size=k)))
        v = Bounds(tuple(rng.uniform(0, 1, size=k)))
        mixed = mix_costs(list(zip(costs, w)))
        direct = lagrangian_value(mixed, lam, v)
        weighted = sum(
            wi * lagrangian_value(c, lam, v) for c, wi in zip(costs, w)
        )
        assert direct == pytest.approx(weighted, abs=1e-10, rel=1e-12)


def test_dual_vector_rejects_negative():
    with pytest.raises(InvalidInputError):
        DualVector((-1.0,))


def test_cost_vector_needs_constraint_entry():
    with pytest.raises(InvalidInputError):
        CostVector(1.0, ())
    with pytest.raises(InvalidInputError):
        CostVector(float("nan"), (0.5,))


def test_mixed_solution_validates_aggregate():
    a = PureCandidate(0, CostVector(20.0, (0.005,)))
    b = PureCandidate(1, CostVector(10.0, (0.015,)))
    good = mix_costs([(a.cost, 0.5), (b.cost, 0.5)])
    MixedSolution(((a, 0.5), (b, 0.5)), good, DualVector((1000.0,)), 5.0)
    with pytest.raises(InvalidInputError):
        MixedSolution(
            ((a, 0.5), (b, 0.5)), CostVector(14.0, (0.01,)), DualVector((1000.0,)), 5.0
        )
    with pytest.raises(InvalidInputError):  # support larger than K+1
        MixedSolution(
            ((a, 0.4), (b, 0.4), (a, 0.2)), good, DualVector((1000.0,)), 5.0
        )
    with pytest.raises(InvalidInputError):  # negative gap
        MixedSolution(((a, 0.5), (b, 0.5)), good, DualVector((1000.0,)), -1.0)
