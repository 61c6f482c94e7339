from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbess.conic import ProblemBuilder, dump, residuals, solve

NONE = (np.array([[-1]]), 0.0, 0.0)


def one(col, coef=1.0, const=0.0):
    return (np.array([[col]]), coef, const)


class TestSolve:
    def test_box_lp(self):
        b = ProblemBuilder()
        x = b.var((1,), "x", lb=0.0, ub=3.0, cost=-1.0)
        sol = solve(b.build())
        assert sol.optimal
        assert sol.x[x[0]] == pytest.approx(3.0, abs=1e-7)

    def test_equality_and_row(self):
        # min x + 2y, x + y = 5, x <= 2
        b = ProblemBuilder()
        x = b.var((2,), "x", lb=0.0, cost=[1.0, 2.0])
        b.eq([[x[0], x[1]]], [[1.0, 1.0]], [5.0], "sum")
        b.le([[x[0]]], [[1.0]], [2.0], "cap")
        sol = solve(b.build())
        np.testing.assert_allclose(sol.x, [2.0, 3.0], atol=1e-7)
        assert sol.objective == pytest.approx(8.0, abs=1e-6)

    def test_rotated_cone_fixed_w(self):
        # 2*t*1 >= 3^2 gives t = 4.5
        b = ProblemBuilder()
        t = b.var((1,), "t", lb=0.0, cost=1.0)
        b.rcone(one(t[0]), (np.array([[-1]]), 0.0, 1.0), (np.array([[-1]]), 0.0, 3.0), "cone")
        sol = solve(b.build())
        assert sol.x[t[0]] == pytest.approx(4.5, abs=1e-6)

    def test_rotated_cone_product(self):
        # min x + y with 2xy >= 4: x = y = sqrt(2)
        b = ProblemBuilder()
        x = b.var((2,), "x", lb=0.0, cost=1.0)
        b.rcone(one(x[0]), one(x[1]), (np.array([[-1]]), 0.0, 2.0), "cone")
        sol = solve(b.build())
        np.testing.assert_allclose(sol.x, np.sqrt(2.0), atol=1e-6)
        assert sol.residuals.max < 1e-6

    def test_infeasible(self):
        b = ProblemBuilder()
        x = b.var((1,), "x", lb=2.0, ub=np.inf, cost=1.0)
        b.le([[x[0]]], [[1.0]], [1.0], "cap")
        assert solve(b.build()).status == "infeasible"

    def test_badly_scaled_variables(self):
        # energy-sized and current-sized unknowns in one row
        b = ProblemBuilder()
        e = b.var((1,), "e", lb=-1e5, ub=1e5, cost=1e-4, scale=1e4)
        i = b.var((1,), "i", lb=-7.5, ub=7.5, cost=1.0, scale=1.0)
        b.eq([[e[0], i[0]]], [[1.0, -3.7]], [-2.0e4], "link")
        sol = solve(b.build())
        assert sol.optimal
        assert sol.x[e[0]] - 3.7 * sol.x[i[0]] == pytest.approx(-2.0e4, rel=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
    def test_cone_projection_oracle(self, a, c, w):
        b = ProblemBuilder()
        x = b.var((2,), "x", lb=0.0, cost=[a, c])
        b.rcone(one(x[0]), one(x[1]), (np.array([[-1]]), 0.0, w), "cone")
        sol = solve(b.build())
        # at the optimum uv = w^2/2 and a*u = c*v, so the value is |w| * sqrt(2ac)
        assert sol.objective == pytest.approx(abs(w) * np.sqrt(2 * a * c), rel=1e-5, abs=1e-6)


class TestResiduals:
    def test_feasible_point_is_zero(self):
        b = ProblemBuilder()
        x = b.var((2,), "x", lb=0.0, cost=1.0)
        b.rcone(one(x[0]), one(x[1]), (np.array([[-1]]), 0.0, 2.0), "cone")
        p = b.build()
        assert residuals(p, np.array([2.0, 1.0])).max == 0.0

    def test_cone_violation_reported(self):
        b = ProblemBuilder()
        x = b.var((2,), "x", lb=0.0, cost=1.0)
        b.rcone(one(x[0]), one(x[1]), (np.array([[-1]]), 0.0, 2.0), "cone")
        r = residuals(b.build(), np.array([1.0, 1.0]))
        assert r.cone > 0.1

    def test_cone_residual_is_smallest_fix(self):
        # u near zero with tiny w: moving w is the cheap repair
        b = ProblemBuilder()
        x = b.var((3,), "x", cost=0.0)
        b.rcone(one(x[0]), one(x[1]), one(x[2]), "cone")
        r = residuals(b.build(), np.array([1e-12, 1.0, 1e-5]))
        assert r.cone < 1e-4

    def test_equality_violation(self):
        b = ProblemBuilder()
        x = b.var((1,), "x", cost=0.0)
        b.eq([[x[0]]], [[1.0]], [1.0], "e")
        assert residuals(b.build(), np.array([1.5])).equality == pytest.approx(0.5 / 2.5)


class TestBookkeeping:
    def test_counts_and_aux(self):
        b = ProblemBuilder()
        b.var((3,), "a")
        b.var((2,), "aux", aux=True)
        b.le(np.zeros((4, 1), int), np.ones((4, 1)), np.zeros(4), "rows", counted=2)
        p = b.build()
        assert p.num_vars == 5 and p.counted_vars == 3
        assert p.counted_constraints == 2

    def test_dump_lines(self):
        b = ProblemBuilder()
        x = b.var((1,), "x", lb=0.0, ub=3.0, cost=-1.0)
        b.le([[x[0]]], [[2.0]], [4.0], "cap")
        text = dump(b.build())
        assert text.splitlines() == [
            "vars 1",
            "var 0 x lb=0 ub=3 c=-1",
            "le cap 2*x0 <= 4",
        ]

    def test_wrong_shape_rejected(self):
        b = ProblemBuilder()
        b.var((2,), "x")
        p = b.build()
        with pytest.raises(ValueError):
            type(p)(**{**p.__dict__, "c": np.zeros(3)})
