from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbess.aggregate import aggregate_all, singleton_set
from clusterbess.cell import CellParams
from clusterbess.conic import solve
from clusterbess.dispatch import (
    HorizonInput,
    build_inter_cluster,
    extract_first_step,
    relaxation_gap,
    slack_sums,
    table1_constraints,
    table1_variables,
)
from clusterbess.pack import Pack, PackState, table2_population

from conftest import two_cell_pack


def identical(k, soc=0.6, temp=300.0):
    pack = Pack.from_cells([CellParams()] * k)
    return singleton_set(pack, PackState(np.full(k, soc), np.full(k, temp)))


def solved(inp):
    p = build_inter_cluster(inp)
    return p, solve(p)


def delivered(sol, layout):
    x = sol.x
    return x[layout.P_S].sum(axis=0) - x[layout.P_l].sum(axis=0)


class TestCounts:
    @pytest.mark.parametrize("H, k", [(1, 1), (5, 3), (10, 4), (4, 9), (20, 15)])
    def test_table_counts(self, pack40, H, k):
        pack, state = pack40
        cs = aggregate_all(pack, state, np.arange(pack.n) % k, k)
        p = build_inter_cluster(HorizonInput(cs, np.full(H, 500.0)))
        assert p.counted_vars == table1_variables(H, k)
        assert p.counted_constraints == table1_constraints(H, k)

    def test_closed_forms(self):
        assert table1_variables(10, 15) == 885
        assert table1_constraints(10, 15) == 1735

    def test_exact_current_counts_unchanged(self, pack40):
        pack, state = pack40
        cs = aggregate_all(pack, state, np.arange(pack.n) % 5, 5)
        p = build_inter_cluster(HorizonInput(cs, np.full(3, 500.0), exact_current=True))
        assert p.counted_vars == table1_variables(3, 5)
        assert p.counted_constraints == table1_constraints(3, 5)


class TestSolutions:
    def test_zero_demand_identical_is_idle(self):
        inp = HorizonInput(identical(4), np.zeros(3))
        p, sol = solved(inp)
        assert sol.optimal
        np.testing.assert_allclose(sol.x[p.layout.P_S], 0.0, atol=1e-6)
        assert sol.objective == pytest.approx(0.0, abs=1e-6)

    def test_symmetric_split(self):
        inp = HorizonInput(identical(3), np.array([30.0, 20.0]))
        p, sol = solved(inp)
        ps, pl = extract_first_step(sol, p.layout)
        np.testing.assert_allclose(ps, ps.mean(), rtol=1e-5)
        assert (ps - pl).sum() == pytest.approx(30.0, abs=1e-6)

    def test_loss_cone_tight_at_optimum(self, pack40):
        pack, state = pack40
        cs = aggregate_all(pack, state, np.arange(pack.n) % 4, 4)
        p, sol = solved(HorizonInput(cs, np.array([800.0, 600.0, -300.0]), lambda_E=1.0, lambda_T=0.5))
        assert sol.optimal
        assert np.abs(relaxation_gap(sol, p.layout)).max() < 1e-5

    def test_loss_matches_resistive_law(self):
        # single cluster: P_l = R * (P_S / u)^2 at the first step
        cs = identical(1)
        p, sol = solved(HorizonInput(cs, np.array([15.0])))
        ps, pl = extract_first_step(sol, p.layout)
        assert pl[0] == pytest.approx(cs.resistance[0] * (ps[0] / cs.u[0]) ** 2, rel=1e-5)
        assert ps[0] - pl[0] == pytest.approx(15.0, abs=1e-6)

    def test_lower_resistance_takes_more(self):
        pack, state = two_cell_pack()
        p, sol = solved(HorizonInput(singleton_set(pack, state), np.array([25.0]), lambda_E=0.0, lambda_T=0.0))
        ps, _ = extract_first_step(sol, p.layout)
        assert ps[0] / ps[1] == pytest.approx(2.0, rel=1e-4)

    def test_impossible_demand_infeasible(self):
        cs = identical(2)
        too_much = 2 * 4.2 * 7.5 * 2
        _, sol = solved(HorizonInput(cs, np.array([too_much])))
        assert not sol.optimal
        with pytest.raises(RuntimeError):
            extract_first_step(sol, build_inter_cluster(HorizonInput(cs, np.array([1.0]))).layout)

    def test_slacks_zero_when_balanced(self):
        p, sol = solved(HorizonInput(identical(3), np.array([10.0, 10.0])))
        sE, sT = slack_sums(sol, p.layout)
        assert sE == pytest.approx(0.0, abs=1e-7) and sT == pytest.approx(0.0, abs=1e-7)

    def test_dense_and_aux_mean_agree(self, pack40):
        pack, state = pack40
        cs = aggregate_all(pack, state, np.arange(pack.n) % 4, 4)
        d = np.array([700.0, -200.0, 400.0])
        _, a = solved(HorizonInput(cs, d, dense_mean=True))
        _, b = solved(HorizonInput(cs, d, dense_mean=False))
        assert a.objective == pytest.approx(b.objective, rel=1e-5, abs=1e-5)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-0.5, 0.6), st.integers(1, 4))
    def test_feasible_demand_is_met(self, seed, frac, H):
        pack, state = table2_population(12, seed)
        cs = aggregate_all(pack, state, np.arange(12) % 3, 3)
        cap = float((cs.u * cs.i_max).sum())
        p, sol = solved(HorizonInput(cs, np.full(H, frac * cap)))
        assert sol.optimal
        np.testing.assert_allclose(delivered(sol, p.layout), frac * cap, atol=1e-5 * (1 + cap))
        assert sol.x[p.layout.xi_E].min() >= -1e-9


class TestGrouped:
    def test_matches_separate_solves(self, pack40):
        pack, state = pack40
        members = [np.arange(0, 5), np.arange(5, 12), np.arange(12, 15)]
        demand = np.array([60.0, 90.0, -20.0])
        idx = np.concatenate(members)
        groups = np.repeat(np.arange(3), [len(m) for m in members])
        cs = singleton_set(pack.subset(idx), PackState(state.soc[idx], state.temperature[idx]))
        p, sol = solved(HorizonInput(cs, demand[:, None], groups=groups))
        assert sol.optimal
        ps_all, _ = extract_first_step(sol, p.layout)
        offset = 0
        for g, m in enumerate(members):
            sub = singleton_set(pack.subset(m), PackState(state.soc[m], state.temperature[m]))
            q, s = solved(HorizonInput(sub, [demand[g]], dense_mean=False))
            ps, _ = extract_first_step(s, q.layout)
            np.testing.assert_allclose(ps_all[offset : offset + len(m)], ps, rtol=1e-4, atol=1e-4)
            offset += len(m)

    def test_per_group_demand_rows(self, pack40):
        pack, state = pack40
        cs = singleton_set(pack.subset(np.arange(6)), PackState(state.soc[:6], state.temperature[:6]))
        groups = np.array([0, 0, 1, 1, 1, 0])
        p, sol = solved(HorizonInput(cs, np.array([[30.0], [-10.0]]), groups=groups))
        x = sol.x
        net = x[p.layout.P_S[:, 0]] - x[p.layout.P_l[:, 0]]
        assert net[groups == 0].sum() == pytest.approx(30.0, abs=1e-6)
        assert net[groups == 1].sum() == pytest.approx(-10.0, abs=1e-6)

    @pytest.mark.parametrize(
        "groups, demand",
        [
            (np.array([0, 2, 2]), np.zeros((3, 1))),
            (np.array([0, 1]), np.zeros((3, 1))),
            (np.array([0, 0, 1]), np.zeros((3, 1))),
            (np.array([0, 0, 1]), np.zeros(1)),
        ],
    )
    def test_validation(self, groups, demand):
        with pytest.raises(ValueError):
            HorizonInput(identical(3), demand, groups=groups)


class TestInputValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"demand": np.zeros(0)},
            {"demand": np.array([np.nan])},
            {"demand": np.zeros((2, 2))},
            {"dt": 0.0},
            {"dq_bar": -0.1},
            {"lambda_E": -1.0},
        ],
    )
    def test_rejected(self, kwargs):
        base = {"clusters": identical(2), "demand": np.zeros(1)}
        with pytest.raises(ValueError):
            HorizonInput(**{**base, **kwargs})
