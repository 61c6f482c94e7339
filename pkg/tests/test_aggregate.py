from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbess.aggregate import (
    ClusterSet,
    aggregate,
    aggregate_all,
    cluster_ocv,
    delta_E_bound,
    singleton_set,
    soc_energy_maps,
    squared_voltage_bound,
)
from clusterbess.cell import AH, CellParams, DomainError, OcvCurve
from clusterbess.pack import Pack, PackState, table2_population


def identical_pack(n, soc=0.6, temp=300.0, params=None):
    params = params or CellParams()
    return Pack.from_cells([params] * n), PackState(np.full(n, soc), np.full(n, temp))


class TestIdenticalCells:
    def test_sums(self):
        pack, state = identical_pack(5)
        m = aggregate(pack, state, np.arange(5))
        assert m.capacity == pytest.approx(5 * 2.5 * AH, rel=0, abs=0)
        assert m.capacity / AH == pytest.approx(12.5)
        assert m.i_max == 5 * 7.5 and m.i_min == 5 * -7.5

    @pytest.mark.parametrize("n", [1, 2, 7, 40])
    def test_parallel_resistance(self, n):
        pack, state = identical_pack(n)
        m = aggregate(pack, state, np.arange(n))
        assert m.resistance == pytest.approx(pack.r_total[0] / n, rel=1e-15)

    def test_ocv_and_states_unchanged(self):
        p = CellParams()
        pack, state = identical_pack(6, soc=0.42, temp=299.5, params=p)
        m = aggregate(pack, state, np.arange(6))
        assert m.soc == pytest.approx(0.42, rel=1e-15)
        assert m.temperature == pytest.approx(299.5, rel=1e-15)
        np.testing.assert_allclose(m.alpha, p.ocv.alphas, rtol=1e-15)
        np.testing.assert_allclose(m.beta, p.ocv.betas, rtol=1e-15)
        for q in np.linspace(0, 1, 11):
            assert cluster_ocv(m, q) == pytest.approx(pack.ocv_of([0], [q])[0], rel=1e-15)

    def test_thermal_time_constant_preserved(self):
        pack, state = identical_pack(8)
        m = aggregate(pack, state, np.arange(8))
        tau_cell = pack.thermal_capacitance[0] * pack.r_conv[0]
        assert m.thermal_capacitance * m.r_conv == pytest.approx(tau_cell, rel=1e-12)


class TestHeterogeneous:
    def test_conductance_weighted_ocv(self):
        # u = 3.6 and 3.9 V from linear curves at q = 0.5
        cells = [
            CellParams(resistance=0.030, converter_resistance=0.0, ocv=OcvCurve.from_rows([(0, 1, 3.0, 1.2)])),
            CellParams(resistance=0.060, converter_resistance=0.0, ocv=OcvCurve.from_rows([(0, 1, 3.4, 1.0)])),
        ]
        pack = Pack.from_cells(cells)
        m = aggregate(pack, PackState(np.array([0.5, 0.5]), np.array([300.0, 300.0])), [0, 1])
        assert m.u_weighted == pytest.approx(3.7, abs=1e-12)
        assert m.resistance == pytest.approx(0.02, rel=1e-12)

    def test_segment_means(self):
        cells = [
            CellParams(ocv=OcvCurve.from_rows([(0, 1, 3.0, 1.2)])),
            CellParams(ocv=OcvCurve.from_rows([(0, 1, 3.2, 1.0)])),
        ]
        pack = Pack.from_cells(cells)
        m = aggregate(pack, PackState(np.array([0.5, 0.5]), np.array([300.0, 300.0])), [0, 1])
        assert cluster_ocv(m, 0.5) == pytest.approx(3.65, abs=1e-12)

    @pytest.mark.parametrize("q", [-0.1, 1.1])
    def test_ocv_domain(self, pack40, q):
        pack, state = pack40
        m = aggregate(pack, state, [0, 1, 2])
        with pytest.raises(DomainError):
            cluster_ocv(m, q)

    def test_capacity_weighted_soc(self):
        cells = [CellParams(capacity=1.0 * AH), CellParams(capacity=3.0 * AH)]
        pack = Pack.from_cells(cells)
        m = aggregate(pack, PackState(np.array([0.2, 0.6]), np.array([300.0, 310.0])), [0, 1])
        assert m.soc == pytest.approx(0.5)
        assert m.temperature == pytest.approx(305.0)

    def test_empty_members(self, pack40):
        with pytest.raises(ValueError):
            aggregate(*pack40, [])

    def test_r_conv_from_total_area(self, pack40):
        pack, state = pack40
        m = aggregate(pack, state, [3, 4, 5])
        assert m.r_conv == pytest.approx(1.0 / (pack.heat_transfer * pack.area[[3, 4, 5]].sum()))


class TestEnergyMaps:
    def test_zero_at_current_soc(self, pack40):
        m = aggregate(*pack40, np.arange(10))
        e_of, _ = soc_energy_maps(m)
        assert e_of(m.soc) == pytest.approx(0.0, abs=1e-6)

    def test_round_trip(self, pack40):
        m = aggregate(*pack40, np.arange(10))
        e_of, q_of = soc_energy_maps(m)
        for q in np.linspace(0.15, 0.85, 15):
            assert q_of(e_of(q)) == pytest.approx(q, abs=1e-9)

    def test_hand_value(self):
        # C_bar = 9000 / 1.2 = 7500; u 3.90 -> 3.84
        p = CellParams(capacity=9000.0, ocv=OcvCurve.from_rows([(0, 1, 3.0, 1.2)]))
        pack = Pack.from_cells([p])
        m = aggregate(pack, PackState(np.array([0.75]), np.array([300.0])), [0])
        e_of, _ = soc_energy_maps(m)
        assert m.capacitance == pytest.approx(7500.0)
        assert e_of(0.70) == pytest.approx(-1741.5, abs=1e-9)


class TestSquaredVoltageBound:
    def test_zero(self):
        assert squared_voltage_bound(3.0, 1.2, 0.0) == 0.0

    def test_hand_value(self):
        assert squared_voltage_bound(3.0, 1.2, 0.005) == pytest.approx(3.006**2 - 9.0, rel=1e-12)
        assert squared_voltage_bound(3.0, 1.2, 0.005) == pytest.approx(0.036036, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 0.1), st.floats(0, 0.1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert squared_voltage_bound(3.4, 0.75, lo) <= squared_voltage_bound(3.4, 0.75, hi)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            squared_voltage_bound(3.0, 1.0, -0.01)

    def test_model_form(self, pack40):
        m = aggregate(*pack40, np.arange(5))
        assert delta_E_bound(m, 0.005) == pytest.approx(squared_voltage_bound(m.active_alpha, m.active_beta, 0.005))


class TestClusterSet:
    def test_singleton_matches_aggregate(self, pack40):
        pack, state = pack40
        fast = singleton_set(pack, state)
        slow = ClusterSet.from_models([aggregate(pack, state, [i]) for i in range(pack.n)])
        for name in ("capacity", "resistance", "capacitance", "e0", "u", "alpha", "beta", "i_min", "i_max",
                     "thermal_capacitance", "r_conv", "soc", "temperature", "u_qmin", "u_qmax", "n_members"):
            np.testing.assert_allclose(getattr(fast, name), getattr(slow, name), rtol=1e-13, err_msg=name)

    def test_aggregate_all_partition(self, pack40):
        pack, state = pack40
        labels = np.arange(pack.n) % 4
        cs = aggregate_all(pack, state, labels, 4)
        assert cs.k == 4
        assert cs.capacity.sum() == pytest.approx(pack.capacity.sum())
        assert cs.n_members.sum() == pack.n
        np.testing.assert_array_equal(cs.models[2].members, np.flatnonzero(labels == 2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 10_000))
    def test_invariants(self, n, seed):
        pack, state = table2_population(n, seed)
        m = aggregate(pack, state, np.arange(n))
        assert m.capacity == pytest.approx(pack.capacity.sum(), rel=1e-15)
        assert m.resistance == pytest.approx(1.0 / np.sum(1.0 / pack.r_total), rel=1e-12)
        assert 0.0 <= m.soc <= 1.0
        assert state.temperature.min() - 1e-9 <= m.temperature <= state.temperature.max() + 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 10_000))
    def test_member_order_irrelevant(self, n, seed):
        pack, state = table2_population(n, seed)
        members = np.arange(n)
        a = aggregate(pack, state, members)
        b = aggregate(pack, state, np.random.default_rng(seed).permutation(members))
        for name in ("capacity", "resistance", "soc", "temperature", "u_weighted", "r_conv", "mass"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)
        np.testing.assert_allclose(b.alpha, a.alpha, rtol=1e-12)
        np.testing.assert_allclose(b.beta, a.beta, rtol=1e-12)
