import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpuscale import reference
from gpuscale.metrics import EpochMetrics, RunMetrics
from gpuscale.telemetry import RunManifest
from gpuscale.tradeoff import (TradeoffPoint, build_tradeoff_curve, estimate_carbon, intensity_for_emissions,
                               select_optimal_cap)
from oracles import brute_force_cap

CANONICAL = [TradeoffPoint(250.0, 1.0, 1.0), TradeoffPoint(200.0, 0.97, 0.88), TradeoffPoint(100.0, 0.65, 0.80)]


def test_canonical_curve_picks_middle_cap():
    rec = select_optimal_cap(CANONICAL, max_slowdown=0.05)
    assert rec.chosen_cap_w == reference.OPTIMAL_POWER_CAP_W
    assert rec.energy_saving_fraction == pytest.approx(0.12)
    assert rec.energy_saving_fraction >= reference.MIN_ENERGY_SAVING_AT_OPTIMAL_CAP
    assert rec.slowdown_fraction == pytest.approx(0.03)
    assert rec.satisfied


def test_generous_budget_picks_lowest_energy():
    rec = select_optimal_cap(CANONICAL, max_slowdown=0.5)
    assert (rec.chosen_cap_w, round(rec.energy_saving_fraction, 12)) == (100.0, 0.2)


def test_zero_budget_keeps_baseline():
    rec = select_optimal_cap(CANONICAL, max_slowdown=0.0)
    assert (rec.chosen_cap_w, rec.energy_saving_fraction, rec.satisfied) == (250.0, 0.0, True)


def test_unreachable_budget_reports_unsatisfied():
    # no point at (1, 1) and every cap slower than the budget: fall back to the highest cap
    curve = [TradeoffPoint(250.0, 0.9, 1.0), TradeoffPoint(200.0, 0.8, 0.9)]
    rec = select_optimal_cap(curve, max_slowdown=0.05)
    assert (rec.chosen_cap_w, rec.satisfied) == (250.0, False)


def test_energy_ties_go_to_lower_cap():
    curve = [TradeoffPoint(250.0, 1.0, 1.0), TradeoffPoint(200.0, 0.99, 0.9), TradeoffPoint(150.0, 0.98, 0.9)]
    assert select_optimal_cap(curve).chosen_cap_w == 150.0


def test_selector_argument_errors():
    with pytest.raises(ValueError):
        select_optimal_cap([])
    with pytest.raises(ValueError):
        select_optimal_cap(CANONICAL, max_slowdown=-0.1)
    with pytest.raises(ValueError, match="not on the curve"):
        select_optimal_cap(CANONICAL, baseline_cap=150.0)


def test_selector_matches_enumeration_on_random_curves():
    rng = random.Random(2021)
    for _ in range(1000):
        caps = rng.sample(range(50, 401, 10), rng.randint(1, 10))
        curve = [TradeoffPoint(float(c), rng.uniform(0.3, 1.2), rng.uniform(0.5, 1.5)) for c in caps]
        budget = rng.choice([0.0, 0.01, 0.05, 0.1, 0.3, 1.0])
        best = brute_force_cap(curve, budget)
        rec = select_optimal_cap(curve, max_slowdown=budget)
        if best is None:
            assert not rec.satisfied
        else:
            assert rec.satisfied and rec.chosen_cap_w == best.power_cap_w


@given(st.lists(st.tuples(st.floats(0.3, 1.2), st.floats(0.5, 1.5)), min_size=1, max_size=10),
       st.floats(0, 0.5), st.floats(0, 0.5))
def test_larger_budget_never_costs_energy(values, b1, b2):
    curve = [TradeoffPoint(100.0 + 10 * i, s, e) for i, (s, e) in enumerate(values)]
    lo, hi = sorted((b1, b2))
    a, b = select_optimal_cap(curve, lo), select_optimal_cap(curve, hi)
    if a.satisfied:
        energy = {p.power_cap_w: p.relative_energy for p in curve}
        assert energy[b.chosen_cap_w] <= energy[a.chosen_cap_w]


def run(cap, time, energy, n=8):
    m = RunManifest("BERT", "nlp", n, cap, 1380.0, 8, 1)
    return RunMetrics(m, [EpochMetrics(0, time, energy, 90.0, 40.0, 0.05, 0.1)])


def test_build_curve_from_runs():
    runs = [run(100.0, 20.0, 900.0), run(250.0, 10.0, 1000.0), run(200.0, 10.5, 880.0)]
    curve = build_tradeoff_curve(runs, baseline_cap=250.0)
    assert [p.power_cap_w for p in curve] == [250.0, 200.0, 100.0]
    assert curve[0] == TradeoffPoint(250.0, 1.0, 1.0)
    assert curve[1].relative_speed == pytest.approx(10 / 10.5)
    assert curve[2].relative_energy == pytest.approx(0.9)
    with pytest.raises(ValueError, match="more than one run"):
        build_tradeoff_curve(runs + [run(200.0, 11.0, 800.0)], 250.0)


def test_curve_rejects_mixed_gpu_counts():
    with pytest.raises(ValueError):
        build_tradeoff_curve([run(250.0, 10.0, 1.0), run(200.0, 10.0, 1.0, n=16)], 250.0)


# -- carbon -------------------------------------------------------------------

def test_carbon_one_kwh():
    assert estimate_carbon(3.6e6, 400.0) == pytest.approx(0.4)


@given(st.floats(0, 1e12), st.floats(0, 1e3), st.floats(0, 100))
def test_carbon_linear(energy, intensity, k):
    assert estimate_carbon(k * energy, intensity) == pytest.approx(k * estimate_carbon(energy, intensity),
                                                                    rel=1e-12, abs=1e-12)


def test_implied_grid_intensity_for_cluster_hour():
    # 128 GPUs at a 250 W cap drawing 225 W each for an hour: 28.8 kWh
    energy = 128 * 225.0 * 3600
    g = intensity_for_emissions(energy, reference.CO2_KG_PER_HOUR_128_GPUS)
    assert g == pytest.approx(22_000 / 28.8)
    assert estimate_carbon(energy, g) == pytest.approx(22.0)


def test_carbon_rejects_negative():
    with pytest.raises(ValueError):
        estimate_carbon(-1.0, 100.0)
