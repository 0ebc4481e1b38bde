"""
Choosing a power cap
====================

Three caps with known relative speed and energy are simulated, normalized to
the 250 W baseline and handed to the selector with a 5% slowdown budget.
"""

from gpuscale.metrics import run_metrics
from gpuscale.synth import SyntheticSpec, generate_run, tradeoff_profile
from gpuscale.telemetry import parse_telemetry
from gpuscale.tradeoff import build_tradeoff_curve, estimate_carbon, select_optimal_cap

# cap: (relative speed, relative energy)
ratios = {250.0: (1.0, 1.0), 200.0: (0.97, 0.88), 100.0: (0.65, 0.80)}
spec = SyntheticSpec(alpha=600.0, beta=0.8, gpu_counts=(8,), epochs_per_run=2,
                     power_profile=tradeoff_profile(600.0, 230.0, ratios))

runs = []
for cap in ratios:
    r = generate_run(spec, 8, cap)
    runs.append(run_metrics(r.manifest, parse_telemetry(r.telemetry_csv), r.windows))

curve = build_tradeoff_curve(runs, baseline_cap=250.0)
for p in curve:
    print(f"{p.power_cap_w:5.0f} W  speed {p.relative_speed:.3f}  energy {p.relative_energy:.3f}")

for budget in (0.05, 0.5):
    rec = select_optimal_cap(curve, max_slowdown=budget)
    print(f"budget {budget:.0%}: {rec.chosen_cap_w:g} W saves {rec.energy_saving_fraction:.1%} "
          f"at {rec.slowdown_fraction:.1%} slowdown")

# emissions at a 400 g/kWh grid
energy = {r.manifest.power_cap_w: r.total_energy_j for r in runs}
print(f"CO2: {estimate_carbon(energy[250.0], 400):.3f} kg at 250 W, {estimate_carbon(energy[200.0], 400):.3f} kg at 200 W")
