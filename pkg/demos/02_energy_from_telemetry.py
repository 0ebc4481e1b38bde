"""
Per-epoch energy and utilization from telemetry
===============================================

Write one synthetic run in the telemetry formats, parse it back and compare
the aggregated metrics with the generator's own ground truth.
"""

from gpuscale.metrics import run_metrics
from gpuscale.synth import CapProfile, SyntheticSpec, generate_run
from gpuscale.telemetry import parse_epoch_windows, parse_manifest, parse_telemetry

spec = SyntheticSpec(alpha=600.0, beta=0.8, gpu_counts=(4,), noise_sigma=0.05, sampling_interval_s=1.0,
                     power_profile={250.0: CapProfile(225.0, 12.0)}, seed=3)
run = generate_run(spec, 4, 250.0)
print(run.telemetry_csv.splitlines()[:3])

metrics = run_metrics(parse_manifest(run.manifest_txt), parse_telemetry(run.telemetry_csv),
                      parse_epoch_windows(run.epochs_csv))

# trapezoidal energy over each epoch window, summed over the four GPUs
for got, truth in zip(metrics.epochs, run.truth):
    print(f"epoch {got.epoch_index}: {got.wall_time_s:7.2f} s  {got.energy_j / 1e3:8.3f} kJ "
          f"(truth {truth.energy_j / 1e3:8.3f} kJ)  SM {got.mean_sm_util:.1f}% cv {got.cv_sm_util:.3f}")

print(f"mean epoch {metrics.mean_epoch_time_s:.2f} s, total {metrics.total_energy_j / 3.6e6:.4f} kWh")
