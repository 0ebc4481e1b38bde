"""
Fitting epoch time against GPU count
====================================

Generate a noisy scaling series, fit ``t = alpha * N**-beta`` and compare two
architectures by their exponents.
"""

from gpuscale.scaling import compare_fits, detect_saturation_knee, fit_power_law, predict_epoch_time, speedup
from gpuscale.synth import SyntheticSpec, generate_scaling_series, noise_sigma_for_stderr

counts = (2, 4, 8, 16, 32, 64, 128, 256)

# noise chosen so the fitted exponent has a standard error near 0.03
sigma = noise_sigma_for_stderr(counts, 3, 0.03)
dense = SyntheticSpec(alpha=1000.0, beta=0.82, gpu_counts=counts, noise_sigma=sigma, seed=1)
fit_a = fit_power_law(generate_scaling_series(dense).points)
print(f"dense model:   beta = {fit_a.beta:.3f} +/- {fit_a.beta_stderr:.3f}, R^2 = {fit_a.r_squared:.3f}")

# a second model that saturates beyond 64 GPUs
sparse = SyntheticSpec(alpha=800.0, beta=0.42, gpu_counts=counts, knee=(64, None), seed=1)
points = generate_scaling_series(sparse).points
fit_b = fit_power_law([p for p in points if p.num_gpus <= 64])
print(f"sparse model:  beta = {fit_b.beta:.3f} +/- {fit_b.beta_stderr:.3f} (fit below the knee)")
print("knee at", detect_saturation_knee(points), "GPUs")

c = compare_fits(fit_a, fit_b)
print(f"difference {c.beta_difference:.2f}, combined se {c.combined_stderr:.3f}, significant: {c.significant}")

# what the dense fit says about larger runs
print(f"predicted epoch at 424 GPUs: {predict_epoch_time(fit_a, 424):.1f} s")
print(f"speedup 2 -> 424 GPUs: {speedup(fit_a, 2, 424):.1f}x")
