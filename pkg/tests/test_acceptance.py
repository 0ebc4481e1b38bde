"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
"acceptance criteria" section of the terminal summary.
"""

import hashlib
import json
import math
import random
import time
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from gpuscale import reference
from gpuscale.cli import main
from gpuscale.metrics import coefficient_of_variation, integrate_energy
from gpuscale.scaling import PowerLawFit, compare_fits, detect_saturation_knee, fit_power_law, speedup
from gpuscale.synth import CapProfile, SyntheticSpec, generate_scaling_series, noise_sigma_for_stderr, simulate_corpus
from gpuscale.telemetry import EpochWindow, TelemetrySample
from gpuscale.tradeoff import TradeoffPoint, select_optimal_cap
from oracles import brute_force_cap, riemann_energy

POW2_512 = tuple(2 ** k for k in range(1, 10))
POW2_256 = POW2_512[:-1]
TABLE_BETAS = {m: reference.UNCAPPED[m].beta for m in ("DimeNet", "SchNet", "BERT", "ResNet50", "VGG16", "InceptionV3")}

# The tables report only beta, so alpha per setting is chosen here: the
# epoch time at N=2 is 120 s at full speed, scaled by a slowdown factor that
# grows as the cap tightens.
CLOCK_SLOWDOWN = {1380: 1.0, 735: 1.4, 135: 3.0}
POWER_SLOWDOWN = {250: 1.0, 200: 1.03, 100: 1.3}


def samples(times, powers):
    return [TelemetrySample(t, 0, p, 50.0, 50.0, 1380.0) for t, p in zip(times, powers)]


def test_criterion_01_noiseless_round_trip(criterion):
    start = time.perf_counter()
    worst_beta, worst_r2 = 0.0, 0.0
    for beta in TABLE_BETAS.values():
        spec = SyntheticSpec(alpha=120.0 * 2 ** beta, beta=beta, gpu_counts=POW2_512)
        fit = fit_power_law(generate_scaling_series(spec).points)
        worst_beta = max(worst_beta, abs(fit.beta - beta))
        worst_r2 = max(worst_r2, abs(1.0 - fit.r_squared))
    elapsed = time.perf_counter() - start
    ok = worst_beta <= 1e-9 and worst_r2 <= 1e-12 and elapsed < 1.0
    criterion("1 noiseless fit round trip", ok,
              f"max |beta err| {worst_beta:.1e}, max |1-R2| {worst_r2:.1e}, {elapsed:.3f} s")


def test_criterion_02_recovery_under_noise(criterion):
    start = time.perf_counter()
    counts = POW2_256 + (reference.MAX_GPUS,)
    covered = 0
    for seed in range(1000):
        spec = SyntheticSpec(alpha=100.0, beta=0.87, gpu_counts=counts, noise_sigma=0.05, seed=seed)
        fit = fit_power_law(generate_scaling_series(spec).points)
        covered += abs(fit.beta - 0.87) <= 2 * fit.beta_stderr
    elapsed = time.perf_counter() - start
    ok = covered >= 930 and elapsed < 10.0
    criterion("2 beta recovery under lognormal noise", ok, f"{covered / 10:.1f}% within 2 se, {elapsed:.2f} s")


def test_criterion_03_stderr_calibration(criterion):
    fits = []
    for beta, target in ((0.82, 0.03), (0.42, 0.05)):
        spec = SyntheticSpec(alpha=120.0 * 2 ** beta, beta=beta, gpu_counts=POW2_256,
                             noise_sigma=noise_sigma_for_stderr(POW2_256, 3, target), seed=0)
        fits.append(fit_power_law(generate_scaling_series(spec).points))
    c = compare_fits(*fits)
    ok = abs(c.beta_difference - 0.40) <= 0.08 and c.significant
    criterion("3 compare_fits on DimeNet-like vs SchNet-like", ok,
              f"dbeta {c.beta_difference:.3f} (se {fits[0].beta_stderr:.3f} / {fits[1].beta_stderr:.3f}), "
              f"significant={c.significant}")


def fit_cap_families(tmp_path: Path):
    """Simulate, ingest and fit the clock-cap and power-cap DimeNet families through the CLI."""
    common = dict(gpu_counts=POW2_256, noise_sigma=0.03, seed=2021, model_name="DimeNet", domain="geometric",
                  sampling_interval_s=0.5)
    clock = [SyntheticSpec(alpha=120.0 * 2 ** f.beta * CLOCK_SLOWDOWN[c], beta=f.beta, clock_cap_mhz=float(c),
                           name=f"DimeNet_{c}MHz", power_profile={250.0: CapProfile(230.0, 10.0)}, **common)
             for c, f in reference.DIMENET_BY_CLOCK.items()]
    power = [SyntheticSpec(alpha=120.0 * 2 ** 0.82, beta=0.82, name="DimeNet_power", **common, power_profile={
        float(c): CapProfile(0.9 * c, 5.0, alpha=120.0 * 2 ** f.beta * POWER_SLOWDOWN[c], beta=f.beta)
        for c, f in reference.DIMENET_BY_POWER.items()})]
    out = {}
    for tag, specs, key in (("clock", clock, "clock_cap_mhz"), ("power", power, "power_cap_w")):
        d = tmp_path / tag
        simulate_corpus(specs, d / "runs")
        assert main(["ingest", str(d / "runs"), "--out-dir", str(d)]) == 0
        assert main(["fit", str(d / "metrics.json"), "--out-dir", str(d)]) == 0
        fits = json.loads((d / "fits.json").read_text())["fits"]
        # cap descending: full speed first
        out[tag] = sorted(((f["group"][key], PowerLawFit.from_dict(f["fit"])) for f in fits), reverse=True)
    return out


def shift_pattern(fits):
    alphas = [f.alpha for _, f in fits]
    betas = [f.beta for _, f in fits]
    rising = all(b > a for a, b in zip(alphas, alphas[1:]))
    return rising, max(betas) - min(betas), alphas, betas


@pytest.mark.xfail(strict=True, reason="the reference clock-cap exponents 0.97/0.90/0.82 span 0.15 > 0.12; "
                                       "see the decisions ledger")
def test_criterion_04_alpha_shift_beta_stable(criterion, tmp_path):
    parts, ok = [], True
    for tag, fits in fit_cap_families(tmp_path).items():
        rising, spread, alphas, betas = shift_pattern(fits)
        ok &= rising and spread < 0.12
        parts.append(f"{tag}: alpha {'/'.join(f'{a:.0f}' for a in alphas)} rising={rising}, "
                     f"beta {'/'.join(f'{b:.3f}' for b in betas)} spread {spread:.3f}")
    criterion("4 alpha shifts, beta stable across caps", ok, "; ".join(parts))


def test_cap_families_parts_that_hold(tmp_path):
    """The sub-claims of criterion 4 that the reference exponents do satisfy."""
    fams = fit_cap_families(tmp_path)
    for tag, fits in fams.items():
        rising, spread, _, betas = shift_pattern(fits)
        assert rising, tag
        generating = [f.beta for _, f in sorted((reference.DIMENET_BY_CLOCK if tag == "clock" else
                                                 reference.DIMENET_BY_POWER).items(), reverse=True)]
        assert betas == pytest.approx(generating, abs=0.02)
    assert shift_pattern(fams["power"])[1] < 0.12


def test_criterion_05_energy_integration(criterion):
    const = integrate_energy(samples([0.0, 7.5, 30.0, 61.25], [212.5] * 4), EpochWindow(0, 0.0, 61.25))
    const_err = abs(const - 212.5 * 61.25) / (212.5 * 61.25)
    t = np.linspace(0.0, 10.0, 11).tolist()
    ramp = integrate_energy(samples(t, [100.0 + 20.0 * x for x in t]), EpochWindow(0, 0.0, 10.0))
    ramp_err = abs(ramp - (100.0 + 300.0) / 2 * 10.0) / 2000.0
    rng = random.Random(5)
    piece_err = 0.0
    for _ in range(20):
        times = sorted(rng.uniform(0, 500) for _ in range(rng.randint(2, 60)))
        powers = [rng.uniform(0, 300) for _ in times]
        lo, hi = sorted(rng.uniform(times[0], times[-1]) for _ in range(2))
        if hi - lo < 1e-6:
            continue
        want = riemann_energy(times, powers, lo, hi)
        got = integrate_energy(samples(times, powers), EpochWindow(0, lo, hi))
        piece_err = max(piece_err, abs(got - want) / want if want else abs(got))
    ok = const_err <= 1e-12 and ramp_err <= 1e-12 and piece_err <= 1e-9
    criterion("5 energy integration exactness", ok,
              f"constant {const_err:.1e}, ramp {ramp_err:.1e}, piecewise vs Riemann {piece_err:.1e}")


def test_criterion_06_cv_identities(criterion):
    constant = coefficient_of_variation([42.0] * 17)
    pair = coefficient_of_variation([0.0, 100.0])
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        xs = rng.uniform(0.0, 100.0, rng.integers(2, 500))
        k = float(rng.uniform(1e-3, 1e3))
        base = coefficient_of_variation(xs)
        worst = max(worst, abs(coefficient_of_variation(k * xs) - base) / base)
    ok = constant == 0.0 and pair == 1.0 and worst <= 1e-12
    criterion("6 CV identities", ok, f"constant {constant}, {{0,100}} {pair}, scale invariance {worst:.1e}")


def test_criterion_07_tradeoff_selector(criterion):
    rng = random.Random(7)
    mismatches = 0
    for _ in range(1000):
        caps = rng.sample(range(50, 301, 5), rng.randint(1, 10))
        curve = [TradeoffPoint(float(c), rng.uniform(0.4, 1.1), rng.uniform(0.6, 1.3)) for c in caps]
        budget = rng.uniform(0.0, 0.3)
        best = brute_force_cap(curve, budget)
        rec = select_optimal_cap(curve, budget)
        agree = (not rec.satisfied) if best is None else (rec.satisfied and rec.chosen_cap_w == best.power_cap_w)
        mismatches += not agree
    canonical = [TradeoffPoint(250.0, 1.0, 1.0), TradeoffPoint(200.0, 0.97, 0.88), TradeoffPoint(100.0, 0.65, 0.80)]
    rec = select_optimal_cap(canonical, 0.05)
    ok = mismatches == 0 and rec.chosen_cap_w == reference.OPTIMAL_POWER_CAP_W and \
        rec.energy_saving_fraction >= reference.MIN_ENERGY_SAVING_AT_OPTIMAL_CAP
    criterion("7 cap selection", ok, f"{mismatches} mismatches in 1000 random curves; canonical -> "
                                     f"{rec.chosen_cap_w:g} W saving {rec.energy_saving_fraction:.0%}")


def test_criterion_08_knee(criterion):
    flat = SyntheticSpec(alpha=100.0, beta=0.42, gpu_counts=POW2_512, knee=(reference.SCHNET_KNEE_GPUS, None))
    pure = SyntheticSpec(alpha=100.0, beta=0.42, gpu_counts=POW2_512)
    knee = detect_saturation_knee(generate_scaling_series(flat).points)
    none = detect_saturation_knee(generate_scaling_series(pure).points)
    criterion("8 saturation knee", knee == 64 and none is None, f"flat beyond 64 -> {knee}, pure law -> {none}")


def pipeline(root: Path) -> dict:
    spec = files("gpuscale").joinpath("data/paper_like.spec")
    steps = [["simulate", str(spec), "--seed", "2021", "--out-dir", str(root / "runs")],
             ["ingest", str(root / "runs"), "--out-dir", str(root)],
             ["fit", str(root / "metrics.json"), "--out-dir", str(root)],
             ["tradeoff", str(root / "metrics.json"), "--out-dir", str(root)],
             ["report", str(root / "metrics.json"), str(root / "fits.json"), str(root / "recommendations.json"),
              "--out-dir", str(root / "report")]]
    for argv in steps:
        assert main(argv) == 0, argv
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted((root / "report").iterdir())}


def test_criterion_09_end_to_end_determinism(criterion, tmp_path):
    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    criterion("9 end-to-end determinism", a == b and len(a) == 5,
              f"{len(a)} report files, identical={a == b}, report.json {a['report.json'][:12]}")


def test_criterion_10_speedup(criterion):
    ideal = speedup(PowerLawFit(100.0, 1.0, 0.0, 0.0, 1.0, 8, 2, 256), 2, 256)
    bert = fit_power_law(generate_scaling_series(SyntheticSpec(alpha=200.0, beta=0.87, gpu_counts=POW2_256)).points)
    s = speedup(bert, 2, reference.MAX_GPUS)
    ok = ideal == 128.0 and 100.0 <= s <= 110.0 and math.isclose(s, 212 ** 0.87, rel_tol=1e-9)
    criterion("10 speedup sanity", ok, f"beta=1 2->256 {ideal!r}x; beta=0.87 2->424 {s:.2f}x")
