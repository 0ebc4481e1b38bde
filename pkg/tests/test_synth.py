import json
import math
from dataclasses import replace

import numpy as np
import pytest

from gpuscale.metrics import normalize_runs, run_metrics
from gpuscale.scaling import fit_power_law
from gpuscale.synth import (CapProfile, SyntheticSpec, epoch_times, generate_run, generate_scaling_series,
                            load_specs, noise_sigma_for_stderr, run_dirname, simulate_corpus, tradeoff_profile)
from gpuscale.telemetry import parse_epoch_windows, parse_manifest, parse_telemetry
from gpuscale.tradeoff import build_tradeoff_curve, select_optimal_cap

POW2 = tuple(2 ** k for k in range(1, 10))


def test_pcg64_reference_vector():
    ss = np.random.SeedSequence([0, 2, 250000]).spawn(2)[0]
    z = np.random.Generator(np.random.PCG64(ss)).standard_normal(3)
    assert z.tolist() == [-1.3731395050956459, 1.2338056859234257, 0.5435914384627343]
    spec = SyntheticSpec(alpha=1.0, beta=0.0, gpu_counts=(2,), noise_sigma=1.0, seed=0)
    assert np.log(epoch_times(spec, 2, 250.0)).tolist() == pytest.approx(z.tolist(), rel=1e-15)


def test_noiseless_series_is_exact():
    spec = SyntheticSpec(alpha=100.0, beta=0.64, gpu_counts=POW2, epochs_per_run=2)
    series = generate_scaling_series(spec)
    assert len(series.points) == 18
    for p in series.points:
        assert p.epoch_time_s == pytest.approx(100.0 * p.num_gpus ** -0.64, rel=1e-15)


def test_determinism_and_stream_independence():
    spec = SyntheticSpec(alpha=100.0, beta=0.5, gpu_counts=(2, 4, 8), noise_sigma=0.1, seed=5)
    assert generate_scaling_series(spec).points == generate_scaling_series(spec).points
    # the run at N=4 does not depend on which other counts are generated
    alone = replace(spec, gpu_counts=(4,))
    assert epoch_times(alone, 4).tolist() == epoch_times(spec, 4).tolist()
    assert epoch_times(replace(spec, seed=6), 4).tolist() != epoch_times(spec, 4).tolist()


def test_knee_floor():
    spec = SyntheticSpec(alpha=100.0, beta=0.42, gpu_counts=POW2, knee=(64, None))
    assert spec.expected_epoch_time(256) == spec.expected_epoch_time(64)
    assert replace(spec, knee=(64, 7.0)).expected_epoch_time(128) == 7.0


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(alpha=0.0, beta=0.5, gpu_counts=(2, 4))
    with pytest.raises(ValueError):
        SyntheticSpec(alpha=1.0, beta=0.5, gpu_counts=(2, 2))
    with pytest.raises(KeyError):
        epoch_times(SyntheticSpec(alpha=1.0, beta=0.5, gpu_counts=(2,)), 2, cap=123.0)


def test_constant_power_ground_truth():
    spec = SyntheticSpec(alpha=400.0, beta=1.0, gpu_counts=(2,), epochs_per_run=1,
                         power_profile={250.0: CapProfile(100.0)})
    run = generate_run(spec, 2, 250.0)
    [truth] = run.truth
    assert truth.wall_time_s == pytest.approx(200.0)
    assert truth.energy_j == pytest.approx(2 * 100.0 * 200.0, rel=1e-12)


@pytest.mark.parametrize("n, dt", [(2, 1.0), (4, 0.7), (8, 2.0)])
def test_pipeline_reproduces_ground_truth(n, dt):
    spec = SyntheticSpec(alpha=300.0, beta=0.8, gpu_counts=(n,), noise_sigma=0.05, sampling_interval_s=dt,
                         power_profile={250.0: CapProfile(220.0, 15.0)}, seed=11)
    run = generate_run(spec, n, 250.0)
    got = run_metrics(parse_manifest(run.manifest_txt), parse_telemetry(run.telemetry_csv),
                      parse_epoch_windows(run.epochs_csv))
    assert got.manifest == run.manifest
    for g, t in zip(got.epochs, run.truth):
        assert g.wall_time_s == pytest.approx(t.wall_time_s, rel=1e-12)
        assert g.energy_j == pytest.approx(t.energy_j, rel=1e-9)
        assert g.mean_sm_util == pytest.approx(t.mean_sm_util, rel=1e-12)
        assert g.cv_mem_util == pytest.approx(t.cv_mem_util, rel=1e-9)
        for gg, tt in zip(g.per_gpu, t.per_gpu):
            assert gg.energy_j == pytest.approx(tt.energy_j, rel=1e-9)


def test_written_files_round_trip(tmp_path):
    spec = SyntheticSpec(alpha=50.0, beta=0.5, gpu_counts=(2, 4), name="fam")
    paths = simulate_corpus([spec], tmp_path)
    assert [p.name for p in paths] == [run_dirname(2, 250.0, 1380.0), run_dirname(4, 250.0, 1380.0)]
    assert paths[0].name == "N0002_P250W_C1380MHz"
    for p in paths:
        assert {f.name for f in p.iterdir()} == {"telemetry.csv", "epochs.csv", "manifest.txt", "ground_truth.json"}
        truth = json.loads((p / "ground_truth.json").read_text())
        manifest = parse_manifest((p / "manifest.txt").read_text())
        assert manifest.to_dict() == truth["manifest"]
        assert len(parse_epoch_windows((p / "epochs.csv").read_text())) == 3
        parse_telemetry((p / "telemetry.csv").read_bytes())
    with pytest.raises(ValueError, match="duplicate"):
        simulate_corpus([spec, spec], tmp_path)


def test_fit_recovers_generator_parameters():
    spec = SyntheticSpec(alpha=240.0, beta=0.87, gpu_counts=POW2)
    fit = fit_power_law(generate_scaling_series(spec).points)
    assert fit.beta == pytest.approx(0.87, abs=1e-6)
    assert fit.alpha == pytest.approx(240.0, rel=1e-6)


def test_noise_sigma_hits_target_stderr():
    sigma = noise_sigma_for_stderr(POW2, 5, 0.03)
    betas, ses = [], []
    for seed in range(200):
        spec = SyntheticSpec(alpha=100.0, beta=0.82, gpu_counts=POW2, epochs_per_run=5, noise_sigma=sigma, seed=seed)
        fit = fit_power_law(generate_scaling_series(spec).points)
        betas.append(fit.beta)
        ses.append(fit.beta_stderr)
    assert np.mean(ses) == pytest.approx(0.03, rel=0.05)
    assert np.std(betas) == pytest.approx(0.03, rel=0.15)


def test_tradeoff_profile_hits_requested_ratios():
    ratios = {250.0: (1.0, 1.0), 200.0: (0.97, 0.88), 100.0: (0.65, 0.80)}
    spec = SyntheticSpec(alpha=100.0, beta=0.8, gpu_counts=(4,), epochs_per_run=2, sampling_interval_s=0.5,
                         power_profile=tradeoff_profile(100.0, 230.0, ratios))
    runs = []
    for cap in ratios:
        r = generate_run(spec, 4, cap)
        runs.append(run_metrics(r.manifest, parse_telemetry(r.telemetry_csv), r.windows))
    curve = build_tradeoff_curve(runs, 250.0)
    for p in curve:
        s, e = ratios[p.power_cap_w]
        assert p.relative_speed == pytest.approx(s, rel=1e-9)
        # power samples are written at 0.01 W resolution
        assert p.relative_energy == pytest.approx(e, rel=1e-4)
    assert select_optimal_cap(curve).chosen_cap_w == 200.0
    assert [p.label for p in normalize_runs(runs, "power_cap_w", 250.0)] == [100.0, 200.0, 250.0]


def test_load_specs_seed_handling():
    text = json.dumps({"seed": 9, "families": [{"alpha": 1, "beta": 0.5, "gpu_counts": [2, 4, 8]},
                                                {"alpha": 1, "beta": 0.5, "gpu_counts": [2], "seed": 3,
                                                 "name": "b", "power_profile": {"200": {"mean_draw_w": 150}}}]})
    a, b = load_specs(text)
    assert (a.seed, b.seed) == (9, 3)
    assert b.power_profile == {200.0: CapProfile(150.0)}
    assert [s.seed for s in load_specs(text, seed=1)] == [1, 1]
    with pytest.raises(ValueError, match="unknown"):
        load_specs(json.dumps({"families": [{"alpha": 1, "beta": 0.5, "gpu_counts": [2], "bogus": 1}]}))


def test_bundled_spec_loads():
    from importlib.resources import files
    specs = load_specs(files("gpuscale").joinpath("data/paper_like.spec").read_text())
    assert sorted(s.beta for s in specs) == [0.42, 0.44, 0.52, 0.64, 0.82, 0.87]
    assert all(math.isclose(s.alpha, 600 * 2 ** s.beta, rel_tol=1e-5) for s in specs)


def test_epoch_shorter_than_sampling_interval_rejected():
    spec = SyntheticSpec(alpha=10.0, beta=1.0, gpu_counts=(2, 8), sampling_interval_s=2.0)
    generate_run(spec, 2, 250.0)
    with pytest.raises(ValueError, match="sampling interval"):
        generate_run(spec, 8, 250.0)
