"""Synthetic training runs with known ground truth.

Epoch times follow ``alpha * N**(-beta)`` with multiplicative lognormal noise,
optionally flattened beyond a saturation knee. Each (N, power cap) run also
gets per-GPU power and utilization traces written in the telemetry formats, so
the whole parse -> aggregate -> fit pipeline can be checked against values the
generator already knows.

Random numbers come from NumPy's PCG64 bit generator. The stream of a run is
seeded with ``SeedSequence([seed, N, round(cap_w * 1000)])`` and split with
``spawn(2)``: the first child drives epoch-time noise, the second the power
and utilization traces. Runs are therefore independent of generation order.
Reference vector (checked in the tests)::

    >>> ss = np.random.SeedSequence([0, 2, 250000]).spawn(2)[0]
    >>> np.random.Generator(np.random.PCG64(ss)).standard_normal(3)
    array([-1.37313951,  1.23380569,  0.54359144])
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metrics import EpochMetrics, GpuEpochStats
from .scaling import ScalingPoint
from .telemetry import (EPOCH_HEADER, TELEMETRY_HEADER, EpochWindow, RunManifest, format_manifest)


@dataclass(frozen=True)
class CapProfile:
    """Power draw at one cap, plus optional per-cap scaling-law overrides."""

    mean_draw_w: float
    jitter_w: float = 0.0
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.mean_draw_w < 0 or self.jitter_w < 0:
            raise ValueError("power draw and jitter must be non-negative")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha override must be positive")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta override must be non-negative")


@dataclass(frozen=True)
class SyntheticSpec:
    alpha: float
    beta: float
    gpu_counts: tuple[int, ...]
    epochs_per_run: int = 3
    noise_sigma: float = 0.0
    knee: tuple[int, float | None] | None = None
    power_profile: Mapping[float, CapProfile] = field(default_factory=lambda: {250.0: CapProfile(230.0)})
    sampling_interval_s: float = 1.0
    seed: int = 0
    model_name: str = "synthetic"
    domain: str = "other"
    name: str | None = None
    clock_cap_mhz: float = 1380.0
    batch_per_gpu: int = 32
    sm_util: tuple[float, float] = (85.0, 5.0)
    mem_util: tuple[float, float] = (40.0, 5.0)

    def __post_init__(self):
        counts = tuple(int(n) for n in self.gpu_counts)
        object.__setattr__(self, "gpu_counts", counts)
        profile = {float(cap): p if isinstance(p, CapProfile) else CapProfile(*p)
                   for cap, p in self.power_profile.items()}
        object.__setattr__(self, "power_profile", profile)
        if self.knee is not None:
            n_star, floor = self.knee
            object.__setattr__(self, "knee", (int(n_star), None if floor is None else float(floor)))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if not counts or len(set(counts)) != len(counts) or min(counts) < 1:
            raise ValueError(f"gpu_counts must be distinct positive integers, got {counts}")
        if self.epochs_per_run < 1:
            raise ValueError("epochs_per_run must be positive")
        if not self.sampling_interval_s > 0:
            raise ValueError("sampling_interval_s must be positive")
        if not profile or min(profile) <= 0:
            raise ValueError("power_profile needs at least one positive cap")

    @property
    def family(self) -> str:
        return self.name or self.model_name

    @property
    def default_cap(self) -> float:
        return max(self.power_profile)

    def law(self, cap: float) -> tuple[float, float]:
        """(alpha, beta) in effect at ``cap``."""
        p = self._profile(cap)
        return (self.alpha if p.alpha is None else p.alpha, self.beta if p.beta is None else p.beta)

    def expected_epoch_time(self, n: int, cap: float | None = None) -> float:
        """Noiseless epoch time at ``n`` GPUs, including the knee floor."""
        alpha, beta = self.law(self.default_cap if cap is None else cap)
        if self.knee is not None and n > self.knee[0]:
            floor = self.knee[1]
            return alpha * self.knee[0] ** (-beta) if floor is None else floor
        return alpha * n ** (-beta)

    def _profile(self, cap: float) -> CapProfile:
        try:
            return self.power_profile[float(cap)]
        except KeyError:
            raise KeyError(f"cap {cap} W not in power profile {sorted(self.power_profile)}") from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        d = dict(d)
        if "power_profile" in d:
            d["power_profile"] = {float(cap): CapProfile(**p) if isinstance(p, Mapping) else CapProfile(*p)
                                  for cap, p in d["power_profile"].items()}
        for key in ("gpu_counts", "sm_util", "mem_util", "knee"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)


def _streams(spec: SyntheticSpec, n: int, cap: float) -> tuple[np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence([spec.seed, n, int(round(cap * 1000))])
    time_ss, trace_ss = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(time_ss)), np.random.Generator(np.random.PCG64(trace_ss))


def epoch_times(spec: SyntheticSpec, n: int, cap: float | None = None) -> np.ndarray:
    """Noisy per-epoch wall times of the run at ``n`` GPUs and ``cap``."""
    cap = spec.default_cap if cap is None else float(cap)
    spec._profile(cap)
    rng, _ = _streams(spec, n, cap)
    z = rng.standard_normal(spec.epochs_per_run)
    return spec.expected_epoch_time(n, cap) * np.exp(spec.noise_sigma * z)


@dataclass(frozen=True)
class SyntheticSeries:
    points: list[ScalingPoint]
    expected: dict[int, float]
    alpha: float
    beta: float


def generate_scaling_series(spec: SyntheticSpec, cap: float | None = None) -> SyntheticSeries:
    """One :class:`ScalingPoint` per epoch per GPU count, plus the noiseless curve."""
    cap = spec.default_cap if cap is None else float(cap)
    points = []
    for n in spec.gpu_counts:
        points += [ScalingPoint(n, float(t)) for t in epoch_times(spec, n, cap)]
    alpha, beta = spec.law(cap)
    return SyntheticSeries(points, {n: spec.expected_epoch_time(n, cap) for n in spec.gpu_counts}, alpha, beta)


def noise_sigma_for_stderr(gpu_counts: Sequence[int], epochs_per_run: int, target_stderr: float) -> float:
    """Lognormal sigma that gives a fitted-beta standard error of about ``target_stderr``.

    Uses ``se(beta) = sigma / sqrt(Sxx)`` with ``Sxx`` the spread of ``ln N``
    over all observations.
    """
    x = np.repeat(np.log(np.asarray(gpu_counts, dtype=float)), epochs_per_run)
    return target_stderr * math.sqrt(float(np.sum((x - x.mean()) ** 2)))


def tradeoff_profile(base_alpha: float, base_draw_w: float,
                     ratios: Mapping[float, tuple[float, float]]) -> dict[float, CapProfile]:
    """Power profile whose noiseless runs hit the given (relative speed, relative energy) per cap.

    Energy scales with draw times time, so a cap with speed ``s`` and energy
    ``e`` draws ``base_draw * e * s`` watts and has ``alpha = base_alpha / s``.
    """
    return {float(cap): CapProfile(base_draw_w * e * s, 0.0, alpha=base_alpha / s)
            for cap, (s, e) in ratios.items()}


@dataclass(frozen=True)
class SyntheticRun:
    manifest: RunManifest
    windows: list[EpochWindow]
    telemetry_csv: str
    epochs_csv: str
    manifest_txt: str
    truth: list[EpochMetrics]
    ground_truth: dict

    def write(self, directory: Path | str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "telemetry.csv").write_text(self.telemetry_csv, encoding="utf-8", newline="\n")
        (directory / "epochs.csv").write_text(self.epochs_csv, encoding="utf-8", newline="\n")
        (directory / "manifest.txt").write_text(self.manifest_txt, encoding="utf-8", newline="\n")
        (directory / "ground_truth.json").write_text(
            json.dumps(self.ground_truth, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return directory


def _cumulative_energy(t: np.ndarray, p: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Integral from 0 of the piecewise-linear power signal through (t, p), per GPU row.

    ``t`` is the shared sample grid (starting at 0), ``p`` has shape (gpus, samples).
    The signal is held at its last value after the final sample.
    """
    h = np.diff(t)
    seg = h * (p[:, :-1] + p[:, 1:]) / 2
    knots = np.concatenate([np.zeros((p.shape[0], 1)), np.cumsum(seg, axis=1)], axis=1)
    k = np.clip(np.searchsorted(t, at, side="right") - 1, 0, t.size - 1)
    out = np.empty((p.shape[0], at.size))
    for j, (kk, a) in enumerate(zip(k, at)):
        tau = a - t[kk]
        if kk == t.size - 1:
            out[:, j] = knots[:, kk] + p[:, kk] * tau
        else:
            slope = (p[:, kk + 1] - p[:, kk]) / h[kk]
            out[:, j] = knots[:, kk] + p[:, kk] * tau + slope * tau ** 2 / 2
    return out


def _pooled_stats(x: np.ndarray) -> tuple[float, float]:
    mu = float(x.mean())
    return mu, (float(x.std() / mu) if mu != 0 else math.nan)


def generate_run(spec: SyntheticSpec, n: int, cap: float) -> SyntheticRun:
    """Telemetry, epoch and manifest files for one run, with per-epoch ground truth."""
    if n not in spec.gpu_counts:
        raise KeyError(f"GPU count {n} not in spec {spec.gpu_counts}")
    cap = float(cap)
    profile = spec._profile(cap)
    lengths = epoch_times(spec, n, cap)
    if lengths.min() <= spec.sampling_interval_s:
        raise ValueError(f"{spec.family}: epoch of {lengths.min():.3g} s at N={n}, {cap:g} W is not longer than "
                         f"the sampling interval ({spec.sampling_interval_s:g} s); lower sampling_interval_s")
    _, rng = _streams(spec, n, cap)

    bounds = np.concatenate([[0.0], np.cumsum(lengths)])
    windows = [EpochWindow(i, float(bounds[i]), float(bounds[i + 1])) for i in range(spec.epochs_per_run)]
    dt = spec.sampling_interval_s
    k_max = int(math.ceil(bounds[-1] / dt))
    t = np.round(np.arange(k_max + 1) * dt, 6)

    shape = (n, t.size)
    power = np.round(np.maximum(profile.mean_draw_w + profile.jitter_w * rng.standard_normal(shape), 0.0), 2)
    sm = np.round(np.clip(spec.sm_util[0] + spec.sm_util[1] * rng.standard_normal(shape), 0, 100))
    mem = np.round(np.clip(spec.mem_util[0] + spec.mem_util[1] * rng.standard_normal(shape), 0, 100))
    clock = float(spec.clock_cap_mhz)

    rows = [",".join(TELEMETRY_HEADER)]
    for k, tk in enumerate(t.tolist()):
        for g in range(n):
            rows.append(f"{tk!r},{g},{float(power[g, k])!r},{float(sm[g, k])!r},{float(mem[g, k])!r},{clock!r}")
    telemetry_csv = "\n".join(rows) + "\n"
    epochs_csv = "\n".join([",".join(EPOCH_HEADER)] + [f"{w.epoch_index},{w.start!r},{w.end!r}"
                                                      for w in windows]) + "\n"

    manifest = RunManifest(
        model_name=spec.model_name,
        domain_tag=spec.domain,
        num_gpus=n,
        power_cap_w=cap,
        clock_cap_mhz=clock,
        per_gpu_batch_size=spec.batch_per_gpu,
        epochs_planned=spec.epochs_per_run,
        extra_settings={"generator": "gpuscale.synth", "seed": str(spec.seed)},
    )

    edges = np.array([w.start for w in windows] + [windows[-1].end])
    cum = _cumulative_energy(t, power, edges)
    truth = []
    for i, w in enumerate(windows):
        mask = (t >= w.start) & (t < w.end)
        per_gpu_energy = cum[:, i + 1] - cum[:, i]
        per_gpu = []
        for g in range(n):
            sm_mu, sm_cv = _pooled_stats(sm[g, mask])
            mem_mu, mem_cv = _pooled_stats(mem[g, mask])
            per_gpu.append(GpuEpochStats(g, float(per_gpu_energy[g]), int(mask.sum()),
                                         sm_mu, mem_mu, sm_cv, mem_cv))
        sm_mu, sm_cv = _pooled_stats(sm[:, mask])
        mem_mu, mem_cv = _pooled_stats(mem[:, mask])
        truth.append(EpochMetrics(w.epoch_index, w.end - w.start, float(per_gpu_energy.sum()),
                                  sm_mu, mem_mu, sm_cv, mem_cv, tuple(per_gpu)))

    alpha, beta = spec.law(cap)
    ground_truth = {
        "schema_version": 1,
        "kind": "ground-truth",
        "family": spec.family,
        "manifest": manifest.to_dict(),
        "alpha": alpha,
        "beta": beta,
        "noise_sigma": spec.noise_sigma,
        "knee": list(spec.knee) if spec.knee else None,
        "seed": spec.seed,
        "expected_epoch_time_s": spec.expected_epoch_time(n, cap),
        "epochs": [_finite(e.to_dict()) for e in truth],
    }
    return SyntheticRun(manifest, windows, telemetry_csv, epochs_csv, format_manifest(manifest), truth,
                        ground_truth)


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def run_dirname(n: int, cap: float, clock: float) -> str:
    return f"N{n:04d}_P{cap:g}W_C{clock:g}MHz"


def simulate_corpus(specs: Sequence[SyntheticSpec], out_dir: Path | str) -> list[Path]:
    """Write every (N, cap) run of every spec under ``out_dir/<family>/``."""
    out_dir = Path(out_dir)
    families = [s.family for s in specs]
    if len(set(families)) != len(families):
        raise ValueError(f"duplicate family names: {families}")
    written = []
    for spec in specs:
        for cap in sorted(spec.power_profile, reverse=True):
            for n in spec.gpu_counts:
                run = generate_run(spec, n, cap)
                written.append(run.write(out_dir / spec.family / run_dirname(n, cap, spec.clock_cap_mhz)))
    return written


def load_specs(data: str | bytes, seed: int | None = None) -> list[SyntheticSpec]:
    """Parse a JSON spec file: ``{"families": [{...SyntheticSpec fields...}, ...]}``.

    A top-level ``seed`` (or the ``seed`` argument, which wins) applies to
    families that do not set their own.
    """
    doc = json.loads(data)
    families = doc.get("families")
    if not isinstance(families, list) or not families:
        raise ValueError("spec file needs a non-empty 'families' list")
    default_seed = doc.get("seed", 0)
    specs = []
    for fam in families:
        spec = SyntheticSpec.from_dict({"seed": default_seed, **fam})
        if seed is not None:
            spec = replace(spec, seed=seed)
        specs.append(spec)
    return specs
