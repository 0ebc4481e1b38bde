"""Per-epoch and per-run aggregation of GPU telemetry.

Energy is the time integral of power draw, summed over GPUs. Between samples
the power is taken to vary linearly (trapezoidal rule); before the first and
after the last sample it is held at the nearest sample's value. For a constant
draw ``P`` this is exactly ``P * (end - start)``, i.e. wall time multiplied by
power.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .telemetry import EpochWindow, RunManifest, TelemetryError, TelemetrySample, ValidationError, group_by_gpu

NORMALIZE_AXES = ("num_gpus", "power_cap_w", "clock_cap_mhz")
_MATCH_FIELDS = ("model_name", "domain_tag", "num_gpus", "power_cap_w", "clock_cap_mhz", "per_gpu_batch_size")


class UndefinedCVError(ArithmeticError):
    """The coefficient of variation of a zero-mean series."""


class CoverageWarning(UserWarning):
    """Telemetry does not fully cover an epoch window (lenient mode only)."""


class GpuTrace:
    """Column arrays of one GPU's samples, ordered by time."""

    __slots__ = ("gpu_id", "t", "power", "sm", "mem")

    def __init__(self, gpu_id, t, power, sm, mem):
        self.gpu_id = gpu_id
        self.t = np.asarray(t, dtype=float)
        self.power = np.asarray(power, dtype=float)
        self.sm = np.asarray(sm, dtype=float)
        self.mem = np.asarray(mem, dtype=float)
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise ValidationError(f"timestamps for gpu {gpu_id} are not strictly increasing")

    @classmethod
    def from_samples(cls, samples: Sequence[TelemetrySample]) -> "GpuTrace":
        if not samples:
            raise TelemetryError("no samples available for GPU")
        gpu_ids = {s.gpu_id for s in samples}
        if len(gpu_ids) != 1:
            raise TelemetryError(f"samples from several GPUs mixed together: {sorted(gpu_ids)}")
        return cls(
            samples[0].gpu_id,
            [s.timestamp for s in samples],
            [s.power_draw for s in samples],
            [s.sm_utilization for s in samples],
            [s.memory_utilization for s in samples],
        )

    def __len__(self):
        return self.t.size

    def in_window(self, window: EpochWindow) -> np.ndarray:
        """Boolean mask of samples with ``start <= t < end``."""
        return (self.t >= window.start) & (self.t < window.end)


def _as_trace(samples) -> GpuTrace:
    return samples if isinstance(samples, GpuTrace) else GpuTrace.from_samples(list(samples))


def _coverage_problem(trace: GpuTrace, window: EpochWindow) -> str | None:
    if len(trace) < 2:
        return None
    gap = float(np.median(np.diff(trace.t)))
    if window.start < trace.t[0] - gap or window.end > trace.t[-1] + gap:
        return (f"epoch {window.epoch_index} [{window.start}, {window.end}] extends more than one sampling "
                f"gap ({gap:g} s) beyond gpu {trace.gpu_id} samples [{trace.t[0]}, {trace.t[-1]}]")
    return None


def integrate_energy(samples, window: EpochWindow, strict: bool = True) -> float:
    """Energy in joules drawn by one GPU over ``window``.

    ``samples`` is a time-ordered list of one GPU's :class:`TelemetrySample`
    (or a :class:`GpuTrace`).
    """
    trace = _as_trace(samples)
    problem = _coverage_problem(trace, window)
    if problem:
        if strict:
            raise ValidationError(problem)
        warnings.warn(problem, CoverageWarning, stacklevel=2)
    t = trace.t
    inside = t[(t > window.start) & (t < window.end)]
    knots = np.concatenate(([window.start], inside, [window.end]))
    power = np.interp(knots, t, trace.power)
    return float(np.sum(np.diff(knots) * (power[:-1] + power[1:])) / 2)


def mean_power_energy(samples, window: EpochWindow) -> float:
    """Energy as mean sampled power times wall time (the plain product definition)."""
    trace = _as_trace(samples)
    mask = trace.in_window(window)
    if not mask.any():
        raise ValidationError(f"gpu {trace.gpu_id} has no samples inside epoch {window.epoch_index}")
    return float(np.mean(trace.power[mask])) * window.duration


def coefficient_of_variation(series) -> float:
    """Population standard deviation over mean (no Bessel correction)."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("coefficient of variation of an empty series")
    mu = x.mean()
    if mu == 0:
        raise UndefinedCVError("coefficient of variation undefined for zero mean")
    return float(np.sqrt(np.mean((x - mu) ** 2)) / mu)


def _cv_or_nan(x) -> float:
    try:
        return coefficient_of_variation(x)
    except UndefinedCVError:
        return math.nan


@dataclass(frozen=True)
class GpuEpochStats:
    gpu_id: int
    energy_j: float
    n_samples: int
    mean_sm_util: float
    mean_mem_util: float
    cv_sm_util: float
    cv_mem_util: float

    def to_dict(self):
        return {
            "gpu_id": self.gpu_id,
            "energy_j": self.energy_j,
            "n_samples": self.n_samples,
            "mean_sm_util": self.mean_sm_util,
            "mean_mem_util": self.mean_mem_util,
            "cv_sm_util": self.cv_sm_util,
            "cv_mem_util": self.cv_mem_util,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: _num(d[k]) if k not in ("gpu_id", "n_samples") else int(d[k])
                      for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class EpochMetrics:
    """Per-epoch wall time, energy over all GPUs, and pooled utilization statistics.

    A CV is ``nan`` when the corresponding mean utilization is zero.
    """

    epoch_index: int
    wall_time_s: float
    energy_j: float
    mean_sm_util: float
    mean_mem_util: float
    cv_sm_util: float
    cv_mem_util: float
    per_gpu: tuple[GpuEpochStats, ...] = ()

    def __post_init__(self):
        if not self.wall_time_s > 0:
            raise ValueError(f"wall time must be positive, got {self.wall_time_s}")
        if self.energy_j < 0:
            raise ValueError(f"energy must be non-negative, got {self.energy_j}")

    def to_dict(self):
        return {
            "epoch": self.epoch_index,
            "wall_time_s": self.wall_time_s,
            "energy_j": self.energy_j,
            "mean_sm_util": self.mean_sm_util,
            "mean_mem_util": self.mean_mem_util,
            "cv_sm_util": self.cv_sm_util,
            "cv_mem_util": self.cv_mem_util,
            "per_gpu": [g.to_dict() for g in self.per_gpu],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            epoch_index=int(d["epoch"]),
            wall_time_s=_num(d["wall_time_s"]),
            energy_j=_num(d["energy_j"]),
            mean_sm_util=_num(d["mean_sm_util"]),
            mean_mem_util=_num(d["mean_mem_util"]),
            cv_sm_util=_num(d["cv_sm_util"]),
            cv_mem_util=_num(d["cv_mem_util"]),
            per_gpu=tuple(GpuEpochStats.from_dict(g) for g in d.get("per_gpu", [])),
        )


def _num(value) -> float:
    return math.nan if value is None else float(value)


def epoch_metrics(samples_by_gpu: Mapping, window: EpochWindow, gpu_ids: Iterable[int] | None = None,
                  strict: bool = True, paper_energy: bool = False) -> EpochMetrics:
    """Aggregate one epoch.

    ``samples_by_gpu`` maps gpu id to that GPU's samples (or a :class:`GpuTrace`).
    ``gpu_ids`` restricts/requires the GPUs to use; every one of them must have
    at least one sample inside the window. With ``paper_energy`` the energy is
    mean power times wall time instead of the trapezoidal integral.
    """
    traces = {g: _as_trace(s) for g, s in samples_by_gpu.items()}
    if gpu_ids is None:
        gpu_ids = sorted(traces)
    sm_pool, mem_pool, per_gpu = [], [], []
    energy = 0.0
    for g in gpu_ids:
        trace = traces.get(g)
        mask = trace.in_window(window) if trace is not None else None
        if trace is None or not mask.any():
            msg = f"gpu {g} has no samples inside epoch {window.epoch_index}"
            if strict or trace is None:
                raise ValidationError(msg)
            warnings.warn(msg, CoverageWarning, stacklevel=2)
        if paper_energy and mask.any():
            e = float(np.mean(trace.power[mask])) * window.duration
        else:
            e = integrate_energy(trace, window, strict=strict)
        energy += e
        sm, mem = trace.sm[mask], trace.mem[mask]
        sm_pool.append(sm)
        mem_pool.append(mem)
        per_gpu.append(GpuEpochStats(
            gpu_id=g,
            energy_j=e,
            n_samples=int(mask.sum()),
            mean_sm_util=float(sm.mean()) if sm.size else math.nan,
            mean_mem_util=float(mem.mean()) if mem.size else math.nan,
            cv_sm_util=_cv_or_nan(sm) if sm.size else math.nan,
            cv_mem_util=_cv_or_nan(mem) if mem.size else math.nan,
        ))
    sm_all, mem_all = np.concatenate(sm_pool), np.concatenate(mem_pool)
    if sm_all.size == 0:
        raise ValidationError(f"no utilization samples inside epoch {window.epoch_index}")
    return EpochMetrics(
        epoch_index=window.epoch_index,
        wall_time_s=window.duration,
        energy_j=energy,
        mean_sm_util=float(sm_all.mean()),
        mean_mem_util=float(mem_all.mean()),
        cv_sm_util=_cv_or_nan(sm_all),
        cv_mem_util=_cv_or_nan(mem_all),
        per_gpu=tuple(per_gpu),
    )


@dataclass(frozen=True)
class RunMetrics:
    manifest: RunManifest
    epochs: tuple[EpochMetrics, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        if not self.epochs:
            raise ValueError("a run needs at least one epoch")

    @property
    def mean_epoch_time_s(self) -> float:
        return float(np.mean([e.wall_time_s for e in self.epochs]))

    @property
    def total_energy_j(self) -> float:
        return float(np.sum([e.energy_j for e in self.epochs]))

    def to_dict(self):
        return {
            "manifest": self.manifest.to_dict(),
            "mean_epoch_time_s": self.mean_epoch_time_s,
            "total_energy_j": self.total_energy_j,
            "epochs": [e.to_dict() for e in self.epochs],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(RunManifest.from_dict(d["manifest"]), tuple(EpochMetrics.from_dict(e) for e in d["epochs"]))


def run_metrics(manifest: RunManifest, samples: Iterable[TelemetrySample], windows: Sequence[EpochWindow],
                strict: bool = True, paper_energy: bool = False) -> RunMetrics:
    """Aggregate every epoch of one run.

    The telemetry must contain exactly ``manifest.num_gpus`` distinct GPUs
    (strict mode); in lenient mode a mismatch is only a warning.
    """
    traces = {g: GpuTrace.from_samples(s) for g, s in group_by_gpu(samples).items()}
    if not traces:
        raise TelemetryError("no telemetry samples")
    if len(traces) != manifest.num_gpus:
        msg = f"manifest declares {manifest.num_gpus} GPUs but telemetry has {len(traces)}"
        if strict:
            raise ValidationError(msg)
        warnings.warn(msg, CoverageWarning, stacklevel=2)
    epochs = [epoch_metrics(traces, w, strict=strict, paper_energy=paper_energy) for w in windows]
    return RunMetrics(manifest, tuple(epochs))


@dataclass(frozen=True)
class NormalizedPoint:
    """Speed and energy of one run relative to a baseline run.

    ``relative_speed`` is baseline time over this time (above 1 means faster);
    ``relative_energy`` is this energy over baseline energy.
    """

    label: float
    relative_speed: float
    relative_energy: float

    def to_dict(self):
        return {"label": self.label, "relative_speed": self.relative_speed, "relative_energy": self.relative_energy}


def check_single_axis(runs: Sequence[RunMetrics], axis: str) -> None:
    """Raise unless the runs differ only along ``axis``."""
    if axis not in NORMALIZE_AXES:
        raise ValueError(f"axis must be one of {NORMALIZE_AXES}, got {axis!r}")
    for name in _MATCH_FIELDS:
        if name == axis:
            continue
        values = {getattr(r.manifest, name) for r in runs}
        if len(values) > 1:
            raise ValueError(f"runs vary in {name} ({sorted(map(str, values))}) as well as {axis}")


def normalize_runs(runs: Sequence[RunMetrics], axis: str = "num_gpus",
                   baseline: float | None = None) -> list[NormalizedPoint]:
    """Normalize a run family against one baseline run.

    ``axis`` is the manifest field being varied. The baseline is the run whose
    value on that axis equals ``baseline``, or the smallest value when
    ``baseline`` is None (e.g. the 2-GPU run of a GPU-count sweep). Points come
    back sorted by label.
    """
    if not runs:
        raise ValueError("no runs to normalize")
    check_single_axis(runs, axis)
    labels = [getattr(r.manifest, axis) for r in runs]
    if baseline is None:
        baseline = min(labels)
    base = [r for r, lab in zip(runs, labels) if lab == baseline]
    if not base:
        raise ValueError(f"baseline {axis}={baseline} not among runs {sorted(set(labels))}")
    if len(base) > 1:
        raise ValueError(f"{len(base)} runs share the baseline {axis}={baseline}")
    base_time, base_energy = base[0].mean_epoch_time_s, base[0].total_energy_j
    points = [NormalizedPoint(lab, base_time / r.mean_epoch_time_s, r.total_energy_j / base_energy)
              for r, lab in zip(runs, labels)]
    return sorted(points, key=lambda p: p.label)
