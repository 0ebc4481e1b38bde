"""Power-law scaling of epoch time with GPU count, ``t = alpha * N**(-beta)``.

The fit is ordinary least squares of ``ln t`` on ``ln N``, written out with the
closed-form normal equations so that every number it reports (standard errors,
R^2) is traceable. ``beta`` is reported positive: a slope of -0.8 in log-log
space is ``beta = 0.8``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_KNEE_THRESHOLD = 0.25


@dataclass(frozen=True)
class ScalingPoint:
    num_gpus: int
    epoch_time_s: float

    def __post_init__(self):
        if self.num_gpus < 1:
            raise ValueError(f"num_gpus must be positive, got {self.num_gpus}")
        if not self.epoch_time_s > 0:
            raise ValueError(f"epoch time must be positive, got {self.epoch_time_s}")


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    beta: float
    beta_stderr: float
    alpha_log_stderr: float
    r_squared: float
    n_points: int
    n_min: int
    n_max: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta_stderr < 0 or self.alpha_log_stderr < 0:
            raise ValueError("standard errors must be non-negative")
        if self.r_squared > 1:
            raise ValueError(f"r_squared above 1: {self.r_squared}")
        if self.n_points < 3 or not self.n_min < self.n_max:
            raise ValueError("a fit needs at least 3 points spanning more than one GPU count")

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "beta_stderr": self.beta_stderr,
            "alpha_log_stderr": self.alpha_log_stderr,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "n_min": self.n_min,
            "n_max": self.n_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(d[k]) if k in ("n_points", "n_min", "n_max") else float(d[k])
                      for k in cls.__dataclass_fields__})


def _arrays(points: Sequence[ScalingPoint]) -> tuple[np.ndarray, np.ndarray]:
    n = np.array([p.num_gpus for p in points], dtype=float)
    t = np.array([p.epoch_time_s for p in points], dtype=float)
    if np.any(n < 1) or np.any(t <= 0):
        raise ValueError("GPU counts and epoch times must be positive")
    return n, t


def collapse_replicates(points: Iterable[ScalingPoint]) -> list[ScalingPoint]:
    """Average epoch times per GPU count (arithmetic mean), sorted by count."""
    groups: dict[int, list[float]] = {}
    for p in points:
        groups.setdefault(p.num_gpus, []).append(p.epoch_time_s)
    return [ScalingPoint(n, float(np.mean(ts))) for n, ts in sorted(groups.items())]


def fit_power_law(points: Sequence[ScalingPoint], collapse: bool = False) -> PowerLawFit:
    """Least-squares fit of ``ln t = ln alpha - beta ln N``.

    Replicate points at the same N are separate observations unless
    ``collapse`` is set, in which case they are averaged per N first. A
    response with zero variance in ``ln t`` gives ``beta = 0`` and
    ``r_squared = 0``.
    """
    points = list(points)
    if collapse:
        points = collapse_replicates(points)
    n, t = _arrays(points)
    if len(set(n.tolist())) < 3:
        raise ValueError(f"need at least 3 distinct GPU counts, got {sorted(set(n.astype(int).tolist()))}")
    x, y = np.log(n), np.log(t)
    m = x.size
    x_mean, y_mean = x.mean(), y.mean()
    dx = x - x_mean
    sxx = float(dx @ dx)

    if np.all(y == y[0]):
        slope, intercept = 0.0, float(y[0])
        resid = np.zeros_like(y)
        r_squared = 0.0
    else:
        dy = y - y_mean
        slope = float(dx @ dy) / sxx
        intercept = float(y_mean - slope * x_mean)
        resid = y - (intercept + slope * x)
        sse, sst = float(resid @ resid), float(dy @ dy)
        r_squared = 1.0 - sse / sst

    s2 = float(resid @ resid) / (m - 2)
    beta_se = math.sqrt(s2 / sxx)
    intercept_se = math.sqrt(s2 * (1.0 / m + x_mean ** 2 / sxx))
    return PowerLawFit(
        alpha=math.exp(intercept),
        beta=-slope if slope != 0 else 0.0,
        beta_stderr=beta_se,
        alpha_log_stderr=intercept_se,
        r_squared=r_squared,
        n_points=m,
        n_min=int(n.min()),
        n_max=int(n.max()),
    )


def predict_epoch_time(fit: PowerLawFit, n: float) -> float:
    """Evaluate ``alpha * n**(-beta)``; see :func:`is_extrapolation` for the domain check."""
    if n < 1:
        raise ValueError(f"GPU count must be at least 1, got {n}")
    return fit.alpha * n ** (-fit.beta)


def is_extrapolation(fit: PowerLawFit, n: float) -> bool:
    return not fit.n_min <= n <= fit.n_max


def speedup(source, n_base: int, n_target: int) -> float:
    """Epoch-time ratio ``t(n_base) / t(n_target)``.

    ``source`` is either a :class:`PowerLawFit` (predicted times) or a list of
    :class:`ScalingPoint` (measured times; replicates are averaged).
    """
    if isinstance(source, PowerLawFit):
        if n_base < 1 or n_target < 1:
            raise ValueError("GPU counts must be at least 1")
        # closed form keeps the chain rule speedup(a,b)*speedup(b,c) == speedup(a,c) tight
        return (n_target / n_base) ** source.beta
    means = {p.num_gpus: p.epoch_time_s for p in collapse_replicates(source)}
    missing = [n for n in (n_base, n_target) if n not in means]
    if missing:
        raise KeyError(f"no measurements at GPU count(s) {missing}")
    return means[n_base] / means[n_target]


def relative_residuals(fit: PowerLawFit, points: Sequence[ScalingPoint]) -> np.ndarray:
    """``(t_observed - t_predicted) / t_predicted`` for each point."""
    n, t = _arrays(points)
    pred = fit.alpha * n ** (-fit.beta)
    return (t - pred) / pred


def detect_saturation_knee(points: Sequence[ScalingPoint],
                           threshold: float = DEFAULT_KNEE_THRESHOLD) -> int | None:
    """GPU count beyond which epoch times stop following the power law.

    Starting from the three smallest GPU counts, the prefix is grown one GPU
    count at a time while the prefix fit keeps every prefix point within
    ``threshold`` relative residual and the next GPU count's points stay within
    ``threshold`` of the prefix fit's prediction. The knee is the last GPU
    count of that clean prefix. Returns None when the full-domain fit already
    keeps every point within the threshold, or when no clean prefix exists.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    points = sorted(points, key=lambda p: p.num_gpus)
    counts = sorted({p.num_gpus for p in points})
    if len(counts) < 4:
        raise ValueError(f"knee detection needs at least 4 distinct GPU counts, got {len(counts)}")

    def within(fit, pts):
        return bool(np.all(np.abs(relative_residuals(fit, pts)) <= threshold))

    if within(fit_power_law(points), points):
        return None
    knee = None
    for k in range(3, len(counts)):
        prefix = [p for p in points if p.num_gpus <= counts[k - 1]]
        fit = fit_power_law(prefix)
        if not within(fit, prefix):
            break
        knee = counts[k - 1]
        nxt = [p for p in points if p.num_gpus == counts[k]]
        if not within(fit, nxt):
            return knee
    return None


@dataclass(frozen=True)
class FitComparison:
    beta_difference: float
    combined_stderr: float
    significant: bool

    def to_dict(self):
        return {"beta_difference": self.beta_difference, "combined_stderr": self.combined_stderr,
                "significant": self.significant}


def compare_fits(a: PowerLawFit, b: PowerLawFit, z: float = 2.0) -> FitComparison:
    """Difference of scaling exponents, significant when it exceeds ``z`` combined standard errors."""
    diff = a.beta - b.beta
    se = math.hypot(a.beta_stderr, b.beta_stderr)
    return FitComparison(diff, se, abs(diff) > z * se)
