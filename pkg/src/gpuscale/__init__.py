"""Telemetry analysis for distributed GPU training: per-epoch time and energy,
power-law scaling fits of epoch time against GPU count, and power-cap trade-offs.
"""

__version__ = "0.1.0"

from .metrics import (EpochMetrics, NormalizedPoint, RunMetrics, coefficient_of_variation, epoch_metrics,
                      integrate_energy, normalize_runs, run_metrics)
from .scaling import (PowerLawFit, ScalingPoint, compare_fits, detect_saturation_knee, fit_power_law,
                      predict_epoch_time, speedup)
from .synth import SyntheticSpec, generate_run, generate_scaling_series
from .telemetry import (EpochWindow, RunManifest, TelemetryError, TelemetrySample, ValidationError,
                        parse_epoch_windows, parse_manifest, parse_telemetry)
from .tradeoff import (CapRecommendation, TradeoffPoint, build_tradeoff_curve, estimate_carbon,
                       select_optimal_cap)
