"""Published scaling exponents and related constants from the V100 benchmark study.

Everything here is a reported value for comparison, not something computed.
Keys of the per-setting tables are the power cap in watts or the SM clock
cap in MHz. Note that ResNet50's uncapped exponent differs between the
cross-model table (0.52) and its own power-cap table (0.84); both are kept
as reported.
"""

from __future__ import annotations

from typing import NamedTuple


class ReferenceFit(NamedTuple):
    beta: float
    r_squared: float
    beta_stderr: float | None = None


DOMAIN = {
    "DimeNet": "geometric",
    "SchNet": "geometric",
    "BERT": "nlp",
    "ResNet50": "vision",
    "VGG16": "vision",
    "InceptionV3": "vision",
}

BATCH_PER_GPU = {"DimeNet": 128, "SchNet": 128, "BERT": 8, "ResNet50": 256, "VGG16": 256, "InceptionV3": 256}

# 250 W power cap, 1380 MHz clock
UNCAPPED = {
    "DimeNet": ReferenceFit(0.82, 0.99, 0.03),
    "SchNet": ReferenceFit(0.42, 0.90, 0.05),
    "BERT": ReferenceFit(0.87, 0.97, 0.03),
    "ResNet50": ReferenceFit(0.52, 0.95),
    "VGG16": ReferenceFit(0.64, 0.98),
    "InceptionV3": ReferenceFit(0.44, 0.93),
}

# 250 W, varying clock cap
DIMENET_BY_CLOCK = {135: ReferenceFit(0.97, 1.0), 735: ReferenceFit(0.90, 0.99), 1380: ReferenceFit(0.82, 0.99)}

# 1380 MHz, varying power cap
DIMENET_BY_POWER = {100: ReferenceFit(0.93, 0.99), 200: ReferenceFit(0.84, 0.99), 250: ReferenceFit(0.82, 0.99)}
BERT_BY_POWER = {100: ReferenceFit(0.91, 0.99), 200: ReferenceFit(0.86, 0.99), 250: ReferenceFit(0.87, 0.99)}
RESNET50_BY_POWER = {100: ReferenceFit(0.83, 1.0), 200: ReferenceFit(0.83, 0.99), 250: ReferenceFit(0.84, 0.99)}

POWER_CAPS_W = (100, 200, 250)
CLOCK_CAPS_MHZ = (135, 735, 1380)
UNCAPPED_POWER_W = 250
MAX_GPUS = 424

# Measured per-epoch speedups from multi-GPU training
DIMENET_SPEEDUP = 60.0
BERT_MAX_SPEEDUP = 76.0

# SchNet leaves power-law scaling beyond this GPU count
SCHNET_KNEE_GPUS = 64

OPTIMAL_POWER_CAP_W = 200
MIN_ENERGY_SAVING_AT_OPTIMAL_CAP = 0.10

# 128 V100s emit about 22 kg CO2 per hour
CO2_KG_PER_HOUR_128_GPUS = 22.0
