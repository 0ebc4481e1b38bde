"""Versioned JSON documents and plot-data CSVs produced by the command line.

Every document carries ``schema_version`` and ``kind``. Floats are written with
12 significant digits, keys are sorted and NaN becomes ``null``, so identical
inputs always serialize to identical bytes.

Document kinds: ``run-metrics`` (ingest), ``fits`` (fit), ``tradeoff``
(tradeoff) and ``report`` (report).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from . import __version__
from .metrics import RunMetrics, normalize_runs
from .scaling import (DEFAULT_KNEE_THRESHOLD, PowerLawFit, ScalingPoint, collapse_replicates,
                      detect_saturation_knee, fit_power_law, predict_epoch_time)
from .tradeoff import TradeoffPoint, build_tradeoff_curve, estimate_carbon, select_optimal_cap

SCHEMA_VERSION = 1
SIG_DIGITS = 12
KINDS = ("run-metrics", "fits", "tradeoff", "report")
GROUP_KEYS = ("model", "domain", "power_cap_w", "clock_cap_mhz", "batch_per_gpu")
DEFAULT_FIT_GROUP = ("model", "power_cap_w", "clock_cap_mhz")
TRADEOFF_GROUP = ("model", "domain", "num_gpus", "clock_cap_mhz", "batch_per_gpu")


class SchemaError(ValueError):
    """A document has the wrong kind or an unsupported schema version."""


def canonical(obj):
    """Round floats to fixed significant digits and replace non-finite values with None."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.{SIG_DIGITS}g}")
    if isinstance(obj, Mapping):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if hasattr(obj, "item"):
        return canonical(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc) -> str:
    return json.dumps(canonical(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def digest(doc) -> str:
    blob = json.dumps(canonical(doc), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if not math.isfinite(value) else f"{value:.{SIG_DIGITS}g}"
    return str(value)


def to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def check_document(doc, kind: str | None = None) -> dict:
    if not isinstance(doc, dict) or doc.get("kind") not in KINDS:
        raise SchemaError(f"not a gpuscale document (kind={doc.get('kind') if isinstance(doc, dict) else None!r})")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    if kind is not None and doc["kind"] != kind:
        raise SchemaError(f"expected a {kind!r} document, got {doc['kind']!r}")
    return doc


def _header(kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "tool_version": __version__}


def group_label(group: Mapping) -> str:
    return ";".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in group.items())


def _group_of(manifest_dict: Mapping, keys: Sequence[str]) -> dict:
    return {k: manifest_dict[k] for k in keys}


def _sort_key(group: Mapping):
    return tuple((k, str(v)) if isinstance(v, str) else (k, "", v) for k, v in group.items())


# -- ingest -------------------------------------------------------------------

def metrics_document(runs: Sequence[tuple[str, RunMetrics, Mapping[str, str]]], strict: bool,
                     paper_energy: bool, warnings: Sequence[str]) -> dict:
    """``runs`` holds (source label, metrics, file digests) triples."""
    entries = []
    for source, run, digests in runs:
        entry = run.to_dict()
        entry["source"] = source
        entry["digests"] = dict(sorted(digests.items()))
        entries.append(entry)
    m = lambda e: e["manifest"]
    entries.sort(key=lambda e: (m(e)["model"], m(e)["power_cap_w"], m(e)["clock_cap_mhz"], m(e)["num_gpus"],
                                e["source"]))
    return {**_header("run-metrics"), "settings": {"strict": strict, "paper_energy": paper_energy},
            "runs": entries, "warnings": list(warnings)}


def runs_from_document(doc) -> list[RunMetrics]:
    return [RunMetrics.from_dict(r) for r in check_document(doc, "run-metrics")["runs"]]


EPOCH_CSV_HEADER = ("source", "model", "domain", "num_gpus", "power_cap_w", "clock_cap_mhz", "epoch",
                    "wall_time_s", "energy_j", "mean_sm_util", "mean_mem_util", "cv_sm_util", "cv_mem_util")


def epochs_csv(doc) -> str:
    rows = []
    for r in check_document(doc, "run-metrics")["runs"]:
        m = r["manifest"]
        for e in r["epochs"]:
            rows.append([r["source"], m["model"], m["domain"], m["num_gpus"], m["power_cap_w"], m["clock_cap_mhz"],
                         e["epoch"], e["wall_time_s"], e["energy_j"], e["mean_sm_util"], e["mean_mem_util"],
                         _none_nan(e["cv_sm_util"]), _none_nan(e["cv_mem_util"])])
    return to_csv(EPOCH_CSV_HEADER, rows)


def _none_nan(v):
    return math.nan if v is None else v


# -- fit ----------------------------------------------------------------------

def fits_document(metric_docs: Sequence[dict], group_by: Sequence[str] = DEFAULT_FIT_GROUP,
                  collapse: bool = False, knee_threshold: float = DEFAULT_KNEE_THRESHOLD) -> dict:
    """One power-law fit per group of runs; per-epoch times are the observations."""
    unknown = set(group_by) - set(GROUP_KEYS)
    if unknown:
        raise ValueError(f"cannot group by {sorted(unknown)}; choose from {GROUP_KEYS}")
    groups: dict[tuple, list[ScalingPoint]] = defaultdict(list)
    labels: dict[tuple, dict] = {}
    for doc in metric_docs:
        for r in check_document(doc, "run-metrics")["runs"]:
            group = _group_of(r["manifest"], group_by)
            key = tuple(group.items())
            labels[key] = group
            groups[key] += [ScalingPoint(r["manifest"]["num_gpus"], e["wall_time_s"]) for e in r["epochs"]]

    fits, warnings = [], []
    for key in sorted(groups, key=lambda k: _sort_key(labels[k])):
        group, points = labels[key], sorted(groups[key], key=lambda p: (p.num_gpus, p.epoch_time_s))
        distinct = sorted({p.num_gpus for p in points})
        if len(distinct) < 3:
            warnings.append(f"skipped {group_label(group)}: {len(distinct)} distinct GPU count(s), need 3")
            continue
        fit = fit_power_law(points, collapse=collapse)
        knee = detect_saturation_knee(points, knee_threshold) if len(distinct) >= 4 else None
        used = collapse_replicates(points) if collapse else points
        fits.append({"group": group, "fit": fit.to_dict(), "knee_gpus": knee,
                     "points": [{"num_gpus": p.num_gpus, "epoch_time_s": p.epoch_time_s} for p in used]})
    return {**_header("fits"),
            "settings": {"group_by": list(group_by), "collapse_replicates": collapse,
                         "knee_threshold": knee_threshold},
            "inputs": [digest(d) for d in metric_docs], "fits": fits, "warnings": warnings}


# -- tradeoff -----------------------------------------------------------------

def tradeoff_document(metric_docs: Sequence[dict], baseline_cap: float | None, max_slowdown: float,
                      carbon_intensity: float | None = None) -> dict:
    """Trade-off curve and cap recommendation per (model, GPU count, clock cap) family."""
    families: dict[tuple, list[RunMetrics]] = defaultdict(list)
    labels: dict[tuple, dict] = {}
    for doc in metric_docs:
        for r in check_document(doc, "run-metrics")["runs"]:
            group = _group_of(r["manifest"], TRADEOFF_GROUP)
            key = tuple(group.items())
            labels[key] = group
            families[key].append(RunMetrics.from_dict(r))

    recs, warnings = [], []
    for key in sorted(families, key=lambda k: _sort_key(labels[k])):
        group, runs = labels[key], families[key]
        base = baseline_cap if baseline_cap is not None else max(r.manifest.power_cap_w for r in runs)
        try:
            curve = build_tradeoff_curve(runs, base)
        except ValueError as err:
            warnings.append(f"skipped {group_label(group)}: {err}")
            continue
        rec = select_optimal_cap(curve, max_slowdown, baseline_cap=base)
        entry = {"group": group, "baseline_cap_w": base, "curve": [p.to_dict() for p in curve],
                 "recommendation": rec.to_dict()}
        if carbon_intensity is not None:
            energy = {r.manifest.power_cap_w: r.total_energy_j for r in runs}
            entry["carbon"] = {
                "intensity_g_per_kwh": carbon_intensity,
                "baseline_co2_kg": estimate_carbon(energy[base], carbon_intensity),
                "chosen_co2_kg": estimate_carbon(energy[rec.chosen_cap_w], carbon_intensity),
            }
        recs.append(entry)
    return {**_header("tradeoff"),
            "settings": {"baseline_cap_w": baseline_cap, "max_slowdown": max_slowdown,
                         "carbon_intensity_g_per_kwh": carbon_intensity},
            "inputs": [digest(d) for d in metric_docs], "recommendations": recs, "warnings": warnings}


# -- report -------------------------------------------------------------------

def _powers_of_two(n_min: int, n_max: int) -> list[int]:
    out, n = [], n_min
    while n <= n_max:
        out.append(n)
        n *= 2
    return out


def report_bundle(docs: Sequence[dict]) -> dict[str, str]:
    """Build ``report.json`` plus plot-data CSVs from ingest/fit/tradeoff documents.

    A previous report may be passed in place of its inputs; its embedded
    documents are used, so the regenerated report is byte-identical.
    """
    inputs = []
    for doc in docs:
        check_document(doc)
        if doc["kind"] == "report":
            inputs += [i["document"] for i in doc["inputs"]]
        else:
            inputs.append(canonical(doc))
    inputs.sort(key=lambda d: (KINDS.index(d["kind"]), digest(d)))

    metrics = [d for d in inputs if d["kind"] == "run-metrics"]
    fits = [f for d in inputs if d["kind"] == "fits" for f in d["fits"]]
    recs = [r for d in inputs if d["kind"] == "tradeoff" for r in d["recommendations"]]
    warnings = [w for d in inputs for w in d.get("warnings", [])]

    runs_summary = []
    for d in metrics:
        for r in d["runs"]:
            ep = r["epochs"]
            runs_summary.append({
                "source": r["source"], "manifest": r["manifest"], "n_epochs": len(ep),
                "mean_epoch_time_s": r["mean_epoch_time_s"], "total_energy_j": r["total_energy_j"],
                "mean_sm_util": _mean([e["mean_sm_util"] for e in ep]),
                "mean_mem_util": _mean([e["mean_mem_util"] for e in ep]),
                "cv_sm_util": _mean([e["cv_sm_util"] for e in ep]),
                "cv_mem_util": _mean([e["cv_mem_util"] for e in ep]),
            })

    report = {**_header("report"),
              "inputs": [{"kind": d["kind"], "sha256": digest(d), "document": d} for d in inputs],
              "runs": runs_summary, "fits": fits, "tradeoffs": recs, "warnings": warnings}

    files = {"report.json": dumps(report)}
    files["scaling_curves.csv"] = _scaling_csv(fits)
    files["tradeoff.csv"] = to_csv(("group", "power_cap_w", "relative_speed", "relative_energy"),
                                   [(group_label(r["group"]), p["power_cap_w"], p["relative_speed"],
                                     p["relative_energy"]) for r in recs for p in r["curve"]])
    run_objs = [RunMetrics.from_dict(r) for d in metrics for r in d["runs"]]
    files["gpu_scaling_normalized.csv"] = _normalized_csv(run_objs)
    files["utilization.csv"] = to_csv(
        ("model", "power_cap_w", "clock_cap_mhz", "num_gpus", "mean_sm_util", "mean_mem_util", "cv_sm_util",
         "cv_mem_util"),
        [(s["manifest"]["model"], s["manifest"]["power_cap_w"], s["manifest"]["clock_cap_mhz"],
          s["manifest"]["num_gpus"], s["mean_sm_util"], s["mean_mem_util"], s["cv_sm_util"], s["cv_mem_util"])
         for s in runs_summary])
    return files


def _mean(values) -> float:
    values = [v for v in values if v is not None and math.isfinite(v)]
    return math.fsum(values) / len(values) if values else math.nan


def _scaling_csv(fits) -> str:
    rows = []
    for f in fits:
        label = group_label(f["group"])
        observed = collapse_replicates(ScalingPoint(p["num_gpus"], p["epoch_time_s"]) for p in f["points"])
        rows += [(label, "observed", p.num_gpus, p.epoch_time_s) for p in observed]
        fit = PowerLawFit.from_dict(f["fit"])
        rows += [(label, "fit", n, predict_epoch_time(fit, n)) for n in _powers_of_two(fit.n_min, fit.n_max)]
    return to_csv(("group", "series", "num_gpus", "epoch_time_s"), rows)


def _normalized_csv(runs: Sequence[RunMetrics]) -> str:
    families: dict[tuple, list[RunMetrics]] = defaultdict(list)
    for r in runs:
        m = r.manifest
        families[(m.model_name, m.power_cap_w, m.clock_cap_mhz)].append(r)
    rows = []
    for (model, cap, clock), fam in sorted(families.items()):
        try:
            points = normalize_runs(fam, axis="num_gpus")
        except ValueError:
            continue
        rows += [(model, cap, clock, int(p.label), p.relative_speed, p.relative_energy) for p in points]
    return to_csv(("model", "power_cap_w", "clock_cap_mhz", "num_gpus", "relative_speed", "relative_energy"), rows)


def tradeoff_points(entry: Mapping) -> list[TradeoffPoint]:
    return [TradeoffPoint.from_dict(p) for p in entry["curve"]]
