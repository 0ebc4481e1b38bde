"""Parsing and validation of GPU telemetry, epoch boundaries and run manifests.

Three plain-text formats are understood:

* telemetry CSV, header ``timestamp,gpu_id,power_w,sm_util_pct,mem_util_pct,sm_clock_mhz``
* epoch CSV, header ``epoch,start_s,end_s``
* run manifest, ``key=value`` per line

Parsers take ``bytes`` or ``str``. In strict mode (the default) the first bad
row raises :class:`TelemetryError`; with ``strict=False`` bad rows are dropped
and each drop is reported as a :class:`DroppedRowWarning`.
"""

from __future__ import annotations

import csv
import io
import math
import re
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping

TELEMETRY_HEADER = ("timestamp", "gpu_id", "power_w", "sm_util_pct", "mem_util_pct", "sm_clock_mhz")
EPOCH_HEADER = ("epoch", "start_s", "end_s")
MANIFEST_KEYS = ("model", "domain", "num_gpus", "power_cap_w", "clock_cap_mhz", "batch_per_gpu", "epochs")
DOMAINS = ("geometric", "nlp", "vision", "other")


class TelemetryError(ValueError):
    """Raised for malformed or invalid telemetry, epoch or manifest input."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(TelemetryError):
    """Well-formed input that violates a value or ordering invariant."""


class DroppedRowWarning(UserWarning):
    """A row was discarded in lenient mode."""


@dataclass(frozen=True)
class TelemetrySample:
    timestamp: float
    gpu_id: int
    power_draw: float
    sm_utilization: float
    memory_utilization: float
    sm_clock: float

    def __post_init__(self):
        _check_sample(self)


@dataclass(frozen=True)
class RunManifest:
    """Experiment descriptor: model, power cap, clock cap and GPU count of one run.

    Anything that does not map onto a named field (learning rate, dataset, ...)
    is kept verbatim in ``extra_settings``.
    """

    model_name: str
    domain_tag: str
    num_gpus: int
    power_cap_w: float
    clock_cap_mhz: float
    per_gpu_batch_size: int
    epochs_planned: int
    extra_settings: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.domain_tag not in DOMAINS:
            raise ValidationError(f"domain must be one of {DOMAINS}, got {self.domain_tag!r}", field="domain")
        for name, key in (("num_gpus", "num_gpus"), ("per_gpu_batch_size", "batch_per_gpu"),
                          ("epochs_planned", "epochs")):
            if getattr(self, name) < 1:
                raise ValidationError(f"{key} must be a positive integer, got {getattr(self, name)}", field=key)
        for name in ("power_cap_w", "clock_cap_mhz"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be positive, got {value}", field=name)
        object.__setattr__(self, "extra_settings", dict(self.extra_settings))

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "domain": self.domain_tag,
            "num_gpus": self.num_gpus,
            "power_cap_w": self.power_cap_w,
            "clock_cap_mhz": self.clock_cap_mhz,
            "batch_per_gpu": self.per_gpu_batch_size,
            "epochs": self.epochs_planned,
            "extra_settings": dict(sorted(self.extra_settings.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunManifest":
        return cls(
            model_name=d["model"],
            domain_tag=d["domain"],
            num_gpus=int(d["num_gpus"]),
            power_cap_w=float(d["power_cap_w"]),
            clock_cap_mhz=float(d["clock_cap_mhz"]),
            per_gpu_batch_size=int(d["batch_per_gpu"]),
            epochs_planned=int(d["epochs"]),
            extra_settings=dict(d.get("extra_settings", {})),
        )


@dataclass(frozen=True)
class EpochWindow:
    epoch_index: int
    start: float
    end: float

    def __post_init__(self):
        if self.epoch_index < 0:
            raise ValidationError(f"epoch index must be non-negative, got {self.epoch_index}", field="epoch")
        if not self.start < self.end:
            raise ValidationError(f"epoch {self.epoch_index}: start {self.start} >= end {self.end}", field="start_s")

    @property
    def duration(self) -> float:
        return self.end - self.start


def _check_sample(s: TelemetrySample) -> None:
    if not math.isfinite(s.timestamp):
        raise ValidationError(f"timestamp out of range: {s.timestamp}", field="timestamp")
    if s.gpu_id < 0:
        raise ValidationError(f"gpu_id out of range: {s.gpu_id}", field="gpu_id")
    if not (s.power_draw >= 0 and math.isfinite(s.power_draw)):
        raise ValidationError(f"power_draw out of range: {s.power_draw}", field="power_draw")
    if not 0 <= s.sm_utilization <= 100:
        raise ValidationError(f"sm_utilization out of range: {s.sm_utilization}", field="sm_utilization")
    if not 0 <= s.memory_utilization <= 100:
        raise ValidationError(f"memory_utilization out of range: {s.memory_utilization}", field="memory_utilization")
    if not (s.sm_clock > 0 and math.isfinite(s.sm_clock)):
        raise ValidationError(f"sm_clock out of range: {s.sm_clock}", field="sm_clock")


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _rows(text: str, header: tuple[str, ...]) -> Iterable[tuple[int, list[str]]]:
    """Yield ``(line_number, cells)`` for data rows, skipping blanks and an optional header."""
    reader = csv.reader(io.StringIO(text))
    first = True
    for cells in reader:
        lineno = reader.line_num
        if not cells or all(not c.strip() for c in cells):
            continue
        cells = [c.strip() for c in cells]
        if first:
            first = False
            if cells and cells[0] == header[0]:
                if tuple(cells) != header:
                    raise TelemetryError(f"unexpected header {','.join(cells)!r}, expected {','.join(header)!r}",
                                         line=lineno)
                continue
        yield lineno, cells


def _report(exc: TelemetryError, strict: bool) -> None:
    if strict:
        raise exc
    warnings.warn(f"dropped row: {exc}", DroppedRowWarning, stacklevel=3)


_ISO_FRACTION = re.compile(r"(T\d\d:\d\d:\d\d)\.(\d+)")


def _pad_fraction(m: re.Match) -> str:
    # fromisoformat on 3.10 only takes 3 or 6 fractional digits
    return f"{m.group(1)}.{m.group(2)[:6].ljust(6, '0')}"


def _parse_timestamp(cell: str, anchor: datetime | None) -> tuple[float, datetime | None]:
    try:
        return float(cell), anchor
    except ValueError:
        pass
    stamp = datetime.fromisoformat(_ISO_FRACTION.sub(_pad_fraction, cell.replace("Z", "+00:00")))
    if anchor is None:
        anchor = stamp
    if (stamp.tzinfo is None) != (anchor.tzinfo is None):
        raise ValueError("cannot mix naive and timezone-aware timestamps")
    return (stamp - anchor).total_seconds(), anchor


def parse_telemetry(data: bytes | str, strict: bool = True) -> list[TelemetrySample]:
    """Parse telemetry CSV into samples, preserving row order.

    Rows of several GPUs may be interleaved. Timestamps are seconds since run
    start; an ISO-8601 timestamp is also accepted, and the first one seen becomes
    the zero point for every later ISO-8601 row. Timestamps must strictly
    increase within each GPU's stream.
    """
    samples = []
    last_seen: dict[int, float] = {}
    anchor = None
    for lineno, cells in _rows(_text(data), TELEMETRY_HEADER):
        try:
            if len(cells) != len(TELEMETRY_HEADER):
                raise TelemetryError(f"expected {len(TELEMETRY_HEADER)} fields, got {len(cells)}", line=lineno)
            try:
                ts, anchor = _parse_timestamp(cells[0], anchor)
                gpu_id = int(cells[1])
                values = [float(c) for c in cells[2:]]
            except ValueError as err:
                raise TelemetryError(f"malformed row: {err}", line=lineno) from None
            try:
                sample = TelemetrySample(ts, gpu_id, *values)
            except TelemetryError as err:
                raise type(err)(str(err), line=lineno, field=err.field) from None
            prev = last_seen.get(gpu_id)
            if prev is not None and not ts > prev:
                raise ValidationError(f"non-monotonic timestamp {ts} after {prev} for gpu {gpu_id}",
                                     line=lineno, field="timestamp")
        except TelemetryError as err:
            _report(err, strict)
            continue
        last_seen[gpu_id] = ts
        samples.append(sample)
    return samples


def format_telemetry(samples: Iterable[TelemetrySample]) -> str:
    """Serialize samples to telemetry CSV; floats use shortest round-trip repr."""
    lines = [",".join(TELEMETRY_HEADER)]
    for s in samples:
        lines.append(f"{s.timestamp!r},{s.gpu_id},{s.power_draw!r},{s.sm_utilization!r},"
                     f"{s.memory_utilization!r},{s.sm_clock!r}")
    return "\n".join(lines) + "\n"


def group_by_gpu(samples: Iterable[TelemetrySample]) -> dict[int, list[TelemetrySample]]:
    groups: dict[int, list[TelemetrySample]] = {}
    for s in samples:
        groups.setdefault(s.gpu_id, []).append(s)
    return dict(sorted(groups.items()))


def parse_epoch_windows(data: bytes | str, strict: bool = True) -> list[EpochWindow]:
    """Parse epoch CSV. Returns windows sorted by epoch index.

    Duplicate indices and overlapping windows are always errors, since no
    single row can be blamed for them.
    """
    windows = []
    for lineno, cells in _rows(_text(data), EPOCH_HEADER):
        try:
            if len(cells) != 3:
                raise TelemetryError(f"expected 3 fields, got {len(cells)}", line=lineno)
            try:
                idx, start, end = int(cells[0]), float(cells[1]), float(cells[2])
            except ValueError as err:
                raise TelemetryError(f"malformed row: {err}", line=lineno) from None
            try:
                windows.append(EpochWindow(idx, start, end))
            except TelemetryError as err:
                raise type(err)(str(err), line=lineno, field=err.field) from None
        except TelemetryError as err:
            _report(err, strict)
    return validate_windows(windows)


def validate_windows(windows: Iterable[EpochWindow]) -> list[EpochWindow]:
    windows = sorted(windows, key=lambda w: w.epoch_index)
    seen = set()
    for w in windows:
        if w.epoch_index in seen:
            raise ValidationError(f"duplicate epoch index {w.epoch_index}", field="epoch")
        seen.add(w.epoch_index)
    by_time = sorted(windows, key=lambda w: w.start)
    for a, b in zip(by_time, by_time[1:]):
        if b.start < a.end:
            raise ValidationError(f"epochs {a.epoch_index} and {b.epoch_index} overlap "
                                 f"([{a.start}, {a.end}] vs [{b.start}, {b.end}])")
    return windows


def format_epoch_windows(windows: Iterable[EpochWindow]) -> str:
    lines = [",".join(EPOCH_HEADER)]
    lines += [f"{w.epoch_index},{w.start!r},{w.end!r}" for w in windows]
    return "\n".join(lines) + "\n"


def parse_manifest(data: bytes | str) -> RunManifest:
    """Parse a ``key=value`` manifest. Unknown keys land in ``extra_settings``.

    Blank lines and lines starting with ``#`` are ignored.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(_text(data).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise TelemetryError(f"expected key=value, got {line!r}", line=lineno)
        key = key.strip()
        if key in values:
            raise TelemetryError(f"duplicate key {key!r}", line=lineno, field=key)
        values[key] = value.strip()

    for key in MANIFEST_KEYS:
        if key not in values:
            raise TelemetryError(f"missing required key {key!r}", field=key)

    def number(key, kind):
        try:
            return kind(values[key])
        except ValueError:
            raise TelemetryError(f"{key} is not a valid {kind.__name__}: {values[key]!r}", field=key) from None

    return RunManifest(
        model_name=values["model"],
        domain_tag=values["domain"],
        num_gpus=number("num_gpus", int),
        power_cap_w=number("power_cap_w", float),
        clock_cap_mhz=number("clock_cap_mhz", float),
        per_gpu_batch_size=number("batch_per_gpu", int),
        epochs_planned=number("epochs", int),
        extra_settings={k: v for k, v in values.items() if k not in MANIFEST_KEYS},
    )


def format_manifest(manifest: RunManifest) -> str:
    d = manifest.to_dict()
    extra = d.pop("extra_settings")
    lines = [f"{k}={_plain(d[k])}" for k in MANIFEST_KEYS]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


def _plain(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)
