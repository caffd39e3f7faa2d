"""Reports and their json / csv / plotdata emitters.

Wall-clock timings are written to their own file so that the report proper
is byte-identical for identical config and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class Check:
    """One gating or informational check.  ``passed is None`` marks an
    informational record that does not enter the summary."""

    name: str
    passed: bool | None
    data: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "data": self.data}


@dataclass
class Report:
    scenario: str
    config: dict
    checks: list = field(default_factory=list)
    series: dict = field(default_factory=dict)  # name -> (x label, y label, [(x, y), ...])
    timings: dict = field(default_factory=dict)
    error: dict | None = None
    artifacts: dict = field(default_factory=dict)  # extra files, e.g. a regenerated pinned.ini

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks if c.passed is not None)

    def add(self, name: str, passed, /, **data) -> Check:
        c = Check(name, None if passed is None else bool(passed), data)
        self.checks.append(c)
        return c

    def add_series(self, name: str, xlabel: str, ylabel: str, points) -> None:
        self.series[name] = (xlabel, ylabel, [(_plain(x), _plain(y)) for x, y in points])

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "passed": self.passed,
            "config": self.config,
            "error": self.error,
            "checks": [c.as_dict() for c in self.checks],
            "series": {k: {"x": xl, "y": yl, "points": pts} for k, (xl, yl, pts) in self.series.items()},
        }

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            tag = "INFO" if c.passed is None else ("PASS" if c.passed else "FAIL")
            lines.append(f"{tag} {c.name}")
        if self.error:
            lines.append(f"ERROR {self.error['type']}: {self.error['message']}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} {self.scenario}")
        return lines


def _plain(v):
    """Recursively convert numpy and non-finite values to json-safe types."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def to_json(report: Report) -> str:
    return json.dumps(_plain(report.as_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _margin(data: dict):
    for key in ("min_margin", "value", "estimate"):
        if key in data and isinstance(data[key], (int, float)):
            return data[key]
    return ""


def to_csv(report: Report) -> dict[str, str]:
    checks = io.StringIO()
    w = csv.writer(checks, lineterminator="\n")
    w.writerow(["name", "passed", "margin_or_value"])
    for c in report.checks:
        w.writerow([c.name, "" if c.passed is None else int(c.passed), _plain(_margin(c.data))])
    series = io.StringIO()
    w = csv.writer(series, lineterminator="\n")
    w.writerow(["series", "x", "y"])
    for name, (_, _, pts) in report.series.items():
        for x, y in pts:
            w.writerow([name, x, y])
    return {"checks.csv": checks.getvalue(), "series.csv": series.getvalue()}


def to_plotdata(report: Report) -> dict[str, str]:
    out = {}
    for name, (xl, yl, pts) in report.series.items():
        lines = [f"# {xl} {yl}"] + [f"{x!r} {y!r}" for x, y in pts]
        out[f"{name}.dat"] = "\n".join(lines) + "\n"
    return out


def emit(report: Report, fmt: str, out_dir) -> list[Path]:
    """Write the report in the given format plus timings.json; return paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if fmt == "json":
        files = {"report.json": to_json(report)}
    elif fmt == "csv":
        files = to_csv(report)
    elif fmt == "plotdata":
        files = to_plotdata(report)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    files.update(report.artifacts)
    files["timings.json"] = json.dumps(_plain(report.timings), indent=2, sort_keys=True) + "\n"
    paths = []
    for name, text in files.items():
        p = out / name
        try:
            p.write_text(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {p}: {exc}") from exc
        paths.append(p)
    return paths
