"""Run configuration: a flat INI file with one section per module.

Every field not present in a user file falls back to the pinned defaults
shipped with the package (regenerated by the search-params scenario).
Floats are written with ``repr`` so a parse/emit round trip is exact.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError

SCENARIOS = (
    "construct-pve",
    "verify-cones",
    "verify-pve",
    "search-params",
    "gibbs-mass",
    "center-exponent",
    "mixed-exponents",
    "appendix-check",
    "full-paper",
)
FORMATS = ("json", "csv", "plotdata")

# section name for every field; field order is the emit order
SECTIONS = {
    "run": ("scenario", "seed", "workers", "format", "out"),
    "pve": ("pve_matrix", "pve_n", "pve_k", "pve_delta", "pve_kappa", "pve_epsilon", "pve_shape"),
    "mixed": ("mixed_matrix", "mixed_n", "mixed_k", "mixed_delta", "mixed_kappa2", "mixed_epsilon", "mixed_shape"),
    "grids": ("resolution", "directions", "c_samples", "bump_grid", "k_cap_exp"),
    "umeasure": (
        "seed_length",
        "seed_curves",
        "seed_max_seg_len",
        "envelope_n",
        "mass_n_max",
        "mass_samples",
        "ell",
        "samples",
        "mixed_samples",
        "bundle_iters",
    ),
    "appendix": ("gamma", "appendix_per_axis"),
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "full-paper"
    seed: int = 0
    workers: int = 1
    format: str = "json"
    out: str = "da-forge-out"

    pve_matrix: str = "D"
    pve_n: int = 7
    pve_k: int = 512
    pve_delta: float = 0.0009765625
    pve_kappa: float = 4.330762
    pve_epsilon: float = 0.05
    pve_shape: str = "smoothstep-exp"

    mixed_matrix: str = "C"
    mixed_n: int = 3
    mixed_k: int = 256
    mixed_delta: float = 0.0009765625
    mixed_kappa2: float = 0.499999
    mixed_epsilon: float = 0.05
    mixed_shape: str = "smoothstep-exp"

    resolution: int = 40
    directions: int = 64
    c_samples: int = 181
    bump_grid: int = 10_000
    k_cap_exp: int = 20

    seed_length: float = 0.05
    seed_curves: int = 10
    seed_max_seg_len: float = 0.01
    envelope_n: int = 50
    mass_n_max: int = 10
    mass_samples: int = 100_000
    ell: int = 1000
    samples: int = 100_000
    mixed_samples: int = 20_000
    bundle_iters: int = 30

    gamma: float = 0.01
    appendix_per_axis: int = 100

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}")
        if self.pve_matrix != "D" or self.mixed_matrix != "C":
            raise ConfigError("pve runs on matrix D and mixed runs on matrix C")
        for name in ("workers", "pve_n", "pve_k", "mixed_n", "mixed_k", "resolution", "directions",
                     "c_samples", "bump_grid", "seed_curves", "mass_samples", "ell", "samples", "mixed_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("pve_delta", "mixed_delta", "pve_epsilon", "mixed_epsilon", "seed_length",
                     "seed_max_seg_len", "gamma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_SECTION_OF = {name: sec for sec, names in SECTIONS.items() for name in names}


def _key(name: str) -> str:
    for prefix in ("pve_", "mixed_"):
        if name.startswith(prefix) and _SECTION_OF[name] == prefix[:-1]:
            return name[len(prefix):]
    return name


def _convert(name: str, text: str):
    typ = _TYPES[name]
    try:
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc
    return text


def _format(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def pinned_text() -> str:
    return resources.files("da_forge").joinpath("data/pinned.ini").read_text()


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text, filling missing keys from ``base`` (pinned defaults)."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        keys = {_key(n): n for n in SECTIONS[sec]}
        for k, v in cp.items(sec):
            if k not in keys:
                raise ConfigError(f"unknown key {k!r} in [{sec}]")
            values[keys[k]] = _convert(keys[k], v.strip())
    if base is None:
        base = pinned_defaults()
    return dataclasses.replace(base, **values)


def emit(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for sec, names in SECTIONS.items():
        cp[sec] = {_key(n): _format(getattr(cfg, n)) for n in names}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def pinned_defaults() -> RunConfig:
    return parse(pinned_text(), RunConfig())


def load(path: str | Path | None, **overrides) -> RunConfig:
    base = pinned_defaults()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = parse(text, base)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return dataclasses.replace(base, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
