"""Flat key-value run configuration: `section.key = value` lines, `#`
comments, strict validation, lossless round-trip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict


class ConfigError(ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass
class ClassicalConfig:
    n_trajectories: int = 24
    horizons: list = field(default_factory=lambda: [1e3, 1e4, 1e5])
    truncation_caps: list = field(default_factory=lambda: [2.0, 5.0])
    x_init_cutoff: float = 50.0


@dataclass
class LyapunovConfig:
    n_trajectories: int = 16
    T: float = 2e4


@dataclass
class SpectralConfig:
    L: float = 20.0
    Nx: int = 288
    Nu: int = 96
    k: int = 100
    stretch_factor: float = 12.0


@dataclass
class AnalysisConfig:
    m_list: list = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0])
    slack: float = 0.1


@dataclass
class RunConfig:
    alpha: float = 2.0
    seed: int = 42
    output_dir: str = "cusplab_out"
    classical: ClassicalConfig = field(default_factory=ClassicalConfig)
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def validate(self):
        if not (1.0 < self.alpha <= 2.0):
            raise ConfigError(f"alpha must be in (1,2], got {self.alpha}")
        if self.spectral.L < 5:
            raise ConfigError(f"spectral.L must be >= 5, got {self.spectral.L}")
        if self.spectral.k < 1:
            raise ConfigError(f"spectral.k must be >= 1, got {self.spectral.k}")
        if self.spectral.Nx < 8 or self.spectral.Nu < 8:
            raise ConfigError("spectral grid sizes must be at least 8")
        hz = self.classical.horizons
        if not hz or any(b <= a for a, b in zip(hz, hz[1:])):
            raise ConfigError(f"classical.horizons must be strictly increasing, got {hz}")
        if any(h <= 0 for h in hz):
            raise ConfigError("classical.horizons must be positive")
        if self.classical.n_trajectories < 1 or self.lyapunov.n_trajectories < 1:
            raise ConfigError("trajectory counts must be >= 1")
        if self.lyapunov.T <= 0:
            raise ConfigError("lyapunov.T must be positive")
        if any(m < 2 for m in self.analysis.m_list):
            raise ConfigError("analysis.m_list entries must be >= 2")
        if self.analysis.slack < 0:
            raise ConfigError("analysis.slack must be >= 0")
        if any(c <= 0 for c in self.classical.truncation_caps):
            raise ConfigError("classical.truncation_caps must be positive")
        return self


_SCALAR_KEYS = {
    "alpha": ("alpha", float),
    "seed": ("seed", int),
    "output_dir": ("output_dir", str),
    "classical.n_trajectories": ("classical.n_trajectories", int),
    "classical.horizons": ("classical.horizons", "float_list"),
    "classical.truncation_caps": ("classical.truncation_caps", "float_list"),
    "classical.x_init_cutoff": ("classical.x_init_cutoff", float),
    "lyapunov.n_trajectories": ("lyapunov.n_trajectories", int),
    "lyapunov.T": ("lyapunov.T", float),
    "spectral.L": ("spectral.L", float),
    "spectral.Nx": ("spectral.Nx", int),
    "spectral.Nu": ("spectral.Nu", int),
    "spectral.k": ("spectral.k", int),
    "spectral.stretch_factor": ("spectral.stretch_factor", float),
    "analysis.m_list": ("analysis.m_list", "float_list"),
    "analysis.slack": ("analysis.slack", float),
}


def _convert(raw, kind, line_no):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == "float_list":
            return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r}: {exc}", line_no)
    raise ConfigError(f"unknown value kind {kind}", line_no)


def _set_key(cfg: RunConfig, dotted: str, value):
    if "." in dotted:
        section, key = dotted.split(".", 1)
        setattr(getattr(cfg, section), key, value)
    else:
        setattr(cfg, dotted, value)


def parse_config(text: str) -> RunConfig:
    """Parse and validate; unknown keys and malformed lines are errors with
    their line number."""
    cfg = RunConfig()
    seen = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed line (expected key = value): {raw!r}", ln)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"unknown key {key!r}", ln)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", ln)
        seen.add(key)
        dotted, kind = _SCALAR_KEYS[key]
        _set_key(cfg, dotted, _convert(val, kind, ln))
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except Exception as exc:  # defensive: surface as a config problem
        raise ConfigError(str(exc))


def _fmt_value(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, list):
        return ", ".join(f"{float(x):.17g}" for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) == cfg."""
    lines = ["# cusplab run configuration"]
    for key, (dotted, _kind) in _SCALAR_KEYS.items():
        if "." in dotted:
            section, attr = dotted.split(".", 1)
            v = getattr(getattr(cfg, section), attr)
        else:
            v = getattr(cfg, dotted)
        lines.append(f"{key} = {_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def config_as_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
