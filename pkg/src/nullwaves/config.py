"""Experiment config files: a flat key-value text format.

Grammar (one entry per line):

    # comment or blank
    key = value
    key.subkey = value

Keys are dotted identifiers; values are raw strings interpreted by each
experiment (numbers, expression text from nullwaves.exprs, comma lists).
Errors carry line and column numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class ConfigError(ValueError):
    def __init__(self, msg, line=None, col=None):
        loc = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(msg + loc)
        self.line = line
        self.col = col


_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9.\-]*")


@dataclass
class Config:
    entries: dict
    path: str = "<memory>"
    used: set = field(default_factory=set)

    def get(self, key, default=None, required=False):
        if key in self.entries:
            self.used.add(key)
            return self.entries[key][0]
        if required:
            raise ConfigError(f"missing required key {key!r} in {self.path}")
        return default

    def get_float(self, key, default=None, required=False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            line, col = self.entries[key][1:]
            raise ConfigError(f"key {key!r}: {raw!r} is not a number", line, col) from None

    def get_int(self, key, default=None, required=False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            line, col = self.entries[key][1:]
            raise ConfigError(f"key {key!r}: {raw!r} is not an integer", line, col) from None

    def get_list(self, key, default=None, cast=str):
        raw = self.get(key)
        if raw is None:
            return None if default is None else [cast(v) for v in default]
        return [cast(part.strip()) for part in raw.split(",") if part.strip()]

    def unknown_keys(self, known):
        return sorted(k for k in self.entries if k not in known)


def parse_config(text, path="<memory>") -> Config:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, 1)
        key, _, value = line.partition("=")
        col = line.index("=") + 2
        key = key.strip()
        if not _KEY_RE.fullmatch(key):
            raise ConfigError(f"bad key {key!r}", lineno, 1)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, 1)
        value = value.strip()
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno, col)
        entries[key] = (value, lineno, col)
    return Config(entries, path)


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def metric_from_config(cfg: Config, prefix="metric"):
    """Build a MetricSpec from config keys ``metric.family`` etc."""
    from .metrics import MetricSpec

    family = cfg.get(f"{prefix}.family", "minkowski")
    if family == "minkowski":
        return MetricSpec.minkowski()
    if family in ("conformal", "conformal_minkowski"):
        return MetricSpec.conformal_minkowski(cfg.get(f"{prefix}.gamma", required=True))
    if family == "product":
        beta = cfg.get(f"{prefix}.beta", "1")
        kappa = [["0"] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                default = "1" if i == j else "0"
                kappa[i][j] = cfg.get(f"{prefix}.kappa{i+1}{j+1}", default)
        return MetricSpec.product(beta, kappa)
    raise ConfigError(f"unknown metric family {family!r}")
