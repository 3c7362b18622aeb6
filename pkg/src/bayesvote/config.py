"""Flat ``key = value`` experiment files.

Example::

    # hiring committee, bad candidate
    experiment = majority_baseline
    model = discrete atoms=[(favorable,0.6,0.9),(unfavorable,0.4,0.1)]
    n = 101
    trials = 10000
    seed = 7
    state = 0

Gaussian models are written ``model = gaussian mean0=-1 mean1=1 sd=1``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .engine import DEFAULT_MAX_ROUNDS
from .harness import ExperimentConfig
from .signal_model import DiscreteModel, GaussianModel, SignalModel

KNOWN_KEYS = {"experiment", "model", "n", "trials", "max_rounds", "seed", "state", "out"}
_ATOM = re.compile(r"\(\s*([^,()\s]+)\s*,\s*([^,()\s]+)\s*,\s*([^,()\s]+)\s*\)")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)
    source: str = "<string>"

    def has(self, key: str) -> bool:
        return key in self.values

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return self.values[key]

    def _int(self, key: str, default=None) -> int | None:
        if key not in self.values:
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}",
                              self.lines[key]) from None

    def model(self) -> SignalModel:
        return parse_model(self.require("model"), self.lines.get("model"))

    def agents(self) -> tuple[int, ...]:
        raw = self.require("n")
        try:
            out = tuple(int(tok) for tok in re.split(r"[,\s]+", raw.strip()) if tok)
        except ValueError:
            raise ConfigError(f"n must be a list of integers, got {raw!r}", self.lines["n"]) from None
        if not out or min(out) < 1:
            raise ConfigError("agent counts must be positive", self.lines["n"])
        return out

    def seed(self, override: int | None = None) -> int:
        if override is not None:
            return override
        seed = self._int("seed")
        if seed is None:
            raise ConfigError(f"{self.source}: missing required key 'seed' (no default entropy)")
        return seed

    def max_rounds(self, override: int | None = None) -> int:
        return override if override is not None else self._int("max_rounds", DEFAULT_MAX_ROUNDS)

    def state(self) -> int | None:
        state = self._int("state")
        if state not in (None, 0, 1):
            raise ConfigError("state must be 0 or 1", self.lines["state"])
        return state

    def trials(self) -> int:
        self.require("trials")
        return self._int("trials")

    def experiment(self, seed: int | None = None, max_rounds: int | None = None) -> ExperimentConfig:
        return ExperimentConfig(
            kind=self.require("experiment"), model=self.model(), agents=self.agents(),
            trials=self.trials(), seed=self.seed(seed), max_rounds=self.max_rounds(max_rounds),
            state=self.state())


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cfg = RunConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in cfg.values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {cfg.lines[key]})", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        cfg.values[key] = value
        cfg.lines[key] = lineno
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def parse_model(text: str, line: int | None = None) -> SignalModel:
    kind, _, rest = text.strip().partition(" ")
    if kind == "gaussian":
        params = {}
        for tok in rest.split():
            name, eq, val = tok.partition("=")
            if not eq or name not in ("mean0", "mean1", "sd"):
                raise ConfigError(f"bad gaussian parameter {tok!r}", line)
            try:
                params[name] = float(val)
            except ValueError:
                raise ConfigError(f"{name} must be a number, got {val!r}", line) from None
        missing = {"mean0", "mean1", "sd"} - params.keys()
        if missing:
            raise ConfigError(f"gaussian model missing {sorted(missing)}", line)
        return GaussianModel(params["mean0"], params["mean1"], params["sd"])
    if kind == "discrete":
        body = rest.strip()
        if not (body.startswith("atoms=[") and body.endswith("]")):
            raise ConfigError("discrete model must be 'discrete atoms=[(label,p0,p1),...]'", line)
        inner = body[len("atoms=["):-1]
        rows = []
        for m in _ATOM.finditer(inner):
            try:
                rows.append((m.group(1), float(m.group(2)), float(m.group(3))))
            except ValueError:
                raise ConfigError(f"bad atom {m.group(0)!r}", line) from None
        leftover = _ATOM.sub("", inner).replace(",", "").strip()
        if leftover or not rows:
            raise ConfigError(f"cannot parse atoms list {inner!r}", line)
        return DiscreteModel.from_rows(rows)
    raise ConfigError(f"unknown model kind {kind!r}; expected gaussian or discrete", line)
