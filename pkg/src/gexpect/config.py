"""Flat ``section.key = value`` run configuration."""
from __future__ import annotations

import ast
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .uncertainty import ThetaSet

SECTIONS = ("theta", "grid", "sim", "experiment", "tolerances", "output")
VERBS = ("gheat", "upper", "verify-var", "girsanov-check", "entropy-check", "scheffe-check", "ldp")


class ConfigError(ValueError):
    pass


def _value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_text(text: str) -> dict[str, object]:
    """Parse lines of ``section.key = value``; ``#`` starts a comment."""
    out: dict[str, object] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1 or key.split(".")[0] not in SECTIONS:
            raise ConfigError(f"line {n}: bad key {key!r}; sections are {', '.join(SECTIONS)}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = _value(val)
    return out


def theta_from(flat: dict) -> ThetaSet:
    kind = flat.get("theta.kind", "interval")
    try:
        if kind == "interval":
            return ThetaSet.interval(float(flat["theta.lo"]), float(flat["theta.hi"]))
        if kind == "finite":
            return ThetaSet.finite([np.array(m, dtype=float) for m in flat["theta.matrices"]])
        if kind == "box":
            return ThetaSet.box(np.array(flat["theta.bounds"], dtype=float))
    except KeyError as e:
        raise ConfigError(f"missing key {e.args[0]} for theta.kind = {kind}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid Theta: {e}") from None
    raise ConfigError(f"unknown theta.kind {kind!r}")


@dataclass
class RunConfig:
    flat: dict
    theta: ThetaSet
    verb: str
    seed: int
    workers: int
    out: Path
    tolerances: dict = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.flat.get(key, default)

    def section(self, name: str) -> dict:
        p = name + "."
        return {k[len(p):]: v for k, v in self.flat.items() if k.startswith(p)}

    def echo(self) -> str:
        return "".join(f"{k} = {self.flat[k]!r}\n" for k in sorted(self.flat))


DEFAULT_TOLERANCES = {"n_sigma": 3.0, "gap": 2e-2, "laplace": 5e-2, "pde": 1e-2}


def load(path, verb: str | None = None, seed: int | None = None, workers: int | None = None,
         out: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    flat = parse_text(text)
    if seed is not None:
        flat["sim.seed"] = int(seed)
    if workers is not None:
        flat["sim.workers"] = int(workers)
    if verb is not None:
        flat["experiment.verb"] = verb
    v = flat.get("experiment.verb")
    if v not in VERBS:
        raise ConfigError(f"unknown or missing verb {v!r}; choose from {', '.join(VERBS)}")
    if "sim.seed" not in flat:
        raise ConfigError("sim.seed is required")
    if not isinstance(flat["sim.seed"], int) or flat["sim.seed"] < 0:
        raise ConfigError("sim.seed must be a non-negative integer")
    tols = dict(DEFAULT_TOLERANCES)
    for k, val in flat.items():
        if k.startswith("tolerances."):
            name = k.split(".", 1)[1]
            if not isinstance(val, (int, float)) or val <= 0:
                raise ConfigError(f"tolerance {k} must be positive")
            tols[name] = float(val)
    nw = int(flat.get("sim.workers", os.cpu_count() or 1))
    if nw < 1:
        raise ConfigError("sim.workers must be positive")
    out_dir = Path(out or flat.get("output.dir", "out"))
    return RunConfig(flat, theta_from(flat), v, int(flat["sim.seed"]), nw, out_dir, tols)
