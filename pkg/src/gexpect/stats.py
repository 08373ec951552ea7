"""Streaming sample moments for chunked Monte Carlo."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Moments:
    """Count, mean and centered second moment, mergeable across chunks."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x) -> "Moments":
        x = np.asarray(x, dtype=float).ravel()
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite sample in Monte Carlo average")
        if x.size == 0:
            return self
        # shifting by a sample keeps constant inputs exact
        y = x - x[0]
        my = y.mean()
        other = Moments(x.size, float(x[0] + my), float(((y - my) ** 2).sum()))
        return self.merge(other)

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta**2 * self.n * other.n / n
        self.n = n
        return self

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(self.n) if self.n else math.inf


def mean_stderr(x) -> tuple[float, float]:
    m = Moments().add(x)
    return m.mean, m.stderr


def pooled(*stderrs: float) -> float:
    return math.sqrt(sum(s * s for s in stderrs))
