"""Bounded Lipschitz data and cylinder functionals of paths.

Point arguments always carry a trailing axis of length d, so a datum on R^d
maps an array of shape ``(..., d)`` to shape ``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True, eq=False)
class Datum:
    """A bounded Lipschitz function on R^d with known sup-norm and Lipschitz constant."""

    fn: Callable[[np.ndarray], np.ndarray]
    sup: float
    lip: float
    name: str
    dim: int = 1

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    @classmethod
    def scalar(cls, f, sup, lip, name) -> "Datum":
        return cls(lambda x: f(x[..., 0]), float(sup), float(lip), name, 1)

    def shifted(self, c: float) -> "Datum":
        return Datum(lambda x: self.fn(x) + c, self.sup + abs(c), self.lip,
                     f"{self.name}+{c:g}", self.dim)

    def scaled(self, a: float) -> "Datum":
        return Datum(lambda x: a * self.fn(x), abs(a) * self.sup, abs(a) * self.lip,
                     f"{a:g}*{self.name}", self.dim)


def constant(c: float, dim: int = 1) -> Datum:
    return Datum(lambda x: np.full(x.shape[:-1], float(c)), abs(c), 0.0, f"const({c:g})", dim)


def abs_clip(cap: float = 10.0) -> Datum:
    return Datum.scalar(lambda x: np.minimum(np.abs(x), cap), cap, 1.0, f"abs_clip({cap:g})")


def neg_abs_clip(cap: float = 10.0) -> Datum:
    return Datum.scalar(lambda x: -np.minimum(np.abs(x), cap), cap, 1.0,
                        f"neg_abs_clip({cap:g})")


def tanh() -> Datum:
    return Datum.scalar(np.tanh, 1.0, 1.0, "tanh")


def arctan() -> Datum:
    return Datum.scalar(np.arctan, np.pi / 2, 1.0, "arctan")


def linear_clip(cap: float = 5.0) -> Datum:
    return Datum.scalar(lambda x: np.clip(x, -cap, cap), cap, 1.0, f"linear_clip({cap:g})")


def sin_datum() -> Datum:
    return Datum.scalar(np.sin, 1.0, 1.0, "sin")


def cos_datum() -> Datum:
    return Datum.scalar(np.cos, 1.0, 1.0, "cos")


NAMED_DATA = {
    "zero": lambda: constant(0.0),
    "abs_clip": abs_clip,
    "neg_abs_clip": neg_abs_clip,
    "tanh": tanh,
    "arctan": arctan,
    "linear_clip": linear_clip,
    "sin": sin_datum,
    "cos": cos_datum,
}


def named_datum(name: str) -> Datum:
    """Parse names like ``tanh``, ``abs_clip``, ``const:2.5``."""
    if name.startswith("const:"):
        return constant(float(name.split(":", 1)[1]))
    try:
        return NAMED_DATA[name]()
    except KeyError:
        raise ValueError(f"unknown datum {name!r}; known: {sorted(NAMED_DATA)} or const:<c>")


@dataclass(frozen=True, eq=False)
class CylinderFunctional:
    """``psi(B_{t_1}, ..., B_{t_n})`` with each argument shaped ``(..., d)``."""

    times: tuple
    psi: Callable
    sup: float
    lip: float
    name: str
    dim: int = 1

    def __call__(self, batch) -> np.ndarray:
        idx = [batch.grid.index(t) for t in self.times]
        return np.asarray(self.psi(*[batch.B[:, i, :] for i in idx]), dtype=float)

    @classmethod
    def endpoint(cls, datum: Datum, t: float = 1.0) -> "CylinderFunctional":
        return cls((float(t),), datum.fn, datum.sup, datum.lip, f"{datum.name}(B_{t:g})",
                   datum.dim)

    def shifted(self, c: float) -> "CylinderFunctional":
        psi = self.psi
        return CylinderFunctional(self.times, lambda *xs: psi(*xs) + c, self.sup + abs(c),
                                  self.lip, f"{self.name}+{c:g}", self.dim)

    def exp(self) -> "CylinderFunctional":
        psi = self.psi
        return CylinderFunctional(self.times, lambda *xs: np.exp(psi(*xs)),
                                  float(np.exp(self.sup)),
                                  float(np.exp(self.sup) * self.lip), f"exp({self.name})",
                                  self.dim)


def two_time(f1: Callable, f2: Callable, t1: float, t2: float, sup: float, lip: float,
             name: str) -> CylinderFunctional:
    """``f1(B_{t1}) + f2(B_{t2} - B_{t1})`` for scalar functions in d = 1."""
    return CylinderFunctional(
        (t1, t2), lambda x1, x2: f1(x1[..., 0]) + f2(x2[..., 0] - x1[..., 0]), sup, lip,
        name)


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """Any bounded functional of a path batch, with a declared bound."""

    fn: Callable
    sup: float
    name: str

    def __call__(self, batch) -> np.ndarray:
        return np.asarray(self.fn(batch), dtype=float)


def as_path_functional(f) -> Callable:
    if isinstance(f, (CylinderFunctional, PathFunctional)):
        return f
    if callable(f):
        return f
    raise TypeError(f"not a path functional: {f!r}")


def bound_of(f) -> float:
    return float(getattr(f, "sup", np.inf))


def describe(f) -> str:
    return getattr(f, "name", getattr(f, "__name__", repr(f)))
