"""G-Brownian paths as controlled martingales ``B = int theta dW`` on a uniform grid.

Paths are simulated in batches with shape conventions

* ``B``: ``(n, M + 1, d)``
* ``QV``: ``(n, M + 1, d, d)``
* ``dW``: ``(n, M, d)``
* ``gamma``: ``(n, M, d, d)``, the volatility used on each step.

All integrals use left-endpoint (Ito) evaluation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from . import rng
from .uncertainty import ThetaSet, sigma_bounds

DEFAULT_CHUNK = 25_000


class ControlError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def index(self, t: float) -> int:
        k = int(round(t * self.n_steps))
        if abs(k - t * self.n_steps) > 1e-9 or not 0 <= k <= self.n_steps:
            raise GridMismatch(f"time {t} is not a node of a {self.n_steps}-step grid")
        return k


@dataclass
class History:
    """Path data available at step ``k``: ``B[:, :k+1]`` and ``QV[:, :k+1]``.

    ``scratch`` is private per-evaluation storage that rules may use to carry
    incremental state forward in time; it only ever holds quantities computed
    from data up to the current step.
    """

    k: int
    t: float
    B: np.ndarray
    QV: np.ndarray
    scratch: dict

    @property
    def n(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True, eq=False)
class ControlProcess:
    """A Theta-valued control on a grid: a deterministic schedule or a feedback rule."""

    theta: ThetaSet
    grid: TimeGrid
    values: np.ndarray | None = None
    rule: Callable | None = None
    name: str = "control"

    @classmethod
    def constant(cls, theta: ThetaSet, grid: TimeGrid, gamma) -> "ControlProcess":
        g = np.array(gamma, dtype=float, ndmin=2)
        return cls.deterministic(theta, grid, np.broadcast_to(g, (grid.n_steps,) + g.shape),
                                 name=f"const({_fmt_gamma(g)})")

    @classmethod
    def deterministic(cls, theta: ThetaSet, grid: TimeGrid, values, name: str = "schedule"):
        v = np.array(values, dtype=float)
        d = theta.dim
        if v.ndim == 1 and d == 1:
            v = v[:, None, None]
        if v.shape != (grid.n_steps, d, d):
            raise ControlError(f"schedule shape {v.shape} != {(grid.n_steps, d, d)}")
        if not np.all(theta.contains(v)):
            raise ControlError("schedule leaves Theta")
        v.setflags(write=False)
        return cls(theta=theta, grid=grid, values=v, name=name)

    @classmethod
    def feedback(cls, theta: ThetaSet, grid: TimeGrid, rule: Callable, name: str = "feedback"):
        return cls(theta=theta, grid=grid, rule=rule, name=name)

    @property
    def is_deterministic(self) -> bool:
        return self.values is not None

    def emit(self, hist: History) -> np.ndarray:
        d = self.theta.dim
        if self.values is not None:
            return np.broadcast_to(self.values[hist.k], (hist.n, d, d))
        g = np.asarray(self.rule(hist.k, hist), dtype=float)
        if d == 1 and g.ndim == 1:
            g = g[:, None, None]
        g = np.broadcast_to(g, (hist.n, d, d))
        if not np.all(self.theta.contains(g)):
            raise ControlError(f"control {self.name} emitted a value outside Theta at step {hist.k}")
        return g


def _fmt_gamma(g) -> str:
    return ",".join(f"{v:g}" for v in np.ravel(g))


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: TimeGrid
    dW: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    gamma: np.ndarray
    seed: int
    index: int

    def as_batch(self) -> "PathBatch":
        return PathBatch(self.grid, self.dW[None], self.B[None], self.QV[None],
                         self.gamma[None], self.seed, 0, np.array([self.index]))


@dataclass(eq=False)
class PathBatch:
    """A batch of simulated (or shifted) paths; treat arrays as immutable."""

    grid: TimeGrid
    dW: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    gamma: np.ndarray
    seed: int
    stream: int
    paths: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for a in (self.dW, self.B, self.QV, self.gamma):
            a.setflags(write=False)

    def __len__(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def dim(self) -> int:
        return self.B.shape[2]

    @property
    def dQV(self) -> np.ndarray:
        if "dQV" not in self.cache:
            self.cache["dQV"] = np.diff(self.QV, axis=1)
        return self.cache["dQV"]

    def __getitem__(self, i: int) -> SamplePath:
        return SamplePath(self.grid, self.dW[i], self.B[i], self.QV[i], self.gamma[i],
                          self.seed, int(self.paths[i]))

    def with_B(self, B: np.ndarray) -> "PathBatch":
        out = replace(self, B=np.array(B), cache={})
        if "dQV" in self.cache:
            out.cache["dQV"] = self.cache["dQV"]
        return out

    def history(self, k: int, scratch: dict, B: np.ndarray | None = None) -> History:
        B = self.B if B is None else B
        return History(k, k * self.grid.dt, B[:, :k + 1], self.QV[:, :k + 1], scratch)


def _as_batch(path):
    return (path.as_batch(), True) if isinstance(path, SamplePath) else (path, False)


def simulate_paths(control: ControlProcess, n_paths: int, seed: int, stream: int = 0,
                   start: int = 0) -> PathBatch:
    """Simulate paths ``start .. start + n_paths - 1`` of the given stream.

    Noise for path ``p`` at step ``k`` depends only on ``(seed, stream, p, k)``.
    """
    grid, d = control.grid, control.theta.dim
    M, dt = grid.n_steps, grid.dt
    paths = np.arange(start, start + n_paths, dtype=np.int64)
    B = np.zeros((n_paths, M + 1, d))
    QV = np.zeros((n_paths, M + 1, d, d))
    dW = np.empty((n_paths, M, d))
    gam = np.empty((n_paths, M, d, d))
    scratch: dict = {}
    sq = math.sqrt(dt)
    for k in range(M):
        g = control.emit(History(k, k * dt, B[:, :k + 1], QV[:, :k + 1], scratch))
        dW[:, k] = sq * rng.normals(seed, stream, paths, k, d)
        gam[:, k] = g
        if d == 1:
            B[:, k + 1] = B[:, k] + g[:, :, 0] * dW[:, k]
            QV[:, k + 1] = QV[:, k] + g * g * dt
        else:
            B[:, k + 1] = B[:, k] + np.einsum("nij,nj->ni", g, dW[:, k])
            QV[:, k + 1] = QV[:, k] + np.einsum("nij,nkj->nik", g, g) * dt
    return PathBatch(grid, dW, B, QV, gam, seed, stream, paths)


def iter_batches(control: ControlProcess, n_paths: int, seed: int, stream: int = 0,
                 chunk: int = DEFAULT_CHUNK) -> Iterator[PathBatch]:
    for start in range(0, n_paths, chunk):
        yield simulate_paths(control, min(chunk, n_paths - start), seed, stream, start)


@dataclass(frozen=True, eq=False)
class SimpleIntegrand:
    """An adapted step process ``h = sum_k xi_k 1_[t_k, t_{k+1})`` on a time grid.

    ``rule(k, hist)`` returns ``xi_k`` with shape ``(n, d)`` (or ``(d,)``) and
    may read only ``hist``. It is called at block starts ``breaks`` and held
    constant until the next one. ``h_max`` bounds ``|xi_k|``.
    """

    grid: TimeGrid
    dim: int
    rule: Callable
    h_max: float = math.inf
    name: str = "h"
    breaks: tuple | None = None
    deterministic: bool = False

    @classmethod
    def zero(cls, grid: TimeGrid, dim: int = 1) -> "SimpleIntegrand":
        return cls.constant(grid, np.zeros(dim))

    @classmethod
    def constant(cls, grid: TimeGrid, v) -> "SimpleIntegrand":
        v = np.array(v, dtype=float, ndmin=1)
        return cls(grid, v.size, lambda k, hist: v, float(np.linalg.norm(v)),
                   f"const({_fmt_gamma(v)})", (0,), True)

    @classmethod
    def schedule(cls, grid: TimeGrid, values, name: str = "schedule") -> "SimpleIntegrand":
        """Deterministic integrand with one value per step, shape ``(M, d)``."""
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != grid.n_steps:
            raise GridMismatch("schedule length must equal the number of steps")
        return cls(grid, v.shape[1], lambda k, hist: v[k],
                   float(np.linalg.norm(v, axis=1).max()), name, None, True)

    @classmethod
    def feedback(cls, grid: TimeGrid, dim: int, rule: Callable, h_max: float = math.inf,
                 name: str = "feedback", breaks=None) -> "SimpleIntegrand":
        return cls(grid, dim, rule, float(h_max), name,
                   None if breaks is None else tuple(sorted(set(breaks) | {0})))

    def block_starts(self) -> np.ndarray:
        M = self.grid.n_steps
        mask = np.zeros(M, dtype=bool)
        if self.breaks is None:
            mask[:] = True
        else:
            mask[[b for b in self.breaks if b < M]] = True
        return mask

    def scaled(self, a: float) -> "SimpleIntegrand":
        rule = self.rule
        return SimpleIntegrand(self.grid, self.dim,
                               lambda k, hist: a * np.asarray(rule(k, hist), dtype=float),
                               abs(a) * self.h_max, f"{a:g}*{self.name}", self.breaks,
                               self.deterministic)

    def values(self, batch: PathBatch, B: np.ndarray | None = None) -> np.ndarray:
        """``xi`` along each path of the batch, shape ``(n, M, d)``.

        With ``B`` given, the rule reads that array instead of ``batch.B``
        (same QV); the result is then not cached.
        """
        if batch.grid != self.grid:
            raise GridMismatch(f"integrand grid {self.grid} vs path grid {batch.grid}")
        key = ("h", id(self))
        if B is None and key in batch.cache:
            return batch.cache[key][1]
        out = self.evaluate(batch, B)
        if B is None:
            # keep a reference to self so the id cannot be reused while cached
            batch.cache[key] = (self, out)
        return out

    def evaluate(self, batch: PathBatch, B: np.ndarray | None = None) -> np.ndarray:
        M, n, d = self.grid.n_steps, batch.n, self.dim
        out = np.empty((n, M, d))
        starts = self.block_starts()
        scratch: dict = {}
        for k in range(M):
            if starts[k]:
                v = np.asarray(self.rule(k, batch.history(k, scratch, B)), dtype=float)
                out[:, k] = np.broadcast_to(v, (n, d))
            else:
                out[:, k] = out[:, k - 1]
        if math.isfinite(self.h_max):
            norms = np.linalg.norm(out, axis=2)
            if norms.size and norms.max() > self.h_max * (1 + 1e-9) + 1e-12:
                raise ValueError(f"integrand {self.name} exceeds its bound {self.h_max}")
        return out


def _check_grids(h: SimpleIntegrand, batch: PathBatch) -> None:
    if h.grid != batch.grid:
        raise GridMismatch(f"integrand grid {h.grid} vs path grid {batch.grid}")
    if h.dim != batch.dim:
        raise GridMismatch(f"integrand d={h.dim} vs path d={batch.dim}")


def ito_integral(h: SimpleIntegrand, path):
    """``sum_k xi_k . (B_{t_{k+1}} - B_{t_k})``."""
    batch, single = _as_batch(path)
    _check_grids(h, batch)
    xi = h.values(batch)
    out = np.einsum("nkd,nkd->n", xi, np.diff(batch.B, axis=1))
    return float(out[0]) if single else out


def qv_integrals(h: SimpleIntegrand, path):
    """``(int_0^t d<B> h, int_0^1 h . d<B> h)``; shapes ``(n, M+1, d)`` and ``(n,)``."""
    batch, single = _as_batch(path)
    _check_grids(h, batch)
    key = ("qv", id(h))
    if key not in batch.cache:
        xi = h.values(batch)
        incr = np.einsum("nkij,nkj->nki", batch.dQV, xi)
        vec = np.concatenate([np.zeros((batch.n, 1, batch.dim)), np.cumsum(incr, axis=1)], axis=1)
        quad = np.einsum("nki,nki->n", xi, incr)
        batch.cache[key] = (h, vec, quad)
    _, vec, quad = batch.cache[key]
    return (vec[0], float(quad[0])) if single else (vec, quad)


def shift_path(h: SimpleIntegrand, path):
    """Return the path with ``B`` replaced by ``B + int_0^. d<B> h`` (QV unchanged)."""
    batch, single = _as_batch(path)
    vec, _ = qv_integrals(h, batch)
    out = batch.with_B(batch.B + vec)
    return out[0] if single else out


def log_girsanov_density(h: SimpleIntegrand, path):
    if not math.isfinite(h.h_max):
        raise ValueError("Girsanov density requires a bounded integrand")
    batch, single = _as_batch(path)
    _, quad = qv_integrals(h, batch)
    out = ito_integral(h, batch) - 0.5 * quad
    return float(out[0]) if single else out


def girsanov_density(h: SimpleIntegrand, path):
    """``D^(h)_1 = exp(int h . dB - 1/2 int h . d<B> h)``; bounded ``h`` only."""
    out = np.exp(log_girsanov_density(h, path))
    return float(out) if np.ndim(out) == 0 else out


def qv_violations(batch: PathBatch, theta: ThetaSet, directions: np.ndarray,
                  rtol: float = 1e-12) -> int:
    """Count step increments with ``x . dQV x`` outside ``[sigma0^2 dt, sigma1^2 dt]``."""
    s0, s1 = sigma_bounds(theta)
    dt = batch.grid.dt
    q = np.einsum("mi,nkij,mj->nkm", directions, batch.dQV, directions)
    lo, hi = s0**2 * dt * (1 - rtol), s1**2 * dt * (1 + rtol)
    return int(np.sum((q < lo) | (q > hi)))


def write_paths_csv(batch: PathBatch, path, max_paths: int = 10) -> None:
    d = batch.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t"] + [f"B{i}" for i in range(d)]
                   + [f"QV{i}{j}" for i in range(d) for j in range(d)])
        for p in range(min(max_paths, batch.n)):
            for k, t in enumerate(batch.grid.times):
                w.writerow([int(batch.paths[p]), f"{t:.10g}"]
                           + [f"{v:.12g}" for v in batch.B[p, k]]
                           + [f"{v:.12g}" for v in batch.QV[p, k].ravel()])
