"""Upper (and lower) expectations ``sup_theta E_{P_theta}[X]`` by search over control families.

The search phase evaluates every candidate on the same simulated noise
(common random numbers). The winner is re-evaluated on a disjoint noise
stream, so the reported standard error carries no selection bias. Since every
family is a subset of all admissible controls, the reported value estimates
a lower bound of the true upper expectation.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pathsim import DEFAULT_CHUNK, ControlProcess, TimeGrid, iter_batches
from .records import write_table
from .stats import Moments
from .uncertainty import BOX, FINITE, INTERVAL, ThetaSet

SEARCH_STREAM = 0
EVAL_STREAM = 1


class FamilyError(ValueError):
    pass


def theta_levels(theta: ThetaSet, n_levels: int = 5) -> list[np.ndarray]:
    """A finite grid of Theta values; always contains the extreme points."""
    if theta.kind == INTERVAL:
        vals = np.linspace(theta.lo, theta.hi, max(n_levels, 1 if theta.lo == theta.hi else 2))
        return [np.array([[v]]) for v in np.unique(vals)]
    if theta.kind == FINITE:
        return list(theta.matrices)
    axes = [np.unique(np.linspace(lo, hi, max(n_levels, 2))) for lo, hi in theta.bounds]
    return [np.diag(v) for v in itertools.product(*axes)]


@dataclass(eq=False)
class FiniteList:
    controls: Sequence[ControlProcess]

    def __post_init__(self):
        if not self.controls:
            raise FamilyError("empty control family")

    def options(self) -> list[int]:
        return [len(self.controls)]

    def build(self, params) -> ControlProcess:
        return self.controls[params[0]]

    def describe(self, params) -> str:
        return self.build(params).name

    def initial(self):
        return (0,)


@dataclass(eq=False)
class PiecewiseConstantParam:
    """Controls constant on ``blocks`` equal time blocks, valued in a Theta grid."""

    theta: ThetaSet
    grid: TimeGrid
    blocks: int = 4
    levels: Sequence[np.ndarray] | None = None

    def __post_init__(self):
        if self.levels is None:
            self.levels = theta_levels(self.theta)
        if not self.levels:
            raise FamilyError("empty control family")
        if self.grid.n_steps % self.blocks:
            raise FamilyError("blocks must divide the number of steps")

    def options(self) -> list[int]:
        return [len(self.levels)] * self.blocks

    def build(self, params) -> ControlProcess:
        per = self.grid.n_steps // self.blocks
        vals = np.concatenate([np.broadcast_to(self.levels[p], (per,) + self.levels[p].shape)
                               for p in params])
        return ControlProcess.deterministic(self.theta, self.grid, vals,
                                            name=self.describe(params))

    def describe(self, params) -> str:
        return "blocks[" + "|".join(",".join(f"{v:g}" for v in self.levels[p].ravel())
                                    for p in params) + "]"

    def initial(self):
        return (len(self.levels) - 1,) * self.blocks


@dataclass(eq=False)
class StateFeedbackGrid:
    """Per time block, a lookup from cells of the first coordinate of ``B_t`` to Theta values."""

    theta: ThetaSet
    grid: TimeGrid
    time_blocks: int = 2
    state_edges: Sequence[float] = (-1.0, 0.0, 1.0)
    levels: Sequence[np.ndarray] | None = None

    def __post_init__(self):
        if self.levels is None:
            self.levels = self.theta.extreme_points()
        if self.grid.n_steps % self.time_blocks:
            raise FamilyError("time_blocks must divide the number of steps")
        self.state_edges = np.asarray(self.state_edges, dtype=float)

    @property
    def n_cells(self) -> int:
        return len(self.state_edges) + 1

    def options(self) -> list[int]:
        return [len(self.levels)] * (self.time_blocks * self.n_cells)

    def build(self, params) -> ControlProcess:
        table = np.stack([self.levels[p] for p in params]).reshape(
            (self.time_blocks, self.n_cells) + self.levels[0].shape)
        per = self.grid.n_steps // self.time_blocks
        edges = self.state_edges

        def rule(k, hist):
            cell = np.searchsorted(edges, hist.B[:, k, 0], side="right")
            return table[k // per][cell]

        return ControlProcess.feedback(self.theta, self.grid, rule, name=self.describe(params))

    def describe(self, params) -> str:
        return "feedback[" + "".join(str(p) for p in params) + "]"

    def initial(self):
        return (len(self.levels) - 1,) * (self.time_blocks * self.n_cells)


@dataclass(frozen=True)
class GridSearch:
    max_candidates: int = 4096


@dataclass(frozen=True)
class CoordinateAscent:
    max_rounds: int = 3
    restarts: int = 3


@dataclass(frozen=True)
class CrossEntropy:
    population: int = 20
    elite_fraction: float = 0.2
    iterations: int = 10
    smoothing: float = 0.7


@dataclass(eq=False)
class ControlFamily:
    space: FiniteList | PiecewiseConstantParam | StateFeedbackGrid
    optimizer: GridSearch | CoordinateAscent | CrossEntropy = field(default_factory=GridSearch)


def constant_family(theta: ThetaSet, grid: TimeGrid, n_levels: int = 21) -> ControlFamily:
    return ControlFamily(PiecewiseConstantParam(theta, grid, 1, theta_levels(theta, n_levels)),
                         GridSearch())


def default_family(theta: ThetaSet, grid: TimeGrid) -> ControlFamily:
    blocks = 4 if grid.n_steps % 4 == 0 else 1
    return ControlFamily(PiecewiseConstantParam(theta, grid, blocks),
                         CoordinateAscent(max_rounds=3, restarts=3))


@dataclass
class UpperEstimate:
    value: float
    stderr: float
    argmax: str
    params: tuple
    n_paths: int
    trace: list = field(default_factory=list)
    search_value: float = math.nan

    def negated(self) -> "UpperEstimate":
        return UpperEstimate(-self.value, self.stderr, self.argmax, self.params, self.n_paths,
                             [(i, -v, c) for i, v, c in self.trace], -self.search_value)


def evaluate_control(X: Callable, control: ControlProcess, n_paths: int, seed: int,
                     stream: int = EVAL_STREAM, chunk: int = DEFAULT_CHUNK) -> Moments:
    """Sample moments of ``X`` under one control."""
    acc = Moments()
    for batch in iter_batches(control, n_paths, seed, stream, chunk):
        vals = np.asarray(X(batch), dtype=float)
        if vals.shape != (batch.n,):
            raise ValueError(f"functional returned shape {vals.shape}, expected ({batch.n},)")
        acc.add(vals)
    return acc


class _Search:
    def __init__(self, X, space, n_paths, seed, chunk, workers):
        self.X, self.space, self.n_paths, self.seed = X, space, n_paths, seed
        self.chunk, self.workers = chunk, workers
        self.cache: dict[tuple, float] = {}

    def values(self, cands: list[tuple]) -> list[float]:
        todo = [c for c in dict.fromkeys(cands) if c not in self.cache]

        def run(c):
            return evaluate_control(self.X, self.space.build(c), self.n_paths, self.seed,
                                    SEARCH_STREAM, self.chunk).mean

        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                results = list(ex.map(run, todo))
        else:
            results = [run(c) for c in todo]
        self.cache.update(zip(todo, results))
        return [self.cache[c] for c in cands]


def _random_params(options, gen) -> tuple:
    return tuple(int(gen.integers(n)) for n in options)


def _grid_search(search, opt: GridSearch, trace):
    options = search.space.options()
    total = math.prod(options)
    if total > opt.max_candidates:
        raise FamilyError(f"{total} candidates exceed the grid-search limit {opt.max_candidates}")
    cands = list(itertools.product(*[range(n) for n in options]))
    vals = search.values(cands)
    best = int(np.argmax(vals))
    trace.append((0, vals[best], cands[best]))
    return cands[best], vals[best]


def _coordinate_ascent(search, opt: CoordinateAscent, seed, trace):
    options = search.space.options()
    gen = np.random.Generator(np.random.Philox(seed))
    best_p, best_v = None, -math.inf
    it = 0
    for r in range(max(1, opt.restarts)):
        p = search.space.initial() if r == 0 else _random_params(options, gen)
        v = search.values([p])[0]
        for _ in range(opt.max_rounds):
            changed = False
            for i, n in enumerate(options):
                cands = [p[:i] + (o,) + p[i + 1:] for o in range(n)]
                vals = search.values(cands)
                j = int(np.argmax(vals))
                if vals[j] > v:
                    p, v, changed = cands[j], vals[j], True
            it += 1
            trace.append((it, max(v, best_v), p if v > best_v else best_p))
            if not changed:
                break
        if v > best_v:
            best_p, best_v = p, v
    return best_p, best_v


def _cross_entropy(search, opt: CrossEntropy, seed, trace):
    options = search.space.options()
    gen = np.random.Generator(np.random.Philox(seed))
    probs = [np.full(n, 1.0 / n) for n in options]
    n_elite = max(1, int(math.ceil(opt.elite_fraction * opt.population)))
    best_p, best_v = search.space.initial(), search.values([search.space.initial()])[0]
    for it in range(opt.iterations):
        pop = [tuple(int(gen.choice(n, p=pr)) for n, pr in zip(options, probs))
               for _ in range(opt.population)]
        vals = search.values(pop)
        order = np.argsort(vals)[::-1][:n_elite]
        elite = [pop[i] for i in order]
        if vals[order[0]] > best_v:
            best_p, best_v = pop[order[0]], vals[order[0]]
        for i, n in enumerate(options):
            freq = np.bincount([e[i] for e in elite], minlength=n) / len(elite)
            probs[i] = opt.smoothing * freq + (1 - opt.smoothing) * probs[i]
        trace.append((it, best_v, best_p))
    return best_p, best_v


def estimate_upper(X: Callable, family: ControlFamily, n_paths: int, seed: int,
                   search_paths: int | None = None, chunk: int = DEFAULT_CHUNK,
                   workers: int = 1) -> UpperEstimate:
    """Estimate ``sup_theta E_theta[X]`` over the family.

    ``X`` maps a path batch to one value per path.
    """
    search_paths = min(n_paths, 20_000) if search_paths is None else search_paths
    search = _Search(X, family.space, search_paths, seed, chunk, workers)
    trace: list = []
    opt = family.optimizer
    if isinstance(opt, GridSearch):
        params, sval = _grid_search(search, opt, trace)
    elif isinstance(opt, CoordinateAscent):
        params, sval = _coordinate_ascent(search, opt, seed, trace)
    elif isinstance(opt, CrossEntropy):
        params, sval = _cross_entropy(search, opt, seed, trace)
    else:
        raise FamilyError(f"unknown optimizer {opt!r}")
    final = evaluate_control(X, family.space.build(params), n_paths, seed, EVAL_STREAM, chunk)
    trace = [(i, v, family.space.describe(p)) for i, v, p in trace]
    return UpperEstimate(final.mean, final.stderr, family.space.describe(params), params,
                         n_paths, trace, sval)


def estimate_lower(X: Callable, family: ControlFamily, n_paths: int, seed: int,
                   **kwargs) -> UpperEstimate:
    """``inf_theta E_theta[X]``, computed as ``-sup_theta E_theta[-X]``."""
    est = estimate_upper(lambda b: -np.asarray(X(b), dtype=float), family, n_paths, seed,
                         **kwargs)
    return est.negated()


def write_trace(est: UpperEstimate, path) -> None:
    rows = [(i, v, hashlib.sha1(c.encode()).hexdigest()[:12]) for i, v, c in est.trace]
    write_table(path, ["iteration", "best_value", "candidate_hash"], rows)
