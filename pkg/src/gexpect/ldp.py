"""Small-noise asymptotics: rate functions and Laplace limits.

For bounded Lipschitz ``Phi``,

    eps log E[exp(Phi(sqrt(eps) B) / eps)]  ->  sup_x {Phi(x) - I(x)},
    I(x) = 1/2 int inf_gamma |gamma^{-1} x'|^2 dt,

and the joint pair ``(sqrt(eps) B, <B>)`` obeys the analogous limit with
``J(x, y) = 1/2 int x' . (y'^{-1} x') dt`` on paths whose ``y'`` stays in
``{gamma gamma*}``. Rate functions are evaluated exactly on piecewise-linear
paths.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import rng
from .functionals import Datum
from .gheat import HeatGrid, g_expectation_cylinder_1
from .pathsim import TimeGrid
from .records import write_table
from .uncertainty import BOX, FINITE, INTERVAL, ThetaSet, sigma_bounds
from .upperexp import ControlFamily, estimate_upper, constant_family

MEMBER_TOL = 1e-9
CV_WARN = 10.0


class PathError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AbsContPath:
    """Piecewise-linear ``x: [0, 1] -> R^d`` (and optionally ``y`` with values in d x d)."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x", x)
        if s.ndim != 1 or len(s) < 2 or s[0] != 0.0 or abs(s[-1] - 1.0) > 1e-12:
            raise PathError("breakpoints must run from 0 to 1")
        if np.any(np.diff(s) <= 0):
            raise PathError("breakpoints must be strictly increasing")
        if x.shape[0] != len(s):
            raise PathError("one x value per breakpoint")
        if np.any(x[0] != 0):
            raise PathError("paths start at the origin")
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.ndim == 1:
                y = y[:, None, None]
            if y.shape != (len(s), x.shape[1], x.shape[1]):
                raise PathError(f"y has shape {y.shape}, expected {(len(s), x.shape[1], x.shape[1])}")
            if np.any(y[0] != 0):
                raise PathError("y starts at zero")
            object.__setattr__(self, "y", y)

    @classmethod
    def linear(cls, end, d: int | None = None) -> "AbsContPath":
        end = np.atleast_1d(np.asarray(end, dtype=float))
        return cls(np.array([0.0, 1.0]), np.stack([np.zeros_like(end), end]))

    @classmethod
    def from_velocities(cls, s, xdot, ydot=None) -> "AbsContPath":
        s = np.asarray(s, dtype=float)
        ds = np.diff(s)
        xdot = np.asarray(xdot, dtype=float)
        if xdot.ndim == 1:
            xdot = xdot[:, None]
        x = np.concatenate([np.zeros((1, xdot.shape[1])), np.cumsum(xdot * ds[:, None], axis=0)])
        y = None
        if ydot is not None:
            ydot = np.asarray(ydot, dtype=float)
            if ydot.ndim == 1:
                ydot = ydot[:, None, None]
            y = np.concatenate([np.zeros((1,) + ydot.shape[1:]),
                                np.cumsum(ydot * ds[:, None, None], axis=0)])
        return cls(s, x, y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.s)

    @property
    def xdot(self) -> np.ndarray:
        return np.diff(self.x, axis=0) / self.ds[:, None]

    @property
    def ydot(self) -> np.ndarray:
        if self.y is None:
            raise PathError("no y component")
        return np.diff(self.y, axis=0) / self.ds[:, None, None]

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.s, self.x[:, i]) for i in range(self.dim)], axis=-1)

    def y_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = self.dim
        return np.stack([np.stack([np.interp(t, self.s, self.y[:, i, j]) for j in range(d)], -1)
                         for i in range(d)], -2)

    def refine(self, s_new) -> "AbsContPath":
        """Same path on the union of breakpoints."""
        s = np.union1d(self.s, np.asarray(s_new, dtype=float))
        return AbsContPath(s, self(s), None if self.y is None else self.y_at(s))

    def scaled(self, lam: float) -> "AbsContPath":
        return AbsContPath(self.s, lam * self.x, self.y)

    def with_y(self, y) -> "AbsContPath":
        return AbsContPath(self.s, self.x, y)


def common_refinement(x: AbsContPath, y: AbsContPath) -> tuple[AbsContPath, AbsContPath]:
    s = np.union1d(x.s, y.s)
    return x.refine(s), y.refine(s)


# --------------------------------------------------------------------------- rate functions

def _lex_key(m: np.ndarray) -> tuple:
    return tuple(np.round(np.ravel(m), 15))


def measurable_selection(theta: ThetaSet, xi) -> np.ndarray:
    """``Gamma(xi)``, a minimizer of ``|gamma^{-1} xi|`` over Theta.

    Ties in the finite case go to the lexicographically largest entries.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if theta.kind == INTERVAL:
        return np.array([[theta.hi]])
    if theta.kind == BOX:
        return np.diag(theta.bounds[:, 1])
    vals = [float(np.sum(np.linalg.solve(g, xi) ** 2)) for g in theta.matrices]
    best = min(vals)
    ties = [g for g, v in zip(theta.matrices, vals) if v <= best + 1e-12 * max(1.0, best)]
    return max(ties, key=_lex_key)


def _min_quad(theta: ThetaSet, xdot: np.ndarray) -> np.ndarray:
    """``inf_gamma |gamma^{-1} v|^2`` per row of ``xdot``."""
    if theta.kind == INTERVAL:
        return xdot[:, 0] ** 2 / theta.hi**2
    if theta.kind == BOX:
        return np.sum(xdot**2 / theta.bounds[:, 1] ** 2, axis=1)
    return np.array([np.sum(np.linalg.solve(measurable_selection(theta, v), v) ** 2)
                     for v in xdot])


def rate_I(theta: ThetaSet, path: AbsContPath) -> float:
    if path.dim != theta.dim:
        raise PathError(f"path d={path.dim} but Theta d={theta.dim}")
    return float(0.5 * np.sum(_min_quad(theta, path.xdot) * path.ds))


def member_segments(theta: ThetaSet, ydot: np.ndarray, tol: float = MEMBER_TOL) -> np.ndarray:
    """Per segment, whether ``y'`` lies in ``{gamma gamma* : gamma in Theta}``."""
    if theta.kind == INTERVAL:
        v = ydot[:, 0, 0]
        return (v >= theta.lo**2 - tol) & (v <= theta.hi**2 + tol)
    sym = np.max(np.abs(ydot - np.swapaxes(ydot, 1, 2)), axis=(1, 2)) <= tol
    if theta.kind == BOX:
        diag = np.diagonal(ydot, axis1=1, axis2=2)
        off = ydot - diag[:, :, None] * np.eye(theta.dim)
        lo, hi = theta.bounds[:, 0] ** 2, theta.bounds[:, 1] ** 2
        inside = np.all((diag >= lo - tol) & (diag <= hi + tol), axis=1)
        return sym & inside & (np.max(np.abs(off), axis=(1, 2)) <= tol)
    covs = np.stack(theta.covariance_set())
    dist = np.min(np.linalg.norm(ydot[:, None] - covs[None], axis=(2, 3)), axis=1)
    return dist <= tol


def rate_J(theta: ThetaSet, x: AbsContPath, y: AbsContPath | None = None) -> float:
    """Joint rate; ``+inf`` when ``y'`` leaves the admissible set on any segment.

    ``y`` defaults to the matrix component carried by ``x``.
    """
    if y is not None:
        if y.y is None:
            raise PathError("y path carries no matrix component")
        if not np.array_equal(x.s, y.s):
            x, y = common_refinement(x, y)
        ydot = y.ydot
    else:
        ydot = x.ydot
    if not np.all(member_segments(theta, ydot)):
        return math.inf
    v = x.xdot
    q = np.einsum("ki,ki->k", v, np.linalg.solve(ydot, v[..., None])[..., 0])
    return float(0.5 * np.sum(q * x.ds))


def inf_J_over_y(theta: ThetaSet, x: AbsContPath) -> float:
    """``inf_y J(x, y)`` by per-segment minimization over admissible ``y'``."""
    total = 0.0
    covs = theta.covariance_set() if theta.kind == FINITE else None
    for v, ds in zip(x.xdot, x.ds):
        if theta.kind == INTERVAL:
            r = minimize_scalar(lambda s: v[0] ** 2 / s, bounds=(theta.lo**2, theta.hi**2),
                                method="bounded", options={"xatol": 1e-12})
            best = min(r.fun, v[0] ** 2 / theta.hi**2, v[0] ** 2 / theta.lo**2)
        elif theta.kind == BOX:
            best = float(np.sum(v**2 / theta.bounds[:, 1] ** 2))
        else:
            best = min(float(v @ np.linalg.solve(c, v)) for c in covs)
        total += 0.5 * best * ds
    return total


# --------------------------------------------------------------------------- polygons

def polygonal_approx(values, n: int) -> AbsContPath:
    """Interpolate samples on ``k/N`` (``N = len(values) - 1``) at breakpoints ``k/n``.

    Matrix-valued samples ``(N + 1, d, d)`` become the ``y`` component of the
    result (with ``x = 0``).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    N = values.shape[0] - 1
    if n < 1 or n > N or N % n:
        raise PathError(f"n={n} must divide the sample resolution {N}")
    pts = values[:: N // n]
    s = np.arange(n + 1) / n
    if values.ndim == 3:
        return AbsContPath(s, np.zeros((n + 1, values.shape[1])), pts)
    return AbsContPath(s, pts)


def sup_distance(values, approx: AbsContPath) -> float:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    t = np.arange(values.shape[0]) / (values.shape[0] - 1)
    other = approx.y_at(t) if values.ndim == 3 else approx(t)
    diff = (values - other).reshape(len(t), -1)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def oscillation_bound(values, n: int) -> float:
    """``2 max_k sup_{t in [t_k, t_{k+1}]} |v(t) - v(t_k)|`` on the sample grid."""
    values = np.asarray(values, dtype=float)
    N = values.shape[0] - 1
    flat = values.reshape(N + 1, -1)
    step = N // n
    osc = 0.0
    for k in range(n):
        seg = flat[k * step:(k + 1) * step + 1]
        osc = max(osc, float(np.max(np.linalg.norm(seg - seg[0], axis=1))))
    return 2 * osc


# --------------------------------------------------------------------------- functionals

@dataclass(frozen=True, eq=False)
class LaplaceFunctional:
    """A bounded functional of ``x`` (and optionally ``y``).

    ``fn(x, y)`` takes arrays of shape ``(..., K + 1, d)`` and
    ``(..., K + 1, d, d)`` sampled on ``times`` and returns shape ``(...)``.
    ``endpoint`` marks functionals of ``x(1)`` only, which admit the PDE route.
    """

    fn: Callable
    sup: float
    lip: float
    name: str
    endpoint: Datum | None = None
    joint: bool = False
    samples: int = 64

    def of_path(self, p: AbsContPath) -> float:
        t = np.union1d(p.s, np.linspace(0, 1, self.samples + 1))
        y = p.y_at(t) if (self.joint and p.y is not None) else None
        return float(self.fn(p(t)[None], None if y is None else y[None])[0])

    def of_arrays(self, x, y=None) -> np.ndarray:
        return np.asarray(self.fn(x, y), dtype=float)


def endpoint_functional(datum: Datum) -> LaplaceFunctional:
    return LaplaceFunctional(lambda x, y: datum(x[..., -1, :]), datum.sup, datum.lip,
                             f"{datum.name}(x(1))", endpoint=datum)


def constant_functional(c: float) -> LaplaceFunctional:
    from .functionals import constant
    return endpoint_functional(constant(c))


def joint_endpoint(fn: Callable, sup: float, lip: float, name: str) -> LaplaceFunctional:
    """``Psi(x(1), y(1))`` with ``fn`` acting on ``(..., d)`` and ``(..., d, d)``."""
    return LaplaceFunctional(lambda x, y: fn(x[..., -1, :], y[..., -1, :, :]), sup, lip, name,
                             joint=True)


def arctan_endpoint() -> LaplaceFunctional:
    return endpoint_functional(Datum.scalar(np.arctan, math.pi / 2, 1.0, "arctan"))


def arctan_minus_qv() -> LaplaceFunctional:
    """``arctan(x(1)) - clip(y(1), 0, 2) / 2`` in d = 1."""
    return joint_endpoint(lambda x1, y1: np.arctan(x1[..., 0]) - 0.5 * np.clip(y1[..., 0, 0], 0, 2),
                          math.pi / 2 + 1.0, 1.5, "arctan(x1)-clip(y1)/2")


# --------------------------------------------------------------------------- Laplace sides

@dataclass
class RhsResult:
    value: float
    path: AbsContPath
    restarts: int

    def to_csv(self, path) -> None:
        p = self.path
        header = ["s"] + [f"x{i}" for i in range(p.dim)]
        rows = [[s] + list(x) for s, x in zip(p.s, p.x)]
        if p.y is not None:
            header += [f"y{i}{j}" for i in range(p.dim) for j in range(p.dim)]
            rows = [r + list(y.ravel()) for r, y in zip(rows, p.y)]
        write_table(path, header, rows)


def _coordinate_ascent(obj: Callable, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                       rounds: int = 20, tol: float = 1e-13) -> tuple[np.ndarray, float]:
    x = x0.copy()
    v = obj(x)
    for _ in range(rounds):
        before = v
        for i in range(len(x)):
            def g(t, i=i):
                z = x.copy()
                z[i] = t
                return -obj(z)
            r = minimize_scalar(g, bounds=(lo[i], hi[i]), method="bounded",
                                options={"xatol": 1e-10})
            if -r.fun > v:
                x[i], v = r.x, -r.fun
        if v - before <= tol:
            break
    return x, v


def laplace_rhs(theta: ThetaSet, Phi: LaplaceFunctional, m: int = 4, restarts: int = 4,
                seed: int = 0) -> RhsResult:
    """``sup {Phi(x) - I(x)}`` (or ``sup {Psi(x, y) - J(x, y)}`` for joint ``Phi``).

    The search runs over paths with ``m`` equal segments, breakpoint values in
    ``[-4 sigma1, 4 sigma1]``, by coordinate ascent from the zero path plus
    random restarts, each polished by L-BFGS-B.
    """
    if not 1 <= m <= 8:
        raise ValueError("m must lie in 1..8")
    s1 = sigma_bounds(theta)[1]
    d = theta.dim
    s = np.arange(m + 1) / m
    nx = m * d
    if Phi.joint:
        if theta.kind != INTERVAL:
            raise NotImplementedError("joint rates are optimized for scalar intervals")
        lo = np.concatenate([np.full(nx, -4 * s1), np.full(m, theta.lo**2)])
        hi = np.concatenate([np.full(nx, 4 * s1), np.full(m, theta.hi**2)])
    else:
        lo, hi = np.full(nx, -4 * s1), np.full(nx, 4 * s1)

    def unpack(z):
        x = np.concatenate([np.zeros((1, d)), z[:nx].reshape(m, d)])
        if Phi.joint:
            return AbsContPath.from_velocities(s, np.diff(x, axis=0) * m, z[nx:])
        return AbsContPath(s, x)

    def obj(z):
        p = unpack(z)
        rate = rate_J(theta, p) if Phi.joint else rate_I(theta, p)
        return Phi.of_path(p) - rate

    gen = np.random.Generator(np.random.Philox(rng.derive_seed(seed, "laplace_rhs")))
    best_z, best_v = None, -math.inf
    for r in range(restarts + 1):
        if r == 0:
            z0 = np.where(lo > 0, hi, 0.0)
        else:
            z0 = gen.uniform(lo, hi)
        z, v = _coordinate_ascent(obj, z0, lo, hi)
        res = minimize(lambda q: -obj(q), z, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if -res.fun > v:
            z, v = res.x, -res.fun
        if v > best_v:
            best_z, best_v = z, v
    return RhsResult(float(best_v), unpack(best_z), restarts)


def laplace_lhs(theta: ThetaSet, Phi: LaplaceFunctional, eps: float, method: str = "pde",
                nx: int = 601, n_steps: int = 50, n_paths: int = 100_000, seed: int = 0,
                family: ControlFamily | None = None) -> tuple[float, float]:
    """``eps log E[exp(Phi(sqrt(eps) B) / eps)]`` as ``(value, tolerance)``.

    The exponent is shifted by the bound of ``Phi`` before exponentiation.
    The PDE tolerance is the change from the next-coarser grid; the MC one
    is three standard errors of the log.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    shift = Phi.sup
    if method == "pde":
        phi = Phi.endpoint
        if phi is None or Phi.joint:
            raise ValueError("the pde method needs an endpoint functional of x(1)")
        r = math.sqrt(eps)
        datum = Datum(lambda x: np.exp((phi(r * x) - shift) / eps), 1.0, phi.lip / r / eps,
                      "laplace")
        vals = []
        for n in (nx, (nx - 1) // 2 + 1 + ((nx - 1) // 2) % 2):
            grid = HeatGrid.build(theta, T=1.0, nx=n)
            vals.append(g_expectation_cylinder_1(theta, datum, 1.0, grid))
        if vals[0] <= 0:
            raise FloatingPointError("underflow in the exponential datum")
        out = shift + eps * math.log(vals[0])
        return out, abs(eps * (math.log(vals[0]) - math.log(max(vals[1], 1e-300))))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    grid = TimeGrid(n_steps)
    family = family or constant_family(theta, grid, 11)
    r = math.sqrt(eps)
    cv_seen = []

    def X(batch):
        y = batch.QV if Phi.joint else None
        v = np.exp((Phi.of_arrays(r * batch.B, y) - shift) / eps)
        if v.mean() > 0:
            cv_seen.append(v.std() / v.mean())
        return v

    est = estimate_upper(X, family, n_paths, seed)
    if cv_seen and max(cv_seen) > CV_WARN:
        warnings.warn(f"coefficient of variation {max(cv_seen):.1f} exceeds {CV_WARN}; "
                      "the Monte Carlo Laplace estimate is unreliable", RuntimeWarning)
    if est.value <= 0:
        raise FloatingPointError("all samples underflowed")
    return shift + eps * math.log(est.value), 3 * eps * est.stderr / est.value


def transported_lower_bound(theta: ThetaSet, Phi: LaplaceFunctional, path: AbsContPath,
                            eps: float, nodes: int = 80) -> float:
    """``E[Phi(x + sqrt(eps) B)] - I(x)`` under the selected constant volatility.

    Shifting by ``x`` in the variational formula gives this lower bound for
    ``laplace_lhs`` at every ``eps``; it tends to ``Phi(x) - I(x)``.
    Endpoint functionals in d = 1 only (Gauss-Hermite in the endpoint).
    """
    if Phi.endpoint is None or theta.dim != 1:
        raise ValueError("endpoint functionals in d = 1 only")
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    v = path.x[-1, 0]
    sig = float(measurable_selection(theta, path.xdot[0])[0, 0])
    vals = Phi.endpoint(np.array([v]) + math.sqrt(eps) * sig * z[:, None])
    return float(w @ vals) - rate_I(theta, path)


@dataclass
class LaplaceReport:
    functional: str
    method: str
    rhs: float
    argmax: AbsContPath
    rows: list = field(default_factory=list)
    threshold: float = 0.05
    passed: bool = False

    def write(self, out_dir, stem: str = "laplace") -> None:
        write_table(f"{out_dir}/{stem}.csv", ["eps", "lhs", "rhs", "gap", "tol", "method",
                                               "n_paths"],
                    [[r["eps"], r["lhs"], r["rhs"], r["gap"], r["tol"], r["method"],
                      r["n_paths"]] for r in self.rows])
        RhsResult(self.rhs, self.argmax, 0).to_csv(f"{out_dir}/{stem}_argmax.csv")


def verify_laplace(theta: ThetaSet, Phi: LaplaceFunctional, eps_list: Sequence[float],
                   method: str = "pde", threshold: float = 0.05, m: int = 4, nx: int = 601,
                   n_steps: int = 50, n_paths: int = 100_000, seed: int = 0) -> LaplaceReport:
    """Convergence table of the Laplace limit.

    Passes iff ``|gap|`` at the smallest ``eps`` is within ``threshold`` and
    consecutive ``|gap|`` values (ordered by decreasing ``eps``) never grow by
    more than one tolerance unit. The gap is signed: for smooth concave-peaked
    endpoint data the Gaussian correction ``-eps/2 log|F''|`` makes it negative.
    """
    rhs = laplace_rhs(theta, Phi, m=m, seed=seed)
    rows = []
    for i, eps in enumerate(sorted(eps_list, reverse=True)):
        lhs, tol = laplace_lhs(theta, Phi, eps, method, nx=nx, n_steps=n_steps,
                               n_paths=n_paths, seed=rng.derive_seed(seed, "eps", i))
        rows.append({"eps": eps, "lhs": lhs, "rhs": rhs.value, "gap": lhs - rhs.value,
                     "tol": tol, "method": method, "n_paths": n_paths if method == "mc" else 0})
    ok = abs(rows[-1]["gap"]) <= threshold
    for a, b in zip(rows, rows[1:]):
        ok &= abs(b["gap"]) <= abs(a["gap"]) + max(a["tol"], b["tol"], 1e-12)
    return LaplaceReport(Phi.name, method, rhs.value, rhs.path, rows, threshold, bool(ok))
