"""Explicit monotone finite differences for the G-heat equation du/dt = G(D^2 u).

The solution ``u_phi(t, 0)`` is the G-expectation of ``phi(B_t)``; nested
solves give G-expectations of cylinder functionals of several times.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .functionals import CylinderFunctional, Datum
from .uncertainty import BOX, FINITE, INTERVAL, ThetaSet, argmax_gamma, generator_G, sigma_bounds

CLAMP = "clamp"
EXTRAPOLATE = "extrapolate"

MEMORY_LIMIT = 1.5e9


class GridError(ValueError):
    pass


class SchemeError(RuntimeError):
    pass


@dataclass(frozen=True)
class HeatGrid:
    """Uniform grid on ``[-L, L]^d x [0, T]``; ``x = 0`` is always a node."""

    dim: int
    L: float
    nx: int
    T: float
    nt: int
    boundary: str = CLAMP

    @classmethod
    def build(cls, theta: ThetaSet, T: float = 1.0, nx: int = 601, L: float | None = None,
              nt: int | None = None, boundary: str = CLAMP, dim: int | None = None) -> "HeatGrid":
        """Build a grid, enlarging ``nt`` as needed to satisfy the CFL bound."""
        d = theta.dim if dim is None else dim
        if d not in (1, 2):
            raise GridError("only d in {1, 2} is supported")
        if not 0 < T <= 1:
            raise GridError(f"T must lie in (0, 1], got {T}")
        if nx < 3 or nx % 2 == 0:
            raise GridError("nx must be an odd integer >= 3")
        if boundary not in (CLAMP, EXTRAPOLATE):
            raise GridError(f"unknown boundary mode {boundary!r}")
        _, s1 = sigma_bounds(theta)
        width = 6.0 * s1 * math.sqrt(T)
        if L is None:
            L = width
        elif L < width * (1 - 1e-12):
            raise GridError(f"L={L} does not cover 6 sigma_1 sqrt(T) = {width:.4g}")
        dx = 2.0 * L / (nx - 1)
        nt_cfl = math.ceil(T * d * s1**2 / dx**2 * (1 - 1e-12))
        nt = max(nt or 1, nt_cfl, 1)
        return cls(dim=d, L=float(L), nx=int(nx), T=float(T), nt=int(nt), boundary=boundary)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.nx)

    @property
    def center(self) -> int:
        return (self.nx - 1) // 2

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(nx, 1)`` or ``(nx, nx, 2)``."""
        if self.dim == 1:
            return self.x[:, None]
        X, Y = np.meshgrid(self.x, self.x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def check_cfl(self, theta: ThetaSet) -> None:
        _, s1 = sigma_bounds(theta)
        if self.dt > self.dx**2 / (self.dim * s1**2) * (1 + 1e-12):
            raise SchemeError("CFL condition violated")


@dataclass
class HeatSolution:
    grid: HeatGrid
    times: np.ndarray
    u: np.ndarray
    datum: str

    def at_origin(self, level: int = -1) -> float:
        c = self.grid.center
        s = self.u[level]
        return float(s[c] if self.grid.dim == 1 else s[c, c])

    def to_csv(self, path, extra: dict | None = None, every: int = 1) -> None:
        """Write ``t, x[, y], u`` plus any extra same-shaped fields."""
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            axes = ["x"] if self.grid.dim == 1 else ["x", "y"]
            w.writerow(["t", *axes, "u", *extra])
            pts = self.grid.points().reshape(-1, self.grid.dim)
            for j in range(0, len(self.times), every):
                vals = [self.u[j].ravel()] + [np.asarray(v[j]).ravel() for v in extra.values()]
                for i, p in enumerate(pts):
                    w.writerow([f"{self.times[j]:.10g}", *(f"{c:.10g}" for c in p),
                                *(f"{v[i]:.12g}" for v in vals)])


def _second_diff(u: np.ndarray, dx: float) -> np.ndarray:
    return (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / dx**2


def _apply_boundary(u: np.ndarray, edge: np.ndarray, mode: str) -> None:
    if mode == CLAMP:
        u[..., 0] = edge[..., 0]
        u[..., -1] = edge[..., 1]
    else:
        u[..., 0] = 2.0 * u[..., 1] - u[..., 2]
        u[..., -1] = 2.0 * u[..., -2] - u[..., -3]


def _step_1d(theta: ThetaSet, u: np.ndarray, dt: float, dx: float) -> np.ndarray:
    a = _second_diff(u, dx)
    if theta.kind == INTERVAL:
        g = 0.5 * (theta.hi**2 * np.maximum(a, 0.0) - theta.lo**2 * np.maximum(-a, 0.0))
    else:
        g = generator_G(theta, a[..., None, None])
    out = u.copy()
    out[..., 1:-1] += dt * g
    return out


def _linear_operators_2d(theta: ThetaSet):
    """Per-extreme-point coefficients for a monotone 9-point stencil."""
    ops = []
    for cov in theta.covariance_set():
        a11, a22, a12 = cov[0, 0], cov[1, 1], 0.5 * (cov[0, 1] + cov[1, 0])
        if a11 < abs(a12) - 1e-14 or a22 < abs(a12) - 1e-14:
            raise SchemeError("covariance not diagonally dominant; stencil would not be monotone")
        ops.append((a11, a22, a12))
    return ops


def _step_2d(theta: ThetaSet, u: np.ndarray, dt: float, dx: float, ops) -> np.ndarray:
    c = u[1:-1, 1:-1]
    uxx = (u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / dx**2
    uyy = (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / dx**2
    if theta.kind == BOX:
        lo2, hi2 = theta.bounds[:, 0] ** 2, theta.bounds[:, 1] ** 2
        g = 0.5 * (np.maximum(uxx * hi2[0], uxx * lo2[0]) + np.maximum(uyy * hi2[1], uyy * lo2[1]))
    else:
        axes = u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
        cross_p = (2 * c + u[2:, 2:] + u[:-2, :-2] - axes) / (2 * dx**2)
        cross_m = -(2 * c + u[2:, :-2] + u[:-2, 2:] - axes) / (2 * dx**2)
        g = None
        for a11, a22, a12 in ops:
            cross = cross_p if a12 >= 0 else cross_m
            val = 0.5 * (a11 * uxx + a22 * uyy) + a12 * cross
            g = val if g is None else np.maximum(g, val)
    out = u.copy()
    out[1:-1, 1:-1] += dt * g
    return out


def _boundary_2d(u: np.ndarray, u0: np.ndarray, mode: str) -> None:
    if mode == CLAMP:
        u[0, :], u[-1, :], u[:, 0], u[:, -1] = u0[0, :], u0[-1, :], u0[:, 0], u0[:, -1]
    else:
        u[0, :] = 2 * u[1, :] - u[2, :]
        u[-1, :] = 2 * u[-2, :] - u[-3, :]
        u[:, 0] = 2 * u[:, 1] - u[:, 2]
        u[:, -1] = 2 * u[:, -2] - u[:, -3]


def evolve(theta: ThetaSet, u0: np.ndarray, grid: HeatGrid, duration: float,
           keep_levels: bool = False):
    """Advance the datum ``u0`` (batched over leading axes in d = 1) by ``duration``.

    Returns the final slab, or ``(times, slabs)`` when ``keep_levels`` is set.
    """
    grid.check_cfl(theta)
    n = max(1, math.ceil(duration / grid.dt * (1 - 1e-12))) if duration > 0 else 0
    dt = duration / n if n else 0.0
    u = np.array(u0, dtype=float)
    levels = [u.copy()] if keep_levels else None
    if grid.dim == 1:
        edge = np.stack([u[..., 0], u[..., -1]], axis=-1)
        for _ in range(n):
            u = _step_1d(theta, u, dt, grid.dx)
            _apply_boundary(u, edge, grid.boundary)
            if keep_levels:
                levels.append(u)
    else:
        ops = _linear_operators_2d(theta) if theta.kind == FINITE else None
        start = u.copy()
        for _ in range(n):
            u = _step_2d(theta, u, dt, grid.dx, ops)
            _boundary_2d(u, start, grid.boundary)
            if keep_levels:
                levels.append(u)
    if keep_levels:
        return np.arange(n + 1) * dt, np.stack(levels)
    return u


def solve_gheat(theta: ThetaSet, phi: Datum, grid: HeatGrid) -> HeatSolution:
    """Solve the G-heat equation with initial datum ``phi`` over ``[0, grid.T]``."""
    if grid.dim != theta.dim:
        raise GridError(f"grid d={grid.dim} but Theta d={theta.dim}")
    if grid.dim not in (1, 2):
        raise GridError("only d in {1, 2} is supported")
    u0 = phi(grid.points())
    times, u = evolve(theta, u0, grid, grid.T, keep_levels=True)
    return HeatSolution(grid=grid, times=times, u=u, datum=getattr(phi, "name", "phi"))


def g_expectation_cylinder_1(theta: ThetaSet, phi: Datum, t: float,
                             grid: HeatGrid | None = None, nx: int = 601) -> float:
    """G-expectation of ``phi(B_t)``, read at the central node."""
    if not 0 < t <= 1:
        raise GridError(f"t must lie in (0, 1], got {t}")
    if grid is None:
        grid = HeatGrid.build(theta, T=t, nx=nx)
    u = evolve(theta, phi(grid.points()), grid, t)
    c = grid.center
    return float(u[c] if grid.dim == 1 else u[c, c])


def cylinder_with_tolerance(theta: ThetaSet, phi: Datum, t: float, nx: int = 601):
    """``(value, tol)`` where ``tol`` is the change from the next-coarser grid."""
    fine = g_expectation_cylinder_1(theta, phi, t, nx=nx)
    coarse_nx = (nx - 1) // 2 + 1
    coarse_nx += 1 - coarse_nx % 2
    coarse = g_expectation_cylinder_1(theta, phi, t, nx=coarse_nx)
    return fine, abs(fine - coarse)


def g_expectation_multistep(theta: ThetaSet, psi: CylinderFunctional, grid: HeatGrid | None = None,
                            nx: int = 401, memory_limit: float = MEMORY_LIMIT) -> float:
    """G-expectation of ``psi(B_{t_1}, ..., B_{t_n})`` by backward recursion (d = 1, n <= 3).

    The last argument is evolved with the earlier ones frozen on the grid,
    the result is read on the diagonal ``x_n = x_{n-1}``, and so on.
    """
    times = [float(t) for t in psi.times]
    n = len(times)
    if theta.dim != 1:
        raise GridError("multistep expectations are implemented for d = 1")
    if n > 3:
        raise GridError("at most 3 observation times are supported")
    if any(not 0 < t <= 1 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise GridError("times must be nondecreasing in (0, 1]")
    if grid is None:
        grid = HeatGrid.build(theta, T=times[-1], nx=nx)
    if 8.0 * 3 * grid.nx**n > memory_limit:
        raise MemoryError(f"tensor datum of {grid.nx}^{n} nodes exceeds the memory limit")
    x = grid.x
    mesh = np.meshgrid(*([x] * n), indexing="ij")
    V = np.asarray(psi.psi(*[m[..., None] for m in mesh]), dtype=float)
    V = np.broadcast_to(V, (grid.nx,) * n).copy()
    for k in range(n - 1, 0, -1):
        V = evolve(theta, V, grid, times[k] - times[k - 1])
        V = np.diagonal(V, axis1=-2, axis2=-1).copy()
    V = evolve(theta, V, grid, times[0])
    return float(V[grid.center])


@dataclass
class LogTransform:
    """``u`` for datum ``e^phi``, ``U = log u``, its gradient and the Hessian of ``u``.

    Arrays are indexed ``[level, node]`` with ``times[level]`` the elapsed
    forward time (time to maturity in the backward picture).
    """

    grid: HeatGrid
    theta: ThetaSet
    times: np.ndarray
    u: np.ndarray
    U: np.ndarray
    gradU: np.ndarray
    hess_u: np.ndarray
    grad_bound: float

    def _locate(self, tau, x):
        tau = np.clip(np.asarray(tau, dtype=float), 0.0, self.times[-1])
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        j = np.minimum((tau / dt).astype(int), len(self.times) - 2)
        wt = tau / dt - j
        x = np.asarray(x, dtype=float)
        outside = (x < -self.grid.L) | (x > self.grid.L)
        xc = np.clip(x, -self.grid.L, self.grid.L)
        pos = (xc + self.grid.L) / self.grid.dx
        i = np.minimum(pos.astype(int), self.grid.nx - 2)
        wx = pos - i
        return j, wt, i, wx, outside

    def _interp(self, table, tau, x):
        j, wt, i, wx, outside = self._locate(tau, x)
        v0 = table[j, i] * (1 - wx) + table[j, i + 1] * wx
        v1 = table[j + 1, i] * (1 - wx) + table[j + 1, i + 1] * wx
        return v0 * (1 - wt) + v1 * wt, outside

    def grad(self, tau, x):
        """Interpolated ``grad U`` and an out-of-domain mask."""
        g, outside = self._interp(self.gradU, tau, x)
        return np.clip(g, -self.grad_bound, self.grad_bound), outside

    def log_value(self, tau, x):
        return self._interp(self.U, tau, x)[0]

    def optimal_gamma(self, tau, x):
        """Volatility attaining ``G(D^2 u)`` at the interpolated state."""
        h, _ = self._interp(self.hess_u, tau, x)
        return argmax_gamma(self.theta, h[..., None, None])


def log_transform_solution(theta: ThetaSet, phi: Datum, grid: HeatGrid) -> LogTransform:
    """Solve with datum ``e^phi`` and tabulate ``U = log u`` and ``grad U`` (d = 1)."""
    if theta.dim != 1 or grid.dim != 1:
        raise GridError("the log transform is tabulated for d = 1")
    sol = solve_gheat(theta, Datum(lambda x: np.exp(phi(x)), np.exp(phi.sup),
                                   phi.lip * np.exp(phi.sup), f"exp({phi.name})"), grid)
    u = sol.u
    if np.any(u <= 0):
        raise SchemeError("non-positive value in the exponential solution; scheme not monotone")
    U = np.log(u)
    gradU = np.gradient(U, grid.dx, axis=1)
    hess = np.zeros_like(u)
    hess[:, 1:-1] = _second_diff(u, grid.dx)
    hess[:, 0], hess[:, -1] = hess[:, 1], hess[:, -2]
    bound = float(np.exp(2 * phi.sup) * phi.lip)
    return LogTransform(grid=grid, theta=theta, times=sol.times, u=u, U=U, gradU=gradU,
                        hess_u=hess, grad_bound=bound)
