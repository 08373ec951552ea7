"""Volatility uncertainty sets and the sublinear generator G."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

INTERVAL = "interval"
FINITE = "finite"
BOX = "box"

MAX_BOX_DIM = 8


class ThetaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ThetaSet:
    """A bounded closed set of d x d volatility matrices.

    Three representations are supported:

    * ``interval``: ``{g * I_1 : g in [lo, hi]}`` (d = 1 only);
    * ``finite``: an explicit nonempty list of d x d matrices;
    * ``box``: diagonal matrices ``diag(g_1, ..., g_d)`` with ``g_i in [lo_i, hi_i]``.

    Use the ``interval``/``finite``/``box`` constructors.
    """

    dim: int
    kind: str
    lo: float | None = None
    hi: float | None = None
    matrices: tuple = ()
    bounds: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ThetaError("dimension must be positive")
        if self.kind == INTERVAL:
            if self.dim != 1:
                raise ThetaError("scalar interval is only valid for d = 1")
            if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
                raise ThetaError("interval bounds must be finite")
            if not 0 < self.lo <= self.hi:
                raise ThetaError(f"need 0 < lo <= hi, got [{self.lo}, {self.hi}]")
        elif self.kind == FINITE:
            if not self.matrices:
                raise ThetaError("finite set must be nonempty")
            for m in self.matrices:
                if m.shape != (self.dim, self.dim):
                    raise ThetaError(f"matrix of shape {m.shape} in a d={self.dim} set")
                if not np.all(np.isfinite(m)):
                    raise ThetaError("matrix entries must be finite")
        elif self.kind == BOX:
            b = self.bounds
            if b is None or b.shape != (self.dim, 2):
                raise ThetaError("box bounds must have shape (d, 2)")
            if not np.all(np.isfinite(b)):
                raise ThetaError("box bounds must be finite")
            if np.any(b[:, 0] <= 0) or np.any(b[:, 1] < b[:, 0]):
                raise ThetaError("box bounds need 0 < lo_i <= hi_i")
        else:
            raise ThetaError(f"unknown kind {self.kind!r}")
        s0, _ = _raw_sigma_bounds(self)
        if not s0 > 0:
            raise ThetaError("sigma_0 must be strictly positive")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ThetaSet":
        return cls(dim=1, kind=INTERVAL, lo=float(lo), hi=float(hi))

    @classmethod
    def finite(cls, matrices) -> "ThetaSet":
        mats = tuple(np.array(m, dtype=float, ndmin=2) for m in matrices)
        if not mats:
            raise ThetaError("finite set must be nonempty")
        for m in mats:
            m.setflags(write=False)
        return cls(dim=mats[0].shape[0], kind=FINITE, matrices=mats)

    @classmethod
    def box(cls, bounds) -> "ThetaSet":
        b = np.array(bounds, dtype=float, ndmin=2)
        b.setflags(write=False)
        return cls(dim=b.shape[0], kind=BOX, bounds=b)

    def describe(self) -> str:
        if self.kind == INTERVAL:
            return f"interval[{self.lo:g},{self.hi:g}]"
        if self.kind == FINITE:
            return "finite{" + ";".join(
                ",".join(f"{v:g}" for v in m.ravel()) for m in self.matrices) + "}"
        return "box{" + ";".join(f"{a:g}:{b:g}" for a, b in self.bounds) + "}"

    def extreme_points(self) -> list[np.ndarray]:
        """Matrices whose convex hull contains every gamma gamma* of the set.

        For the interval and box kinds these are the vertices; G is linear in
        gamma gamma*, so its supremum is attained among them.
        """
        if self.kind == INTERVAL:
            pts = [self.lo] if self.lo == self.hi else [self.lo, self.hi]
            return [np.array([[p]]) for p in pts]
        if self.kind == FINITE:
            return list(self.matrices)
        if self.dim > MAX_BOX_DIM:
            raise ThetaError(f"vertex enumeration limited to d <= {MAX_BOX_DIM}")
        return [np.diag(v) for v in itertools.product(*[sorted(set(r)) for r in self.bounds])]

    def contains(self, gamma, tol: float = 1e-12) -> np.ndarray:
        """Membership test, vectorized over leading axes of ``gamma`` (..., d, d)."""
        g = np.asarray(gamma, dtype=float)
        d = self.dim
        if g.shape[-2:] != (d, d):
            raise ThetaError(f"expected trailing shape ({d}, {d}), got {g.shape}")
        if self.kind == INTERVAL:
            v = g[..., 0, 0]
            return (v >= self.lo - tol) & (v <= self.hi + tol)
        if self.kind == FINITE:
            stack = np.stack(self.matrices)
            diff = np.abs(g[..., None, :, :] - stack).max(axis=(-1, -2))
            return diff.min(axis=-1) <= tol
        diag = np.diagonal(g, axis1=-2, axis2=-1)
        off = g - diag[..., :, None] * np.eye(d)
        ok = np.all(np.abs(off) <= tol, axis=(-1, -2))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return ok & np.all((diag >= lo - tol) & (diag <= hi + tol), axis=-1)

    def covariance_set(self) -> list[np.ndarray]:
        return [g @ g.T for g in self.extreme_points()]


def _raw_sigma_bounds(theta: ThetaSet) -> tuple[float, float]:
    if theta.kind == INTERVAL:
        return theta.lo, theta.hi
    if theta.kind == BOX:
        return float(theta.bounds[:, 0].min()), float(theta.bounds[:, 1].max())
    eig = [np.linalg.eigvalsh(m @ m.T) for m in theta.matrices]
    lo = min(e[0] for e in eig)
    hi = max(e[-1] for e in eig)
    return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(hi))


def sigma_bounds(theta: ThetaSet) -> tuple[float, float]:
    """Return ``(sigma_0, sigma_1)``: extreme square roots of ``x . g g* x`` over |x| = 1."""
    return _raw_sigma_bounds(theta)


def _symmetric(A, d: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0 and d == 1:
        A = A.reshape(1, 1)
    if A.shape[-2:] != (d, d):
        raise ThetaError(f"matrix of shape {A.shape} does not match d={d}")
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def generator_G(theta: ThetaSet, A) -> float | np.ndarray:
    """``G(A) = 1/2 sup_{g in Theta} tr[A g g*]``, vectorized over leading axes.

    Only the symmetric part of ``A`` is read.
    """
    A = _symmetric(A, theta.dim)
    if theta.kind == INTERVAL:
        a = A[..., 0, 0]
        out = 0.5 * (theta.hi**2 * np.maximum(a, 0.0) - theta.lo**2 * np.maximum(-a, 0.0))
    elif theta.kind == BOX:
        # tr[A diag(g)^2] only sees diag(A); each axis is maximized independently
        a = np.diagonal(A, axis1=-2, axis2=-1)
        lo2, hi2 = theta.bounds[:, 0] ** 2, theta.bounds[:, 1] ** 2
        out = 0.5 * np.sum(np.maximum(a * hi2, a * lo2), axis=-1)
    else:
        covs = np.stack(theta.covariance_set())
        vals = np.einsum("...ij,kji->...k", A, covs)
        out = 0.5 * vals.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def argmax_gamma(theta: ThetaSet, A) -> np.ndarray:
    """A maximizer of ``tr[A g g*]`` over Theta, vectorized; shape (..., d, d)."""
    A = _symmetric(A, theta.dim)
    if theta.kind == INTERVAL:
        g = np.where(A[..., 0, 0] >= 0.0, theta.hi, theta.lo)
        return g[..., None, None]
    if theta.kind == BOX:
        a = np.diagonal(A, axis1=-2, axis2=-1)
        g = np.where(a >= 0.0, theta.bounds[:, 1], theta.bounds[:, 0])
        return g[..., :, None] * np.eye(theta.dim)
    mats = np.stack(theta.matrices)
    covs = np.einsum("kij,klj->kil", mats, mats)
    idx = np.einsum("...ij,kji->...k", A, covs).argmax(axis=-1)
    return mats[idx]
