"""Laplace limit for arctan(x(1)) over a finer eps sweep.

Prints the PDE left side, the transported lower bound along the optimal
straight line, and the Gaussian-corrected prediction
``rhs - eps/2 log|F''(v*)|`` with ``F(v) = arctan(v) - v^2 / 2``.
"""
from __future__ import annotations

import argparse
import math

from gexpect.ldp import arctan_endpoint, laplace_lhs, laplace_rhs, transported_lower_bound
from gexpect.uncertainty import ThetaSet


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, nargs="+",
                    default=[1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125])
    ap.add_argument("--nx", type=int, default=801)
    a = ap.parse_args()

    theta = ThetaSet.interval(0.5, 1.0)
    Phi = arctan_endpoint()
    rhs = laplace_rhs(theta, Phi)
    v = float(rhs.path.x[-1, 0])
    curv = abs(-2 * v / (1 + v * v) ** 2 - 1)
    print(f"rhs = {rhs.value:.6f} at x(1) = {v:.6f}, |F''| = {curv:.4f}")
    print(f"{'eps':>8} {'lhs':>10} {'gap':>9} {'lower':>10} {'predicted':>10}")
    for eps in a.eps:
        lhs, _ = laplace_lhs(theta, Phi, eps, "pde", nx=a.nx)
        lb = transported_lower_bound(theta, Phi, rhs.path, eps)
        pred = rhs.value - 0.5 * eps * math.log(curv)
        print(f"{eps:>8g} {lhs:>10.6f} {lhs - rhs.value:>9.5f} {lb:>10.6f} {pred:>10.6f}")


if __name__ == "__main__":
    main()
