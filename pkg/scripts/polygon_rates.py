"""Sup-distance of polygonal approximations under halving of the mesh.

A smooth path gives the second-order ratio 1/4; ``t^a`` with ``a < 1`` gives
``2^-a``. A simulated quadratic variation path has no clean ratio, only the
Lipschitz bound ``2 sigma1^2 / n``, printed alongside.
"""
from __future__ import annotations

import numpy as np

from gexpect.ldp import polygonal_approx, sup_distance
from gexpect.pathsim import ControlProcess, TimeGrid, simulate_paths
from gexpect.uncertainty import ThetaSet


def ratios(values, ns) -> list[float]:
    d = [sup_distance(values, polygonal_approx(values, n)) for n in ns]
    return [b / a for a, b in zip(d, d[1:])]


def main() -> None:
    t = np.linspace(0, 1, 4097)
    ns = [8, 16, 32, 64, 128]
    theta = ThetaSet.interval(0.5, 1.0)
    ctl = ControlProcess.feedback(theta, TimeGrid(4096),
                                  lambda k, h: np.where(h.B[:, k, 0] > 0, 1.0, 0.5))
    qv = simulate_paths(ctl, 1, 0).QV[0]
    print("halving ratios")
    for name, vals in [("sin(3t)", np.sin(3 * t)), ("t^0.9", t**0.9), ("t^0.5", t**0.5),
                       ("QV path", qv)]:
        print(f"{name:>8}: " + "  ".join(f"{r:.3f}" for r in ratios(vals, ns)))
    print("QV path distance / bound")
    for n in ns:
        d = sup_distance(qv, polygonal_approx(qv, n))
        print(f"{n:>8}: {d:.5f} / {2 * theta.hi**2 / n:.5f}")


if __name__ == "__main__":
    main()
