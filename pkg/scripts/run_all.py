"""Run every shipped config through the CLI, one output directory per config."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from gexpect.cli import main

HERE = Path(__file__).resolve().parent


def run(out_root: Path, names: list[str]) -> int:
    worst = 0
    for cfg in sorted((HERE / "configs").glob("*.cfg")):
        if names and cfg.stem not in names:
            continue
        t0 = time.perf_counter()
        print(f"== {cfg.stem}", flush=True)
        code = main(["--config", str(cfg), "--out", str(out_root / cfg.stem)])
        print(f"-- exit {code} in {time.perf_counter() - t0:.1f}s\n", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", type=Path)
    ap.add_argument("names", nargs="*", help="config stems to run (default: all)")
    a = ap.parse_args()
    sys.exit(run(a.out, a.names))
