"""Plain-text outputs: ``key: value`` records and CSV tables."""
from __future__ import annotations

import csv
from typing import Iterable, Mapping


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def format_record(rec: Mapping) -> str:
    return "".join(f"{k}: {fmt(v)}\n" for k, v in rec.items())


def write_record(path, rec: Mapping, mode: str = "w") -> None:
    with open(path, mode) as fh:
        fh.write(format_record(rec))


def write_table(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(v) for v in row])
