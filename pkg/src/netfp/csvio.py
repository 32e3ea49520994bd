"""CSV output with a reproducibility stamp.

Every file starts with two comment lines::

    # generated: 2026-10-15T12:00:00+00:00
    # config: alpha=0.2 rho=0.2 seed=0 ...

followed by a header row.  Only the ``# generated`` line varies between
runs with identical configuration.
"""

from __future__ import annotations

import csv
import datetime as _dt
from pathlib import Path

import numpy as np

GENERATED_PREFIX = "# generated:"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def stamp_line(stamp: dict) -> str:
    return "# config: " + " ".join(f"{k}={fmt(v)}" for k, v in stamp.items())


def write_csv(path, header, rows, stamp: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with path.open("w", newline="") as fh:
        fh.write(f"{GENERATED_PREFIX} {now}\n")
        fh.write(stamp_line(stamp) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])
    return path


def csv_body(path) -> str:
    """File contents without the timestamp line."""
    lines = Path(path).read_text().splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith(GENERATED_PREFIX))


def read_rows(path) -> list[dict]:
    lines = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))
