"""Deterministic CSV reports with self-describing headers.

Every table is written as '#'-prefixed header comments (carrying the config
hash and column documentation) followed by a plain CSV body. Reruns with the
same configuration and seed produce byte-identical bodies; volatile facts
(wall-clock, versions) live in the separate run manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import time
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


def config_hash(config_text: str) -> str:
    """Stable short hash of a serialized configuration."""
    return hashlib.sha256(config_text.encode()).hexdigest()[:12]


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(
    path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    comments: Optional[Dict[str, str]] = None,
) -> None:
    """CSV file with '#'-prefixed header comments followed by the body."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    with open(path, "w") as fh:
        for key, val in (comments or {}).items():
            fh.write(f"# {key}: {val}\n")
        fh.write(buf.getvalue())


def read_csv_body(path: str) -> str:
    """The CSV content with comment lines stripped (for determinism checks)."""
    with open(path) as fh:
        return "".join(line for line in fh if not line.startswith("#"))


def read_csv_rows(path: str) -> List[Dict[str, str]]:
    body = read_csv_body(path)
    return list(csv.DictReader(io.StringIO(body)))


def run_manifest(config_text: str, seed: int, mode: str, elapsed: float) -> Dict[str, str]:
    import numpy
    import scipy

    from . import __version__

    return {
        "mode": mode,
        "config_hash": config_hash(config_text),
        "seed": str(seed),
        "elapsed_seconds": f"{elapsed:.3f}",
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "package_version": __version__,
    }


def write_manifest(path: str, manifest: Dict[str, str], config_text: str) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(path + ".config", "w") as fh:
        fh.write(config_text)
