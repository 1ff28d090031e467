"""Deterministic CSV/JSON emission and run manifests.

Floats are written with ``repr`` so they round-trip exactly; JSON keys are
sorted and non-finite numbers become ``null``.  Nothing time- or host-dependent
is written, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np


def clean(obj):
    """Convert numpy scalars/arrays to plain Python and non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    v = clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return json.dumps(v)
    return str(v)


def csv_text(rows: list[dict]) -> str:
    """RFC-4180 text (CRLF line ends, minimal quoting); columns follow the first row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if rows:
        cols = list(rows[0].keys())
        for r in rows[1:]:
            cols += [k for k in r if k not in cols]
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


class ReportWriter:
    """Collects the files of one run and writes a manifest of their digests."""

    def __init__(self, out_dir: str | Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def csv(self, name: str, rows: list[dict]) -> Path:
        return self._write(name, csv_text(rows))

    def json(self, name: str, obj) -> Path:
        return self._write(name, json_text(obj))

    def manifest(self, command: str, config: dict, config_hash: str, converged: bool, exit_status: int) -> Path:
        from . import __version__

        body = {"command": command, "config": config, "config_hash": config_hash, "converged": converged,
                "exit_status": exit_status, "files": dict(sorted(self.files.items())), "version": __version__}
        path = self.out / "manifest.json"
        path.write_text(json_text(body))
        return path
