"""CSV tables, JSON manifests and JSON-lines traces.

Payloads are deterministic functions of the inputs: floats use a fixed
format and wall-clock times live only under the manifest's ``timing`` key.
"""

from __future__ import annotations

import csv
import io
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_PREFIX = "# schema: arw."


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.10g" % float(v)
    return str(v)


def csv_text(schema: str, columns: list[str], rows: list[dict]) -> str:
    """Render rows as CSV preceded by a ``# schema: arw.<name>.v1`` line."""
    buf = io.StringIO()
    buf.write(f"{SCHEMA_PREFIX}{schema}.v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> tuple[str, list[dict]]:
    """Inverse of ``csv_text``: returns (schema, rows as strings)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(SCHEMA_PREFIX):
        raise ValueError(f"{path}: missing schema line")
    schema = lines[0][len(SCHEMA_PREFIX):]
    return schema, list(csv.DictReader(lines[1:]))


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


class RunManifest:
    """Everything needed to reproduce one command's outputs."""

    def __init__(self, command: str, argv: list[str], params: dict, seed: int, budgets: dict | None = None):
        self.data = {
            "command": command,
            "argv": list(argv),
            "tool_version": __version__,
            "git_describe": git_describe(),
            "params": params,
            "seeds": {"master": seed},
            "budgets": budgets or {},
            "exclusions": {},
            "outputs": [],
        }
        self.start = time.time()

    def add_output(self, path) -> None:
        self.data["outputs"].append(Path(path).name)

    def set(self, key: str, value) -> None:
        self.data[key] = value

    def reproducible(self) -> dict:
        return _jsonable(self.data)

    def write(self, path) -> None:
        doc = self.reproducible()
        doc["timing"] = {"start": self.start, "end": time.time()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_outputs(out_dir, name: str, schema: str, columns, rows, manifest: RunManifest,
                  traces: str | None = None) -> Path:
    """Write ``<name>.csv``, ``<name>.manifest.json`` and optionally
    ``<name>.traces.jsonl`` into ``out_dir``; returns the CSV path."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    p = d / f"{name}.csv"
    p.write_text(csv_text(schema, list(columns), rows))
    manifest.add_output(p)
    if traces is not None:
        t = d / f"{name}.traces.jsonl"
        t.write_text(traces)
        manifest.add_output(t)
    manifest.write(d / f"{name}.manifest.json")
    return p


def print_table(columns, rows, stream=sys.stdout) -> None:
    stream.write(",".join(columns) + "\n")
    for r in rows:
        stream.write(",".join(_fmt(r.get(c)) for c in columns) + "\n")
